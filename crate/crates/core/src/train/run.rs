use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::adam::Adam;
use super::{lr_at, TrainConfig};
use crate::augment::LabeledCase;
use crate::autodiff::{load_checkpoint, load_manifest, save_checkpoint, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::metrics::{dice, BinaryMask};
use crate::model::{dice_loss, forward, image_tensor, one_hot, Model, ModelSpec};
use crate::volume_io::LabelVolume;

pub const LOG_FILE: &str = "log.csv";
pub const BEST_CHECKPOINT: &str = "best.lfpt";
pub const LAST_CHECKPOINT: &str = "last.lfpt";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's cases.
    pub train_loss: f64,
    /// Mean foreground Dice over validation cases; `None` without any.
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Epoch with the highest validation Dice (first on ties).
    pub best_epoch: Option<usize>,
    pub best_val_dice: Option<f64>,
    /// Parameters at `best_epoch`, or the final ones without validation.
    pub best_params: ParamStore<f32>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_dice\n");
        for r in &self.log {
            let val = r.val_dice.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.lr, r.train_loss, val);
        }
        s
    }
}

/// Mean Dice over foreground classes present in either volume; classes
/// absent from both are skipped, and a volume pair with none scores 1.
pub fn mean_foreground_dice(pred: &LabelVolume, truth: &LabelVolume) -> Result<f64> {
    pred.same_grid(truth)?;
    let (pc, tc) = (pred.class_counts(), truth.class_counts());
    let mut scores = Vec::new();
    for c in 1..pc.len() {
        if pc[c] == 0 && tc[c] == 0 {
            continue;
        }
        let c = c as u8;
        scores.push(dice(&BinaryMask::from_labels(pred, c), &BinaryMask::from_labels(truth, c))?);
    }
    Ok(if scores.is_empty() {
        1.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    })
}

fn validation_dice(model: &Model, val: &[LabeledCase]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for c in val {
        total += mean_foreground_dice(&model.predict(&c.image)?, &c.labels)?;
    }
    Ok(Some(total / val.len() as f64))
}

/// Loss and parameter gradients for one case.
fn case_gradients(model: &Model, case: &LabeledCase) -> Result<(f64, Vec<Vec<f32>>)> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let x = tape.constant(image_tensor(&case.image));
    let logits = forward(&mut tape, &model.spec, &bound, x)?;
    let target = one_hot(&case.labels, model.spec.config.classes)?;
    let loss = dice_loss(&mut tape, logits, &target)?;
    tape.backward(loss)?;
    Ok((tape.value(loss).data()[0] as f64, bound.grads(&tape)))
}

pub fn train_loop(model: &mut Model, train: &[LabeledCase], val: &[LabeledCase], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_loop_with(model, train, val, cfg, |_| ControlFlow::Continue(()))
}

/// [`train_loop`] reporting each epoch as it finishes; the callback may end
/// training after any epoch.
pub fn train_loop_with(
    model: &mut Model,
    train: &[LabeledCase],
    val: &[LabeledCase],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut best_params = model.params.clone();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Vec<f32>>> = None;
            for &i in batch {
                let (loss, grads) = case_gradients(model, &train[i])?;
                loss_sum += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a
                        .iter_mut()
                        .flatten()
                        .zip(grads.iter().flatten())
                        .for_each(|(a, g)| *a += g),
                }
            }
            let mut grads = acc.expect("chunks are nonempty");
            if batch.len() > 1 {
                let s = 1.0 / batch.len() as f32;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
            adam.step(&mut model.params, &grads, lr)?;
        }
        if !model.params.is_finite() {
            return Err(Error::Config(format!("parameters diverged at epoch {epoch}")));
        }
        let val_dice = validation_dice(model, val)?;
        if let Some(d) = val_dice {
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((epoch, d));
                best_params = model.params.clone();
            }
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_dice,
        };
        let flow = on_epoch(&rec);
        log.push(rec);
        if flow.is_break() {
            break;
        }
    }
    if best.is_none() {
        best_params = model.params.clone();
    }
    Ok(TrainOutcome {
        log,
        best_epoch: best.map(|b| b.0),
        best_val_dice: best.map(|b| b.1),
        best_params,
    })
}

pub fn save_model(path: &Path, model: &Model, extra: serde_json::Value) -> Result<()> {
    save_checkpoint(path, &model.params, json!({ "spec": model.spec, "info": extra }))
}

/// Rebuilds a model from a checkpoint and its manifest.
pub fn load_model(path: &Path) -> Result<Model> {
    let manifest = load_manifest(path)?;
    let spec: ModelSpec = serde_json::from_value(
        manifest
            .metadata
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::format("checkpoint manifest", "missing model spec"))?,
    )?;
    spec.config.validate()?;
    let params = load_checkpoint(path)?;
    let reference = Model::new(spec.clone(), 0)?;
    let expected: Vec<(&str, &[usize])> = reference.params.iter().map(|p| (p.name.as_str(), p.value.shape())).collect();
    let got: Vec<(&str, &[usize])> = params.iter().map(|p| (p.name.as_str(), p.value.shape())).collect();
    if expected != got {
        return Err(Error::format("checkpoint", "parameters do not match the recorded model spec"));
    }
    Ok(Model { spec, params })
}

/// Writes the epoch log and the best and final checkpoints into `dir`.
pub fn write_run(dir: &Path, model: &Model, outcome: &TrainOutcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log = dir.join(LOG_FILE);
    std::fs::write(&log, outcome.log_csv()).map_err(|e| Error::io(&log, e))?;
    let best = dir.join(BEST_CHECKPOINT);
    let best_model = Model {
        spec: model.spec.clone(),
        params: outcome.best_params.clone(),
    };
    save_model(
        &best,
        &best_model,
        json!({ "epoch": outcome.best_epoch, "val_dice": outcome.best_val_dice }),
    )?;
    let last = dir.join(LAST_CHECKPOINT);
    save_model(&last, model, json!({ "epoch": outcome.log.len().checked_sub(1) }))?;
    Ok(vec![log, best, last])
}
