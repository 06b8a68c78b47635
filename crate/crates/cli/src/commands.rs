use std::collections::{HashMap, HashSet};
use std::path::Path;

use liverformer::augment::{
    expand_dataset, load_dataset, plan_pairs, save_dataset, AugmentSummary, LabeledCase, PartnerRule, Provenance,
};
use liverformer::deform::{exp_velocity, mean_squared_error, register, save_field, warp_image, FieldKind};
use liverformer::metrics::{build_case_report, compare_reports, DatasetReport};
use liverformer::model::Model;
use liverformer::phantom::generate_dataset;
use liverformer::preprocess::preprocess_case;
use liverformer::train::{load_model, split_dataset, train_loop_with, write_run};
use liverformer::volume_io::{export_slice, load_image, load_labels, save_image, save_labels, SliceAxis};
use liverformer::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::{
    AugmentArgs, Command, CompareArgs, EvaluateArgs, PhantomCommand, PhantomGenArgs, PredictArgs, PreprocessArgs,
    RegisterArgs, TrainArgs, ViewArgs,
};

pub const RUN_CONFIG_FILE: &str = "config.txt";
pub const SPLIT_FILE: &str = "split.json";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom(PhantomCommand::Gen(a)) => phantom_gen(&a),
        Command::Preprocess(a) => preprocess(&a),
        Command::Register(a) => register_pair(&a),
        Command::Augment(a) => augment(&a),
        Command::Train(a) => train(&a),
        Command::Predict(a) => predict(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Compare(a) => compare(&a),
        Command::View(a) => view(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn is_manifest(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn phantom_gen(a: &PhantomGenArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let cases = generate_dataset(a.n, &cfg.phantom, a.seed)?;
    let manifest = save_dataset(&a.out, &cases)?;
    println!("wrote {} phantoms to {}", cases.len(), manifest.display());
    Ok(())
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?.preprocess.to_config();
    let cases = load_dataset(&a.input)?
        .into_iter()
        .map(|c| {
            let (image, labels) = preprocess_case(&c.image, &c.labels, &cfg)?;
            LabeledCase::new(c.id, image, labels, c.provenance)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = save_dataset(&a.out, &cases)?;
    println!("preprocessed {} cases into {}", cases.len(), manifest.display());
    Ok(())
}

fn register_pair(a: &RegisterArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?.augment.registration;
    let fixed = load_image(&a.fixed)?;
    let moving = load_image(&a.moving)?;
    let v = register(&fixed, &moving, &cfg)?;
    save_field(&a.out_field, &v, FieldKind::Velocity)?;
    let warped = warp_image(&moving, &exp_velocity(&v, cfg.exp_steps))?;
    println!("mse before: {:.6}", mean_squared_error(&fixed, &moving)?);
    println!("mse after: {:.6}", mean_squared_error(&fixed, &warped)?);
    if let Some(p) = &a.warped {
        save_image(p, &warped)?;
    }
    Ok(())
}

fn augment(a: &AugmentArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?.augment;
    if let Some(rule) = &a.partner_rule {
        cfg.partner_rule = rule.parse::<PartnerRule>()?;
    }
    let pool = load_dataset(&a.manifest)?;
    let summary = if a.plan_only {
        let ids: Vec<&str> = pool.iter().map(|c| c.id.as_str()).collect();
        let pairs = plan_pairs(&a.templates, &ids, cfg.partner_rule)?;
        AugmentSummary {
            templates: a.templates.len(),
            pool: pool.len(),
            rule: cfg.partner_rule,
            synthesized: 2 * pairs.len(),
            incomplete: Vec::new(),
        }
    } else {
        let synthesized = expand_dataset(&a.templates, &pool, &cfg)?;
        let summary = AugmentSummary::new(a.templates.len(), pool.len(), cfg.partner_rule, &synthesized);
        let mut all = pool;
        all.extend(synthesized);
        let manifest = save_dataset(&a.out, &all)?;
        println!("wrote {} cases to {}", all.len(), manifest.display());
        summary
    };
    print!("{summary}");
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let cases = load_dataset(&a.manifest)?;
    let (originals, synthesized): (Vec<LabeledCase>, Vec<LabeledCase>) =
        cases.into_iter().partition(|c| c.provenance == Provenance::Original);
    let split = split_dataset(originals, cfg.train.split, cfg.train.seed)?;
    let train_ids: HashSet<&str> = split.train.iter().map(|c| c.id.as_str()).collect();
    // synthesized cases only train when neither source is held out
    let (usable, dropped): (Vec<&LabeledCase>, Vec<&LabeledCase>) = synthesized.iter().partition(|c| match &c.provenance {
        Provenance::Synthesized {
            template_id,
            partner_id,
            ..
        } => train_ids.contains(template_id.as_str()) && train_ids.contains(partner_id.as_str()),
        Provenance::Original => false,
    });
    let mut train_set = split.train.clone();
    train_set.extend(usable.iter().map(|&c| c.clone()));
    let expected = cfg.model.config.input_dims;
    if let Some(c) = train_set.iter().find(|c| c.image.dims().as_array() != expected) {
        return Err(Error::DimsMismatch(c.image.dims().as_array(), expected));
    }
    println!(
        "train {} ({} synthesized, {} held-out-derived dropped), val {}, test {}",
        train_set.len(),
        usable.len(),
        dropped.len(),
        split.val.len(),
        split.test.len()
    );
    let mut model = Model::new(cfg.model.clone(), cfg.model_seed)?;
    let outcome = train_loop_with(&mut model, &train_set, &split.val, &cfg.train, |r| {
        let val = r.val_dice.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into());
        println!("epoch {} lr {} loss {:.6} val_dice {val}", r.epoch, r.lr, r.train_loss);
        std::ops::ControlFlow::Continue(())
    })?;
    write_run(&a.out_run, &model, &outcome)?;
    write(&a.out_run.join(RUN_CONFIG_FILE), cfg.to_text())?;
    let ids = |v: &[LabeledCase]| v.iter().map(|c| c.id.clone()).collect::<Vec<_>>();
    let split_json = json!({
        "train": ids(&split.train),
        "val": ids(&split.val),
        "test": ids(&split.test),
        "synthesized_used": usable.iter().map(|c| c.id.clone()).collect::<Vec<_>>(),
    });
    write(
        &a.out_run.join(SPLIT_FILE),
        serde_json::to_string_pretty(&split_json)? + "\n",
    )?;
    if let (Some(e), Some(d)) = (outcome.best_epoch, outcome.best_val_dice) {
        println!("best epoch {e} val_dice {d:.4}");
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    if is_manifest(&a.input) {
        let cases = load_dataset(&a.input)?
            .into_iter()
            .map(|c| {
                let labels = model.predict(&c.image)?;
                LabeledCase::new(c.id, c.image, labels, c.provenance)
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = save_dataset(&a.out, &cases)?;
        println!("predicted {} cases into {}", cases.len(), manifest.display());
    } else {
        let image = load_image(&a.input)?;
        save_labels(&a.out, &model.predict(&image)?)?;
        println!("wrote {}", a.out.display());
    }
    Ok(())
}

fn case_id(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("case");
    name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let reports = if is_manifest(&a.pred) {
        let truth: HashMap<String, LabeledCase> = load_dataset(&a.truth)?.into_iter().map(|c| (c.id.clone(), c)).collect();
        load_dataset(&a.pred)?
            .iter()
            .map(|p| {
                let t = truth
                    .get(&p.id)
                    .ok_or_else(|| Error::Config(format!("case {:?} has no ground truth", p.id)))?;
                build_case_report(&p.id, &p.labels, &t.labels)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let pred = load_labels(&a.pred)?;
        let truth = load_labels(&a.truth)?;
        vec![build_case_report(&case_id(&a.pred), &pred, &truth)?]
    };
    if reports.is_empty() {
        return Err(Error::Config("no cases to evaluate".into()));
    }
    let report = DatasetReport::new(reports);
    create_dir(&a.out)?;
    write(&a.out.join("report.json"), report.to_json()? + "\n")?;
    write(&a.out.join("report.csv"), report.to_csv())?;
    let table = report.to_text_table();
    write(&a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let read = |p: &Path| -> Result<DatasetReport> {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        DatasetReport::from_json(&text)
    };
    let c = compare_reports(&read(&a.reports[0])?, &read(&a.reports[1])?)?;
    print!("{}", c.to_text());
    if let Some(out) = &a.out {
        write(out, serde_json::to_string_pretty(&c)? + "\n")?;
    }
    Ok(())
}

fn view(a: &ViewArgs) -> Result<()> {
    let axis: SliceAxis = a.axis.parse()?;
    let pick = |d: [usize; 3]| {
        let extent = match axis {
            SliceAxis::Axial => d[0],
            SliceAxis::Coronal => d[1],
            SliceAxis::Sagittal => d[2],
        };
        a.index.unwrap_or(extent / 2)
    };
    let pgm = if a.labels {
        let v = load_labels(&a.input)?;
        export_slice(&v, axis, pick(v.dims().as_array()))?
    } else {
        let v = load_image(&a.input)?;
        export_slice(&v, axis, pick(v.dims().as_array()))?
    };
    write(&a.out, pgm)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
