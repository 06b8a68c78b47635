//! Hybrid CNN-Transformer segmentation network and a U-Net baseline.
//!
//! A residual 3D CNN encoder produces multi-scale features. The deepest map
//! is cut into `P³` patches, linearly embedded with a learned positional
//! table, and passed through pre-norm Transformer layers. Tokens are then
//! projected back to patches, folded onto the grid, and decoded with
//! trilinear upsampling and skip concatenation to per-voxel class logits.

mod config;
mod net;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::LiverFormerConfig;
pub use net::{
    decoder_forward, encoder_forward, forward, init_params, liverformer_forward, patchify_embed, transformer_layer,
    unembed, unet_baseline_forward, Architecture, EncoderOutput, ModelSpec, Params, NORM_EPS,
};

use crate::autodiff::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::volume_io::{ImageVolume, LabelVolume};

/// Smoothing of the soft Dice loss.
pub const DICE_EPS: f64 = 1e-5;

/// A specification with its `f32` parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Model { spec, params })
    }

    /// Logits of one image, `[classes, D, H, W]`.
    pub fn logits(&self, image: &ImageVolume) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(image_tensor(image));
        let y = forward(&mut tape, &self.spec, &bound, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn predict(&self, image: &ImageVolume) -> Result<LabelVolume> {
        let logits = self.logits(image)?;
        let labels = argmax_classes(&logits)?;
        image.with_data(labels)
    }
}

/// `[1, D, H, W]` view of an image.
pub fn image_tensor<T: Scalar>(image: &ImageVolume) -> Tensor<T> {
    let d = image.dims();
    Tensor::new(vec![1, d.d, d.h, d.w], image.data().iter().map(|&v| T::of(v as f64)).collect())
        .expect("volume dims are positive")
}

/// `[classes, D, H, W]` one-hot encoding of a label volume.
pub fn one_hot<T: Scalar>(labels: &LabelVolume, classes: usize) -> Result<Tensor<T>> {
    let d = labels.dims();
    let v = d.len();
    let mut data = vec![T::zero(); classes * v];
    for (i, &l) in labels.data().iter().enumerate() {
        if l as usize >= classes {
            return Err(Error::InvalidLabel(l as f64));
        }
        data[l as usize * v + i] = T::one();
    }
    Tensor::new(vec![classes, d.d, d.h, d.w], data)
}

/// Multi-class soft Dice loss of class-first logits against a one-hot truth.
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, truth_onehot: &Tensor<T>) -> Result<Var> {
    tape.dice_loss(logits, truth_onehot, DICE_EPS)
}

/// Softmax over the class axis of `[classes, ...]` logits.
pub fn class_probabilities<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = logits.shape()[0];
    let v = logits.numel() / classes;
    let z = logits.data();
    let mut out = vec![T::zero(); z.len()];
    for i in 0..v {
        let m = (0..classes).map(|c| z[c * v + i]).fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for c in 0..classes {
            let e = (z[c * v + i] - m).exp();
            out[c * v + i] = e;
            s += e;
        }
        for c in 0..classes {
            out[c * v + i] = out[c * v + i] / s;
        }
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Per-voxel argmax over the class axis; ties go to the lower class.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<u8>> {
    let shape = logits.shape();
    if shape.len() < 2 || shape[0] > 256 {
        return Err(Error::ShapeMismatch(format!("logits {shape:?}")));
    }
    let classes = shape[0];
    let v = logits.numel() / classes;
    let z = logits.data();
    Ok((0..v)
        .map(|i| {
            let mut best = 0;
            for c in 1..classes {
                if z[c * v + i] > z[best * v + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect())
}

#[cfg(test)]
mod tests;
