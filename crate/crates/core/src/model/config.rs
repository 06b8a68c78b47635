use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::NUM_CLASSES;

/// Architecture sizes. The positional table fixes the token count, so the
/// input grid is part of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiverFormerConfig {
    pub in_channels: usize,
    pub classes: usize,
    /// `[D, H, W]` of every input.
    pub input_dims: [usize; 3],
    pub encoder_channels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Bias on the patch projection `H`.
    pub patch_bias: bool,
}

impl Default for LiverFormerConfig {
    fn default() -> Self {
        LiverFormerConfig {
            in_channels: 1,
            classes: NUM_CLASSES,
            input_dims: [16, 64, 64],
            encoder_channels: vec![8, 16, 32],
            encoder_strides: vec![1, 2, 2],
            patch_size: 2,
            hidden_dim: 64,
            transformer_layers: 4,
            heads: 4,
            mlp_ratio: 4,
            patch_bias: false,
        }
    }
}

impl LiverFormerConfig {
    pub fn total_stride(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    /// Spatial dims of the final encoder stage.
    pub fn feature_dims(&self) -> [usize; 3] {
        self.input_dims.map(|n| n / self.total_stride())
    }

    pub fn tokens(&self) -> usize {
        self.feature_dims().iter().map(|n| n / self.patch_size).product()
    }

    pub fn token_width(&self) -> usize {
        self.patch_size.pow(3) * self.last_channels()
    }

    pub fn last_channels(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.classes < 2 {
            return bad(format!("in_channels {} classes {}", self.in_channels, self.classes));
        }
        if self.encoder_channels.is_empty()
            || self.encoder_channels.len() != self.encoder_strides.len()
            || self.encoder_channels.contains(&0)
            || self.encoder_strides.contains(&0)
        {
            return bad(format!(
                "encoder channels {:?} / strides {:?}",
                self.encoder_channels, self.encoder_strides
            ));
        }
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::IndivisibleHeads {
                dim: self.hidden_dim,
                heads: self.heads,
            });
        }
        if self.patch_size == 0 || self.mlp_ratio == 0 {
            return bad("patch_size and mlp_ratio must be positive".into());
        }
        let s = self.total_stride();
        for &n in &self.input_dims {
            if n == 0 || n % s != 0 {
                return bad(format!("input extent {n} is not a multiple of the total stride {s}"));
            }
            if !(n / s).is_multiple_of(self.patch_size) {
                return Err(Error::NotDivisibleByPatch {
                    extent: n / s,
                    patch: self.patch_size,
                });
            }
        }
        Ok(())
    }
}
