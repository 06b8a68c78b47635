//! Plain-text run configuration.
//!
//! One `section.key = value` per line; `#` starts a comment. Lists are
//! whitespace separated. Keys not listed in [`KEYS`] are rejected, and
//! every key is written back by [`RunConfig::to_text`].

use liverformer::augment::{AugmentConfig, PartnerRule};
use liverformer::deform::RegistrationConfig;
use liverformer::model::{Architecture, LiverFormerConfig, ModelSpec};
use liverformer::phantom::{PhantomConfig, Plane};
use liverformer::preprocess::{Normalization, PreprocessConfig};
use liverformer::train::TrainConfig;
use liverformer::volume_io::Dims;
use liverformer::{Error, Result};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("preprocess.target_spacing", "isotropic output spacing, mm"),
    ("preprocess.normalization", "window | minmax"),
    ("preprocess.window_level", "HU window center"),
    ("preprocess.window_width", "HU window width"),
    ("preprocess.target_dims", "output grid D H W"),
    ("model.architecture", "liverformer | unet"),
    ("model.seed", "parameter initialization seed"),
    ("model.in_channels", "input channels"),
    ("model.classes", "output classes including background"),
    ("model.input_dims", "input grid D H W"),
    ("model.encoder_channels", "channels per encoder stage"),
    ("model.encoder_strides", "stride per encoder stage"),
    ("model.patch_size", "token patch edge"),
    ("model.hidden_dim", "token width"),
    ("model.transformer_layers", "number of Transformer layers"),
    ("model.heads", "attention heads"),
    ("model.mlp_ratio", "MLP width over token width"),
    ("model.patch_bias", "bias on the patch embedding (true | false)"),
    ("train.lr0", "initial learning rate"),
    ("train.decay_factor", "learning rate multiplier per decay"),
    ("train.decay_every", "epochs between decays"),
    ("train.epochs", "number of epochs"),
    ("train.batch_size", "cases per optimizer step"),
    ("train.adam_beta1", "Adam first-moment decay"),
    ("train.adam_beta2", "Adam second-moment decay"),
    ("train.adam_eps", "Adam denominator offset"),
    ("train.seed", "case order and split seed"),
    ("train.split", "train val test fractions"),
    ("augment.partner_rule", "exclude-self | exclude-templates"),
    ("augment.pyramid_levels", "registration pyramid levels"),
    ("augment.iterations_per_level", "demons iterations per level"),
    ("augment.smoothing_sigma", "velocity smoothing, voxels"),
    ("augment.force_normalization", "demons force normalization"),
    ("augment.exp_steps", "scaling-and-squaring steps"),
    ("phantom.dims", "phantom grid D H W"),
    ("phantom.spacing", "phantom voxel spacing D H W, mm"),
    ("phantom.semi_axes", "ellipsoid semi-axes as fractions of the grid"),
    ("phantom.plane1", "oblique cut: normal z y x, offset"),
    ("phantom.plane2", "oblique cut: normal z y x, offset"),
    ("phantom.plane3", "oblique cut: normal z y x, offset"),
    ("phantom.axial_offset", "normalized height of the axial cut"),
    ("phantom.segment_intensity_mean", "segment texture mean"),
    ("phantom.segment_intensity_std", "segment texture std"),
    ("phantom.background_intensity", "intensity outside the ellipsoid"),
    ("phantom.vessel_intensity", "tube intensity"),
    ("phantom.vessel_radius", "tube radius, voxels"),
    ("phantom.noise_std", "additive noise std"),
    ("phantom.warp_magnitude", "largest warp displacement, voxels"),
    ("phantom.warp_sigma", "warp smoothness, voxels"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationKind {
    Window,
    MinMax,
}

/// Preprocessing knobs; the window is kept even when unused so that every
/// key round-trips.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSection {
    pub target_spacing: f64,
    pub normalization: NormalizationKind,
    pub window_level: f64,
    pub window_width: f64,
    pub target_dims: [usize; 3],
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        let (level, width) = match d.normalization {
            Normalization::Window { level, width } => (level, width),
            Normalization::MinMax => (0.0, 1.0),
        };
        PreprocessSection {
            target_spacing: d.target_spacing,
            normalization: NormalizationKind::Window,
            window_level: level,
            window_width: width,
            target_dims: d.target_dims.as_array(),
        }
    }
}

impl PreprocessSection {
    pub fn to_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            target_spacing: self.target_spacing,
            normalization: match self.normalization {
                NormalizationKind::Window => Normalization::Window {
                    level: self.window_level,
                    width: self.window_width,
                },
                NormalizationKind::MinMax => Normalization::MinMax,
            },
            target_dims: Dims::from_array(self.target_dims),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preprocess: PreprocessSection,
    pub model: ModelSpec,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub phantom: PhantomConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preprocess: PreprocessSection::default(),
            model: ModelSpec {
                architecture: Architecture::LiverFormer,
                config: LiverFormerConfig::default(),
            },
            model_seed: 0,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            phantom: PhantomConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {want}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, std::any::type_name::<T>()))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split_whitespace().map(|t| num(key, t)).collect()
}

fn array<T: std::str::FromStr + Copy + Default, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let items: Vec<T> = list(key, v)?;
    items
        .try_into()
        .map_err(|_| bad(key, v, &format!("{N} values")))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn plane_text(p: &Plane) -> String {
    format!("{} {}", join(&p.normal), p.offset)
}

fn parse_plane(key: &str, v: &str) -> Result<Plane> {
    let [z, y, x, offset]: [f64; 4] = array(key, v)?;
    Ok(Plane {
        normal: [z, y, x],
        offset,
    })
}

impl RunConfig {
    /// Value of `key` in file syntax.
    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.model.config;
        let t = &self.train;
        let r = &self.augment.registration;
        let p = &self.phantom;
        let pp = &self.preprocess;
        Ok(match key {
            "preprocess.target_spacing" => pp.target_spacing.to_string(),
            "preprocess.normalization" => match pp.normalization {
                NormalizationKind::Window => "window".into(),
                NormalizationKind::MinMax => "minmax".into(),
            },
            "preprocess.window_level" => pp.window_level.to_string(),
            "preprocess.window_width" => pp.window_width.to_string(),
            "preprocess.target_dims" => join(&pp.target_dims),
            "model.architecture" => self.model.architecture.as_str().into(),
            "model.seed" => self.model_seed.to_string(),
            "model.in_channels" => m.in_channels.to_string(),
            "model.classes" => m.classes.to_string(),
            "model.input_dims" => join(&m.input_dims),
            "model.encoder_channels" => join(&m.encoder_channels),
            "model.encoder_strides" => join(&m.encoder_strides),
            "model.patch_size" => m.patch_size.to_string(),
            "model.hidden_dim" => m.hidden_dim.to_string(),
            "model.transformer_layers" => m.transformer_layers.to_string(),
            "model.heads" => m.heads.to_string(),
            "model.mlp_ratio" => m.mlp_ratio.to_string(),
            "model.patch_bias" => m.patch_bias.to_string(),
            "train.lr0" => t.lr0.to_string(),
            "train.decay_factor" => t.decay_factor.to_string(),
            "train.decay_every" => t.decay_every.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.adam_beta1" => t.adam.beta1.to_string(),
            "train.adam_beta2" => t.adam.beta2.to_string(),
            "train.adam_eps" => t.adam.eps.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.split" => join(&t.split),
            "augment.partner_rule" => self.augment.partner_rule.as_str().into(),
            "augment.pyramid_levels" => r.pyramid_levels.to_string(),
            "augment.iterations_per_level" => r.iterations_per_level.to_string(),
            "augment.smoothing_sigma" => r.smoothing_sigma.to_string(),
            "augment.force_normalization" => r.force_normalization.to_string(),
            "augment.exp_steps" => r.exp_steps.to_string(),
            "phantom.dims" => join(&p.dims),
            "phantom.spacing" => join(&p.spacing),
            "phantom.semi_axes" => join(&p.semi_axes),
            "phantom.plane1" => plane_text(&p.oblique_planes[0]),
            "phantom.plane2" => plane_text(&p.oblique_planes[1]),
            "phantom.plane3" => plane_text(&p.oblique_planes[2]),
            "phantom.axial_offset" => p.axial_offset.to_string(),
            "phantom.segment_intensity_mean" => p.segment_intensity_mean.to_string(),
            "phantom.segment_intensity_std" => p.segment_intensity_std.to_string(),
            "phantom.background_intensity" => p.background_intensity.to_string(),
            "phantom.vessel_intensity" => p.vessel_intensity.to_string(),
            "phantom.vessel_radius" => p.vessel_radius.to_string(),
            "phantom.noise_std" => p.noise_std.to_string(),
            "phantom.warp_magnitude" => p.warp_magnitude.to_string(),
            "phantom.warp_sigma" => p.warp_sigma.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        })
    }

    /// Sets one key from its file syntax; sections are validated later.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model.config;
        let t = &mut self.train;
        let r: &mut RegistrationConfig = &mut self.augment.registration;
        let p = &mut self.phantom;
        let pp = &mut self.preprocess;
        match key {
            "preprocess.target_spacing" => pp.target_spacing = num(key, v)?,
            "preprocess.normalization" => {
                pp.normalization = match v {
                    "window" => NormalizationKind::Window,
                    "minmax" => NormalizationKind::MinMax,
                    _ => return Err(bad(key, v, "window or minmax")),
                }
            }
            "preprocess.window_level" => pp.window_level = num(key, v)?,
            "preprocess.window_width" => pp.window_width = num(key, v)?,
            "preprocess.target_dims" => pp.target_dims = array(key, v)?,
            "model.architecture" => self.model.architecture = v.parse()?,
            "model.seed" => self.model_seed = num(key, v)?,
            "model.in_channels" => m.in_channels = num(key, v)?,
            "model.classes" => m.classes = num(key, v)?,
            "model.input_dims" => m.input_dims = array(key, v)?,
            "model.encoder_channels" => m.encoder_channels = list(key, v)?,
            "model.encoder_strides" => m.encoder_strides = list(key, v)?,
            "model.patch_size" => m.patch_size = num(key, v)?,
            "model.hidden_dim" => m.hidden_dim = num(key, v)?,
            "model.transformer_layers" => m.transformer_layers = num(key, v)?,
            "model.heads" => m.heads = num(key, v)?,
            "model.mlp_ratio" => m.mlp_ratio = num(key, v)?,
            "model.patch_bias" => m.patch_bias = num(key, v)?,
            "train.lr0" => t.lr0 = num(key, v)?,
            "train.decay_factor" => t.decay_factor = num(key, v)?,
            "train.decay_every" => t.decay_every = num(key, v)?,
            "train.epochs" => t.epochs = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.adam_beta1" => t.adam.beta1 = num(key, v)?,
            "train.adam_beta2" => t.adam.beta2 = num(key, v)?,
            "train.adam_eps" => t.adam.eps = num(key, v)?,
            "train.seed" => t.seed = num(key, v)?,
            "train.split" => t.split = array(key, v)?,
            "augment.partner_rule" => self.augment.partner_rule = v.parse::<PartnerRule>()?,
            "augment.pyramid_levels" => r.pyramid_levels = num(key, v)?,
            "augment.iterations_per_level" => r.iterations_per_level = num(key, v)?,
            "augment.smoothing_sigma" => r.smoothing_sigma = num(key, v)?,
            "augment.force_normalization" => r.force_normalization = num(key, v)?,
            "augment.exp_steps" => r.exp_steps = num(key, v)?,
            "phantom.dims" => p.dims = array(key, v)?,
            "phantom.spacing" => p.spacing = array(key, v)?,
            "phantom.semi_axes" => p.semi_axes = array(key, v)?,
            "phantom.plane1" => p.oblique_planes[0] = parse_plane(key, v)?,
            "phantom.plane2" => p.oblique_planes[1] = parse_plane(key, v)?,
            "phantom.plane3" => p.oblique_planes[2] = parse_plane(key, v)?,
            "phantom.axial_offset" => p.axial_offset = num(key, v)?,
            "phantom.segment_intensity_mean" => p.segment_intensity_mean = num(key, v)?,
            "phantom.segment_intensity_std" => p.segment_intensity_std = num(key, v)?,
            "phantom.background_intensity" => p.background_intensity = num(key, v)?,
            "phantom.vessel_intensity" => p.vessel_intensity = num(key, v)?,
            "phantom.vessel_radius" => p.vessel_radius = num(key, v)?,
            "phantom.noise_std" => p.noise_std = num(key, v)?,
            "phantom.warp_magnitude" => p.warp_magnitude = num(key, v)?,
            "phantom.warp_sigma" => p.warp_sigma = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.to_config().validate()?;
        self.model.config.validate()?;
        self.train.validate()?;
        self.augment.registration.validate()?;
        self.phantom.validate()
    }

    /// Parses a config file; keys not given keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its description as a comment.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            let value = self.get(key).expect("KEYS lists known keys");
            out.push_str(&format!("# {doc}\n{key} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn every_key_is_readable_and_writable() {
        let mut c = RunConfig::default();
        for (key, _) in KEYS {
            let v = c.get(key).unwrap();
            c.set(key, &v).unwrap();
        }
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn errors() {
        assert!(RunConfig::parse("model.depth = 3").is_err());
        assert!(RunConfig::parse("train.epochs = 3\ntrain.epochs = 4").is_err());
        assert!(RunConfig::parse("train.epochs").is_err());
        assert!(RunConfig::parse("train.epochs = many").is_err());
        assert!(RunConfig::parse("train.split = 0.5 0.5").is_err());
        assert!(RunConfig::parse("train.decay_factor = 2").is_err());
        let e = RunConfig::parse("# ok\n\nmodel.heads = 3").unwrap_err().to_string();
        assert!(e.contains("divisible"), "{e}");
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse("model.architecture = unet # baseline\ntrain.epochs = 5\naugment.partner_rule = exclude-templates\npreprocess.normalization = minmax").unwrap();
        assert_eq!(c.model.architecture, Architecture::Unet);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.augment.partner_rule, PartnerRule::ExcludeTemplates);
        assert_eq!(c.preprocess.to_config().normalization, Normalization::MinMax);
    }

    proptest! {
        #[test]
        fn numeric_values_round_trip(
            lr in 1e-6f64..1.0, decay in 0.01f64..=1.0, every in 1usize..500, seed in any::<u64>(),
            sigma in 0.1f64..8.0, level in -500.0f64..500.0, mean in 0.0f64..=1.0,
            plane in proptest::array::uniform4(-1.0f64..1.0),
        ) {
            let mut c = RunConfig::default();
            c.train.lr0 = lr;
            c.train.decay_factor = decay;
            c.train.decay_every = every;
            c.train.seed = seed;
            c.model_seed = seed;
            c.augment.registration.smoothing_sigma = sigma;
            c.preprocess.window_level = level;
            c.phantom.segment_intensity_mean = mean;
            c.phantom.oblique_planes[1] = Plane { normal: [plane[0], plane[1], 0.5 + plane[2].abs()], offset: plane[3] };
            prop_assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
