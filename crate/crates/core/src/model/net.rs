//! Parameter layout, initialization and forward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::LiverFormerConfig;
use crate::autodiff::{multi_head_attention, BoundParams, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    LiverFormer,
    Unet,
}

impl Architecture {
    /// Prefix of every parameter name; keeps the two registries disjoint.
    pub fn prefix(self) -> &'static str {
        match self {
            Architecture::LiverFormer => "liverformer",
            Architecture::Unet => "unet",
        }
    }

    pub fn as_str(self) -> &'static str {
        self.prefix()
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "liverformer" => Ok(Architecture::LiverFormer),
            "unet" => Ok(Architecture::Unet),
            _ => Err(Error::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

/// What a model is: architecture plus sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub config: LiverFormerConfig,
}

/// Encoder output: the final feature map and each stage's input.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub features: Var,
    pub skips: Vec<Var>,
}

struct Init<'a, R> {
    store: ParamStore<f32>,
    rng: &'a mut R,
    prefix: &'static str,
}

impl<R: Rng> Init<'_, R> {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<()> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound) as f32).collect();
        self.store.insert(format!("{}.{name}", self.prefix), Tensor::new(shape.to_vec(), data)?)?;
        Ok(())
    }

    fn fill(&mut self, name: &str, shape: &[usize], v: f32) -> Result<()> {
        self.store
            .insert(format!("{}.{name}", self.prefix), Tensor::full(shape, v))?;
        Ok(())
    }

    /// He-uniform: ReLU follows every conv.
    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize) -> Result<()> {
        let fan_in = (c_in * k * k * k) as f64;
        self.uniform(name, &[c_out, c_in, k, k, k], (6.0 / fan_in).sqrt())
    }

    /// LeCun-uniform.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.uniform(name, &[fan_in, fan_out], (3.0 / fan_in as f64).sqrt())
    }

    fn norm(&mut self, name: &str, n: usize) -> Result<()> {
        self.fill(&format!("{name}.g"), &[n], 1.0)?;
        self.fill(&format!("{name}.b"), &[n], 0.0)
    }
}

fn stage_in_channels(cfg: &LiverFormerConfig, s: usize) -> usize {
    if s == 0 {
        cfg.in_channels
    } else {
        cfg.encoder_channels[s - 1]
    }
}

/// Decoder stage `s` outputs the channel count of encoder stage `s − 1`
/// (stage 0 of the first).
fn decoder_out_channels(cfg: &LiverFormerConfig, s: usize) -> usize {
    cfg.encoder_channels[s.saturating_sub(1)]
}

fn needs_projection(cfg: &LiverFormerConfig, s: usize) -> bool {
    cfg.encoder_strides[s] != 1 || stage_in_channels(cfg, s) != cfg.encoder_channels[s]
}

/// Seeded initialization: fan-in-scaled uniform weights, zero biases and
/// positional table, unit norm gains.
pub fn init_params<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Result<ParamStore<f32>> {
    let cfg = &spec.config;
    cfg.validate()?;
    let mut init = Init {
        store: ParamStore::new(),
        rng,
        prefix: spec.architecture.prefix(),
    };
    for s in 0..cfg.encoder_channels.len() {
        let (ci, co) = (stage_in_channels(cfg, s), cfg.encoder_channels[s]);
        init.conv(&format!("enc{s}.conv1.w"), co, ci, 3)?;
        init.norm(&format!("enc{s}.norm1"), co)?;
        init.conv(&format!("enc{s}.conv2.w"), co, co, 3)?;
        init.norm(&format!("enc{s}.norm2"), co)?;
        if needs_projection(cfg, s) {
            init.conv(&format!("enc{s}.proj.w"), co, ci, 1)?;
        }
    }
    if spec.architecture == Architecture::LiverFormer {
        let (d, w) = (cfg.hidden_dim, cfg.token_width());
        init.linear("embed.w", w, d)?;
        if cfg.patch_bias {
            init.fill("embed.b", &[d], 0.0)?;
        }
        init.fill("pos", &[cfg.tokens(), d], 0.0)?;
        for l in 0..cfg.transformer_layers {
            init.norm(&format!("layer{l}.ln1"), d)?;
            for m in ["wq", "wk", "wv", "wo"] {
                init.linear(&format!("layer{l}.attn.{m}"), d, d)?;
            }
            init.norm(&format!("layer{l}.ln2"), d)?;
            init.linear(&format!("layer{l}.mlp.w1"), d, d * cfg.mlp_ratio)?;
            init.fill(&format!("layer{l}.mlp.b1"), &[d * cfg.mlp_ratio], 0.0)?;
            init.linear(&format!("layer{l}.mlp.w2"), d * cfg.mlp_ratio, d)?;
            init.fill(&format!("layer{l}.mlp.b2"), &[d], 0.0)?;
        }
        init.linear("unembed.w", d, w)?;
        init.fill("unembed.b", &[w], 0.0)?;
    }
    for s in (0..cfg.encoder_channels.len()).rev() {
        let c_in = current_channels(cfg, s) + stage_in_channels(cfg, s);
        let co = decoder_out_channels(cfg, s);
        init.conv(&format!("dec{s}.conv.w"), co, c_in, 3)?;
        init.norm(&format!("dec{s}.norm"), co)?;
    }
    init.conv("head.w", cfg.classes, cfg.encoder_channels[0], 1)?;
    init.fill("head.b", &[cfg.classes], 0.0)?;
    Ok(init.store)
}

/// Channels entering decoder stage `s`.
fn current_channels(cfg: &LiverFormerConfig, s: usize) -> usize {
    if s + 1 == cfg.encoder_channels.len() {
        cfg.last_channels()
    } else {
        decoder_out_channels(cfg, s + 1)
    }
}

/// Bound parameters plus the name prefix, for terse lookups.
pub struct Params<'a> {
    pub bound: &'a BoundParams,
    pub prefix: &'static str,
}

impl Params<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.bound.var(&format!("{}.{name}", self.prefix))
    }

    fn opt(&self, name: &str) -> Option<Var> {
        self.get(name).ok()
    }
}

fn conv_norm<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Params,
    x: Var,
    conv: &str,
    norm: &str,
    stride: usize,
) -> Result<Var> {
    let y = tape.conv3d(x, p.get(conv)?, None, stride, 1)?;
    tape.instance_norm(y, p.get(&format!("{norm}.g"))?, p.get(&format!("{norm}.b"))?, NORM_EPS)
}

/// Residual stages: `relu(norm(conv(relu(norm(conv(x))))) + shortcut(x))`,
/// the first conv and the 1×1 shortcut carrying the stage stride.
pub fn encoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &LiverFormerConfig,
    p: &Params,
    x: Var,
) -> Result<EncoderOutput> {
    let mut skips = Vec::with_capacity(cfg.encoder_channels.len());
    let mut h = x;
    for s in 0..cfg.encoder_channels.len() {
        skips.push(h);
        let stride = cfg.encoder_strides[s];
        let a = conv_norm(tape, p, h, &format!("enc{s}.conv1.w"), &format!("enc{s}.norm1"), stride)?;
        let a = tape.relu(a);
        let b = conv_norm(tape, p, a, &format!("enc{s}.conv2.w"), &format!("enc{s}.norm2"), 1)?;
        let short = match p.opt(&format!("enc{s}.proj.w")) {
            Some(w) => tape.conv3d(h, w, None, stride, 0)?,
            None => h,
        };
        let sum = tape.add(b, short)?;
        h = tape.relu(sum);
    }
    Ok(EncoderOutput { features: h, skips })
}

/// `z₀ = [x₁ᵖH; …; x_Nᵖ H] + Hᵖᵒˢ`.
pub fn patchify_embed<T: Scalar>(tape: &mut Tape<T>, cfg: &LiverFormerConfig, p: &Params, features: Var) -> Result<Var> {
    let tokens = tape.patchify(features, cfg.patch_size)?;
    let z = tape.linear(tokens, p.get("embed.w")?, p.opt("embed.b"))?;
    tape.add(z, p.get("pos")?)
}

/// Pre-norm layer: `z' = MSA(LN(z)) + z`, `out = MLP(LN(z')) + z'`.
pub fn transformer_layer<T: Scalar>(tape: &mut Tape<T>, cfg: &LiverFormerConfig, p: &Params, l: usize, z: Var) -> Result<Var> {
    let n = |s: &str| format!("layer{l}.{s}");
    let h = tape.layer_norm(z, p.get(&n("ln1.g"))?, p.get(&n("ln1.b"))?, NORM_EPS)?;
    let a = multi_head_attention(
        tape,
        h,
        cfg.heads,
        p.get(&n("attn.wq"))?,
        p.get(&n("attn.wk"))?,
        p.get(&n("attn.wv"))?,
        p.get(&n("attn.wo"))?,
    )?;
    let z1 = tape.add(a, z)?;
    let h = tape.layer_norm(z1, p.get(&n("ln2.g"))?, p.get(&n("ln2.b"))?, NORM_EPS)?;
    let h = tape.linear(h, p.get(&n("mlp.w1"))?, Some(p.get(&n("mlp.b1"))?))?;
    let h = tape.gelu(h);
    let h = tape.linear(h, p.get(&n("mlp.w2"))?, Some(p.get(&n("mlp.b2"))?))?;
    tape.add(h, z1)
}

/// Projects tokens to `P³·C` and folds them back onto the feature grid.
pub fn unembed<T: Scalar>(tape: &mut Tape<T>, cfg: &LiverFormerConfig, p: &Params, z: Var) -> Result<Var> {
    let t = tape.linear(z, p.get("unembed.w")?, Some(p.get("unembed.b")?))?;
    tape.unpatchify(t, cfg.patch_size, cfg.last_channels(), cfg.feature_dims())
}

/// Per stage, deepest first: upsample by the stage stride, concatenate the
/// stage input, conv-norm-ReLU. Then a 1×1×1 conv to class logits.
pub fn decoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &LiverFormerConfig,
    p: &Params,
    bottleneck: Var,
    skips: &[Var],
) -> Result<Var> {
    if skips.len() != cfg.encoder_channels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} skips for {} stages",
            skips.len(),
            cfg.encoder_channels.len()
        )));
    }
    let mut h = bottleneck;
    for s in (0..cfg.encoder_channels.len()).rev() {
        let up = tape.upsample_trilinear(h, cfg.encoder_strides[s])?;
        let cat = tape.concat(&[up, skips[s]], 0)?;
        let y = conv_norm(tape, p, cat, &format!("dec{s}.conv.w"), &format!("dec{s}.norm"), 1)?;
        h = tape.relu(y);
    }
    tape.conv3d(h, p.get("head.w")?, Some(p.get("head.b")?), 1, 0)
}

fn check_input<T: Scalar>(tape: &Tape<T>, cfg: &LiverFormerConfig, x: Var) -> Result<()> {
    let want = [cfg.in_channels, cfg.input_dims[0], cfg.input_dims[1], cfg.input_dims[2]];
    if tape.shape(x) != want {
        return Err(Error::ShapeMismatch(format!(
            "model input {:?}, expected {want:?}",
            tape.shape(x)
        )));
    }
    Ok(())
}

/// Encoder, patch embedding, `L` Transformer layers, unembedding, decoder.
pub fn liverformer_forward<T: Scalar>(tape: &mut Tape<T>, cfg: &LiverFormerConfig, p: &Params, x: Var) -> Result<Var> {
    check_input(tape, cfg, x)?;
    let enc = encoder_forward(tape, cfg, p, x)?;
    let mut z = patchify_embed(tape, cfg, p, enc.features)?;
    for l in 0..cfg.transformer_layers {
        z = transformer_layer(tape, cfg, p, l, z)?;
    }
    let grid = unembed(tape, cfg, p, z)?;
    decoder_forward(tape, cfg, p, grid, &enc.skips)
}

/// The same encoder and decoder with the encoder output fed straight through.
pub fn unet_baseline_forward<T: Scalar>(tape: &mut Tape<T>, cfg: &LiverFormerConfig, p: &Params, x: Var) -> Result<Var> {
    check_input(tape, cfg, x)?;
    let enc = encoder_forward(tape, cfg, p, x)?;
    decoder_forward(tape, cfg, p, enc.features, &enc.skips)
}

/// Logits `[classes, D, H, W]` for `x: [C, D, H, W]`.
pub fn forward<T: Scalar>(tape: &mut Tape<T>, spec: &ModelSpec, bound: &BoundParams, x: Var) -> Result<Var> {
    let p = Params {
        bound,
        prefix: spec.architecture.prefix(),
    };
    match spec.architecture {
        Architecture::LiverFormer => liverformer_forward(tape, &spec.config, &p, x),
        Architecture::Unet => unet_baseline_forward(tape, &spec.config, &p, x),
    }
}
