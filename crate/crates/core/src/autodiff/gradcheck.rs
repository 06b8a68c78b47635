//! Central finite-difference gradient checks at 64-bit precision.

use rand::seq::index::sample;
use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    /// `(input, element)` of the largest error.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Elements left out because `x ± h` changes some ReLU's active set, so
    /// the central difference spans a kink and is not a valid oracle.
    pub kinks: usize,
}

/// Step used for element value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences. `per_input` limits the checked elements of each input to a
/// random sample of that size.
pub fn check_gradients<F, R>(inputs: &[Tensor<f64>], f: F, per_input: Option<(usize, &mut R)>) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<(f64, Vec<bool>)> {
        let mut t = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok((t.data(out)[0], t.relu_pattern()))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut result = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
        kinks: 0,
    };
    let mut rng = per_input;
    for (ii, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[ii]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);
        let idx: Vec<usize> = match rng.as_mut() {
            Some((k, r)) if *k < x.numel() => sample(*r, x.numel(), *k).into_vec(),
            _ => (0..x.numel()).collect(),
        };
        for e in idx {
            let mut ins = inputs.to_vec();
            let x0 = x.data()[e];
            let h = fd_step(x0);
            ins[ii].data_mut()[e] = x0 + h;
            let fp = eval(&ins)?;
            ins[ii].data_mut()[e] = x0 - h;
            let fm = eval(&ins)?;
            if fp.1 != fm.1 {
                result.kinks += 1;
                continue;
            }
            let (fp, fm) = (fp.0, fm.0);
            let numeric = (fp - fm) / (2.0 * h);
            let err = rel_err(analytic[e], numeric);
            if result.checked == 0 || err > result.max_rel_err {
                result.max_rel_err = err;
                result.worst = (ii, e);
            }
            result.checked += 1;
        }
    }
    Ok(result)
}

/// Random `N(0, 1)` tensor.
pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

/// `w / √rows`, the spread of an initialized `[fan_in, fan_out]` matrix.
fn fan_in_scaled(mut w: Tensor<f64>) -> Tensor<f64> {
    let s = 1.0 / (w.shape()[0] as f64).sqrt();
    w.data_mut().iter_mut().for_each(|v| *v *= s);
    w
}

/// One-hot `[C, ...spatial]` tensor from class indices.
pub fn one_hot(labels: &[u8], classes: usize, spatial: &[usize]) -> Tensor<f64> {
    let v = labels.len();
    let mut data = vec![0.0; classes * v];
    for (i, &l) in labels.iter().enumerate() {
        data[l as usize * v + i] = 1.0;
    }
    let mut shape = vec![classes];
    shape.extend_from_slice(spatial);
    Tensor::new(shape, data).expect("valid shape")
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Projects an op's output to a scalar with fixed random weights.
fn projected<R: Rng>(out_shape: &[usize], rng: &mut R, op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> OpFn {
    let w = randn(out_shape, rng);
    Box::new(move |t, v| {
        let y = op(t, v)?;
        t.weighted_sum(y, &w)
    })
}

/// Gradient checks of every differentiable op on random inputs drawn from
/// `rng`; returns `(op name, result)` pairs.
pub fn op_suite<R: Rng>(rng: &mut R) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> = Vec::new();
    let m34 = |rng: &mut R| randn(&[3, 4], rng);
    cases.push(("add", vec![m34(rng), m34(rng)], projected(&[3, 4], rng, |t, v| t.add(v[0], v[1]))));
    cases.push(("sub", vec![m34(rng), m34(rng)], projected(&[3, 4], rng, |t, v| t.sub(v[0], v[1]))));
    cases.push(("mul", vec![m34(rng), m34(rng)], projected(&[3, 4], rng, |t, v| t.mul(v[0], v[1]))));
    cases.push(("scale", vec![m34(rng)], projected(&[3, 4], rng, |t, v| Ok(t.scale(v[0], -1.7)))));
    cases.push(("relu", vec![m34(rng)], projected(&[3, 4], rng, |t, v| Ok(t.relu(v[0])))));
    cases.push(("gelu", vec![m34(rng)], projected(&[3, 4], rng, |t, v| Ok(t.gelu(v[0])))));
    cases.push((
        "matmul",
        vec![m34(rng), randn(&[4, 2], rng)],
        projected(&[3, 2], rng, |t, v| t.matmul(v[0], v[1])),
    ));
    cases.push((
        "linear",
        vec![m34(rng), randn(&[4, 5], rng), randn(&[5], rng)],
        projected(&[3, 5], rng, |t, v| t.linear(v[0], v[1], Some(v[2]))),
    ));
    cases.push(("transpose", vec![m34(rng)], projected(&[4, 3], rng, |t, v| t.transpose(v[0]))));
    cases.push(("slice_cols", vec![m34(rng)], projected(&[3, 2], rng, |t, v| t.slice_cols(v[0], 1, 2))));
    cases.push((
        "conv3d",
        vec![randn(&[2, 5, 5, 5], rng), randn(&[3, 2, 3, 3, 3], rng), randn(&[3], rng)],
        projected(&[3, 5, 5, 5], rng, |t, v| t.conv3d(v[0], v[1], Some(v[2]), 1, 1)),
    ));
    cases.push((
        "conv3d_strided",
        vec![randn(&[2, 4, 4, 6], rng), randn(&[2, 2, 3, 3, 3], rng)],
        projected(&[2, 2, 2, 3], rng, |t, v| t.conv3d(v[0], v[1], None, 2, 1)),
    ));
    cases.push((
        "conv3d_valid",
        vec![randn(&[1, 4, 5, 3], rng), randn(&[2, 1, 3, 3, 3], rng)],
        projected(&[2, 2, 3, 1], rng, |t, v| t.conv3d(v[0], v[1], None, 1, 0)),
    ));
    cases.push((
        "layer_norm",
        vec![randn(&[3, 5], rng), randn(&[5], rng), randn(&[5], rng)],
        projected(&[3, 5], rng, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
    ));
    cases.push((
        "instance_norm",
        vec![randn(&[2, 3, 2, 3], rng), randn(&[2], rng), randn(&[2], rng)],
        projected(&[2, 3, 2, 3], rng, |t, v| t.instance_norm(v[0], v[1], v[2], 1e-5)),
    ));
    cases.push(("softmax", vec![m34(rng)], projected(&[3, 4], rng, |t, v| Ok(t.softmax(v[0])))));
    cases.push((
        "multi_head_attention",
        // projections at initialization scale; unit-variance weights push
        // the softmax into saturation where h² truncation exceeds 1e-6
        vec![
            randn(&[4, 8], rng),
            fan_in_scaled(randn(&[8, 8], rng)),
            fan_in_scaled(randn(&[8, 8], rng)),
            fan_in_scaled(randn(&[8, 8], rng)),
            fan_in_scaled(randn(&[8, 8], rng)),
        ],
        projected(&[4, 8], rng, |t, v| {
            super::tape::multi_head_attention(t, v[0], 2, v[1], v[2], v[3], v[4])
        }),
    ));
    cases.push((
        "upsample_trilinear",
        vec![randn(&[2, 2, 3, 2], rng)],
        projected(&[2, 4, 6, 4], rng, |t, v| t.upsample_trilinear(v[0], 2)),
    ));
    cases.push(("reshape", vec![m34(rng)], projected(&[2, 6], rng, |t, v| t.reshape(v[0], &[2, 6]))));
    cases.push((
        "concat",
        vec![randn(&[2, 3, 2], rng), randn(&[2, 1, 2], rng)],
        projected(&[2, 4, 2], rng, |t, v| t.concat(&[v[0], v[1]], 1)),
    ));
    cases.push((
        "patchify",
        vec![randn(&[2, 4, 2, 4], rng)],
        projected(&[4, 16], rng, |t, v| t.patchify(v[0], 2)),
    ));
    cases.push((
        "unpatchify",
        vec![randn(&[4, 16], rng)],
        projected(&[2, 4, 2, 4], rng, |t, v| t.unpatchify(v[0], 2, 2, [4, 2, 4])),
    ));
    let labels: Vec<u8> = (0..27).map(|_| rng.gen_range(0..10)).collect();
    let target = one_hot(&labels, 10, &[3, 3, 3]);
    cases.push((
        "dice_loss",
        vec![randn(&[10, 3, 3, 3], rng)],
        Box::new(move |t, v| t.dice_loss(v[0], &target, 1e-5)),
    ));
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, check_gradients::<_, R>(&inputs, f, None)?)))
        .collect()
}
