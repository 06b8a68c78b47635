//! Arena-based reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! reverse topological order. Values are never mutated after creation.

use super::kernels::{self, ConvGeom};
use super::scalar::Scalar;
use super::tensor::{shape_str, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// `√(2/π)` and the cubic coefficient of the tanh GELU approximation.
pub const GELU_C: f64 = 0.797_884_560_802_865_4;
pub const GELU_A: f64 = 0.044_715;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    MatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Conv3d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// Row-wise (`per = d`) or channel-wise normalization with affine γ, β.
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        per: usize,
        /// Affine parameters index by row position (layer norm) or by group
        /// (instance norm).
        by_position: bool,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Reshape(Var),
    /// `out[i] = x[map[i]]`.
    Gather(Var, Vec<usize>),
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        /// Per-input block length (axis extent × inner).
        blocks: Vec<usize>,
    },
    Upsample {
        x: Var,
        channels: usize,
        dims: [usize; 3],
        factor: usize,
    },
    Sum(Var),
    DiceLoss {
        logits: Var,
        target: Vec<T>,
        probs: Vec<T>,
        classes: usize,
        eps: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// Accumulated gradient, kept for leaves only.
    grad: Option<Vec<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {} vs {}", shape_str(a), shape_str(b)))
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Sign of every ReLU input, in tape order. Two evaluations with different
    /// patterns straddle a point where the function is not differentiable.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                out.extend(self.data(a).iter().map(|&x| x > T::zero()));
            }
        }
        out
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, rg)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, what: &str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(what, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, op, &[a, b]))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (c, k, half, one) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5), T::one());
        self.map(a, |x| half * x * (one + (c * (x + k * x * x * x)).tanh()), Op::Gelu(a))
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [n, m] => Ok((n, m)),
            ref s => Err(Error::ShapeMismatch(format!("{what}: expected a matrix, got {}", shape_str(s)))),
        }
    }

    /// `[n, k] · [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix(a, "matmul")?;
        let (k2, m) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); n * m];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `x·W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, k) = self.matrix(x, "linear")?;
        let (k2, m) = self.matrix(w, "linear")?;
        if k != k2 {
            return Err(mismatch("linear", self.shape(x), self.shape(w)));
        }
        let mut out = vec![T::zero(); n * m];
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(mismatch("linear bias", self.shape(b), &[m]));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(self.data(b));
            }
        }
        kernels::matmul_acc(self.data(x), self.data(w), &mut out, n, k, m);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Linear(x, w, b), &inputs))
    }

    fn gather(&mut self, x: Var, shape: Vec<usize>, map: Vec<usize>) -> Result<Var> {
        let src = self.data(x);
        let data = map.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Gather(x, map), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.matrix(x, "transpose")?;
        let map = (0..n * m).map(|o| (o % n) * m + o / n).collect();
        self.gather(x, vec![m, n], map)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.matrix(x, "slice_cols")?;
        if len == 0 || start + len > m {
            return Err(Error::ShapeMismatch(format!("columns {start}..{} of {m}", start + len)));
        }
        let map = (0..n * len).map(|o| (o / len) * m + start + o % len).collect();
        self.gather(x, vec![n, len], map)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch(format!("concat axis {axis} of {}", shape_str(&first))));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == first.len() && (0..s.len()).all(|i| i == axis || s[i] == first[i]);
            if !ok {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let blocks: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &bl) in inputs.iter().zip(&blocks) {
                data.extend_from_slice(&self.data(v)[o * bl..(o + 1) * bl]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                blocks,
            },
            inputs,
        ))
    }

    fn volume(&self, v: Var, what: &str) -> Result<(usize, [usize; 3])> {
        match *self.shape(v) {
            [c, d, h, w] => Ok((c, [d, h, w])),
            ref s => Err(Error::ShapeMismatch(format!("{what}: expected [C, D, H, W], got {}", shape_str(s)))),
        }
    }

    /// `[C, D, H, W]` to `[N, P³·C]` tokens; see [`kernels::patch_index_map`].
    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let (c, dims) = self.volume(x, "patchify")?;
        if let Some(&extent) = dims.iter().find(|&&n| p == 0 || n % p != 0) {
            return Err(Error::NotDivisibleByPatch { extent, patch: p });
        }
        let n = dims.iter().map(|d| d / p).product();
        self.gather(x, vec![n, p * p * p * c], kernels::patch_index_map(c, dims, p))
    }

    /// Inverse of [`Tape::patchify`] onto a `[C, D, H, W]` grid.
    pub fn unpatchify(&mut self, x: Var, p: usize, channels: usize, dims: [usize; 3]) -> Result<Var> {
        if let Some(&extent) = dims.iter().find(|&&n| p == 0 || n % p != 0) {
            return Err(Error::NotDivisibleByPatch { extent, patch: p });
        }
        let n: usize = dims.iter().map(|d| d / p).product();
        let want = [n, p * p * p * channels];
        if self.shape(x) != want {
            return Err(mismatch("unpatchify", self.shape(x), &want));
        }
        let fwd = kernels::patch_index_map(channels, dims, p);
        let mut map = vec![0; fwd.len()];
        for (token_idx, &grid_idx) in fwd.iter().enumerate() {
            map[grid_idx] = token_idx;
        }
        self.gather(x, vec![channels, dims[0], dims[1], dims[2]], map)
    }

    /// Cross-correlation of `x: [C_in, D, H, W]` with `k: [C_out, C_in, K, K, K]`.
    ///
    /// Output extent is `⌊(n + 2·pad − K) / stride⌋ + 1`; a stride above 1
    /// must divide every input extent so upsampling by the stride restores it.
    pub fn conv3d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, input) = self.volume(x, "conv3d input")?;
        let (c_out, ks) = match *self.shape(k) {
            [co, ci, a, b2, c] if a == b2 && b2 == c && ci == c_in && a % 2 == 1 => (co, a),
            ref s => return Err(mismatch("conv3d kernel", s, self.shape(x))),
        };
        if stride == 0 {
            return Err(Error::NonIntegralOutput("stride 0".into()));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * pad;
            if span < ks || (stride > 1 && input[a] % stride != 0) {
                return Err(Error::NonIntegralOutput(format!(
                    "extent {} with kernel {ks}, stride {stride}, pad {pad}",
                    input[a]
                )));
            }
            output[a] = (span - ks) / stride + 1;
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(mismatch("conv3d bias", self.shape(b), &[c_out]));
            }
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            input,
            output,
            k: ks,
            stride,
            pad,
        };
        let mut out = vec![T::zero(); c_out * output.iter().product::<usize>()];
        kernels::conv3d_forward(&geom, self.data(x), self.data(k), b.map(|b| self.data(b)), &mut out);
        let t = Tensor::new(vec![c_out, output[0], output[1], output[2]], out)?;
        let mut inputs = vec![x, k];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv3d { x, k, b, geom }, &inputs))
    }

    #[allow(clippy::too_many_arguments)]
    fn norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, per: usize, by_position: bool, eps: f64) -> Result<Var> {
        let p_len = if by_position { per } else { groups };
        for v in [gamma, beta] {
            if self.shape(v) != [p_len] {
                return Err(mismatch("norm affine", self.shape(v), &[p_len]));
            }
        }
        let eps = T::of(eps);
        let n = T::of(per as f64);
        let src = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); groups];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..groups {
            let row = &src[r * per..(r + 1) * per];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..per {
                let h = (row[j] - mean) * rs;
                xhat[r * per + j] = h;
                let pi = if by_position { j } else { r };
                out[r * per + j] = g[pi] * h + b[pi];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            t,
            Op::Norm {
                x,
                gamma,
                beta,
                groups,
                per,
                by_position,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Row-wise normalization of `x: [N, d]`, then `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.matrix(x, "layer_norm")?;
        self.norm(x, gamma, beta, n, d, true, eps)
    }

    /// Per-channel normalization of `x: [C, D, H, W]` over space, then `γ_c·x̂ + β_c`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (c, dims) = self.volume(x, "instance_norm")?;
        self.norm(x, gamma, beta, c, dims.iter().product(), false, eps)
    }

    /// Max-shifted softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().expect("nonempty shape");
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Trilinear upsampling of `[C, D, H, W]` by an integer factor, half-pixel
    /// aligned (corners not aligned), clamped at the edges.
    pub fn upsample_trilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (c, dims) = self.volume(x, "upsample")?;
        if factor == 0 {
            return Err(Error::ShapeMismatch("upsample factor 0".into()));
        }
        let mut data = self.data(x).to_vec();
        let mut cur = dims;
        for axis in 0..3 {
            let taps = kernels::upsample_taps(dims[axis], factor);
            data = kernels::interp_axis(&data, c, cur, axis, &taps);
            cur[axis] *= factor;
        }
        let t = Tensor::new(vec![c, cur[0], cur[1], cur[2]], data)?;
        Ok(self.push(
            t,
            Op::Upsample {
                x,
                channels: c,
                dims,
                factor,
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ x ⊙ w` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, w: &Tensor<T>) -> Result<Var> {
        let c = self.constant(w.clone());
        let m = self.mul(x, c)?;
        Ok(self.sum(m))
    }

    /// Soft multi-class Dice loss over class-first logits `[C, ...]`:
    /// `p = softmax over C`, `L = 1 − (1/C)·Σ_c (2·Σ p·g + ε) / (Σ p² + Σ g² + ε)`.
    pub fn dice_loss(&mut self, logits: Var, target: &Tensor<T>, eps: f64) -> Result<Var> {
        if self.shape(logits) != target.shape() || self.shape(logits).len() < 2 {
            return Err(mismatch("dice_loss", self.shape(logits), target.shape()));
        }
        let classes = self.shape(logits)[0];
        let voxels = self.value(logits).numel() / classes;
        let z = self.data(logits);
        let mut probs = vec![T::zero(); z.len()];
        for v in 0..voxels {
            let m = (0..classes).map(|c| z[c * voxels + v]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for c in 0..classes {
                let e = (z[c * voxels + v] - m).exp();
                probs[c * voxels + v] = e;
                s += e;
            }
            for c in 0..classes {
                probs[c * voxels + v] = probs[c * voxels + v] / s;
            }
        }
        let eps = T::of(eps);
        let g = target.data();
        let mut total = T::zero();
        for c in 0..classes {
            let (num, den) = dice_terms(&probs[c * voxels..(c + 1) * voxels], &g[c * voxels..(c + 1) * voxels]);
            total += (T::of(2.0) * num + eps) / (den + eps);
        }
        let loss = T::one() - total / T::of(classes as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::DiceLoss {
                logits,
                target: g.to_vec(),
                probs,
                classes,
                eps,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let len = |v: Var| self.nodes[v.0].value.numel();
        match &self.nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.rg(*a) {
                    acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if self.rg(*b) {
                    acc(grads, *b, g.len()).iter_mut().zip(g).for_each(|(x, &y)| *x += sign * y);
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.rg(this) {
                        let o = self.data(other);
                        acc(grads, this, g.len())
                            .iter_mut()
                            .zip(g.iter().zip(o))
                            .for_each(|(x, (&gy, &ov))| *x += gy * ov);
                    }
                }
            }
            Op::Scale(a, s) => {
                acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(x, &y)| *x += *s * y);
            }
            Op::Relu(a) => {
                let xv = self.data(*a);
                acc(grads, *a, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(xv))
                    .for_each(|(x, (&gy, &v))| {
                        if v > T::zero() {
                            *x += gy
                        }
                    });
            }
            Op::Gelu(a) => {
                let (c, k, half, one) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5), T::one());
                let xv = self.data(*a);
                acc(grads, *a, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(xv))
                    .for_each(|(x, (&gy, &v))| {
                        let t = (c * (v + k * v * v * v)).tanh();
                        let d = half * (one + t) + half * v * (one - t * t) * c * (one + T::of(3.0) * k * v * v);
                        *x += gy * d;
                    });
            }
            Op::MatMul(a, b) | Op::Linear(a, b, _) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                if self.rg(*a) {
                    kernels::matmul_nt_acc(g, self.data(*b), acc(grads, *a, n * k), n, m, k);
                }
                if self.rg(*b) {
                    kernels::matmul_tn_acc(self.data(*a), g, acc(grads, *b, k * m), n, k, m);
                }
                if let Op::Linear(_, _, Some(bias)) = &self.nodes[i].op {
                    if self.rg(*bias) {
                        let gb = acc(grads, *bias, m);
                        for row in g.chunks(m) {
                            gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                        }
                    }
                }
            }
            Op::Conv3d { x, k, b, geom } => {
                if self.rg(*x) {
                    kernels::conv3d_backward_input(geom, g, self.data(*k), acc(grads, *x, len(*x)));
                }
                if self.rg(*k) {
                    kernels::conv3d_backward_kernel(geom, g, self.data(*x), acc(grads, *k, len(*k)));
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let vo: usize = geom.output.iter().product();
                        let gb = acc(grads, *b, geom.c_out);
                        for (co, chunk) in g.chunks(vo).enumerate() {
                            gb[co] += chunk.iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                groups,
                per,
                by_position,
                xhat,
                rstd,
            } => {
                let (groups, per, by_position) = (*groups, *per, *by_position);
                let p_len = if by_position { per } else { groups };
                let gam = self.data(*gamma);
                if self.rg(*gamma) {
                    let gg = acc(grads, *gamma, p_len);
                    for (j, (&gy, &h)) in g.iter().zip(xhat).enumerate() {
                        gg[if by_position { j % per } else { j / per }] += gy * h;
                    }
                }
                if self.rg(*beta) {
                    let gb = acc(grads, *beta, p_len);
                    for (j, &gy) in g.iter().enumerate() {
                        gb[if by_position { j % per } else { j / per }] += gy;
                    }
                }
                if self.rg(*x) {
                    let n = T::of(per as f64);
                    let gx = acc(grads, *x, groups * per);
                    let mut dh = vec![T::zero(); per];
                    for r in 0..groups {
                        let rg = &g[r * per..(r + 1) * per];
                        let rh = &xhat[r * per..(r + 1) * per];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..per {
                            let gm = if by_position { gam[j] } else { gam[r] };
                            dh[j] = rg[j] * gm;
                            s1 += dh[j];
                            s2 += dh[j] * rh[j];
                        }
                        let scale = rstd[r] / n;
                        for j in 0..per {
                            gx[r * per + j] += scale * (n * dh[j] - s1 - rh[j] * s2);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = self.nodes[i].value.data();
                let n = *self.shape(*x).last().unwrap();
                let gx = acc(grads, *x, y.len());
                for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        out[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Reshape(x) => {
                acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
            Op::Gather(x, map) => {
                let gx = acc(grads, *x, len(*x));
                for (&src, &gy) in map.iter().zip(g) {
                    gx[src] += gy;
                }
            }
            Op::Concat { inputs, outer, blocks } => {
                let total: usize = blocks.iter().sum();
                let mut off = 0;
                for (&v, &bl) in inputs.iter().zip(blocks) {
                    if self.rg(v) {
                        let gx = acc(grads, v, outer * bl);
                        for o in 0..*outer {
                            let src = &g[o * total + off..o * total + off + bl];
                            gx[o * bl..(o + 1) * bl].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                        }
                    }
                    off += bl;
                }
            }
            Op::Upsample {
                x,
                channels,
                dims,
                factor,
            } => {
                let mut cur = dims.map(|d| d * factor);
                let mut data = g.to_vec();
                for axis in (0..3).rev() {
                    let taps = kernels::upsample_taps(dims[axis], *factor);
                    cur[axis] = dims[axis];
                    data = kernels::interp_axis_transpose(&data, *channels, cur, axis, &taps);
                }
                acc(grads, *x, data.len()).iter_mut().zip(&data).for_each(|(a, &b)| *a += b);
            }
            Op::Sum(x) => {
                let gy = g[0];
                acc(grads, *x, len(*x)).iter_mut().for_each(|a| *a += gy);
            }
            Op::DiceLoss {
                logits,
                target,
                probs,
                classes,
                eps,
            } => {
                let voxels = probs.len() / classes;
                let gl = g[0];
                let two = T::of(2.0);
                let inv_c = T::one() / T::of(*classes as f64);
                // ∂L/∂p
                let mut dp = vec![T::zero(); probs.len()];
                for c in 0..*classes {
                    let p = &probs[c * voxels..(c + 1) * voxels];
                    let t = &target[c * voxels..(c + 1) * voxels];
                    let (num, den) = dice_terms(p, t);
                    let (num, den) = (two * num + *eps, den + *eps);
                    for v in 0..voxels {
                        let d_num = two * t[v];
                        let d_den = two * p[v];
                        dp[c * voxels + v] = -inv_c * (d_num * den - num * d_den) / (den * den) * gl;
                    }
                }
                let gz = acc(grads, *logits, probs.len());
                for v in 0..voxels {
                    let dot: T = (0..*classes).map(|c| dp[c * voxels + v] * probs[c * voxels + v]).sum();
                    for c in 0..*classes {
                        let idx = c * voxels + v;
                        gz[idx] += probs[idx] * (dp[idx] - dot);
                    }
                }
            }
        }
    }
}

/// `(Σ p·g, Σ p² + Σ g²)`.
fn dice_terms<T: Scalar>(p: &[T], g: &[T]) -> (T, T) {
    let mut num = T::zero();
    let mut den = T::zero();
    for (&a, &b) in p.iter().zip(g) {
        num += a * b;
        den += a * a + b * b;
    }
    (num, den)
}

/// Multi-head self-attention on `z: [N, d]` with bias-free projections
/// `Wq, Wk, Wv, Wo: [d, d]`; head `h` uses columns `h·d/heads..`.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    heads: usize,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
) -> Result<Var> {
    let d = *tape.shape(z).last().unwrap_or(&0);
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::IndivisibleHeads { dim: d, heads });
    }
    let dh = d / heads;
    let q = tape.matmul(z, wq)?;
    let k = tape.matmul(z, wk)?;
    let v = tape.matmul(z, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = tape.softmax(scores);
        outs.push(tape.matmul(attn, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    tape.matmul(cat, wo)
}
