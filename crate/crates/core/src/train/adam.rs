use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One bias-corrected Adam update of `param` in place; `t` counts from 1.
pub fn adam_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    state: &mut Moments<T>,
    lr: f64,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = param.len();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "adam: param {n}, grad {}, moments {}/{}",
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(Error::Config("adam step count starts at 1".into()));
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for i in 0..n {
        let g = grad[i];
        let m = b1 * state.m[i] + (T::one() - b1) * g;
        let v = b2 * state.v[i] + (T::one() - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        param[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
    Ok(())
}

/// Adam over a whole parameter registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub state: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            state: params.iter().map(|p| Moments::zeros(p.value.numel())).collect(),
        }
    }

    /// Applies one step; `grads` is in registry order.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != self.state.len() || params.len() != self.state.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} states",
                params.len(),
                grads.len(),
                self.state.len()
            )));
        }
        self.t += 1;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.state) {
            adam_step(p.value.data_mut(), g, s, lr, self.t, &self.cfg)?;
        }
        Ok(())
    }
}
