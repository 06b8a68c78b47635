use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, n })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Two-sided.
    pub p_value: f64,
    /// Differences had zero variance but nonzero mean: `t` is ±∞ and p is 0.
    pub infinite_t: bool,
    pub mean_difference: f64,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let ms = MeanStd::of(&d).expect("n >= 2");
    let df = n - 1;
    let base = PairedTTestResult {
        t_statistic: 0.0,
        degrees_of_freedom: df,
        p_value: 1.0,
        infinite_t: false,
        mean_difference: ms.mean,
    };
    if ms.std == 0.0 {
        if ms.mean == 0.0 {
            return Ok(base);
        }
        return Ok(PairedTTestResult {
            t_statistic: f64::INFINITY.copysign(ms.mean),
            p_value: 0.0,
            infinite_t: true,
            ..base
        });
    }
    let t = ms.mean / (ms.std / (n as f64).sqrt());
    let nu = df as f64;
    let p = beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)).clamp(0.0, 1.0);
    Ok(PairedTTestResult {
        t_statistic: t,
        p_value: p,
        ..base
    })
}
