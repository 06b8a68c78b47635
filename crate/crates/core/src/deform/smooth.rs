use super::field::VectorField;
use crate::volume_io::Dims;

/// Normalized Gaussian taps with radius `ceil(3σ)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable convolution along one axis with clamp-to-edge boundaries.
fn convolve_axis(data: &[f64], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let n = dims.as_array()[axis] as isize;
    let stride = match axis {
        0 => dims.h * dims.w,
        1 => dims.w,
        _ => 1,
    } as isize;
    let mut out = vec![0.0; data.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = dims.coords(i)[axis] as isize;
        let base = i as isize - pos * stride;
        let mut acc = 0.0;
        for (t, w) in kernel.iter().enumerate() {
            let j = (pos + t as isize - r).clamp(0, n - 1);
            acc += w * data[(base + j * stride) as usize];
        }
        *o = acc;
    }
    out
}

pub fn gaussian_smooth(data: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let mut v = data.to_vec();
    for axis in 0..3 {
        if dims.as_array()[axis] > 1 {
            v = convolve_axis(&v, dims, axis, &k);
        }
    }
    v
}

pub fn gaussian_smooth_field(field: &VectorField, sigma: f64) -> VectorField {
    let dims = field.dims();
    let comps: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let comp: Vec<f64> = field.vectors().iter().map(|u| u[c]).collect();
            gaussian_smooth(&comp, dims, sigma)
        })
        .collect();
    let vectors = (0..dims.len())
        .map(|i| [comps[0][i], comps[1][i], comps[2][i]])
        .collect();
    VectorField::from_vectors(dims, vectors).expect("smoothing keeps values finite")
}
