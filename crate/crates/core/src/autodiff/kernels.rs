//! Loop kernels behind the differentiable ops. All are single-threaded with a
//! fixed summation order, so results do not depend on the machine's core count.

use super::scalar::Scalar;

/// Geometry of a 3D cross-correlation with cubic kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output positions `o` with `0 <= o·stride + off − pad < n`.
    fn range(&self, axis: usize, off: usize) -> (usize, usize) {
        let (n, s, p) = (self.input[axis] as isize, self.stride as isize, self.pad as isize);
        let off = off as isize;
        let lo = (p - off).max(0);
        let lo = (lo + s - 1) / s;
        let hi = if n - 1 + p - off < 0 { 0 } else { (n - 1 + p - off) / s + 1 };
        let hi = hi.min(self.output[axis] as isize);
        (lo as usize, (hi.max(lo)) as usize)
    }

    fn in_len(&self) -> usize {
        self.input.iter().product()
    }

    fn out_len(&self) -> usize {
        self.output.iter().product()
    }

    /// Calls `f(out_offset, in_offset, ox_lo, ox_hi)` for every output row
    /// touched by kernel tap `(kz, ky, kx)`; the input row starts at
    /// `in_offset` for `ox = 0` and advances by `stride`.
    #[inline]
    fn for_rows(&self, kz: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, isize, usize, usize)) {
        let (z0, z1) = self.range(0, kz);
        let (y0, y1) = self.range(1, ky);
        let (x0, x1) = self.range(2, kx);
        if x0 >= x1 {
            return;
        }
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let (s, p) = (self.stride, self.pad as isize);
        for oz in z0..z1 {
            let iz = (oz * s) as isize + kz as isize - p;
            for oy in y0..y1 {
                let iy = (oy * s) as isize + ky as isize - p;
                let in_row = (iz as usize * ih + iy as usize) * iw;
                f((oz * oh + oy) * ow, in_row as isize + kx as isize - p, x0, x1);
            }
        }
    }
}

pub(crate) fn conv3d_forward<T: Scalar>(g: &ConvGeom, x: &[T], k: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let (vi, kk) = (g.in_len(), g.k * g.k * g.k);
    let [_, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let (s, p) = (g.stride, g.pad as isize);
    let xr: Vec<(usize, usize)> = (0..g.k).map(|kx| g.range(2, kx)).collect();
    // one output row at a time keeps the accumulator in L1
    for co in 0..g.c_out {
        let b = bias.map_or(T::zero(), |b| b[co]);
        for oz in 0..od {
            for oy in 0..oh {
                let orow = &mut out[((co * od + oz) * oh + oy) * ow..][..ow];
                orow.iter_mut().for_each(|o| *o = b);
                for ci in 0..g.c_in {
                    let ic = &x[ci * vi..(ci + 1) * vi];
                    let kw = &k[(co * g.c_in + ci) * kk..][..kk];
                    for kz in 0..g.k {
                        let iz = (oz * s) as isize + kz as isize - p;
                        if iz < 0 || iz >= g.input[0] as isize {
                            continue;
                        }
                        for ky in 0..g.k {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let irow = &ic[(iz as usize * ih + iy as usize) * iw..][..iw];
                            for kx in 0..g.k {
                                let w = kw[(kz * g.k + ky) * g.k + kx];
                                let (x0, x1) = xr[kx];
                                if x0 >= x1 {
                                    continue;
                                }
                                let start = (x0 * s) as isize + kx as isize - p;
                                let o = &mut orow[x0..x1];
                                let n = o.len();
                                if s == 1 {
                                    for (o, &i) in o.iter_mut().zip(&irow[start as usize..start as usize + n]) {
                                        *o += w * i;
                                    }
                                } else {
                                    for (o, &i) in o.iter_mut().zip(irow[start as usize..].iter().step_by(s)) {
                                        *o += w * i;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `∂L/∂x` into `gx`.
pub(crate) fn conv3d_backward_input<T: Scalar>(g: &ConvGeom, gout: &[T], k: &[T], gx: &mut [T]) {
    let (vi, vo, kk) = (g.in_len(), g.out_len(), g.k * g.k * g.k);
    let s = g.stride;
    for ci in 0..g.c_in {
        let gic = &mut gx[ci * vi..(ci + 1) * vi];
        for co in 0..g.c_out {
            let goc = &gout[co * vo..(co + 1) * vo];
            let kw = &k[(co * g.c_in + ci) * kk..][..kk];
            for kz in 0..g.k {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let w = kw[(kz * g.k + ky) * g.k + kx];
                        if w == T::zero() {
                            continue;
                        }
                        g.for_rows(kz, ky, kx, |orow, irow, x0, x1| {
                            let go = &goc[orow + x0..orow + x1];
                            let start = (irow + (x0 * s) as isize) as usize;
                            if s == 1 {
                                for (gi, &o) in gic[start..start + go.len()].iter_mut().zip(go) {
                                    *gi += w * o;
                                }
                            } else {
                                for (gi, &o) in gic[start..].iter_mut().step_by(s).zip(go) {
                                    *gi += w * o;
                                }
                            }
                        });
                    }
                }
            }
        }
    }
}

/// Accumulates `∂L/∂k` into `gk`.
pub(crate) fn conv3d_backward_kernel<T: Scalar>(g: &ConvGeom, gout: &[T], x: &[T], gk: &mut [T]) {
    let (vi, vo, kk) = (g.in_len(), g.out_len(), g.k * g.k * g.k);
    let s = g.stride;
    for co in 0..g.c_out {
        let goc = &gout[co * vo..(co + 1) * vo];
        for ci in 0..g.c_in {
            let ic = &x[ci * vi..(ci + 1) * vi];
            let gkw = &mut gk[(co * g.c_in + ci) * kk..][..kk];
            for kz in 0..g.k {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let mut acc = T::zero();
                        g.for_rows(kz, ky, kx, |orow, irow, x0, x1| {
                            let go = &goc[orow + x0..orow + x1];
                            let start = (irow + (x0 * s) as isize) as usize;
                            acc += if s == 1 {
                                dot(go, &ic[start..start + go.len()])
                            } else {
                                go.iter().zip(ic[start..].iter().step_by(s)).map(|(&o, &i)| o * i).sum()
                            };
                        });
                        gkw[(kz * g.k + ky) * g.k + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums (fixed order).
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// `c += a · b` for row-major `a: [n, k]`, `b: [k, m]`.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: [n, k]`, `b: [m, k]`.
pub(crate) fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            c[i * m + j] += arow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<T>();
        }
    }
}

/// `c += aᵀ · b` for `a: [n, k]`, `b: [n, m]`, `c: [k, m]`.
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in c[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Linear interpolation taps for upsampling an axis of length `n` by `f`
/// without aligned corners: `(i0, i1, w1)` per output index.
pub(crate) fn upsample_taps(n: usize, f: usize) -> Vec<(usize, usize, f64)> {
    (0..n * f)
        .map(|o| {
            let src = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Interpolates `axis` (0..3 of the trailing `[D, H, W]`) of a
/// `[outer, D, H, W]` buffer from length `dims[axis]` to `taps.len()`.
pub(crate) fn interp_axis<T: Scalar>(
    src: &[T],
    outer: usize,
    dims: [usize; 3],
    axis: usize,
    taps: &[(usize, usize, f64)],
) -> Vec<T> {
    let before: usize = outer * dims[..axis].iter().product::<usize>();
    let after: usize = dims[axis + 1..].iter().product();
    let (n_in, n_out) = (dims[axis], taps.len());
    let mut out = vec![T::zero(); before * n_out * after];
    for b in 0..before {
        let s = &src[b * n_in * after..(b + 1) * n_in * after];
        let o = &mut out[b * n_out * after..(b + 1) * n_out * after];
        for (j, &(i0, i1, w1)) in taps.iter().enumerate() {
            let (w0, w1) = (T::of(1.0 - w1), T::of(w1));
            let orow = &mut o[j * after..(j + 1) * after];
            let r0 = &s[i0 * after..(i0 + 1) * after];
            let r1 = &s[i1 * after..(i1 + 1) * after];
            for ((ov, &a), &c) in orow.iter_mut().zip(r0).zip(r1) {
                *ov = w0 * a + w1 * c;
            }
        }
    }
    out
}

/// Transpose of [`interp_axis`]: scatters `grad` (output-shaped) back.
pub(crate) fn interp_axis_transpose<T: Scalar>(
    grad: &[T],
    outer: usize,
    dims: [usize; 3],
    axis: usize,
    taps: &[(usize, usize, f64)],
) -> Vec<T> {
    let before: usize = outer * dims[..axis].iter().product::<usize>();
    let after: usize = dims[axis + 1..].iter().product();
    let (n_in, n_out) = (dims[axis], taps.len());
    let mut out = vec![T::zero(); before * n_in * after];
    for b in 0..before {
        let g = &grad[b * n_out * after..(b + 1) * n_out * after];
        let o = &mut out[b * n_in * after..(b + 1) * n_in * after];
        for (j, &(i0, i1, w1)) in taps.iter().enumerate() {
            let (w0, w1) = (T::of(1.0 - w1), T::of(w1));
            let grow = &g[j * after..(j + 1) * after];
            for (t, &gv) in grow.iter().enumerate() {
                o[i0 * after + t] += w0 * gv;
                o[i1 * after + t] += w1 * gv;
            }
        }
    }
    out
}

/// Index map of patchify: output element `[n, ((dz·P + dy)·P + dx)·C + c]`
/// reads input `[c, pz·P + dz, py·P + dy, px·P + dx]` where `n` enumerates
/// patches `(pz, py, px)` row-major.
pub(crate) fn patch_index_map(c: usize, dims: [usize; 3], p: usize) -> Vec<usize> {
    let [d, h, w] = dims;
    let (gd, gh, gw) = (d / p, h / p, w / p);
    let width = p * p * p * c;
    let mut map = vec![0; c * d * h * w];
    for pz in 0..gd {
        for py in 0..gh {
            for px in 0..gw {
                let n = (pz * gh + py) * gw + px;
                for dz in 0..p {
                    for dy in 0..p {
                        for dx in 0..p {
                            for ch in 0..c {
                                let col = ((dz * p + dy) * p + dx) * c + ch;
                                let src = ((ch * d + pz * p + dz) * h + py * p + dy) * w + px * p + dx;
                                map[n * width + col] = src;
                            }
                        }
                    }
                }
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_valid_positions() {
        let g = ConvGeom {
            c_in: 1,
            c_out: 1,
            input: [16, 5, 5],
            output: [8, 5, 5],
            k: 3,
            stride: 2,
            pad: 1,
        };
        // tap 0 reads o·2 − 1: valid from o = 1
        assert_eq!(g.range(0, 0), (1, 8));
        assert_eq!(g.range(0, 2), (0, 8));
    }

    #[test]
    fn taps_match_half_pixel_rule() {
        let t = upsample_taps(2, 2);
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!(t[3], (1, 1, 0.25));
    }
}
