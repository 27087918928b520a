//! Per-sample building blocks on `[channels, d, h, w]` buffers. Images are
//! volumes with `d == 1`; kernels and pooling windows then have depth 1.

use alloc::vec;
use alloc::vec::Vec;

use super::real::{gemm, Real, Strides};

/// Upper bound on im2col buffer elements; larger convolutions run in slabs.
const COL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: [usize; 3],
}

impl ConvShape {
    pub fn taps(&self) -> usize {
        self.k[0] * self.k[1] * self.k[2]
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.taps()
    }
}

fn spatial(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Columns `[s0, s1)` of the im2col matrix (rows `cin * taps`), same padding.
fn im2col<T: Real>(x: &[T], cs: &ConvShape, dims: [usize; 3], s0: usize, s1: usize, cols: &mut [T]) {
    let [d, h, w] = dims;
    let pad = [cs.k[0] / 2, cs.k[1] / 2, cs.k[2] / 2];
    let ncol = s1 - s0;
    let s = spatial(dims);
    let mut row = 0;
    for ci in 0..cs.cin {
        let src = &x[ci * s..(ci + 1) * s];
        for a in 0..cs.k[0] {
            for b in 0..cs.k[1] {
                for c in 0..cs.k[2] {
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    let mut p = s0;
                    while p < s1 {
                        let z = p / (h * w);
                        let y = (p / w) % h;
                        let x0 = p % w;
                        let run = (w - x0).min(s1 - p);
                        let out = &mut dst[p - s0..p - s0 + run];
                        let zz = z as isize + a as isize - pad[0] as isize;
                        let yy = y as isize + b as isize - pad[1] as isize;
                        if zz < 0 || zz >= d as isize || yy < 0 || yy >= h as isize {
                            out.iter_mut().for_each(|v| *v = T::zero());
                        } else {
                            let base = (zz as usize * h + yy as usize) * w;
                            let shift = c as isize - pad[2] as isize;
                            for (i, v) in out.iter_mut().enumerate() {
                                let xx = (x0 + i) as isize + shift;
                                *v = if xx < 0 || xx >= w as isize {
                                    T::zero()
                                } else {
                                    src[base + xx as usize]
                                };
                            }
                        }
                        p += run;
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
fn col2im<T: Real>(cols: &[T], cs: &ConvShape, dims: [usize; 3], s0: usize, s1: usize, dx: &mut [T]) {
    let [d, h, w] = dims;
    let pad = [cs.k[0] / 2, cs.k[1] / 2, cs.k[2] / 2];
    let ncol = s1 - s0;
    let s = spatial(dims);
    let mut row = 0;
    for ci in 0..cs.cin {
        let dst = &mut dx[ci * s..(ci + 1) * s];
        for a in 0..cs.k[0] {
            for b in 0..cs.k[1] {
                for c in 0..cs.k[2] {
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    let mut p = s0;
                    while p < s1 {
                        let z = p / (h * w);
                        let y = (p / w) % h;
                        let x0 = p % w;
                        let run = (w - x0).min(s1 - p);
                        let zz = z as isize + a as isize - pad[0] as isize;
                        let yy = y as isize + b as isize - pad[1] as isize;
                        if zz >= 0 && zz < d as isize && yy >= 0 && yy < h as isize {
                            let base = (zz as usize * h + yy as usize) * w;
                            let shift = c as isize - pad[2] as isize;
                            for i in 0..run {
                                let xx = (x0 + i) as isize + shift;
                                if xx >= 0 && xx < w as isize {
                                    dst[base + xx as usize] += src[p - s0 + i];
                                }
                            }
                        }
                        p += run;
                    }
                    row += 1;
                }
            }
        }
    }
}

fn slab_len(rows: usize, s: usize) -> usize {
    (COL_BUDGET / rows.max(1)).clamp(1, s)
}

/// Same-padded convolution plus bias; returns `[cout, dims]`.
pub(crate) fn conv_forward<T: Real>(x: &[T], cs: &ConvShape, dims: [usize; 3], w: &[T], bias: &[T]) -> Vec<T> {
    let s = spatial(dims);
    let rows = cs.cin * cs.taps();
    let mut out = vec![T::zero(); cs.cout * s];
    for (co, b) in bias.iter().enumerate() {
        out[co * s..(co + 1) * s].iter_mut().for_each(|v| *v = *b);
    }
    if cs.taps() == 1 {
        gemm(cs.cout, rows, s, w, Strides::row_major(rows, false), x, Strides::row_major(s, false), T::one(), &mut out, Strides::row_major(s, false));
        return out;
    }
    let slab = slab_len(rows, s);
    let mut cols = vec![T::zero(); rows * slab];
    let mut s0 = 0;
    while s0 < s {
        let s1 = (s0 + slab).min(s);
        let n = s1 - s0;
        im2col(x, cs, dims, s0, s1, &mut cols[..rows * n]);
        gemm(cs.cout, rows, n, w, Strides::row_major(rows, false), &cols[..rows * n], Strides::row_major(n, false), T::one(), &mut out[s0..], Strides(s, 1));
        s0 = s1;
    }
    out
}

/// Accumulates weight and bias gradients and, when requested, returns the
/// input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    x: &[T],
    cs: &ConvShape,
    dims: [usize; 3],
    w: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let s = spatial(dims);
    let rows = cs.cin * cs.taps();
    for (co, g) in db.iter_mut().enumerate() {
        let acc: f64 = dout[co * s..(co + 1) * s].iter().map(|v| v.as_f64()).sum();
        *g += T::from_f64(acc);
    }
    let mut dx = want_dx.then(|| vec![T::zero(); cs.cin * s]);
    if cs.taps() == 1 {
        gemm(cs.cout, s, rows, dout, Strides::row_major(s, false), x, Strides::row_major(s, true), T::one(), dw, Strides::row_major(rows, false));
        if let Some(dx) = dx.as_mut() {
            gemm(rows, cs.cout, s, w, Strides::row_major(rows, true), dout, Strides::row_major(s, false), T::zero(), dx, Strides::row_major(s, false));
        }
        return dx;
    }
    let slab = slab_len(rows, s);
    let mut cols = vec![T::zero(); rows * slab];
    let mut s0 = 0;
    while s0 < s {
        let s1 = (s0 + slab).min(s);
        let n = s1 - s0;
        let c = &mut cols[..rows * n];
        im2col(x, cs, dims, s0, s1, c);
        // dW += dout[:, slab] * cols^T
        gemm(cs.cout, n, rows, &dout[s0..], Strides(s, 1), c, Strides::row_major(n, true), T::one(), dw, Strides::row_major(rows, false));
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T * dout[:, slab]
            gemm(rows, cs.cout, n, w, Strides::row_major(rows, true), &dout[s0..], Strides(s, 1), T::zero(), c, Strides::row_major(n, false));
            col2im(c, cs, dims, s0, s1, dx);
        }
        s0 = s1;
    }
    dx
}

pub(crate) fn relu_inplace<T: Real>(v: &mut [T]) {
    v.iter_mut().for_each(|x| {
        if *x < T::zero() {
            *x = T::zero()
        }
    });
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub(crate) fn relu_backward<T: Real>(out: &[T], grad: &mut [T]) {
    grad.iter_mut().zip(out).for_each(|(g, o)| {
        if *o <= T::zero() {
            *g = T::zero()
        }
    });
}

pub(crate) fn pooled_dims(dims: [usize; 3], f: [usize; 3]) -> [usize; 3] {
    [dims[0] / f[0], dims[1] / f[1], dims[2] / f[2]]
}

/// Max pooling with window = stride = `f`; returns the pooled buffer and the
/// flat source index of each maximum (first maximum on ties).
pub(crate) fn maxpool<T: Real>(x: &[T], c: usize, dims: [usize; 3], f: [usize; 3]) -> (Vec<T>, Vec<u32>) {
    let [d, h, w] = dims;
    let [od, oh, ow] = pooled_dims(dims, f);
    let mut out = Vec::with_capacity(c * od * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut bi = 0usize;
                    for a in 0..f[0] {
                        for b in 0..f[1] {
                            for e in 0..f[2] {
                                let i = ((ch * d + z * f[0] + a) * h + y * f[1] + b) * w + xo * f[2] + e;
                                if x[i] > best {
                                    best = x[i];
                                    bi = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(bi as u32);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Real>(grad: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (g, &i) in grad.iter().zip(arg) {
        dx[i as usize] += *g;
    }
    dx
}

/// Nearest-neighbor upsampling by `f`.
pub(crate) fn upsample<T: Real>(x: &[T], c: usize, dims: [usize; 3], f: [usize; 3]) -> Vec<T> {
    let [d, h, w] = dims;
    let (od, oh, ow) = (d * f[0], h * f[1], w * f[2]);
    let mut out = Vec::with_capacity(c * od * oh * ow);
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                let row = ((ch * d + z / f[0]) * h + y / f[1]) * w;
                for xo in 0..ow {
                    out.push(x[row + xo / f[2]]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample`]: sums each `f` block.
pub(crate) fn upsample_backward<T: Real>(grad: &[T], c: usize, dims: [usize; 3], f: [usize; 3]) -> Vec<T> {
    let [d, h, w] = dims;
    let (od, oh, ow) = (d * f[0], h * f[1], w * f[2]);
    let mut dx = vec![T::zero(); c * d * h * w];
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                let row = ((ch * d + z / f[0]) * h + y / f[1]) * w;
                let src = ((ch * od + z) * oh + y) * ow;
                for xo in 0..ow {
                    dx[row + xo / f[2]] += grad[src + xo];
                }
            }
        }
    }
    dx
}
