//! Iterative radix-2 FFT and separable n-D transforms over power-of-two grids.
//!
//! Forward transforms are unnormalized; inverse transforms divide by the
//! length, so `ifft(fft(x)) == x`.

use alloc::vec;
use alloc::vec::Vec;

pub use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Precomputed twiddles and bit-reversal permutation for one length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::invalid("FFT length must be a power of two"));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -core::f64::consts::TAU * k as f64 / n as f64;
                Complex64::new(libm::cos(a), libm::sin(a))
            })
            .collect();
        Ok(Self { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true);
        let s = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.n, "buffer length differs from plan length");
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// In-place transform of a row-major grid with power-of-two `dims`
/// (each axis of extent 1 is skipped).
pub fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) -> Result<()> {
    let total: usize = dims.iter().product();
    if total != data.len() {
        return Err(Error::ShapeMismatch(dims.to_vec(), vec![data.len()]));
    }
    let mut line = Vec::new();
    for ax in 0..dims.len() {
        let n = dims[ax];
        if n == 1 {
            continue;
        }
        let plan = FftPlan::new(n)?;
        let inner: usize = dims[ax + 1..].iter().product();
        let outer: usize = dims[..ax].iter().product();
        line.resize(n, Complex64::new(0.0, 0.0));
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for k in 0..n {
                    line[k] = data[base + k * inner];
                }
                if inverse {
                    plan.inverse(&mut line);
                } else {
                    plan.forward(&mut line);
                }
                for k in 0..n {
                    data[base + k * inner] = line[k];
                }
            }
        }
    }
    Ok(())
}

/// Zero-pads real data of shape `dims` into a grid of shape `padded` (origin
/// aligned) and returns its forward transform.
pub fn fft_real_padded(values: &[f32], dims: &[usize], padded: &[usize]) -> Result<Vec<Complex64>> {
    if dims.len() != padded.len() || dims.iter().zip(padded).any(|(d, p)| d > p) {
        return Err(Error::invalid("padded shape must dominate the data shape"));
    }
    let total: usize = padded.iter().product();
    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    let n_rows: usize = dims[..dims.len() - 1].iter().product();
    let w = dims[dims.len() - 1];
    for r in 0..n_rows {
        // Map the row index in `dims` to its offset in `padded`.
        let mut rem = r;
        let mut off = 0;
        let mut stride = padded[padded.len() - 1];
        for ax in (0..dims.len() - 1).rev() {
            let i = rem % dims[ax];
            rem /= dims[ax];
            off += i * stride;
            stride *= padded[ax];
        }
        for x in 0..w {
            buf[off + x] = Complex64::new(values[r * w + x] as f64, 0.0);
        }
    }
    fft_nd(&mut buf, padded, false)?;
    Ok(buf)
}

/// Signed frequency (cycles per sample) of index `k` on an axis of length `n`.
pub fn freq(k: usize, n: usize) -> f64 {
    let k = k as i64;
    let n = n as i64;
    let s = if k <= n / 2 { k } else { k - n };
    s as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, v)| {
                    let a = -core::f64::consts::TAU * (k * j) as f64 / n as f64;
                    acc + v * Complex64::new(libm::cos(a), libm::sin(a))
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let mut r = Rng::new(2);
        for n in [1usize, 2, 4, 8, 32] {
            let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(r.normal(), r.normal())).collect();
            let mut y = x.clone();
            FftPlan::new(n).unwrap().forward(&mut y);
            for (a, b) in y.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(FftPlan::new(12).is_err());
    }

    #[test]
    fn nd_roundtrip_and_parseval() {
        let mut r = Rng::new(8);
        let dims = [4usize, 8, 16];
        let x: Vec<Complex64> = (0..512).map(|_| Complex64::new(r.normal(), 0.0)).collect();
        let mut y = x.clone();
        fft_nd(&mut y, &dims, false).unwrap();
        let e_x: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let e_y: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / 512.0;
        assert!((e_x - e_y).abs() / e_x < 1e-12);
        fft_nd(&mut y, &dims, true).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn padded_real_transform_places_data_at_origin() {
        let v = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let spec = fft_real_padded(&v, &[2, 3], &[4, 4]).unwrap();
        let mut back = spec.clone();
        fft_nd(&mut back, &[4, 4], true).unwrap();
        assert!((back[0].re - 1.0).abs() < 1e-12);
        assert!((back[2].re - 3.0).abs() < 1e-12);
        assert!((back[4].re - 4.0).abs() < 1e-12);
        assert!(back[3].re.abs() < 1e-12);
        assert!((spec[0].re - 21.0).abs() < 1e-12);
    }

    #[test]
    fn signed_frequencies() {
        assert_eq!(freq(0, 8), 0.0);
        assert_eq!(freq(4, 8), 0.5);
        assert_eq!(freq(5, 8), -0.375);
    }
}
