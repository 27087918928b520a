//! Fourier shell correlation, error metrics and the missing-wedge
//! inconsistency ratio.
//!
//! Fourier-space metrics zero-pad every axis to the same power of two
//! (`next_pow2` of the largest extent), so shells are isotropic and both FSC
//! arguments see the identical grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft::{fft_real_padded, freq, next_pow2, Complex64};
use crate::grid::ScalarField;
use crate::recon::WedgeMask;
use crate::sq;

#[derive(Debug, Clone, PartialEq)]
pub struct FscCurve {
    /// Shell center in cycles/voxel.
    pub frequency: Vec<f64>,
    pub correlation: Vec<f64>,
    pub n_samples: Vec<usize>,
}

impl FscCurve {
    pub fn len(&self) -> usize {
        self.frequency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequency.is_empty()
    }

    /// Sample-weighted mean correlation over shells with center frequency in `[lo, hi]`.
    pub fn band_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.len() {
            if self.frequency[i] >= lo && self.frequency[i] <= hi {
                num += self.correlation[i] * self.n_samples[i] as f64;
                den += self.n_samples[i] as f64;
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

fn spectrum(v: &ScalarField) -> Result<(Vec<Complex64>, usize)> {
    let n = next_pow2(v.shape().iter().copied().max().unwrap_or(1));
    let padded = vec![n; v.ndim()];
    Ok((fft_real_padded(v.data(), v.shape(), &padded)?, n))
}

/// Radial frequency (cycles/voxel) of every element of an `n^d` grid.
fn radial_frequencies(ndim: usize, n: usize) -> impl Iterator<Item = f64> {
    let total = n.pow(ndim as u32);
    (0..total).map(move |mut i| {
        let mut r2 = 0.0;
        for _ in 0..ndim {
            r2 += sq(freq(i % n, n));
            i /= n;
        }
        libm::sqrt(r2)
    })
}

/// Fourier shell correlation with shells of `shell_width` frequency voxels,
/// indexed by rounded radius, up to Nyquist. A shell whose power vanishes in
/// either argument reports 0.
pub fn fsc(v1: &ScalarField, v2: &ScalarField, shell_width: f64) -> Result<FscCurve> {
    v1.require_same_shape(v2)?;
    if !(shell_width > 0.0) {
        return Err(Error::invalid("shell width must be positive"));
    }
    if v1.data().iter().all(|&v| v == 0.0) || v2.data().iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("FSC of an all-zero volume"));
    }
    let (f1, n) = spectrum(v1)?;
    let (f2, _) = spectrum(v2)?;
    let n_shells = libm::floor(n as f64 / 2.0 / shell_width) as usize + 1;
    let mut cross = vec![0.0f64; n_shells];
    let mut p1 = vec![0.0f64; n_shells];
    let mut p2 = vec![0.0f64; n_shells];
    let mut count = vec![0usize; n_shells];
    for (i, r) in radial_frequencies(v1.ndim(), n).enumerate() {
        let s = libm::round(r * n as f64 / shell_width) as usize;
        if s >= n_shells {
            continue;
        }
        cross[s] += (f1[i] * f2[i].conj()).re;
        p1[s] += f1[i].norm_sqr();
        p2[s] += f2[i].norm_sqr();
        count[s] += 1;
    }
    let correlation = (0..n_shells)
        .map(|s| {
            let den = libm::sqrt(p1[s] * p2[s]);
            if den > 0.0 {
                (cross[s] / den).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(FscCurve {
        frequency: (0..n_shells).map(|s| s as f64 * shell_width / n as f64).collect(),
        correlation,
        n_samples: count,
    })
}

pub fn mse(pred: &ScalarField, truth: &ScalarField) -> Result<f64> {
    pred.require_same_shape(truth)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| sq(p as f64 - t as f64))
        .sum();
    Ok(s / pred.len() as f64)
}

/// PSNR in dB against the dynamic range of `truth`; `f64::INFINITY` when the
/// fields are identical.
pub fn psnr(pred: &ScalarField, truth: &ScalarField) -> Result<f64> {
    let (lo, hi) = truth.min_max();
    let range = hi as f64 - lo as f64;
    if range <= 0.0 {
        return Err(Error::Degenerate("PSNR needs a nonzero dynamic range"));
    }
    let m = mse(pred, truth)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(range * range / m))
}

/// Pearson correlation; 0 when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / libm::sqrt(saa * sbb)
    }
}

pub fn field_correlation(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.require_same_shape(b)?;
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    Ok(pearson(&x, &y))
}

/// Mean spectral power inside the missing wedge divided by mean power in the
/// sampled region. Only frequencies up to 0.5 cycles/voxel count and DC is
/// excluded. The tilt axis is Y, so the wedge lives in the (kz, kx) plane.
pub fn wedge_inconsistency(v: &ScalarField, wedge: &WedgeMask) -> Result<f64> {
    if v.ndim() != 3 {
        return Err(Error::invalid("wedge inconsistency needs a 3D volume"));
    }
    let (f, n) = spectrum(v)?;
    let (mut pin, mut nin, mut pout, mut nout) = (0.0f64, 0usize, 0.0f64, 0usize);
    for kz in 0..n {
        let fz = freq(kz, n);
        for ky in 0..n {
            let fy = freq(ky, n);
            for kx in 0..n {
                let fx = freq(kx, n);
                let r2 = fz * fz + fy * fy + fx * fx;
                if r2 == 0.0 || r2 > 0.25 {
                    continue;
                }
                let p = f[(kz * n + ky) * n + kx].norm_sqr();
                if wedge.is_missing(fz, fx) {
                    pin += p;
                    nin += 1;
                } else {
                    pout += p;
                    nout += 1;
                }
            }
        }
    }
    if nin == 0 || nout == 0 {
        return Err(Error::Degenerate("wedge covers none or all of the spectrum"));
    }
    if pout == 0.0 {
        return Err(Error::Degenerate("no power in the sampled region"));
    }
    Ok((pin / nin as f64) / (pout / nout as f64))
}
