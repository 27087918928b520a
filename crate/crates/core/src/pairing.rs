//! Noise-independent training pairs.
//!
//! Projection pairs (2D):
//! * `p2p-ip`: each movie split into its first and second half, averaged
//!   without alignment, giving two half-dose images.
//! * `p2p-tap`: neighboring tilt angles of a conventional tilt series.
//! * `p2p-df`: frames aligned, then even and odd frames summed separately.
//!
//! Tomogram pairs (3D) come from two half tilt series that are reconstructed
//! independently:
//! * `t2t-eoa`: tilts split by even/odd acquisition number (disjoint angles).
//! * `t2t-df`: every tilt's frames split even/odd (identical angle lists).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::fft::{fft_nd, next_pow2, Complex64};
use crate::grid::ScalarField;
use crate::phantom::MovieTiltSeries;
use crate::recon::{Tilt, TiltSeries};
use crate::sq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    P2pIp,
    P2pTap,
    P2pDf,
    T2tEoa,
    T2tDf,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::P2pIp,
        Scheme::P2pTap,
        Scheme::P2pDf,
        Scheme::T2tEoa,
        Scheme::T2tDf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::P2pIp => "p2p-ip",
            Scheme::P2pTap => "p2p-tap",
            Scheme::P2pDf => "p2p-df",
            Scheme::T2tEoa => "t2t-eoa",
            Scheme::T2tDf => "t2t-df",
        }
    }

    pub fn is_tomographic(self) -> bool {
        matches!(self, Scheme::T2tEoa | Scheme::T2tDf)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(String::from("unknown pairing scheme: ") + s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub scheme: Scheme,
    /// Angles of the tilts the pair was built from (one for frame splits,
    /// two for adjacent tilts).
    pub angles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub a: ScalarField,
    pub b: ScalarField,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfKind {
    EvenOddAcquisition,
    FrameSplit,
}

/// Two half-data tilt series to be reconstructed independently.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSeries {
    pub a: TiltSeries,
    pub b: TiltSeries,
    pub kind: HalfKind,
}

fn require_frames(frames: &[ScalarField]) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: frames.len(),
        });
    }
    for f in &frames[1..] {
        frames[0].require_same_shape(f)?;
    }
    if frames[0].ndim() != 2 {
        return Err(Error::invalid("frames must be 2D"));
    }
    Ok(())
}

/// Sums the selected frames in f64 and scales the result.
fn combine<'a>(frames: impl Iterator<Item = &'a ScalarField>, scale: f64) -> Result<ScalarField> {
    let mut acc: Option<(Vec<f64>, &ScalarField)> = None;
    for f in frames {
        match &mut acc {
            None => acc = Some((f.data().iter().map(|&v| v as f64).collect(), f)),
            Some((sum, _)) => sum.iter_mut().zip(f.data()).for_each(|(s, &v)| *s += v as f64),
        }
    }
    let (sum, template) = acc.ok_or(Error::TooFew { needed: 1, got: 0 })?;
    ScalarField::like(template, sum.into_iter().map(|s| (s * scale) as f32).collect())
}

pub fn sum_frames(frames: &[ScalarField]) -> Result<ScalarField> {
    combine(frames.iter(), 1.0)
}

/// First `floor(n/2)` frames averaged against the remaining ones. No alignment.
pub fn split_halves(frames: &[ScalarField]) -> Result<ProjectionPair> {
    require_frames(frames)?;
    let n_a = frames.len() / 2;
    let n_b = frames.len() - n_a;
    Ok(ProjectionPair {
        a: combine(frames[..n_a].iter(), 1.0 / n_a as f64)?,
        b: combine(frames[n_a..].iter(), 1.0 / n_b as f64)?,
        provenance: Provenance {
            scheme: Scheme::P2pIp,
            angles: vec![],
        },
    })
}

/// Sum of frames 0, 2, 4, ... against the sum of frames 1, 3, 5, ...
pub fn split_even_odd(frames: &[ScalarField]) -> Result<ProjectionPair> {
    require_frames(frames)?;
    Ok(ProjectionPair {
        a: combine(frames.iter().step_by(2), 1.0)?,
        b: combine(frames.iter().skip(1).step_by(2), 1.0)?,
        provenance: Provenance {
            scheme: Scheme::P2pDf,
            angles: vec![],
        },
    })
}

/// Settings for the rigid frame alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    /// Refinement passes; pass 1 aligns to the running sum, later passes
    /// re-align every frame to the sum of all other aligned frames.
    pub passes: usize,
    /// Gaussian low-pass applied to the cross-power spectrum, in cycles/pixel.
    pub lowpass_sigma: f64,
    /// Largest shift searched, in pixels.
    pub max_shift: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            passes: 2,
            lowpass_sigma: 0.08,
            max_shift: 8.0,
        }
    }
}

/// Per-frame shifts `(dy, dx)` relative to frame 0 and the frames resampled
/// back onto frame 0's grid.
pub fn align_frames(frames: &[ScalarField]) -> Result<(Vec<ScalarField>, Vec<[f64; 2]>)> {
    align_frames_with(frames, &AlignConfig::default())
}

pub fn align_frames_with(
    frames: &[ScalarField],
    cfg: &AlignConfig,
) -> Result<(Vec<ScalarField>, Vec<[f64; 2]>)> {
    require_frames(frames)?;
    let xc = CrossCorrelator::new(frames[0].shape(), cfg);
    let spectra: Vec<Vec<Complex64>> = frames.iter().map(|f| xc.spectrum(f.data())).collect();

    // Pass 1: running sum reference.
    let mut shifts = vec![[0.0, 0.0]; frames.len()];
    let mut aligned = vec![frames[0].clone()];
    let mut reference: Vec<f64> = frames[0].data().iter().map(|&v| v as f64).collect();
    for k in 1..frames.len() {
        let ref_spec = xc.spectrum_f64(&reference);
        shifts[k] = xc.shift(&ref_spec, &spectra[k]);
        let a = frames[k].translate(-shifts[k][0], -shifts[k][1])?;
        reference.iter_mut().zip(a.data()).for_each(|(r, &v)| *r += v as f64);
        aligned.push(a);
    }

    // Later passes: leave-one-out reference.
    for _ in 1..cfg.passes.max(1) {
        let total: Vec<f64> = (0..reference.len())
            .map(|i| aligned.iter().map(|a| a.data()[i] as f64).sum())
            .collect();
        for k in 0..frames.len() {
            let others: Vec<f64> = total
                .iter()
                .zip(aligned[k].data())
                .map(|(t, &v)| t - v as f64)
                .collect();
            shifts[k] = xc.shift(&xc.spectrum_f64(&others), &spectra[k]);
        }
        let anchor = shifts[0];
        for s in shifts.iter_mut() {
            *s = [s[0] - anchor[0], s[1] - anchor[1]];
        }
        aligned = frames
            .iter()
            .zip(&shifts)
            .map(|(f, s)| f.translate(-s[0], -s[1]))
            .collect::<Result<_>>()?;
    }
    Ok((aligned, shifts))
}

struct CrossCorrelator {
    ny: usize,
    nx: usize,
    py: usize,
    px: usize,
    window: Vec<f64>,
    lowpass: Vec<f64>,
    max_shift: f64,
}

impl CrossCorrelator {
    fn new(shape: &[usize], cfg: &AlignConfig) -> Self {
        let (ny, nx) = (shape[0], shape[1]);
        let (py, px) = (next_pow2(2 * ny), next_pow2(2 * nx));
        let taper = |i: usize, n: usize| {
            let edge = (n / 8).max(1) as f64;
            let d = (i.min(n - 1 - i) as f64 + 0.5) / edge;
            if d >= 1.0 {
                1.0
            } else {
                0.5 * (1.0 - libm::cos(core::f64::consts::PI * d))
            }
        };
        let mut window = Vec::with_capacity(ny * nx);
        for y in 0..ny {
            for x in 0..nx {
                window.push(taper(y, ny) * taper(x, nx));
            }
        }
        let s2 = 2.0 * cfg.lowpass_sigma * cfg.lowpass_sigma;
        let mut lowpass = Vec::with_capacity(py * px);
        for ky in 0..py {
            for kx in 0..px {
                let f2 = sq(crate::fft::freq(ky, py)) + sq(crate::fft::freq(kx, px));
                lowpass.push(libm::exp(-f2 / s2));
            }
        }
        Self {
            ny,
            nx,
            py,
            px,
            window,
            lowpass,
            max_shift: cfg.max_shift,
        }
    }

    fn spectrum(&self, data: &[f32]) -> Vec<Complex64> {
        let v: Vec<f64> = data.iter().map(|&v| v as f64).collect();
        self.spectrum_f64(&v)
    }

    fn spectrum_f64(&self, data: &[f64]) -> Vec<Complex64> {
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.py * self.px];
        for y in 0..self.ny {
            for x in 0..self.nx {
                let i = y * self.nx + x;
                buf[y * self.px + x] = Complex64::new((data[i] - mean) * self.window[i], 0.0);
            }
        }
        fft_nd(&mut buf, &[self.py, self.px], false).expect("power-of-two grid");
        buf
    }

    /// Displacement `s` maximizing `sum_x ref(x) * frame(x + s)`.
    fn shift(&self, reference: &[Complex64], frame: &[Complex64]) -> [f64; 2] {
        let mut cc: Vec<Complex64> = reference
            .iter()
            .zip(frame)
            .zip(&self.lowpass)
            .map(|((r, f), w)| r.conj() * f * *w)
            .collect();
        fft_nd(&mut cc, &[self.py, self.px], true).expect("power-of-two grid");
        let at = |dy: i64, dx: i64| -> f64 {
            let y = dy.rem_euclid(self.py as i64) as usize;
            let x = dx.rem_euclid(self.px as i64) as usize;
            cc[y * self.px + x].re
        };
        let r = libm::floor(self.max_shift) as i64;
        let ry = r.min(self.ny as i64 - 1);
        let rx = r.min(self.nx as i64 - 1);
        let mut best = (0i64, 0i64, f64::NEG_INFINITY);
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                let v = at(dy, dx);
                if v > best.2 {
                    best = (dy, dx, v);
                }
            }
        }
        let (dy, dx, c0) = best;
        let parabolic = |m: f64, p: f64| {
            let den = m - 2.0 * c0 + p;
            if den < 0.0 {
                (0.5 * (m - p) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        };
        [
            dy as f64 + parabolic(at(dy - 1, dx), at(dy + 1, dx)),
            dx as f64 + parabolic(at(dy, dx - 1), at(dy, dx + 1)),
        ]
    }
}

/// Pairs `(tilt_i, tilt_{i+1})` of an angle-sorted series.
pub fn pair_adjacent_tilts(series: &TiltSeries) -> Result<Vec<ProjectionPair>> {
    if series.len() < 2 {
        return Err(Error::TooFew {
            needed: 2,
            got: series.len(),
        });
    }
    Ok(series
        .tilts()
        .windows(2)
        .map(|w| ProjectionPair {
            a: w[0].projection.clone(),
            b: w[1].projection.clone(),
            provenance: Provenance {
                scheme: Scheme::P2pTap,
                angles: vec![w[0].angle, w[1].angle],
            },
        })
        .collect())
}

fn check_permutation(indices: impl Iterator<Item = usize>, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for i in indices {
        if i >= n || seen[i] {
            return Err(Error::invalid("acquisition indices must be a permutation of 0..n"));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Even acquisition numbers to `a`, odd to `b`.
pub fn split_series_even_odd_acquisition(series: &TiltSeries) -> Result<HalfSeries> {
    check_permutation(series.tilts().iter().map(|t| t.acquisition_index), series.len())?;
    let (even, odd): (Vec<Tilt>, Vec<Tilt>) = series
        .tilts()
        .iter()
        .cloned()
        .partition(|t| t.acquisition_index % 2 == 0);
    Ok(HalfSeries {
        a: TiltSeries::new(even)?,
        b: TiltSeries::new(odd)?,
        kind: HalfKind::EvenOddAcquisition,
    })
}

/// Aligns every tilt's frames and splits them even/odd; both halves keep the
/// full angle list.
pub fn split_series_frames(series: &MovieTiltSeries) -> Result<HalfSeries> {
    let pairs = df_pairs(series)?;
    let mut a = Vec::with_capacity(pairs.len());
    let mut b = Vec::with_capacity(pairs.len());
    for (t, p) in series.tilts.iter().zip(pairs) {
        a.push(Tilt {
            angle: t.angle,
            projection: p.a,
            acquisition_index: t.acquisition_index,
        });
        b.push(Tilt {
            angle: t.angle,
            projection: p.b,
            acquisition_index: t.acquisition_index,
        });
    }
    Ok(HalfSeries {
        a: TiltSeries::new(a)?,
        b: TiltSeries::new(b)?,
        kind: HalfKind::FrameSplit,
    })
}

fn df_pairs(series: &MovieTiltSeries) -> Result<Vec<ProjectionPair>> {
    crate::par::map_range(series.tilts.len(), |i| {
        let t = &series.tilts[i];
        let (aligned, _) = align_frames(&t.frames)?;
        let mut p = split_even_odd(&aligned)?;
        p.provenance.angles = vec![t.angle];
        Ok(p)
    })
    .into_iter()
    .collect()
}

/// Projection pairs for one of the three 2D schemes.
pub fn projection_pairs(series: &MovieTiltSeries, scheme: Scheme) -> Result<Vec<ProjectionPair>> {
    match scheme {
        Scheme::P2pIp => series
            .tilts
            .iter()
            .map(|t| {
                let mut p = split_halves(&t.frames)?;
                p.provenance.angles = vec![t.angle];
                Ok(p)
            })
            .collect(),
        Scheme::P2pTap => pair_adjacent_tilts(&series.summed()?),
        Scheme::P2pDf => df_pairs(series),
        _ => Err(Error::InvalidArgument(
            String::from("not a projection scheme: ") + scheme.as_str(),
        )),
    }
}

/// Half tilt series for one of the two tomographic schemes.
pub fn half_series(series: &MovieTiltSeries, scheme: Scheme) -> Result<HalfSeries> {
    match scheme {
        Scheme::T2tEoa => split_series_even_odd_acquisition(&series.summed()?),
        Scheme::T2tDf => split_series_frames(series),
        _ => Err(Error::InvalidArgument(
            String::from("not a tomographic scheme: ") + scheme.as_str(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rng;
    use crate::phantom::{make_phantom, simulate_acquisition, AcquisitionSpec, MovieTilt, PhantomSpec};

    fn const_frame(v: f32) -> ScalarField {
        ScalarField::filled(&[4, 4], v).unwrap()
    }

    fn noise_frames(n: usize, seed: u64) -> Vec<ScalarField> {
        let mut r = Rng::new(seed);
        (0..n)
            .map(|_| ScalarField::from_fn(&[5, 7], |_| r.normal() as f32).unwrap())
            .collect()
    }

    fn close(a: &ScalarField, b: &ScalarField, tol: f32) -> bool {
        a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn halves_of_four() {
        let f = noise_frames(4, 1);
        let p = split_halves(&f).unwrap();
        let a = f[0].zip_map(&f[1], |x, y| (x + y) / 2.0).unwrap();
        let b = f[2].zip_map(&f[3], |x, y| (x + y) / 2.0).unwrap();
        assert!(close(&p.a, &a, 1e-6) && close(&p.b, &b, 1e-6));
    }

    #[test]
    fn halves_floor_split() {
        let f = noise_frames(3, 2);
        let p = split_halves(&f).unwrap();
        assert_eq!(p.a, f[0]);
        let b = f[1].zip_map(&f[2], |x, y| (x + y) / 2.0).unwrap();
        assert!(close(&p.b, &b, 1e-6));
    }

    #[test]
    fn halves_of_constant_frames() {
        let f = vec![const_frame(2.5); 6];
        let p = split_halves(&f).unwrap();
        assert_eq!(p.a, const_frame(2.5));
        assert_eq!(p.b, const_frame(2.5));
        assert!(split_halves(&f[..1]).is_err());
    }

    #[test]
    fn even_odd_definition() {
        let f = noise_frames(4, 3);
        let p = split_even_odd(&f).unwrap();
        assert!(close(&p.a, &f[0].zip_map(&f[2], |x, y| x + y).unwrap(), 1e-6));
        assert!(close(&p.b, &f[1].zip_map(&f[3], |x, y| x + y).unwrap(), 1e-6));
        let f5: Vec<ScalarField> = (0..5).map(|_| const_frame(1.0)).collect();
        let p5 = split_even_odd(&f5).unwrap();
        assert_eq!((p5.a.data()[0], p5.b.data()[0]), (3.0, 2.0));
        assert!(split_even_odd(&f5[..1]).is_err());
    }

    #[test]
    fn conservation_identities() {
        for n in 2..8 {
            let f = noise_frames(n, 10 + n as u64);
            let total = sum_frames(&f).unwrap();
            let h = split_halves(&f).unwrap();
            let (na, nb) = ((n / 2) as f32, (n - n / 2) as f32);
            let recombined = h.a.zip_map(&h.b, |a, b| (na * a + nb * b) / n as f32).unwrap();
            let mean = total.map(|v| v / n as f32).unwrap();
            assert!(close(&recombined, &mean, 1e-5));
            let eo = split_even_odd(&f).unwrap();
            assert!(close(&eo.a.zip_map(&eo.b, |a, b| a + b).unwrap(), &total, 1e-5));
        }
    }

    #[test]
    fn interleaved_split_shares_a_dose_ramp() {
        // Frame k carries mean level 1 + 0.2 k, mimicking accumulating damage.
        let f: Vec<ScalarField> = (0..5).map(|k| const_frame(1.0 + 0.2 * k as f32)).collect();
        let eo = split_even_odd(&f).unwrap();
        let hs = split_halves(&f).unwrap();
        let eo_gap = (eo.a.mean() / 3.0 - eo.b.mean() / 2.0).abs();
        let half_gap = (hs.a.mean() - hs.b.mean()).abs();
        assert!(eo_gap < half_gap, "{eo_gap} vs {half_gap}");
    }

    fn textured(seed: u64) -> ScalarField {
        let p = make_phantom(&PhantomSpec {
            shape: [16, 48, 48],
            n_membranes: 1,
            n_filaments: 3,
            n_blobs: 8,
            seed,
            ..PhantomSpec::default()
        })
        .unwrap();
        crate::phantom::project(&p.density, 0.0).unwrap()
    }

    #[test]
    fn aligned_frames_report_zero_shift() {
        let img = textured(1);
        let (_, shifts) = align_frames(&[img.clone(), img.clone(), img]).unwrap();
        for s in shifts {
            assert!(s[0].abs() <= 0.25 && s[1].abs() <= 0.25, "{s:?}");
        }
    }

    #[test]
    fn integer_shift_is_recovered() {
        let img = textured(2);
        let moved = img.translate(3.0, -2.0).unwrap();
        let (aligned, shifts) = align_frames(&[img.clone(), moved]).unwrap();
        assert_eq!([libm::round(shifts[1][0]), libm::round(shifts[1][1])], [3.0, -2.0]);
        // undoing the shift brings the interior far closer than the raw copy
        let gap = |f: &ScalarField| {
            let mut sum = 0.0f64;
            for y in 8..40 {
                for x in 8..40 {
                    sum += (f.get(&[y, x]) - img.get(&[y, x])).abs() as f64;
                }
            }
            sum
        };
        let moved_gap = gap(&img.translate(3.0, -2.0).unwrap());
        assert!(gap(&aligned[1]) < 0.1 * moved_gap);
        assert!(align_frames(&[img]).is_err());
    }

    #[test]
    fn adjacent_tilt_pairs() {
        let mk = |angles: &[f64]| {
            TiltSeries::new(
                angles
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| Tilt {
                        angle: a,
                        projection: const_frame(i as f32),
                        acquisition_index: i,
                    })
                    .collect(),
            )
            .unwrap()
        };
        let p = pair_adjacent_tilts(&mk(&[-60.0, -58.0, -56.0])).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].provenance.angles, vec![-58.0, -56.0]);
        assert_eq!(p[1].provenance.scheme, Scheme::P2pTap);
        let angles: Vec<f64> = (0..61).map(|i| -60.0 + 2.0 * i as f64).collect();
        assert_eq!(pair_adjacent_tilts(&mk(&angles)).unwrap().len(), 60);
        assert!(pair_adjacent_tilts(&mk(&[0.0])).is_err());
    }

    fn series_with_order(angles: &[f64], order: &[usize]) -> TiltSeries {
        TiltSeries::new(
            angles
                .iter()
                .zip(order)
                .map(|(&a, &o)| Tilt {
                    angle: a,
                    projection: const_frame(a as f32),
                    acquisition_index: o,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn even_odd_acquisition_split() {
        let angles = [-10.0, -6.0, -2.0, 2.0, 6.0, 10.0];
        let h = split_series_even_odd_acquisition(&series_with_order(&angles, &[0, 1, 2, 3, 4, 5]))
            .unwrap();
        assert_eq!(h.a.angles(), vec![-10.0, -2.0, 6.0]);
        assert_eq!(h.b.angles(), vec![-6.0, 2.0, 10.0]);
        // dose-symmetric order: acquisition index decides, not angle rank
        let h = split_series_even_odd_acquisition(&series_with_order(&angles, &[5, 3, 1, 0, 2, 4]))
            .unwrap();
        assert_eq!(h.a.angles(), vec![2.0, 6.0, 10.0]);
        let mut all = h.a.angles();
        all.extend(h.b.angles());
        all.sort_by(f64::total_cmp);
        assert_eq!(all, angles.to_vec());
        assert!(h.a.angles().iter().all(|a| !h.b.angles().contains(a)));
    }

    #[test]
    fn broken_acquisition_indices_are_rejected() {
        let angles = [-2.0, 0.0, 2.0];
        assert!(split_series_even_odd_acquisition(&series_with_order(&angles, &[0, 0, 1])).is_err());
        assert!(split_series_even_odd_acquisition(&series_with_order(&angles, &[0, 1, 3])).is_err());
    }

    #[test]
    fn frame_split_keeps_every_angle() {
        let p = make_phantom(&PhantomSpec {
            shape: [8, 16, 16],
            n_blobs: 2,
            blob_radius_range: (2.0, 2.5),
            ..PhantomSpec::default()
        })
        .unwrap();
        let acq = AcquisitionSpec {
            angles: crate::phantom::tilt_range(-60.0, 60.0, 3.0).unwrap(),
            frames_per_tilt: 4,
            seed: 4,
            ..AcquisitionSpec::default()
        };
        let m = simulate_acquisition(&p, &acq).unwrap();
        let h = split_series_frames(&m).unwrap();
        assert_eq!(h.a.len(), 41);
        assert_eq!(h.b.len(), 41);
        assert_eq!(h.a.angles(), h.b.angles());
        assert_eq!(h.kind, HalfKind::FrameSplit);
    }

    #[test]
    fn single_frame_tilt_is_rejected() {
        let m = MovieTiltSeries::new(vec![MovieTilt {
            angle: 0.0,
            acquisition_index: 0,
            frames: vec![const_frame(1.0)],
        }])
        .unwrap();
        assert!(split_series_frames(&m).is_err());
    }

    #[test]
    fn scheme_names_roundtrip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("p2p-xx".parse::<Scheme>().is_err());
    }
}
