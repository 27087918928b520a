//! Simulated specimens and a simulated microscope.
//!
//! A phantom is a volume of membranes (thin planar sheets), filaments
//! (cylinders) and labeled target blobs (spheres). Tilted projections are line
//! integrals along the beam, and each tilt is recorded as a dose-fractionated
//! movie with beam-induced drift, shot noise and Gaussian read-out noise.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::grid::{Rng, ScalarField};
use crate::par;
use crate::sq;
use crate::recon::{detector_coords, linear_bin};

/// Integer labels over a 3D grid (`0` = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    pub shape: [usize; 3],
    pub data: Vec<u32>,
}

impl LabelField {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0; shape.iter().product()],
        }
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField::from_parts(
            self.shape.to_vec(),
            self.data.iter().map(|&v| v as f32).collect(),
            vec![1.0; 3],
        )
    }

    /// Inverse of [`LabelField::to_field`]; values must be non-negative integers.
    pub fn from_field(f: &ScalarField) -> Result<Self> {
        let shape = f.dims3();
        let data = f
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v == libm::floorf(v) && v < u32::MAX as f32 {
                    Ok(v as u32)
                } else {
                    Err(Error::invalid("label volumes must hold non-negative integers"))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityLevels {
    pub background: f32,
    pub membrane: f32,
    pub filament: f32,
    pub blob: f32,
}

impl Default for DensityLevels {
    fn default() -> Self {
        Self {
            background: 0.0,
            membrane: 0.8,
            filament: 0.8,
            blob: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// `(nz, ny, nx)`
    pub shape: [usize; 3],
    pub n_membranes: usize,
    pub n_filaments: usize,
    pub n_blobs: usize,
    /// Inclusive range of blob radii in voxels.
    pub blob_radius_range: (f64, f64),
    pub density_levels: DensityLevels,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            shape: [64, 64, 64],
            n_membranes: 2,
            n_filaments: 4,
            n_blobs: 20,
            blob_radius_range: (2.5, 3.5),
            density_levels: DensityLevels::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// `(z, y, x)` in voxels.
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub density: ScalarField,
    pub labels: LabelField,
    pub blobs: Vec<Blob>,
}

const MEMBRANE_THICKNESS: f64 = 2.0;
const FILAMENT_RADIUS: f64 = 1.5;
/// Minimum surface-to-surface distance between blobs, so they stay separable.
const BLOB_GAP: f64 = 2.0;
const PLACEMENT_ATTEMPTS: usize = 2000;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidShape {
                shape: self.shape.to_vec(),
                reason: "zero-length axis",
            });
        }
        let (lo, hi) = self.blob_radius_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("blob radii must satisfy 0 < min <= max"));
        }
        let min_extent = *self.shape.iter().min().unwrap() as f64;
        if self.n_blobs > 0 && 2.0 * (hi + 1.0) > min_extent {
            return Err(Error::invalid("volume too small for the largest blob"));
        }
        let l = &self.density_levels;
        if ![l.background, l.membrane, l.filament, l.blob].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Soft occupancy of a voxel whose center lies `d` voxels from a surface at
/// half-width `r`: 1 inside, 0 outside, linear over one voxel.
fn occupancy(d: f64, r: f64) -> f32 {
    (r + 0.5 - d).clamp(0.0, 1.0) as f32
}

fn random_unit(rng: &mut Rng) -> [f64; 3] {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = libm::sqrt(v.iter().map(|a| a * a).sum());
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let [nz, ny, nx] = spec.shape;
    let levels = spec.density_levels;
    let root = Rng::new(spec.seed);
    let mut density = vec![levels.background; nz * ny * nx];
    let idx = |z: usize, y: usize, x: usize| (z * ny + y) * nx + x;
    let deposit = |density: &mut Vec<f32>, i: usize, occ: f32, level: f32| {
        if occ > 0.0 {
            let v = levels.background + occ * (level - levels.background);
            if (v - levels.background).abs() > (density[i] - levels.background).abs() {
                density[i] = v;
            }
        }
    };
    let center = [nz as f64 / 2.0, ny as f64 / 2.0, nx as f64 / 2.0];

    let mut rng = root.stream(0);
    for _ in 0..spec.n_membranes {
        // Sheets roughly parallel to the specimen plane, so they show up in
        // every tilt like the support film and membranes of a real sample.
        let mut normal = random_unit(&mut rng);
        normal[0] = normal[0].abs() + 1.5;
        let nn = libm::sqrt(normal.iter().map(|a| a * a).sum());
        let normal = [normal[0] / nn, normal[1] / nn, normal[2] / nn];
        let p0 = [
            rng.uniform_range(0.2, 0.8) * nz as f64,
            center[1],
            center[2],
        ];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let d = (z as f64 - p0[0]) * normal[0]
                        + (y as f64 - p0[1]) * normal[1]
                        + (x as f64 - p0[2]) * normal[2];
                    deposit(&mut density, idx(z, y, x), occupancy(d.abs(), MEMBRANE_THICKNESS / 2.0), levels.membrane);
                }
            }
        }
    }

    let mut rng = root.stream(1);
    for _ in 0..spec.n_filaments {
        let dir = random_unit(&mut rng);
        let p0 = [
            rng.uniform_range(0.2, 0.8) * nz as f64,
            rng.uniform_range(0.0, 1.0) * ny as f64,
            rng.uniform_range(0.0, 1.0) * nx as f64,
        ];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let r = [z as f64 - p0[0], y as f64 - p0[1], x as f64 - p0[2]];
                    let t = r[0] * dir[0] + r[1] * dir[1] + r[2] * dir[2];
                    let perp2 = r.iter().map(|a| a * a).sum::<f64>() - t * t;
                    let d = libm::sqrt(perp2.max(0.0));
                    deposit(&mut density, idx(z, y, x), occupancy(d, FILAMENT_RADIUS), levels.filament);
                }
            }
        }
    }

    let mut rng = root.stream(2);
    let (rmin, rmax) = spec.blob_radius_range;
    let mut blobs: Vec<Blob> = Vec::with_capacity(spec.n_blobs);
    for _ in 0..spec.n_blobs {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let radius = rng.uniform_range(rmin, rmax);
            let m = radius + 1.0;
            let c = [
                rng.uniform_range(m, nz as f64 - 1.0 - m),
                rng.uniform_range(m, ny as f64 - 1.0 - m),
                rng.uniform_range(m, nx as f64 - 1.0 - m),
            ];
            let clear = blobs.iter().all(|b| {
                let d2: f64 = (0..3).map(|k| (b.center[k] - c[k]) * (b.center[k] - c[k])).sum();
                libm::sqrt(d2) >= b.radius + radius + BLOB_GAP
            });
            if clear {
                placed = Some(Blob { center: c, radius });
                break;
            }
        }
        blobs.push(placed.ok_or(Error::PlacementFailed {
            what: "blob",
            attempts: PLACEMENT_ATTEMPTS,
        })?);
    }

    let mut labels = LabelField::zeros(spec.shape);
    for (k, b) in blobs.iter().enumerate() {
        let reach = b.radius + 1.0;
        let lo = |c: f64| libm::floor(c - reach).max(0.0) as usize;
        let hi = |c: f64, n: usize| (libm::ceil(c + reach) as usize).min(n - 1);
        for z in lo(b.center[0])..=hi(b.center[0], nz) {
            for y in lo(b.center[1])..=hi(b.center[1], ny) {
                for x in lo(b.center[2])..=hi(b.center[2], nx) {
                    let d = libm::sqrt(
                        sq(z as f64 - b.center[0])
                            + sq(y as f64 - b.center[1])
                            + sq(x as f64 - b.center[2]),
                    );
                    let i = idx(z, y, x);
                    deposit(&mut density, i, occupancy(d, b.radius), levels.blob);
                    if d <= b.radius {
                        labels.data[i] = k as u32 + 1;
                    }
                }
            }
        }
    }

    Ok(Phantom {
        density: ScalarField::from_parts(spec.shape.to_vec(), density, vec![1.0; 3]),
        labels,
        blobs,
    })
}

/// Line integral along the beam after tilting the specimen by `angle_deg`
/// about the Y axis. Output shape is `(ny, nx)`.
///
/// Each voxel is split linearly between the two detector pixels around its
/// projected position, so total mass is conserved for every voxel whose
/// footprint stays on the detector.
pub fn project(v: &ScalarField, angle_deg: f64) -> Result<ScalarField> {
    let [nz, ny, nx] = match v.shape() {
        [a, b, c] => [*a, *b, *c],
        _ => return Err(Error::invalid("projection requires a 3D volume")),
    };
    if !(angle_deg.abs() < 90.0) {
        return Err(Error::invalid("tilt angle must lie strictly within (-90, 90) degrees"));
    }
    let n_det = nx;
    let bins: Vec<Option<(isize, f32)>> = detector_coords(nz, nx, n_det, angle_deg)
        .into_iter()
        .map(|u| linear_bin(u, n_det))
        .collect();
    let data = v.data();
    let mut out = vec![0.0f32; ny * n_det];
    par::for_each_chunk_mut(&mut out, n_det, |y, orow| {
        for z in 0..nz {
            let vrow = &data[(z * ny + y) * nx..(z * ny + y + 1) * nx];
            for (val, b) in vrow.iter().zip(&bins[z * nx..(z + 1) * nx]) {
                if let Some((i0, w)) = *b {
                    if i0 >= 0 {
                        orow[i0 as usize] += val * (1.0 - w);
                    }
                    let i1 = (i0 + 1) as usize;
                    if w > 0.0 && i1 < n_det {
                        orow[i1] += val * w;
                    }
                }
            }
        }
    });
    let vs = v.voxel_size();
    Ok(ScalarField::from_parts(vec![ny, n_det], out, vec![vs[1], vs[2]]))
}

/// Tilt angles from `min` to `max` inclusive in steps of `step` (degrees).
pub fn tilt_range(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max >= min) {
        return Err(Error::invalid("tilt range needs step > 0 and max >= min"));
    }
    let n = libm::floor((max - min) / step + 1e-9) as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

/// Dose-symmetric ordering: 0, +s, -s, -2s, +2s, +3s, -3s, ... up to `max`.
pub fn dose_symmetric(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max >= 0.0) {
        return Err(Error::invalid("dose-symmetric scheme needs step > 0 and max >= 0"));
    }
    let n = libm::floor(max / step + 1e-9) as usize;
    let mut out = vec![0.0];
    for k in 1..=n {
        let a = k as f64 * step;
        if k % 2 == 1 {
            out.extend([a, -a]);
        } else {
            out.extend([-a, a]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSpec {
    /// Tilt angles in degrees, in acquisition order.
    pub angles: Vec<f64>,
    pub frames_per_tilt: usize,
    /// Expected electrons per pixel per frame through empty ice.
    pub dose_per_frame: f64,
    pub readout_sigma: f64,
    /// Per-frame drift `(dy, dx)` in pixels; frame `k` is displaced by `k` times this.
    pub drift_per_frame: [f64; 2],
    /// Fraction of the beam removed at the densest point of the untilted projection.
    pub contrast: f64,
    /// `false` records the expected counts without shot or read-out noise.
    pub noise: bool,
    pub seed: u64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            angles: tilt_range(-60.0, 60.0, 2.0).expect("valid range"),
            frames_per_tilt: 4,
            dose_per_frame: 2.0,
            readout_sigma: 0.5,
            drift_per_frame: [0.0, 0.0],
            contrast: 0.4,
            noise: true,
            seed: 0,
        }
    }
}

impl AcquisitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::TooFew { needed: 1, got: 0 });
        }
        if self.angles.iter().any(|a| !(a.abs() < 90.0)) {
            return Err(Error::invalid("tilt angles must lie strictly within (-90, 90) degrees"));
        }
        let mut sorted = self.angles.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("tilt angles must be distinct"));
        }
        if self.frames_per_tilt == 0 {
            return Err(Error::invalid("at least one frame per tilt is required"));
        }
        if !(self.dose_per_frame > 0.0 && self.dose_per_frame.is_finite()) {
            return Err(Error::invalid("dose per frame must be positive"));
        }
        if !(self.readout_sigma >= 0.0 && self.readout_sigma.is_finite()) {
            return Err(Error::invalid("read-out sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::invalid("contrast must lie in [0, 1]"));
        }
        if !self.drift_per_frame.iter().all(|d| d.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovieTilt {
    pub angle: f64,
    pub acquisition_index: usize,
    pub frames: Vec<ScalarField>,
}

/// Dose-fractionated tilt series, sorted by angle.
#[derive(Debug, Clone, PartialEq)]
pub struct MovieTiltSeries {
    pub tilts: Vec<MovieTilt>,
}

impl MovieTiltSeries {
    pub fn new(mut tilts: Vec<MovieTilt>) -> Result<Self> {
        tilts.sort_by(|a, b| a.angle.total_cmp(&b.angle));
        let shape = tilts
            .first()
            .and_then(|t| t.frames.first())
            .map(|f| f.shape().to_vec());
        let mut seen = vec![false; tilts.len()];
        for t in &tilts {
            if t.acquisition_index >= tilts.len() || seen[t.acquisition_index] {
                return Err(Error::invalid("acquisition indices must be a permutation of 0..n"));
            }
            seen[t.acquisition_index] = true;
            for f in &t.frames {
                if Some(f.shape()) != shape.as_deref() || f.ndim() != 2 {
                    return Err(Error::invalid("all frames must be 2D with one shared shape"));
                }
            }
        }
        Ok(Self { tilts })
    }

    pub fn frame_shape(&self) -> Option<&[usize]> {
        self.tilts.first().and_then(|t| t.frames.first()).map(|f| f.shape())
    }

    /// Per-tilt frame sums (the conventional, non-fractionated acquisition).
    pub fn summed(&self) -> Result<crate::recon::TiltSeries> {
        crate::recon::TiltSeries::new(
            self.tilts
                .iter()
                .map(|t| {
                    Ok(crate::recon::Tilt {
                        angle: t.angle,
                        projection: crate::pairing::sum_frames(&t.frames)?,
                        acquisition_index: t.acquisition_index,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

/// The noise-free image each frame of a tilt is drawn around (before drift):
/// `1 - contrast * p / p_ref`, where `p_ref` is the maximum of the untilted
/// projection.
pub fn normalized_projections(p: &Phantom, acq: &AcquisitionSpec) -> Result<Vec<ScalarField>> {
    let (_, p_ref) = project(&p.density, 0.0)?.min_max();
    let p_ref = if p_ref > 0.0 { p_ref as f64 } else { 1.0 };
    acq.angles
        .iter()
        .map(|&a| {
            let proj = project(&p.density, a)?;
            proj.map(|v| (1.0 - acq.contrast * v as f64 / p_ref).max(0.0) as f32)
        })
        .collect()
}

pub fn simulate_acquisition(p: &Phantom, acq: &AcquisitionSpec) -> Result<MovieTiltSeries> {
    acq.validate()?;
    let clean = normalized_projections(p, acq)?;
    let root = Rng::new(acq.seed);
    let tilts = par::map_range(acq.angles.len(), |i| -> Result<MovieTilt> {
        let tilt_rng = root.stream(i as u64);
        let frames = (0..acq.frames_per_tilt)
            .map(|k| {
                let shift = [k as f64 * acq.drift_per_frame[0], k as f64 * acq.drift_per_frame[1]];
                let expected = clean[i]
                    .translate(shift[0], shift[1])?
                    .map(|v| (v as f64 * acq.dose_per_frame) as f32)?;
                if !acq.noise {
                    return Ok(expected);
                }
                let mut rng = tilt_rng.stream(k as u64);
                let noisy = expected
                    .data()
                    .iter()
                    .map(|&lambda| {
                        let counts = if lambda > 0.0 {
                            Poisson::new(lambda as f64).expect("positive rate").sample(&mut rng)
                        } else {
                            0.0
                        };
                        (counts + acq.readout_sigma * rng.normal()) as f32
                    })
                    .collect();
                ScalarField::like(&expected, noisy)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MovieTilt {
            angle: acq.angles[i],
            acquisition_index: i,
            frames,
        })
    });
    MovieTiltSeries::new(tilts.into_iter().collect::<Result<Vec<_>>>()?)
}
