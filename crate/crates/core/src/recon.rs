//! Weighted backprojection.
//!
//! Geometry: parallel beam along Z, single tilt axis along Y. A voxel at
//! centered coordinates `(xc, zc)` lands on detector coordinate
//! `u = xc cos(theta) + zc sin(theta)`, measured from the detector center.
//! The projector in [`crate::phantom`] is the exact adjoint of the
//! unfiltered backprojection defined here.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft::{freq, next_pow2, Complex64, FftPlan};
use crate::grid::ScalarField;
use crate::pairing::HalfSeries;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Tilt {
    pub angle: f64,
    pub projection: ScalarField,
    pub acquisition_index: usize,
}

/// Projections sorted by strictly increasing tilt angle (degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct TiltSeries {
    tilts: Vec<Tilt>,
}

impl TiltSeries {
    /// Sorts by angle; rejects duplicate angles and mixed projection shapes.
    pub fn new(mut tilts: Vec<Tilt>) -> Result<Self> {
        tilts.sort_by(|a, b| a.angle.total_cmp(&b.angle));
        for w in tilts.windows(2) {
            if !(w[1].angle > w[0].angle) {
                return Err(Error::invalid("tilt angles must be distinct"));
            }
            w[0].projection.require_same_shape(&w[1].projection)?;
        }
        for t in &tilts {
            if t.projection.ndim() != 2 {
                return Err(Error::invalid("projections must be 2D"));
            }
            if !(t.angle.abs() < 90.0) {
                return Err(Error::invalid("tilt angles must lie strictly within (-90, 90)"));
            }
        }
        Ok(Self { tilts })
    }

    pub fn tilts(&self) -> &[Tilt] {
        &self.tilts
    }

    pub fn len(&self) -> usize {
        self.tilts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tilts.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.tilts.iter().map(|t| t.angle).collect()
    }

    pub fn projection_shape(&self) -> Option<&[usize]> {
        self.tilts.first().map(|t| t.projection.shape())
    }

    /// Same angles and indices, projections replaced by `f(tilt)`.
    pub fn map_projections(
        &self,
        mut f: impl FnMut(&Tilt) -> Result<ScalarField>,
    ) -> Result<Self> {
        let tilts = self
            .tilts
            .iter()
            .map(|t| {
                Ok(Tilt {
                    angle: t.angle,
                    projection: f(t)?,
                    acquisition_index: t.acquisition_index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tilts)
    }
}

/// The unsampled region of Fourier space for a symmetric tilt range.
///
/// A frequency `(kz, ky, kx)` is sampled when the angle between its `(kx, kz)`
/// component and the `kx` axis is at most `half_angle_deg`; frequencies on the
/// tilt axis (`kx = kz = 0`) are always sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WedgeMask {
    half_angle_deg: f64,
}

impl WedgeMask {
    pub fn new(half_angle_deg: f64) -> Result<Self> {
        if !(half_angle_deg > 0.0 && half_angle_deg < 90.0) {
            return Err(Error::invalid("wedge half-angle must lie in (0, 90) degrees"));
        }
        Ok(Self { half_angle_deg })
    }

    pub fn half_angle_deg(&self) -> f64 {
        self.half_angle_deg
    }

    pub fn is_missing(&self, kz: f64, kx: f64) -> bool {
        if kz == 0.0 {
            return false;
        }
        libm::atan2(kz.abs(), kx.abs()).to_degrees() > self.half_angle_deg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RampWindow {
    None,
    #[default]
    Hann,
}

/// How each detector row is extended before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RampPadding {
    /// Extend to the next power of two at least twice the width by repeating
    /// the edge values, so no wrap-around leaks between opposite edges.
    #[default]
    Edge,
    /// Filter the row as one period of a periodic signal; the width must be a
    /// power of two.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RampFilter {
    pub window: RampWindow,
    pub padding: RampPadding,
}

/// Ramp filter along X (perpendicular to the tilt axis) with edge padding.
pub fn ramp_filter(p: &ScalarField, window: RampWindow) -> Result<ScalarField> {
    RampFilter {
        window,
        padding: RampPadding::Edge,
    }
    .apply(p)
}

impl RampFilter {
    pub fn apply(&self, p: &ScalarField) -> Result<ScalarField> {
        let [ny, nx] = match p.shape() {
            [a, b] => [*a, *b],
            _ => return Err(Error::invalid("ramp filter expects a 2D projection")),
        };
        if nx < 2 {
            return Err(Error::invalid("projection width must be at least 2"));
        }
        let len = match self.padding {
            RampPadding::Edge => next_pow2(2 * nx),
            RampPadding::Periodic if nx.is_power_of_two() => nx,
            RampPadding::Periodic => {
                return Err(Error::invalid("periodic ramp filtering needs a power-of-two width"))
            }
        };
        let plan = FftPlan::new(len)?;
        let response: Vec<f64> = (0..len)
            .map(|k| {
                let f = freq(k, len);
                let w = match self.window {
                    RampWindow::None => 1.0,
                    RampWindow::Hann => 0.5 * (1.0 + libm::cos(core::f64::consts::TAU * f)),
                };
                f.abs() * w
            })
            .collect();
        let mut out = vec![0.0f32; ny * nx];
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        let data = p.data();
        for y in 0..ny {
            let row = &data[y * nx..(y + 1) * nx];
            let pad = len - nx;
            for (k, b) in buf.iter_mut().enumerate() {
                let v = if k < nx {
                    row[k]
                } else if k < nx + pad / 2 {
                    row[nx - 1]
                } else {
                    row[0]
                };
                *b = Complex64::new(v as f64, 0.0);
            }
            plan.forward(&mut buf);
            for (b, h) in buf.iter_mut().zip(&response) {
                *b *= *h;
            }
            plan.inverse(&mut buf);
            for (o, b) in out[y * nx..(y + 1) * nx].iter_mut().zip(&buf) {
                *o = b.re as f32;
            }
        }
        ScalarField::like(p, out)
    }
}

/// Detector coordinate (in pixels, from detector index 0) of every `(z, x)`
/// column of a volume with extents `nz, nx`, for a detector `n_det` wide.
pub(crate) fn detector_coords(nz: usize, nx: usize, n_det: usize, angle_deg: f64) -> Vec<f64> {
    let (s, c) = libm::sincos(angle_deg.to_radians());
    let (cz, cx, cu) = (
        (nz as f64 - 1.0) / 2.0,
        (nx as f64 - 1.0) / 2.0,
        (n_det as f64 - 1.0) / 2.0,
    );
    let mut u = Vec::with_capacity(nz * nx);
    for z in 0..nz {
        let zc = z as f64 - cz;
        for x in 0..nx {
            u.push((x as f64 - cx) * c + zc * s + cu);
        }
    }
    u
}

/// Left detector bin of a coordinate and the weight of its right neighbor.
/// `None` when neither neighbor lies on the detector.
#[inline]
pub(crate) fn linear_bin(u: f64, n_det: usize) -> Option<(isize, f32)> {
    let i0 = libm::floor(u);
    if i0 < -1.0 || i0 > (n_det - 1) as f64 {
        return None;
    }
    Some((i0 as isize, (u - i0) as f32))
}

/// Backprojects every tilt into a volume of shape `out_shape = (nz, ny, nx)`.
///
/// With `filtered`, each projection first goes through the default ramp
/// filter (Hann window, edge padding). Contributions are scaled by
/// `pi / n_angles` so full-range reconstructions approximate density.
pub fn backproject(series: &TiltSeries, out_shape: [usize; 3], filtered: bool) -> Result<ScalarField> {
    let filter = filtered.then(RampFilter::default);
    backproject_with(series, out_shape, filter.as_ref())
}

pub fn backproject_with(
    series: &TiltSeries,
    out_shape: [usize; 3],
    filter: Option<&RampFilter>,
) -> Result<ScalarField> {
    if series.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let [nz, ny, nx] = out_shape;
    if out_shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidShape {
            shape: out_shape.to_vec(),
            reason: "zero-length axis",
        });
    }
    let pshape = series.projection_shape().expect("nonempty");
    let (py, n_det) = (pshape[0], pshape[1]);
    if py != ny {
        return Err(Error::ShapeMismatch(vec![ny], vec![py]));
    }
    let projections: Vec<ScalarField> = series
        .tilts()
        .iter()
        .map(|t| match filter {
            Some(f) => f.apply(&t.projection),
            None => Ok(t.projection.clone()),
        })
        .collect::<Result<_>>()?;
    let bins: Vec<Vec<Option<(isize, f32)>>> = series
        .tilts()
        .iter()
        .map(|t| {
            detector_coords(nz, nx, n_det, t.angle)
                .into_iter()
                .map(|u| linear_bin(u, n_det))
                .collect()
        })
        .collect();
    let scale = (core::f64::consts::PI / series.len() as f64) as f32;
    let mut out = vec![0.0f32; nz * ny * nx];
    par::for_each_chunk_mut(&mut out, ny * nx, |z, plane| {
        for (proj, bin) in projections.iter().zip(&bins) {
            let pdata = proj.data();
            let bin = &bin[z * nx..(z + 1) * nx];
            for y in 0..ny {
                let prow = &pdata[y * n_det..(y + 1) * n_det];
                let orow = &mut plane[y * nx..(y + 1) * nx];
                for (o, b) in orow.iter_mut().zip(bin) {
                    if let Some((i0, w)) = *b {
                        *o += interp(prow, i0, w);
                    }
                }
            }
        }
        for v in plane.iter_mut() {
            *v *= scale;
        }
    });
    Ok(ScalarField::from_parts(vec![nz, ny, nx], out, vec![1.0; 3]))
}

#[inline]
fn interp(row: &[f32], i0: isize, w: f32) -> f32 {
    let mut v = 0.0;
    if i0 >= 0 {
        v += row[i0 as usize] * (1.0 - w);
    }
    let i1 = i0 + 1;
    if w > 0.0 && (i1 as usize) < row.len() {
        v += row[i1 as usize] * w;
    }
    v
}

/// Reconstructs both halves with identical settings (default ramp filter).
pub fn reconstruct_pair(h: &HalfSeries, out_shape: [usize; 3]) -> Result<(ScalarField, ScalarField)> {
    if h.a.is_empty() || h.b.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    Ok((
        backproject(&h.a, out_shape, true)?,
        backproject(&h.b, out_shape, true)?,
    ))
}
