use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A 2D or 3D grid of `f32` samples, row-major with the last axis fastest.
///
/// Holds images `(ny, nx)`, projections, and volumes `(nz, ny, nx)`. All
/// values are finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    shape: Vec<usize>,
    data: Vec<f32>,
    voxel_size: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if !(shape.len() == 2 || shape.len() == 3) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "only 2 or 3 axes are supported",
        });
    }
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "zero-length axis",
        });
    }
    Ok(shape.iter().product())
}

impl ScalarField {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::ShapeMismatch(shape, vec![data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let voxel_size = vec![1.0; shape.len()];
        Ok(Self {
            shape,
            data,
            voxel_size,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Result<Self> {
        let n = check_shape(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            voxel_size: vec![1.0; shape.len()],
        })
    }

    /// Builds a field by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f32) -> Result<Self> {
        let n = check_shape(shape)?;
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self::new(shape.to_vec(), data)
    }

    /// Internal constructor for results of operations that cannot produce
    /// non-finite values from finite inputs.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>, voxel_size: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert_eq!(shape.len(), voxel_size.len());
        Self {
            shape,
            data,
            voxel_size,
        }
    }

    /// Like [`ScalarField::new`] but carries `voxel_size` from a template.
    pub(crate) fn like(template: &ScalarField, data: Vec<f32>) -> Result<Self> {
        let mut f = Self::new(template.shape.clone(), data)?;
        f.voxel_size = template.voxel_size.clone();
        Ok(f)
    }

    pub fn with_voxel_size(mut self, voxel_size: Vec<f64>) -> Result<Self> {
        if voxel_size.len() != self.shape.len() {
            return Err(Error::ShapeMismatch(self.shape.clone(), vec![voxel_size.len()]));
        }
        if voxel_size.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("voxel size must be positive and finite"));
        }
        self.voxel_size = voxel_size;
        Ok(self)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn voxel_size(&self) -> &[f64] {
        &self.voxel_size
    }

    /// Shape padded to three axes: `(1, ny, nx)` for images.
    pub fn dims3(&self) -> [usize; 3] {
        match self.shape.as_slice() {
            [ny, nx] => [1, *ny, *nx],
            [nz, ny, nx] => [*nz, *ny, *nx],
            _ => unreachable!("shape validated at construction"),
        }
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.data[self.offset(idx)]
    }

    /// Applies `f` elementwise; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::like(self, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two fields of identical shape.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.require_same_shape(other)?;
        Self::like(
            self,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn require_same_shape(&self, other: &ScalarField) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape.clone(), other.shape.clone()));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Copies the sub-block starting at `offset` with extent `size`.
    pub fn extract(&self, offset: &[usize], size: &[usize]) -> Result<Self> {
        if offset.len() != self.ndim() || size.len() != self.ndim() {
            return Err(Error::invalid("patch rank differs from field rank"));
        }
        if offset
            .iter()
            .zip(size)
            .zip(&self.shape)
            .any(|((&o, &s), &n)| s == 0 || o + s > n)
        {
            return Err(Error::PatchTooLarge {
                size: size.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let [_, ny, nx] = self.dims3();
        let (o3, s3) = pad3(offset, size);
        let mut out = Vec::with_capacity(size.iter().product());
        for z in o3[0]..o3[0] + s3[0] {
            for y in o3[1]..o3[1] + s3[1] {
                let row = (z * ny + y) * nx;
                out.extend_from_slice(&self.data[row + o3[2]..row + o3[2] + s3[2]]);
            }
        }
        Ok(Self::from_parts(size.to_vec(), out, self.voxel_size.clone()))
    }

    /// Writes `patch` into `self` at `offset`.
    pub fn insert(&mut self, offset: &[usize], patch: &ScalarField) -> Result<()> {
        if offset.len() != self.ndim() || patch.ndim() != self.ndim() {
            return Err(Error::invalid("patch rank differs from field rank"));
        }
        if offset
            .iter()
            .zip(patch.shape())
            .zip(&self.shape)
            .any(|((&o, &s), &n)| o + s > n)
        {
            return Err(Error::PatchTooLarge {
                size: patch.shape.clone(),
                shape: self.shape.clone(),
            });
        }
        let [_, ny, nx] = self.dims3();
        let (o3, s3) = pad3(offset, patch.shape());
        let mut src = patch.data.chunks_exact(s3[2]);
        for z in o3[0]..o3[0] + s3[0] {
            for y in o3[1]..o3[1] + s3[1] {
                let row = (z * ny + y) * nx + o3[2];
                self.data[row..row + s3[2]].copy_from_slice(src.next().expect("sized"));
            }
        }
        Ok(())
    }

    /// One Z-section of a volume as a 2D image.
    pub fn section(&self, z: usize) -> Result<Self> {
        let [nz, ny, nx] = match self.shape.as_slice() {
            [a, b, c] => [*a, *b, *c],
            _ => return Err(Error::invalid("section requires a 3D field")),
        };
        if z >= nz {
            return Err(Error::invalid("section index out of range"));
        }
        Ok(Self::from_parts(
            vec![ny, nx],
            self.data[z * ny * nx..(z + 1) * ny * nx].to_vec(),
            self.voxel_size[1..].to_vec(),
        ))
    }

    /// Stacks equally shaped 2D images along a new leading axis.
    pub fn stack(images: &[ScalarField]) -> Result<Self> {
        let first = images.first().ok_or(Error::TooFew { needed: 1, got: 0 })?;
        if first.ndim() != 2 {
            return Err(Error::invalid("stack expects 2D images"));
        }
        let mut data = Vec::with_capacity(first.len() * images.len());
        for img in images {
            first.require_same_shape(img)?;
            data.extend_from_slice(&img.data);
        }
        let mut shape = vec![images.len()];
        shape.extend_from_slice(first.shape());
        let mut vs = vec![1.0];
        vs.extend_from_slice(first.voxel_size());
        Ok(Self::from_parts(shape, data, vs))
    }

    /// Reinterprets a `(1, ny, nx)` volume as an image.
    pub fn squeeze(self) -> Result<Self> {
        match self.shape.as_slice() {
            [1, ny, nx] => Ok(Self::from_parts(
                vec![*ny, *nx],
                self.data,
                self.voxel_size[1..].to_vec(),
            )),
            [_, _] => Ok(self),
            _ => Err(Error::invalid("squeeze requires a leading axis of length 1")),
        }
    }

    /// Block-mean downsampling. Remainders that do not fill a whole block are
    /// dropped; the output voxel size is scaled by the factor.
    pub fn bin(&self, factor: &[usize]) -> Result<Self> {
        if factor.len() != self.ndim() {
            return Err(Error::invalid("one binning factor per axis required"));
        }
        if factor.iter().any(|&f| f == 0) {
            return Err(Error::invalid("binning factor must be positive"));
        }
        let out_shape: Vec<usize> = self.shape.iter().zip(factor).map(|(n, f)| n / f).collect();
        if out_shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidShape {
                shape: out_shape,
                reason: "binning factor exceeds extent",
            });
        }
        let [_, ny, nx] = self.dims3();
        let (_, f3) = pad3(&vec![0; factor.len()], factor);
        let (_, o3) = pad3(&vec![0; factor.len()], &out_shape);
        let block = (f3[0] * f3[1] * f3[2]) as f64;
        let mut out = Vec::with_capacity(o3.iter().product());
        for oz in 0..o3[0] {
            for oy in 0..o3[1] {
                for ox in 0..o3[2] {
                    let mut acc = 0.0f64;
                    for z in oz * f3[0]..(oz + 1) * f3[0] {
                        for y in oy * f3[1]..(oy + 1) * f3[1] {
                            let row = (z * ny + y) * nx;
                            acc += self.data[row + ox * f3[2]..row + (ox + 1) * f3[2]]
                                .iter()
                                .map(|&v| v as f64)
                                .sum::<f64>();
                        }
                    }
                    out.push((acc / block) as f32);
                }
            }
        }
        let vs = self
            .voxel_size
            .iter()
            .zip(factor)
            .map(|(v, &f)| v * f as f64)
            .collect();
        Ok(Self::from_parts(out_shape, out, vs))
    }
}

impl ScalarField {
    /// Translates a 2D image by `(dy, dx)` pixels with bilinear resampling:
    /// `out(y, x) = self(y - dy, x - dx)`, clamping at the borders.
    pub fn translate(&self, dy: f64, dx: f64) -> Result<Self> {
        let [ny, nx] = match self.shape.as_slice() {
            [a, b] => [*a, *b],
            _ => return Err(Error::invalid("translate requires a 2D field")),
        };
        if !(dy.is_finite() && dx.is_finite()) {
            return Err(Error::NonFinite);
        }
        let sample = |yy: f64, xx: f64| -> f32 {
            let yy = yy.clamp(0.0, (ny - 1) as f64);
            let xx = xx.clamp(0.0, (nx - 1) as f64);
            let (y0, x0) = (libm::floor(yy) as usize, libm::floor(xx) as usize);
            let (y1, x1) = ((y0 + 1).min(ny - 1), (x0 + 1).min(nx - 1));
            let (wy, wx) = ((yy - y0 as f64) as f32, (xx - x0 as f64) as f32);
            let d = &self.data;
            let top = d[y0 * nx + x0] * (1.0 - wx) + d[y0 * nx + x1] * wx;
            let bot = d[y1 * nx + x0] * (1.0 - wx) + d[y1 * nx + x1] * wx;
            top * (1.0 - wy) + bot * wy
        };
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..ny {
            for x in 0..nx {
                out.push(sample(y as f64 - dy, x as f64 - dx));
            }
        }
        Ok(Self::from_parts(self.shape.clone(), out, self.voxel_size.clone()))
    }
}

/// Left-pads an offset/size pair to three axes.
fn pad3(offset: &[usize], size: &[usize]) -> ([usize; 3], [usize; 3]) {
    match (offset, size) {
        ([oy, ox], [sy, sx]) => ([0, *oy, *ox], [1, *sy, *sx]),
        ([oz, oy, ox], [sz, sy, sx]) => ([*oz, *oy, *ox], [*sz, *sy, *sx]),
        _ => unreachable!("rank checked by caller"),
    }
}
