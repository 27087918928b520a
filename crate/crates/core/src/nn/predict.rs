//! Applying a trained model to whole fields, optionally in overlapping tiles.
//!
//! Fields are standardized with the model's statistics, edge-padded to a
//! multiple of `2^depth`, cut into tiles whose origins lie on that grid, and
//! each tile contributes only its core (the tile minus the overlap, except at
//! field borders). With an overlap of at least
//! [`UNetConfig::receptive_margin`](super::UNetConfig::receptive_margin)
//! (23 voxels for depth 2, kernel 3; rounded up to 24 on the pooling grid)
//! the result equals whole-field prediction.

use alloc::vec::Vec;

use super::tensor::Tensor;
use super::train::Model;
use super::unet::unet_forward;
use crate::error::{Error, Result};
use crate::grid::ScalarField;

fn round_up(v: usize, g: usize) -> usize {
    v.div_ceil(g) * g
}

/// Copy of `f` (in 3D form) padded at the high end by edge replication.
fn pad_edge(data: &[f32], dims: [usize; 3], to: [usize; 3]) -> Vec<f32> {
    let mut out = Vec::with_capacity(to.iter().product());
    for z in 0..to[0] {
        let sz = z.min(dims[0] - 1);
        for y in 0..to[1] {
            let sy = y.min(dims[1] - 1);
            let row = (sz * dims[1] + sy) * dims[2];
            for x in 0..to[2] {
                out.push(data[row + x.min(dims[2] - 1)]);
            }
        }
    }
    out
}

/// `(tile_start, core_start, core_end)` along one axis.
fn axis_tiles(n: usize, tile: usize, overlap: usize) -> Result<Vec<(usize, usize, usize)>> {
    if tile >= n {
        return Ok(alloc::vec![(0, 0, n)]);
    }
    if tile <= 2 * overlap {
        return Err(Error::invalid("tile must exceed twice the overlap"));
    }
    let step = tile - 2 * overlap;
    let mut v = Vec::new();
    let mut c = 0;
    while c < n {
        let start = c.saturating_sub(overlap).min(n - tile);
        v.push((start, c, (c + step).min(n)));
        c += step;
    }
    Ok(v)
}

/// Network output for `f` in raw intensity units.
///
/// `tile` gives per-axis tile extents (rounded down to the pooling grid) and
/// `overlap` the context kept around each tile core (rounded up).
pub fn predict(f: &ScalarField, model: &Model, tile: &[usize], overlap: usize) -> Result<ScalarField> {
    let cfg = &model.config;
    if f.ndim() != cfg.spatial_dims || tile.len() != cfg.spatial_dims {
        return Err(Error::invalid("field/tile rank does not match the model"));
    }
    let g = cfg.granularity();
    if tile.iter().any(|&t| t < g) {
        return Err(Error::InvalidArgument(alloc::format!("tile extents must be at least {g}")));
    }
    let dims = f.dims3();
    let mut padded = dims;
    let mut tile3 = [1, 0, 0];
    let off = 3 - cfg.spatial_dims;
    for a in 0..cfg.spatial_dims {
        padded[off + a] = round_up(f.shape()[a], g);
        tile3[off + a] = (tile[a] / g * g).min(padded[off + a]);
    }
    if tile3[off] == 0 {
        tile3[off] = g;
    }
    let overlap = round_up(overlap, g);
    let whole = (off..3).all(|a| tile3[a] >= padded[a]);
    if !whole && overlap < cfg.receptive_margin() {
        return Err(Error::InvalidArgument(alloc::format!(
            "overlap {overlap} is below the receptive margin {}",
            cfg.receptive_margin()
        )));
    }
    let s = &model.norm;
    let standardized: Vec<f32> = f.data().iter().map(|&v| ((v as f64 - s.mean) / s.std) as f32).collect();
    let src = pad_edge(&standardized, dims, padded);

    let per_axis: Vec<Vec<(usize, usize, usize)>> = (0..3)
        .map(|a| {
            if a < off {
                Ok(alloc::vec![(0, 0, 1)])
            } else {
                axis_tiles(padded[a], tile3[a], overlap)
            }
        })
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for &z in &per_axis[0] {
        for &y in &per_axis[1] {
            for &x in &per_axis[2] {
                jobs.push([z, y, x]);
            }
        }
    }
    let ext = [tile3[0].min(padded[0]), tile3[1].min(padded[1]), tile3[2].min(padded[2])];
    let outputs = crate::par::map_range(jobs.len(), |j| -> Result<Vec<f32>> {
        let [tz, ty, tx] = jobs[j];
        let mut buf = Vec::with_capacity(ext.iter().product());
        for z in 0..ext[0] {
            for y in 0..ext[1] {
                let row = ((tz.0 + z) * padded[1] + ty.0 + y) * padded[2] + tx.0;
                buf.extend_from_slice(&src[row..row + ext[2]]);
            }
        }
        let mut shape = alloc::vec![1, 1];
        shape.extend_from_slice(&ext[off..]);
        Ok(unet_forward(&Tensor::new(shape, buf)?, &model.params, cfg)?.into_data())
    });

    let mut out = alloc::vec![0.0f32; dims.iter().product()];
    for (job, res) in jobs.iter().zip(outputs) {
        let tile_out = res?;
        let [(tz, cz0, cz1), (ty, cy0, cy1), (tx, cx0, cx1)] = *job;
        for z in cz0..cz1.min(dims[0]) {
            for y in cy0..cy1.min(dims[1]) {
                for x in cx0..cx1.min(dims[2]) {
                    let ti = ((z - tz) * ext[1] + y - ty) * ext[2] + x - tx;
                    out[(z * dims[1] + y) * dims[2] + x] = tile_out[ti];
                }
            }
        }
    }
    if model.normalize_targets {
        out.iter_mut().for_each(|v| *v = (*v as f64 * s.std + s.mean) as f32);
    }
    ScalarField::like(f, out)
}

/// Prediction over the whole field in a single pass.
pub fn predict_whole(f: &ScalarField, model: &Model) -> Result<ScalarField> {
    let tile: Vec<usize> = f.shape().iter().map(|&n| round_up(n, model.config.granularity())).collect();
    predict(f, model, &tile, 0)
}

/// Average of the restorations of two noise-independent observations.
pub fn restore_pair(a: &ScalarField, b: &ScalarField, model: &Model, tile: &[usize], overlap: usize) -> Result<ScalarField> {
    a.require_same_shape(b)?;
    let ra = predict(a, model, tile, overlap)?;
    let rb = predict(b, model, tile, overlap)?;
    ra.zip_map(&rb, |x, y| ((x as f64 + y as f64) * 0.5) as f32)
}
