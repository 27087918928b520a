//! Classical comparison filters: median filtering and nonlinear (Perona-Malik
//! type) diffusion.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

fn dims3(f: &ScalarField) -> [usize; 3] {
    f.dims3()
}

fn radius3(f: &ScalarField, radius: &[usize]) -> Result<[usize; 3]> {
    if radius.len() != f.ndim() {
        return Err(Error::invalid("one radius per axis is required"));
    }
    Ok(if f.ndim() == 2 {
        [0, radius[0], radius[1]]
    } else {
        [radius[0], radius[1], radius[2]]
    })
}

/// Median over the `(2r+1)^d` neighborhood with edge clamping.
pub fn median_filter(f: &ScalarField, radius: &[usize]) -> Result<ScalarField> {
    let r = radius3(f, radius)?;
    if r == [0, 0, 0] {
        return Ok(f.clone());
    }
    let [nz, ny, nx] = dims3(f);
    let src = f.data();
    let win = (2 * r[0] + 1) * (2 * r[1] + 1) * (2 * r[2] + 1);
    let clamp = |i: usize, d: isize, n: usize| (i as isize + d).clamp(0, n as isize - 1) as usize;
    let planes = crate::par::map_range(nz, |z| {
        let mut buf = Vec::with_capacity(win);
        let mut out = Vec::with_capacity(ny * nx);
        for y in 0..ny {
            for x in 0..nx {
                buf.clear();
                for dz in -(r[0] as isize)..=r[0] as isize {
                    let zz = clamp(z, dz, nz);
                    for dy in -(r[1] as isize)..=r[1] as isize {
                        let yy = clamp(y, dy, ny);
                        for dx in -(r[2] as isize)..=r[2] as isize {
                            buf.push(src[(zz * ny + yy) * nx + clamp(x, dx, nx)]);
                        }
                    }
                }
                let mid = win / 2;
                let (_, m, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
                out.push(*m);
            }
        }
        out
    });
    ScalarField::like(f, planes.concat())
}

/// Perona-Malik diffusivity `1 / (1 + (s/lambda)^2)`.
pub fn diffusivity(s: f64, lambda: f64) -> f64 {
    let q = s / lambda;
    1.0 / (1.0 + q * q)
}

/// Largest stable explicit time step, `1/(2d)`.
pub fn nad_dt_max(ndim: usize) -> f64 {
    1.0 / (2.0 * ndim as f64)
}

fn median_of(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    let (_, m, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *m;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Robust noise scale of the forward-difference gradient magnitude,
/// `1.4826 * MAD(|grad u|)`; the default diffusion contrast parameter.
pub fn default_lambda(f: &ScalarField) -> f64 {
    let [nz, ny, nx] = dims3(f);
    let d = f.data();
    let mut mags = Vec::with_capacity(d.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                let u = d[i] as f64;
                let gx = if x + 1 < nx { d[i + 1] as f64 - u } else { 0.0 };
                let gy = if y + 1 < ny { d[i + nx] as f64 - u } else { 0.0 };
                let gz = if z + 1 < nz { d[i + nx * ny] as f64 - u } else { 0.0 };
                mags.push(libm::sqrt(gx * gx + gy * gy + gz * gz));
            }
        }
    }
    let med = median_of(mags.clone());
    1.4826 * median_of(mags.into_iter().map(|m| (m - med).abs()).collect())
}

/// Explicit nonlinear diffusion `du/dt = div(g(|grad u|) grad u)` with one
/// flux per neighbor pair and zero-flux boundaries.
pub fn nad_filter(f: &ScalarField, steps: usize, dt: f64, lambda: f64) -> Result<ScalarField> {
    let dt_max = nad_dt_max(f.ndim());
    if !(dt > 0.0) || dt > dt_max {
        return Err(Error::InvalidArgument(alloc::format!(
            "dt {dt} outside the stable range (0, {dt_max}]"
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    let [nz, ny, nx] = dims3(f);
    let plane = ny * nx;
    let mut u: Vec<f64> = f.data().iter().map(|&v| v as f64).collect();
    let mut next = vec![0.0f64; u.len()];
    for _ in 0..steps {
        let cur = &u;
        crate::par::for_each_chunk_mut(&mut next, plane, |z, out| {
            for y in 0..ny {
                for x in 0..nx {
                    let i = (z * ny + y) * nx + x;
                    let c = cur[i];
                    let mut flux = 0.0;
                    let mut add = |j: usize| {
                        let d = cur[j] - c;
                        flux += diffusivity(d.abs(), lambda) * d;
                    };
                    if x > 0 {
                        add(i - 1);
                    }
                    if x + 1 < nx {
                        add(i + 1);
                    }
                    if y > 0 {
                        add(i - nx);
                    }
                    if y + 1 < ny {
                        add(i + nx);
                    }
                    if z > 0 {
                        add(i - plane);
                    }
                    if z + 1 < nz {
                        add(i + plane);
                    }
                    out[y * nx + x] = c + dt * flux;
                }
            }
        });
        core::mem::swap(&mut u, &mut next);
    }
    ScalarField::like(f, u.into_iter().map(|v| v as f32).collect())
}
