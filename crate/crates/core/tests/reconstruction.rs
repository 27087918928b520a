//! Weighted backprojection against known volumes.

use cryocare_core::metrics::field_correlation;
use cryocare_core::phantom::project;
use cryocare_core::recon::{backproject, Tilt, TiltSeries};
use cryocare_core::ScalarField;

fn sphere(n: usize, radius: f64) -> ScalarField {
    let c = (n as f64 - 1.0) / 2.0;
    ScalarField::from_fn(&[n, n, n], |i| {
        let r2: f64 = i.iter().map(|&k| (k as f64 - c).powi(2)).sum();
        if r2 <= radius * radius {
            1.0
        } else {
            0.0
        }
    })
    .unwrap()
}

fn series(v: &ScalarField, angles: &[f64]) -> TiltSeries {
    let tilts = angles
        .iter()
        .enumerate()
        .map(|(i, &angle)| Tilt {
            angle,
            projection: project(v, angle).unwrap(),
            acquisition_index: i,
        })
        .collect();
    TiltSeries::new(tilts).unwrap()
}

#[test]
fn full_range_sphere_is_recovered() {
    let v = sphere(32, 8.0);
    let angles: Vec<f64> = (-89..=89).map(f64::from).collect();
    let rec = backproject(&series(&v, &angles), [32, 32, 32], true).unwrap();
    let r = field_correlation(&rec, &v).unwrap();
    assert!(r >= 0.95, "correlation {r}");
}

#[test]
fn missing_wedge_costs_correlation() {
    let v = sphere(32, 8.0);
    let full: Vec<f64> = (-89..=89).map(f64::from).collect();
    let limited: Vec<f64> = (-60..=60).map(f64::from).collect();
    let r_full = field_correlation(&backproject(&series(&v, &full), [32, 32, 32], true).unwrap(), &v).unwrap();
    let r_lim = field_correlation(&backproject(&series(&v, &limited), [32, 32, 32], true).unwrap(), &v).unwrap();
    assert!(r_lim < r_full, "{r_lim} vs {r_full}");
}

#[test]
fn one_view_of_a_point_smears_along_the_beam() {
    let mut v = ScalarField::zeros(&[11, 11, 11]).unwrap();
    v.insert(&[5, 3, 7], &ScalarField::filled(&[1, 1, 1], 1.0).unwrap()).unwrap();
    let rec = backproject(&series(&v, &[0.0]), [11, 11, 11], false).unwrap();
    let pi = std::f32::consts::PI;
    for z in 0..11 {
        for y in 0..11 {
            for x in 0..11 {
                let want = if y == 3 && x == 7 { pi } else { 0.0 };
                assert_eq!(rec.get(&[z, y, x]), want, "({z}, {y}, {x})");
            }
        }
    }
}
