use crate::error::{Error, Result};

use super::ScalarField;

/// Mean and population standard deviation used to standardize network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn from_values(values: impl IntoIterator<Item = f32>) -> Self {
        // Welford, so long concatenated patch sets stay accurate.
        let (mut n, mut mean, mut m2) = (0u64, 0.0f64, 0.0f64);
        for v in values {
            n += 1;
            let x = v as f64;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let std = if n > 0 { libm::sqrt(m2 / n as f64) } else { 0.0 };
        Self { mean, std }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.std > 0.0)
    }

    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        if self.is_degenerate() {
            return Err(Error::Degenerate("zero standard deviation"));
        }
        let (m, s) = (self.mean, self.std);
        f.map(|v| ((v as f64 - m) / s) as f32)
    }

    pub fn invert(&self, f: &ScalarField) -> Result<ScalarField> {
        let (m, s) = (self.mean, self.std);
        f.map(|v| (v as f64 * s + m) as f32)
    }
}

pub fn compute_norm_stats(f: &ScalarField) -> NormStats {
    NormStats::from_values(f.data().iter().copied())
}

pub fn apply_norm(f: &ScalarField, stats: &NormStats) -> Result<ScalarField> {
    stats.apply(f)
}

pub fn invert_norm(f: &ScalarField, stats: &NormStats) -> Result<ScalarField> {
    stats.invert(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rng;
    use alloc::vec;

    #[test]
    fn two_value_symmetry() {
        let f = ScalarField::new(vec![2, 2], vec![1.0, 1.0, 3.0, 3.0]).unwrap();
        let s = compute_norm_stats(&f);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(apply_norm(&f, &s).unwrap().data(), &[-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_field_is_degenerate() {
        let f = ScalarField::filled(&[3, 3], 4.0).unwrap();
        let s = compute_norm_stats(&f);
        assert!(s.is_degenerate());
        assert!(matches!(apply_norm(&f, &s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn roundtrip_random_volume() {
        let mut rng = Rng::new(11);
        let f = ScalarField::from_fn(&[32, 32, 32], |_| (rng.normal() * 3.0 + 5.0) as f32).unwrap();
        let s = compute_norm_stats(&f);
        let n = apply_norm(&f, &s).unwrap();
        let ns = compute_norm_stats(&n);
        assert!(ns.mean.abs() < 1e-6 && (ns.std - 1.0).abs() < 1e-6);
        let back = invert_norm(&n, &s).unwrap();
        let err = f
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-5, "max abs error {err}");
    }
}
