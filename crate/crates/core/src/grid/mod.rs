//! Scalar fields, normalization, patch sampling and the seeded RNG.

mod field;
mod norm;
mod patch;
mod rng;

pub use field::ScalarField;
pub use norm::{apply_norm, compute_norm_stats, invert_norm, NormStats};
pub use patch::{extract_patch_pairs, random_offsets};
pub use rng::Rng;
