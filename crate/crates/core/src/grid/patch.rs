use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::{Rng, ScalarField};

/// Cuts `count` co-located patches of extent `size` out of `a` and `b`.
///
/// Offsets are uniform over all valid positions. Patch `i` draws its offset
/// from stream `i` of `rng`, so the result does not depend on evaluation order.
pub fn extract_patch_pairs(
    a: &ScalarField,
    b: &ScalarField,
    count: usize,
    size: &[usize],
    rng: &Rng,
) -> Result<Vec<(ScalarField, ScalarField)>> {
    a.require_same_shape(b)?;
    let offsets = random_offsets(a.shape(), count, size, rng)?;
    offsets
        .iter()
        .map(|o| Ok((a.extract(o, size)?, b.extract(o, size)?)))
        .collect()
}

/// The offsets [`extract_patch_pairs`] would use.
pub fn random_offsets(
    shape: &[usize],
    count: usize,
    size: &[usize],
    rng: &Rng,
) -> Result<Vec<Vec<usize>>> {
    if count == 0 {
        return Err(Error::invalid("patch count must be positive"));
    }
    if size.len() != shape.len() {
        return Err(Error::invalid("patch rank differs from field rank"));
    }
    if size.iter().zip(shape).any(|(&s, &n)| s == 0 || s > n) {
        return Err(Error::PatchTooLarge {
            size: size.to_vec(),
            shape: shape.to_vec(),
        });
    }
    Ok((0..count)
        .map(|i| {
            let mut r = rng.stream(i as u64);
            size.iter()
                .zip(shape)
                .map(|(&s, &n)| r.below((n - s + 1) as u64) as usize)
                .collect()
        })
        .collect())
}
