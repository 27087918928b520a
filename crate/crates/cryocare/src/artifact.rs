//! Trained-model file.
//!
//! Little-endian layout:
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `CRYOCARE` |
//! | 4 | format version (u32, currently 1) |
//! | 4 × 4 | spatial_dims, depth, kernel, base_channels (u32) |
//! | 8 × 2 | input mean, input std (f64) |
//! | 1 | normalize_targets (0 or 1) |
//! | 8 | parameter count (u64) |
//! | 4 × count | parameters (f32), in [`UNetParams`] order |

use std::fs;
use std::path::Path;

use cryocare_core::nn::{Model, UNetConfig, UNetParams};
use cryocare_core::NormStats;

pub const MAGIC: &[u8; 8] = b"CRYOCARE";
pub const VERSION: u32 = 1;
const FIXED_LEN: usize = 8 + 4 + 16 + 16 + 1 + 8;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model file is truncated or has trailing bytes")]
    Length,
    #[error("invalid model: {0}")]
    Invalid(#[from] cryocare_core::Error),
}

pub fn encode(m: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_LEN + 4 * m.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let c = &m.config;
    for v in [c.spatial_dims, c.depth, c.kernel, c.base_channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&m.norm.mean.to_le_bytes());
    out.extend_from_slice(&m.norm.std.to_le_bytes());
    out.push(m.normalize_targets as u8);
    out.extend_from_slice(&(m.params.len() as u64).to_le_bytes());
    for p in &m.params.data {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(b: &[u8]) -> Result<Model, ArtifactError> {
    if b.len() < 8 || &b[..8] != MAGIC {
        return Err(ArtifactError::BadMagic);
    }
    if b.len() < FIXED_LEN {
        return Err(ArtifactError::Length);
    }
    let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != VERSION {
        return Err(ArtifactError::Version(version));
    }
    let config = UNetConfig {
        spatial_dims: u32_at(12) as usize,
        depth: u32_at(16) as usize,
        kernel: u32_at(20) as usize,
        base_channels: u32_at(24) as usize,
    };
    let norm = NormStats {
        mean: f64_at(28),
        std: f64_at(36),
    };
    let normalize_targets = match b[44] {
        0 => false,
        1 => true,
        _ => return Err(ArtifactError::Length),
    };
    let count = u64::from_le_bytes(b[45..53].try_into().unwrap());
    let expected = (count as u128) * 4 + FIXED_LEN as u128;
    if expected != b.len() as u128 {
        return Err(ArtifactError::Length);
    }
    let data = b[FIXED_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Model::new(config, norm, normalize_targets, UNetParams { data })?)
}

pub fn save(path: impl AsRef<Path>, m: &Model) -> Result<(), ArtifactError> {
    fs::write(path, encode(m))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model, ArtifactError> {
    decode(&fs::read(path)?)
}
