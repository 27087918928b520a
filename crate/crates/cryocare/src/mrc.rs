//! MRC2014 subset: mode 2 (float32), little-endian, no extended header on write.
//!
//! Fields are `(nz, ny, nx)` with x fastest, the same order as the file body.
//! Two-dimensional fields are stored with `nz = 1`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use cryocare_core::ScalarField;

pub const HEADER_LEN: usize = 1024;
const MODE_FLOAT32: i32 = 2;
const MAP_ID: [u8; 4] = *b"MAP ";
const STAMP_LE: [u8; 4] = [0x44, 0x44, 0x00, 0x00];
const NVERSION: i32 = 20140;

#[derive(Debug, thiserror::Error)]
pub enum MrcError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("missing \"MAP \" identifier at byte 208")]
    BadMagic,
    #[error("unsupported mode {0}; only mode 2 (float32) is read")]
    UnsupportedMode(i32),
    #[error("big-endian files are not supported")]
    BigEndian,
    #[error("file holds {got} bytes but the header declares {expected}")]
    Truncated { expected: usize, got: usize },
    #[error("invalid dimensions {0:?}")]
    InvalidDimensions([i64; 3]),
    #[error("refusing to write non-finite values")]
    NonFinite,
    #[error("{0}")]
    Field(#[from] cryocare_core::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrcHeader {
    pub nx: i32,
    pub ny: i32,
    pub nz: i32,
    pub mode: i32,
    /// Cell dimensions along x, y, z.
    pub cella: [f32; 3],
    pub dmin: f32,
    pub dmax: f32,
    pub dmean: f32,
    pub rms: f32,
    /// Bytes of extended header between the main header and the data.
    pub nsymbt: i32,
    pub map_id: [u8; 4],
    pub machine_stamp: [u8; 4],
}

fn word(b: &[u8], i: usize) -> [u8; 4] {
    [b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]]
}

impl MrcHeader {
    pub fn parse(b: &[u8]) -> Result<Self, MrcError> {
        if b.len() < HEADER_LEN {
            return Err(MrcError::Truncated {
                expected: HEADER_LEN,
                got: b.len(),
            });
        }
        let int = |i| i32::from_le_bytes(word(b, i));
        let real = |i| f32::from_le_bytes(word(b, i));
        let h = Self {
            nx: int(0),
            ny: int(1),
            nz: int(2),
            mode: int(3),
            cella: [real(10), real(11), real(12)],
            dmin: real(19),
            dmax: real(20),
            dmean: real(21),
            nsymbt: int(23),
            map_id: word(b, 52),
            machine_stamp: word(b, 53),
            rms: real(54),
        };
        if h.map_id != MAP_ID {
            return Err(MrcError::BadMagic);
        }
        // Old writers leave the stamp zeroed; only an explicit big-endian stamp is refused.
        if h.machine_stamp[0] == 0x11 {
            return Err(MrcError::BigEndian);
        }
        if h.mode != MODE_FLOAT32 {
            return Err(MrcError::UnsupportedMode(h.mode));
        }
        if h.nx <= 0 || h.ny <= 0 || h.nz <= 0 || h.nsymbt < 0 {
            return Err(MrcError::InvalidDimensions([h.nx as i64, h.ny as i64, h.nz as i64]));
        }
        Ok(h)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        let mut put = |i: usize, w: [u8; 4]| b[4 * i..4 * i + 4].copy_from_slice(&w);
        put(0, self.nx.to_le_bytes());
        put(1, self.ny.to_le_bytes());
        put(2, self.nz.to_le_bytes());
        put(3, self.mode.to_le_bytes());
        // Sampling grid equals the extents.
        put(7, self.nx.to_le_bytes());
        put(8, self.ny.to_le_bytes());
        put(9, self.nz.to_le_bytes());
        for k in 0..3 {
            put(10 + k, self.cella[k].to_le_bytes());
            put(13 + k, 90f32.to_le_bytes());
            put(16 + k, (k as i32 + 1).to_le_bytes());
        }
        put(19, self.dmin.to_le_bytes());
        put(20, self.dmax.to_le_bytes());
        put(21, self.dmean.to_le_bytes());
        put(22, 1i32.to_le_bytes());
        put(23, self.nsymbt.to_le_bytes());
        put(27, NVERSION.to_le_bytes());
        put(52, self.map_id);
        put(53, self.machine_stamp);
        put(54, self.rms.to_le_bytes());
        b
    }
}

/// Extents `(nz, ny, nx)` of a field as stored in a file.
fn extents(f: &ScalarField) -> Result<[usize; 3], MrcError> {
    match *f.shape() {
        [nz, ny, nx] => Ok([nz, ny, nx]),
        [ny, nx] => Ok([1, ny, nx]),
        [nx] => Ok([1, 1, nx]),
        _ => Err(MrcError::InvalidDimensions([f.ndim() as i64, 0, 0])),
    }
}

pub fn header_for(f: &ScalarField) -> Result<MrcHeader, MrcError> {
    let [nz, ny, nx] = extents(f)?;
    if [nz, ny, nx].iter().any(|&n| n > i32::MAX as usize) {
        return Err(MrcError::InvalidDimensions([nz as i64, ny as i64, nx as i64]));
    }
    if f.data().iter().any(|v| !v.is_finite()) {
        return Err(MrcError::NonFinite);
    }
    let vs = f.voxel_size();
    let spacing = |axis_from_end: usize| -> f64 {
        vs.len().checked_sub(axis_from_end + 1).map_or(1.0, |i| vs[i])
    };
    let (min, max) = f.min_max();
    let n = f.len() as f64;
    let mean = f.sum() / n;
    let var = f.data().iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / n;
    Ok(MrcHeader {
        nx: nx as i32,
        ny: ny as i32,
        nz: nz as i32,
        mode: MODE_FLOAT32,
        cella: [
            (nx as f64 * spacing(0)) as f32,
            (ny as f64 * spacing(1)) as f32,
            (nz as f64 * spacing(2)) as f32,
        ],
        dmin: min,
        dmax: max,
        dmean: mean as f32,
        rms: var.sqrt() as f32,
        nsymbt: 0,
        map_id: MAP_ID,
        machine_stamp: STAMP_LE,
    })
}

/// Writes `f` and returns the number of bytes written.
pub fn write_mrc(f: &ScalarField, mut dest: impl Write) -> Result<usize, MrcError> {
    let header = header_for(f)?;
    dest.write_all(&header.to_bytes())?;
    let body: Vec<u8> = f.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    dest.write_all(&body)?;
    Ok(HEADER_LEN + body.len())
}

pub fn to_bytes(f: &ScalarField) -> Result<Vec<u8>, MrcError> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * f.len());
    write_mrc(f, &mut out)?;
    Ok(out)
}

/// Parses a whole file. The result is always 3D; voxel size is `cella / extent`.
pub fn read_mrc(bytes: &[u8]) -> Result<ScalarField, MrcError> {
    let h = MrcHeader::parse(bytes)?;
    let (nx, ny, nz) = (h.nx as usize, h.ny as usize, h.nz as usize);
    let start = HEADER_LEN + h.nsymbt as usize;
    let expected = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(start))
        .ok_or(MrcError::InvalidDimensions([nx as i64, ny as i64, nz as i64]))?;
    if bytes.len() < expected {
        return Err(MrcError::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let data = bytes[start..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let spacing = |cell: f32, n: usize| {
        let s = cell as f64 / n as f64;
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    };
    let voxel = vec![spacing(h.cella[2], nz), spacing(h.cella[1], ny), spacing(h.cella[0], nx)];
    Ok(ScalarField::new(vec![nz, ny, nx], data)?.with_voxel_size(voxel)?)
}

pub fn read_mrc_file(path: impl AsRef<Path>) -> Result<ScalarField, MrcError> {
    read_mrc(&fs::read(path)?)
}

pub fn write_mrc_file(path: impl AsRef<Path>, f: &ScalarField) -> Result<usize, MrcError> {
    let bytes = to_bytes(f)?;
    fs::write(path, &bytes)?;
    Ok(bytes.len())
}
