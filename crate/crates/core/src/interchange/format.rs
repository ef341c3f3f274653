//! The `.rimt` tensor file.
//!
//! Layout, all integers little-endian:
//!
//! | bytes      | field                                  |
//! |------------|----------------------------------------|
//! | 4          | magic `RIMT`                           |
//! | 2          | version (`u16`, currently 1)           |
//! | 1          | dtype code (1 = `f32` little-endian)   |
//! | 1          | ndim                                   |
//! | 4 × ndim   | shape (`u32` each)                     |
//! | 4 × ∏shape | row-major payload                      |

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{ModelError, Tensor};

pub const MAGIC: [u8; 4] = *b"RIMT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32_LE: u8 = 1;
const FIXED_HEADER: usize = 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {found:?} (expected \"RIMT\")", found = String::from_utf8_lossy(found))]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("tensor has zero dimensions")]
    ZeroRank,
    #[error("dimension {axis} has size 0")]
    ZeroDimension { axis: usize },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} trailing bytes after a {expected}-byte tensor")]
    TrailingBytes { expected: usize, extra: usize },
    #[error("shape dimension {value} on axis {axis} does not fit in u32")]
    DimensionTooLarge { axis: usize, value: usize },
    #[error("non-finite value {value} at element {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("invalid tensor: {0}")]
    Model(#[from] ModelError),
}

impl FormatError {
    fn at(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
        move |source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>, FormatError> {
    let shape = tensor.shape();
    if shape.len() > u8::MAX as usize {
        return Err(FormatError::DimensionTooLarge {
            axis: shape.len(),
            value: shape.len(),
        });
    }
    if let Some(index) = tensor.data().iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite {
            index,
            value: tensor.data()[index],
        });
    }
    let mut out = Vec::with_capacity(FIXED_HEADER + 4 * shape.len() + 4 * tensor.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32_LE);
    out.push(shape.len() as u8);
    for (axis, &dim) in shape.iter().enumerate() {
        let dim = u32::try_from(dim).map_err(|_| FormatError::DimensionTooLarge { axis, value: dim })?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    if bytes.len() < FIXED_HEADER {
        return Err(FormatError::Truncated {
            expected: FIXED_HEADER,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32_LE {
        return Err(FormatError::UnknownDtype(bytes[6]));
    }
    let ndim = bytes[7] as usize;
    if ndim == 0 {
        return Err(FormatError::ZeroRank);
    }
    let header_len = FIXED_HEADER + 4 * ndim;
    if bytes.len() < header_len {
        return Err(FormatError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let shape: Vec<usize> = bytes[FIXED_HEADER..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return Err(FormatError::ZeroDimension { axis });
    }
    let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = count
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(header_len))
        .unwrap_or(usize::MAX);
    let count = (expected - header_len) / 4;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            expected,
            extra: bytes.len() - expected,
        });
    }
    let mut data = Vec::with_capacity(count);
    for (index, chunk) in bytes[header_len..].chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes(chunk.try_into().unwrap());
        if !value.is_finite() {
            return Err(FormatError::NonFinite { index, value });
        }
        data.push(value);
    }
    Ok(Tensor::new(shape, data)?)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor)?;
    fs::write(path, bytes).map_err(FormatError::at(path))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(FormatError::at(path))?;
    decode_tensor(&bytes)
}
