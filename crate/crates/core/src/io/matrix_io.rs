//! The `PMB1` matrix file: magic, `rows` and `cols` as little-endian `u32`,
//! then `rows * cols` little-endian `f64` in row-major order. Nothing else.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const MATRIX_MAGIC: &[u8; 4] = b"PMB1";
pub const MATRIX_HEADER_LEN: usize = 12;

pub fn encode_matrix<T: Scalar>(m: &Matrix<T>) -> Result<Vec<u8>> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Parameter(format!("dimension {v} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(MATRIX_HEADER_LEN + 8 * m.len());
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&dim(m.rows())?.to_le_bytes());
    buf.extend_from_slice(&dim(m.cols())?.to_le_bytes());
    for &v in m.data() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    Ok(buf)
}

fn header(bytes: &[u8], path: &Path) -> Result<(usize, usize)> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 4 {
        return Err(fail(bytes.len(), "truncated magic".into()));
    }
    if &bytes[..4] != MATRIX_MAGIC {
        return Err(fail(
            0,
            format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    if bytes.len() < MATRIX_HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

fn payload<const W: usize>(
    bytes: &[u8],
    path: &Path,
    decode: impl Fn([u8; W]) -> f64,
) -> Result<Matrix<f64>> {
    let (rows, cols) = header(bytes, path)?;
    let expected = MATRIX_HEADER_LEN + W * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            reason: format!(
                "length {} does not match {rows}x{cols} matrix of {W}-byte floats ({expected} bytes)",
                bytes.len()
            ),
        });
    }
    let data = bytes[MATRIX_HEADER_LEN..]
        .chunks_exact(W)
        .map(|c| decode(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

/// Decodes an in-memory `PMB1` image; `path` is only used in errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix<f64>> {
    payload::<8>(bytes, path, f64::from_le_bytes)
}

pub fn write_matrix<T: Scalar>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Reads a file with the `PMB1` header whose payload holds 32-bit floats,
/// widening every entry to `f64`.
pub fn read_matrix_widening_f32(path: impl AsRef<Path>) -> Result<Matrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    payload::<4>(&bytes, path, |b| f64::from(f32::from_le_bytes(b)))
}
