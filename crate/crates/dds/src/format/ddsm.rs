//! `DDSM`: magic, little-endian `u32` rows and cols, then row-major `f32` values.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use dds_core::{Matrix, Real};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"DDSM";

pub fn write<T: Real, W: Write>(out: &mut W, m: &Matrix<T>) -> io::Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many rows"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "too many columns"))?;
    let mut buf = Vec::with_capacity(12 + 4 * m.as_slice().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read<T: Real, R: Read>(input: &mut R) -> io::Result<Matrix<T>> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut head = [0u8; 12];
    input.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(bad("not a DDSM matrix"));
    }
    let rows = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let len = rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| bad("matrix too large"))?;
    let mut body = vec![0u8; len];
    input.read_exact(&mut body)?;
    let data = body.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    Matrix::from_vec(rows, cols, data).map_err(|_| bad("inconsistent matrix size"))
}

pub fn save<T: Real>(path: &Path, m: &Matrix<T>) -> CliResult<()> {
    let mut buf = Vec::new();
    write(&mut buf, m).map_err(|e| CliError::io(path, e))?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> CliResult<Matrix<T>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut slice = bytes.as_slice();
    let m = read(&mut slice).map_err(|e| CliError::io(path, e))?;
    if !slice.is_empty() {
        return Err(CliError::io(path, "trailing bytes after matrix"));
    }
    Ok(m)
}
