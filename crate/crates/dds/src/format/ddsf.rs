//! `DDSF` flow checkpoints.
//!
//! Header: magic, then little-endian `u32` version, kind tag, d, k_semantic,
//! step count and layer count. Each layer record starts with a `u32` tag and
//! stores its tensors as DDSM matrices. Parameters are `f32`, so a model
//! loaded as `f32` saves back to the same bytes.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use dds_core::flows::{ActNorm, Activation, AffineCoupling, Dense, FlowKind, FlowModel, Layer, LuMixing, Mlp, Permutation};
use dds_core::{Matrix, Real};

use crate::error::{CliError, CliResult};
use crate::format::ddsm;

pub const MAGIC: &[u8; 4] = b"DDSF";
const VERSION: u32 = 1;

const TAG_PERMUTATION: u32 = 0;
const TAG_ACTNORM: u32 = 1;
const TAG_LU: u32 = 2;
const TAG_COUPLING: u32 = 3;

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| invalid("value exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn row<T: Real>(v: &[T]) -> Matrix<T> {
    Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector")
}

fn put_matrix<T: Real>(out: &mut Vec<u8>, m: &Matrix<T>) -> io::Result<()> {
    ddsm::write(out, m)
}

fn put_perm(out: &mut Vec<u8>, p: &Permutation) -> io::Result<()> {
    out.extend_from_slice(&p.seed.to_le_bytes());
    let idx: Vec<f32> = p.perm.iter().map(|&i| i as f32).collect();
    put_matrix(out, &row(&idx))
}

fn get_vector<T: Real, R: Read>(r: &mut R, len: usize) -> io::Result<Vec<T>> {
    let m: Matrix<T> = ddsm::read(r)?;
    if m.rows() != 1 || m.cols() != len {
        return Err(invalid("unexpected vector length"));
    }
    Ok(m.into_vec())
}

fn get_matrix<T: Real, R: Read>(r: &mut R, rows: usize, cols: usize) -> io::Result<Matrix<T>> {
    let m: Matrix<T> = ddsm::read(r)?;
    if m.shape() != (rows, cols) {
        return Err(invalid("unexpected matrix shape"));
    }
    Ok(m)
}

fn get_perm<R: Read>(r: &mut R, d: usize) -> io::Result<Permutation> {
    let seed = get_u64(r)?;
    let idx: Vec<f32> = get_vector(r, d)?;
    let p = Permutation { perm: idx.iter().map(|&v| v as usize).collect(), seed };
    if idx.iter().any(|v| v.fract() != 0.0 || *v < 0.0) || !p.is_bijection() {
        return Err(invalid("permutation is not a bijection"));
    }
    Ok(p)
}

pub fn write<T: Real, W: Write>(out: &mut W, model: &FlowModel<T>) -> io::Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize)?;
    put_u32(&mut buf, model.kind.tag() as usize)?;
    put_u32(&mut buf, model.d)?;
    put_u32(&mut buf, model.k_semantic)?;
    put_u32(&mut buf, model.steps())?;
    put_u32(&mut buf, model.layers.len())?;
    for layer in &model.layers {
        match layer {
            Layer::Permutation(p) => {
                put_u32(&mut buf, TAG_PERMUTATION as usize)?;
                put_perm(&mut buf, p)?;
            }
            Layer::ActNorm(a) => {
                put_u32(&mut buf, TAG_ACTNORM as usize)?;
                put_u32(&mut buf, usize::from(a.initialized))?;
                put_matrix(&mut buf, &row(&a.log_scale))?;
                put_matrix(&mut buf, &row(&a.bias))?;
            }
            Layer::LuMixing(m) => {
                put_u32(&mut buf, TAG_LU as usize)?;
                put_perm(&mut buf, &m.perm)?;
                put_matrix(&mut buf, &m.lower)?;
                put_matrix(&mut buf, &m.upper)?;
                put_matrix(&mut buf, &row(&m.log_diag))?;
                put_matrix(&mut buf, &row(&m.sign))?;
            }
            Layer::Coupling(c) => {
                put_u32(&mut buf, TAG_COUPLING as usize)?;
                put_u32(&mut buf, usize::from(c.flip))?;
                put_u32(&mut buf, c.mlp.activation.tag() as usize)?;
                put_u32(&mut buf, c.mlp.layers.len())?;
                for dense in &c.mlp.layers {
                    put_matrix(&mut buf, &dense.weight)?;
                    put_matrix(&mut buf, &row(&dense.bias))?;
                }
            }
        }
    }
    out.write_all(&buf)
}

pub fn read<T: Real, R: Read>(r: &mut R) -> io::Result<FlowModel<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a DDSF checkpoint"));
    }
    if get_u32(r)? != VERSION {
        return Err(invalid("unsupported checkpoint version"));
    }
    let kind = FlowKind::from_tag(get_u32(r)?).ok_or_else(|| invalid("unknown model kind"))?;
    let d = get_u32(r)? as usize;
    let k_semantic = get_u32(r)? as usize;
    let steps = get_u32(r)? as usize;
    let count = get_u32(r)? as usize;
    if d < 2 || k_semantic >= d || count != steps * kind.layers_per_step() {
        return Err(invalid("inconsistent checkpoint header"));
    }
    let half = AffineCoupling::<T>::conditioning_len(d);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let layer = match get_u32(r)? {
            TAG_PERMUTATION => Layer::Permutation(get_perm(r, d)?),
            TAG_ACTNORM => {
                let initialized = get_u32(r)? != 0;
                Layer::ActNorm(ActNorm { log_scale: get_vector(r, d)?, bias: get_vector(r, d)?, initialized })
            }
            TAG_LU => {
                let perm = get_perm(r, d)?;
                Layer::LuMixing(LuMixing {
                    perm,
                    lower: get_matrix(r, d, d)?,
                    upper: get_matrix(r, d, d)?,
                    log_diag: get_vector(r, d)?,
                    sign: get_vector(r, d)?,
                })
            }
            TAG_COUPLING => {
                let flip = get_u32(r)? != 0;
                let activation = Activation::from_tag(get_u32(r)?).ok_or_else(|| invalid("unknown activation"))?;
                let n = get_u32(r)? as usize;
                let mut dense = Vec::with_capacity(n);
                let mut inputs = half;
                for _ in 0..n {
                    let weight: Matrix<T> = ddsm::read(r)?;
                    if weight.rows() != inputs {
                        return Err(invalid("coupling layer widths do not chain"));
                    }
                    let bias = get_vector(r, weight.cols())?;
                    inputs = weight.cols();
                    dense.push(Dense { weight, bias });
                }
                if inputs != 2 * (d - half) {
                    return Err(invalid("coupling output width mismatch"));
                }
                Layer::Coupling(AffineCoupling { d, flip, mlp: Mlp { layers: dense, activation } })
            }
            _ => return Err(invalid("unknown layer tag")),
        };
        layers.push(layer);
    }
    Ok(FlowModel { kind, d, k_semantic, layers })
}

pub fn to_bytes<T: Real>(model: &FlowModel<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf, model).expect("in-memory write");
    buf
}

pub fn save<T: Real>(path: &Path, model: &FlowModel<T>) -> CliResult<()> {
    fs::write(path, to_bytes(model)).map_err(|e| CliError::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> CliResult<FlowModel<T>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut slice = bytes.as_slice();
    let model = read(&mut slice).map_err(|e| CliError::io(path, e))?;
    if !slice.is_empty() {
        return Err(CliError::io(path, "trailing bytes after checkpoint"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dds_core::flows::FlowArchitecture;

    fn models() -> Vec<FlowModel<f32>> {
        let arch = FlowArchitecture { steps: 3, hidden: vec![5, 7], activation: Activation::Selu };
        let mut a = FlowModel::realnvp(6, &arch, 1);
        a.randomize(2, 0.5);
        let glow = FlowArchitecture { activation: Activation::LeakyRelu, ..arch };
        let mut b = FlowModel::glow_conditional(6, 2, &glow, 3);
        b.randomize(4, 0.5);
        vec![a, b, FlowModel::realnvp(4, &FlowArchitecture { steps: 1, hidden: vec![], activation: Activation::Identity }, 0)]
    }

    #[test]
    fn save_load_save_is_bit_exact() {
        for m in models() {
            let bytes = to_bytes(&m);
            let back: FlowModel<f32> = read(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, m);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn header_fields() {
        let m = &models()[1];
        let bytes = to_bytes(m);
        assert_eq!(&bytes[..4], b"DDSF");
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        assert_eq!(field(1), FlowKind::GlowConditional.tag());
        assert_eq!((field(2), field(3), field(4)), (6, 2, 3));
    }

    #[test]
    fn truncated_or_corrupt_files_fail() {
        let bytes = to_bytes(&models()[0]);
        assert!(read::<f32, _>(&mut &bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read::<f32, _>(&mut bad.as_slice()).is_err());
    }
}
