use alloc::vec::Vec;

use crate::decompose::{ActivationState, DictionaryState, MethodKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::rng;

const INIT_STREAM: u64 = 0x4849_4e49;

/// Dictionary of stored frames (`frames` holds one frame per row) with
/// activations `1/M` over `t` frames.
pub fn init_nmf<T: Real>(frames: &Matrix<T>, labels: &[usize], k: usize, t: usize) -> Result<(DictionaryState<T>, ActivationState<T>)> {
    let m = frames.rows();
    if m == 0 {
        return Err(Error::EmptyDictionary);
    }
    if labels.len() != m {
        return Err(Error::ShapeMismatch("one label per frame required"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::UnknownSource { id: bad, k });
    }
    let dict = DictionaryState::Nmf { w: frames.transpose(), source_of: labels.to_vec(), k };
    let h = Matrix::filled(m, t, T::one() / T::of(m as f64));
    Ok((dict, ActivationState { h }))
}

/// Zero latent codes and `U(0, 1)` activations scaled by `E/√K` (DDS-1) or
/// `E/√(KN)`, `E` being the mean of `spec`.
pub fn init_dds<T: Real>(spec: &Matrix<T>, k: usize, n: usize, kind: MethodKind, seed: u64) -> Result<(DictionaryState<T>, ActivationState<T>)> {
    let (d, t) = spec.shape();
    if d == 0 || t == 0 {
        return Err(Error::EmptyInput);
    }
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument("K and N must be at least 1"));
    }
    let e = spec.mean().as_f64();
    let (dict, rows, scale) = match kind {
        MethodKind::Nmf => return Err(Error::InvalidArgument("init_dds does not build NMF dictionaries")),
        MethodKind::Dds1 => (DictionaryState::Dds1 { z: (0..k).map(|_| Matrix::zeros(t, d)).collect() }, k, e / libm::sqrt(k as f64)),
        MethodKind::Dds2 => (
            DictionaryState::Dds2 { z: (0..k).map(|_| Matrix::zeros(n, d)).collect() },
            k * n,
            e / libm::sqrt((k * n) as f64),
        ),
        MethodKind::Dds3 => {
            if k >= d {
                return Err(Error::InvalidArgument("dds3 needs fewer sources than frequency bins"));
            }
            let semantic = Matrix::from_fn(k * n, k, |j, c| if j / n == c { T::one() } else { T::zero() });
            (DictionaryState::Dds3 { semantic, nuisance: Matrix::zeros(k * n, d - k), n }, k * n, e / libm::sqrt((k * n) as f64))
        }
    };
    let mut r = rng::seeded(seed, INIT_STREAM);
    let values: Vec<T> = (0..rows * t).map(|_| T::of(rng::uniform(&mut r, 0.0, 1.0) * scale)).collect();
    Ok((dict, ActivationState { h: Matrix::from_vec(rows, t, values)? }))
}
