//! Frame-level attribution and sparsity measures.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::signal::PianoRoll;

pub const DEFAULT_EPSILON: f64 = 5e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psa: f64,
    pub l0_eps: f64,
    pub recon_error: Option<f64>,
    pub epsilon: f64,
}

/// Precision of source attribution: `Σ(H ⊙ Y) / Σ H`.
pub fn psa<T: Real>(h_source: &Matrix<T>, roll: &PianoRoll) -> Result<f64> {
    if h_source.shape() != roll.active.shape() {
        return Err(Error::ShapeMismatch("activations and piano roll differ in shape"));
    }
    let mut total = 0.0;
    let mut hit = 0.0;
    for (&h, &y) in h_source.as_slice().iter().zip(roll.active.as_slice()) {
        let h = h.as_f64();
        total += h;
        if y > 0.5 {
            hit += h;
        }
    }
    if !(total > 0.0) {
        return Err(Error::EmptyActivation);
    }
    Ok(hit / total)
}

/// Fraction of entries with magnitude `≤ epsilon`.
pub fn l0_eps_sparsity<T: Real>(h: &Matrix<T>, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument("epsilon must be >= 0"));
    }
    let values = h.as_slice();
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let small = values.iter().filter(|v| v.as_f64().abs() <= epsilon).count();
    Ok(small as f64 / values.len() as f64)
}

/// Frobenius norm of `spec − s_hat`.
pub fn reconstruction_error<T: Real>(spec: &Matrix<T>, s_hat: &Matrix<T>) -> Result<f64> {
    if spec.shape() != s_hat.shape() {
        return Err(Error::ShapeMismatch("reconstruction shape differs from input"));
    }
    let sq: f64 = spec.as_slice().iter().zip(s_hat.as_slice()).map(|(&a, &b)| { let e = (a - b).as_f64(); e * e }).sum();
    Ok(libm::sqrt(sq))
}

pub fn evaluate<T: Real>(h_source: &Matrix<T>, roll: &PianoRoll, recon_error: Option<f64>, epsilon: f64) -> Result<MetricReport> {
    Ok(MetricReport { psa: psa(h_source, roll)?, l0_eps: l0_eps_sparsity(h_source, epsilon)?, recon_error, epsilon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    fn roll(rows: usize, cols: usize, v: &[f64]) -> PianoRoll {
        PianoRoll { active: m(rows, cols, v) }
    }

    #[test]
    fn psa_examples() {
        let y = roll(2, 2, &[1., 0., 0., 1.]);
        assert_eq!(psa(&m(2, 2, &[3., 0., 0., 0.5]), &y).unwrap(), 1.0);
        assert_eq!(psa(&m(2, 2, &[1., 2., 3., 4.]), &roll(2, 2, &[0.; 4])).unwrap(), 0.0);
        assert_eq!(psa(&m(2, 2, &[1., 2., 3., 4.]), &y).unwrap(), 0.5);
        assert_eq!(psa(&Matrix::<f64>::zeros(2, 2), &y), Err(Error::EmptyActivation));
        assert!(psa(&Matrix::<f64>::zeros(1, 2), &y).is_err());
    }

    #[test]
    fn l0_examples() {
        assert_eq!(l0_eps_sparsity(&Matrix::<f64>::zeros(3, 3), 0.05).unwrap(), 1.0);
        assert_eq!(l0_eps_sparsity(&Matrix::<f64>::filled(3, 3, 1.0), 0.05).unwrap(), 0.0);
        assert_eq!(l0_eps_sparsity(&m(2, 2, &[0., 0.04, 0.06, 1.]), 0.05).unwrap(), 0.5);
        assert_eq!(l0_eps_sparsity(&Matrix::<f64>::zeros(0, 0), 0.05), Err(Error::EmptyInput));
        // Inclusive threshold.
        assert_eq!(l0_eps_sparsity(&m(1, 2, &[0.05, 0.5]), 0.05).unwrap(), 0.5);
    }

    #[test]
    fn reconstruction_error_examples() {
        let a = m(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(reconstruction_error(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 1.0);
        assert_eq!(reconstruction_error(&a, &b).unwrap(), 2.0);
        let c = a.map(|v| v - 3.0);
        assert!((reconstruction_error(&a, &c).unwrap() - 3.0 * 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn psa_is_scale_invariant_and_bounded(
            h in proptest::collection::vec(0.0f64..5.0, 6),
            y in proptest::collection::vec(any::<bool>(), 6),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(h.iter().sum::<f64>() > 1e-6);
            let r = roll(2, 3, &y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>());
            let hm = m(2, 3, &h);
            let a = psa(&hm, &r).unwrap();
            let b = psa(&hm.map(|v| v * c), &r).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn l0_is_monotone_in_epsilon(h in proptest::collection::vec(0.0f64..1.0, 8), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
            let hm = m(2, 4, &h);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(l0_eps_sparsity(&hm, lo).unwrap() <= l0_eps_sparsity(&hm, hi).unwrap());
        }
    }
}
