use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Moment accumulators for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self::with_betas(len, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0, beta1, beta2, eps }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch("adam parameter, gradient and state lengths differ"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidGradient);
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 / (1.0 - libm::pow(state.beta1, t)));
    let c2 = T::of(1.0 / (1.0 - libm::pow(state.beta2, t)));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_changes_nothing_but_the_step() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1e-3).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!(((p[0] - expected) / expected).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_keeps_decreasing() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1e-2).unwrap();
        let first = p[0];
        adam_step(&mut p, &[1.0], &mut s, 1e-2).unwrap();
        assert!(first < 0.0 && p[0] < first);
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = vec![0.0f64; 2];
        let mut s = AdamState::new(2);
        assert_eq!(adam_step(&mut p, &[f64::NAN, 0.0], &mut s, 1e-3), Err(Error::InvalidGradient));
        assert!(adam_step(&mut p, &[0.0], &mut s, 1e-3).is_err());
        assert_eq!(s.step, 0);
    }

    proptest! {
        #[test]
        fn zero_learning_rate_is_identity(p0 in proptest::collection::vec(-5.0f64..5.0, 4), g in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let mut p = p0.clone();
            let mut s = AdamState::new(4);
            adam_step(&mut p, &g, &mut s, 0.0).unwrap();
            prop_assert_eq!(p, p0);
            prop_assert!(s.v.iter().all(|&v| v >= 0.0));
        }
    }
}
