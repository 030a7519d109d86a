use alloc::vec::Vec;

use rand::seq::index;

use crate::rng;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this in magnitude are compared absolutely, so
/// round-off in the difference quotient does not register as relative error.
pub const ABS_FLOOR: f64 = 1e-8;

/// Checks `loss_fn`'s analytic gradient at `params` against central finite
/// differences (step `1e-5`) on a seeded random subsample of at least 100
/// coordinates (all of them if there are fewer).
///
/// `loss_fn` returns `(value, gradient)`.
pub fn grad_check<F>(loss_fn: F, params: &[f64], tolerance: f64, seed: u64) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    let n = params.len();
    let sample = 100.max(n / 10).min(n);
    let coords: Vec<usize> = if sample == n {
        (0..n).collect()
    } else {
        let mut idx = index::sample(&mut rng::seeded(seed, 0x4743), n, sample).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut worst = (0.0, 0);
    let mut p = params.to_vec();
    for &i in &coords {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = loss_fn(&p).0;
        p[i] = orig - FD_STEP;
        let down = loss_fn(&p).0;
        p[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let err = (fd - a).abs() / fd.abs().max(a.abs()).max(ABS_FLOOR);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: coords.len(),
        passed: worst.0 < tolerance,
    }
}
