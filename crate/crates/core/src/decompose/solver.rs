use alloc::vec::Vec;

use crate::decompose::objective::{evaluate, postprocess, reconstruct};
use crate::decompose::{
    check_models, ActivationState, DecompositionConfig, DictionaryState, MethodKind, Models, UpdateRule,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::train::{adam_step, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub objective: f64,
    pub recon: f64,
    pub mle: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult<T> {
    pub kind: MethodKind,
    /// Post-processed `K × T` source activations.
    pub h_source: Matrix<T>,
    pub activations: ActivationState<T>,
    pub dictionary: DictionaryState<T>,
    /// Rectified dictionary, one entry per column.
    pub w_final: Matrix<T>,
    pub s_hat: Matrix<T>,
    /// Objective at the start of each step.
    pub objective_trace: Vec<TraceRow>,
    pub steps_run: usize,
    pub lr_reductions: usize,
    pub stopped_early: bool,
    pub wall_ms: f64,
}

struct Stepper<T> {
    rule: UpdateRule,
    adam: AdamState<T>,
}

impl<T: Real> Stepper<T> {
    fn new(rule: UpdateRule, len: usize) -> Self {
        Self { rule, adam: AdamState::new(len) }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) -> Result<()> {
        match self.rule {
            UpdateRule::Adam => adam_step(params, grad, &mut self.adam, lr),
            UpdateRule::Sgd => {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::InvalidGradient);
                }
                let lr = T::of(lr);
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p = *p - lr * g;
                }
                Ok(())
            }
        }
    }
}

/// Runs the alternating projected-gradient loop from the given initial state.
pub fn decompose<T: Real>(
    spec: &Matrix<T>,
    dict: DictionaryState<T>,
    act: ActivationState<T>,
    models: &Models<'_, T>,
    cfg: &DecompositionConfig,
) -> Result<DecompositionResult<T>> {
    decompose_with_clock(spec, dict, act, models, cfg, None)
}

/// [`decompose`] with a millisecond clock used to fill `wall_ms`.
pub fn decompose_with_clock<T: Real>(
    spec: &Matrix<T>,
    mut dict: DictionaryState<T>,
    mut act: ActivationState<T>,
    models: &Models<'_, T>,
    cfg: &DecompositionConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<DecompositionResult<T>> {
    cfg.validate()?;
    if spec.rows() == 0 || spec.cols() == 0 {
        return Err(Error::EmptyInput);
    }
    if !spec.all_finite() {
        return Err(Error::InvalidArgument("spectrogram contains non-finite values"));
    }
    if act.h.cols() != spec.cols() {
        return Err(Error::ShapeMismatch("H columns must match spectrogram frames"));
    }
    check_models(&dict, models, spec.rows())?;
    let start = clock.map(|c| c());
    let kind = dict.kind();
    let lambda = if kind.uses_flows() { cfg.lambda_mle } else { 0.0 };

    let mut codes = dict.codes();
    let mut code_step = Stepper::new(cfg.update, codes.len());
    let mut h_step = Stepper::new(cfg.update, act.h.as_slice().len());
    let mut lr = cfg.step_size;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut plateau_best = f64::INFINITY;
    let mut stale = 0;
    let mut reductions = 0;
    let mut stopped_early = false;
    let diverged = |step: usize, trace: &[TraceRow]| Error::DecompositionDiverged { step, trace: trace.iter().map(|r| r.objective).collect() };

    for step in 0..cfg.max_steps {
        let before = if kind.uses_flows() {
            let ev = evaluate(spec, &dict, &act, models, lambda, true, false)?;
            if !ev.value.total.is_finite() {
                return Err(diverged(step, &trace));
            }
            code_step.step(&mut codes, &ev.d_codes, lr).map_err(|_| diverged(step, &trace))?;
            dict.set_codes(&codes);
            Some(ev.value)
        } else {
            None
        };
        let ev = evaluate(spec, &dict, &act, models, lambda, false, true)?;
        let value = before.unwrap_or(ev.value);
        if !value.total.is_finite() || !ev.value.total.is_finite() {
            return Err(diverged(step, &trace));
        }
        let dh = ev.d_h.expect("H gradient requested");
        h_step.step(act.h.as_mut_slice(), dh.as_slice(), lr).map_err(|_| diverged(step, &trace))?;
        for v in act.h.as_mut_slice() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        trace.push(TraceRow { step, objective: value.total, recon: value.recon, mle: value.mle, lr });

        if trace.len() == 1 || value.total < plateau_best - cfg.plateau.rel_threshold * plateau_best.abs() {
            plateau_best = value.total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau.window {
                stale = 0;
                if reductions == cfg.plateau.max_reductions {
                    stopped_early = true;
                    break;
                }
                reductions += 1;
                lr *= cfg.plateau.lr_factor;
            }
        }
    }

    let rec = reconstruct(&dict, &act, models)?;
    let h_source = postprocess(&dict, &act, models)?;
    let w_final = rec.entries.map(|v| v.max(T::zero())).transpose();
    let wall_ms = match (clock, start) {
        (Some(c), Some(s)) => c() - s,
        _ => 0.0,
    };
    Ok(DecompositionResult {
        kind,
        h_source,
        activations: act,
        dictionary: dict,
        w_final,
        s_hat: rec.s_hat,
        steps_run: trace.len(),
        objective_trace: trace,
        lr_reductions: reductions,
        stopped_early,
        wall_ms,
    })
}
