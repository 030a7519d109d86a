use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::flows::{Activation, FlowArchitecture, FlowModel};
use crate::rng;
use crate::train::grad_check;

fn arch() -> FlowArchitecture {
    FlowArchitecture { steps: 2, hidden: vec![6, 6], activation: Activation::Selu }
}

fn random_models(k: usize, d: usize, seed: u64) -> Vec<FlowModel<f64>> {
    (0..k)
        .map(|i| {
            let mut m = FlowModel::realnvp(d, &arch(), seed + i as u64);
            m.randomize(seed + 100 + i as u64, 0.3);
            m
        })
        .collect()
}

fn random_conditional(k: usize, d: usize, seed: u64) -> FlowModel<f64> {
    let a = FlowArchitecture { activation: Activation::LeakyRelu, ..arch() };
    let mut m = FlowModel::glow_conditional(d, k, &a, seed);
    m.randomize(seed + 1, 0.3);
    m
}

fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix<f64> {
    let mut r = rng::seeded(seed, 5);
    Matrix::from_fn(rows, cols, |_, _| rng::uniform(&mut r, lo, hi))
}

fn cfg(kind: MethodKind) -> DecompositionConfig {
    DecompositionConfig { n_components: 2, ..DecompositionConfig::for_method(kind) }
}

#[test]
fn tags_round_trip() {
    for m in MethodKind::ALL {
        assert_eq!(MethodKind::from_tag(m.tag()), Some(m));
    }
    assert_eq!(MethodKind::from_tag("pca"), None);
}

#[test]
fn dds1_convex_combination_of_ones() {
    let (k, d, t) = (3, 4, 2);
    let models: Vec<_> = (0..k).map(|i| FlowModel::<f64>::realnvp(d, &arch(), i as u64)).collect();
    let dict = DictionaryState::Dds1 { z: (0..k).map(|_| Matrix::filled(t, d, 1.0)).collect() };
    let act = ActivationState { h: Matrix::filled(k, t, 1.0 / k as f64) };
    let rec = reconstruct(&dict, &act, &Models::PerSource(&models)).unwrap();
    assert!(rec.s_hat.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn nmf_selects_columns() {
    let w = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 + c as f64 } else { 0.0 });
    let h = Matrix::from_vec(3, 2, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    let dict = DictionaryState::Nmf { w: w.clone(), source_of: vec![0, 1, 1], k: 2 };
    let rec = reconstruct(&dict, &ActivationState { h }, &Models::None).unwrap();
    assert_eq!(rec.s_hat.column(0), w.column(1));
    assert_eq!(rec.s_hat.column(1), w.column(0));
    assert!(rec.nlls.is_empty());
}

#[test]
fn dds2_hand_product() {
    let models: Vec<_> = (0..2).map(|i| FlowModel::<f64>::realnvp(3, &arch(), 10 + i)).collect();
    let cols = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
    let z = (0..2).map(|k| models[k].forward(&Matrix::from_rows(&[cols[k]]).unwrap()).unwrap().0).collect();
    let dict = DictionaryState::Dds2 { z };
    let h = Matrix::from_vec(2, 2, vec![1.0, 0.0, 2.0, 1.0]).unwrap();
    let rec = reconstruct(&dict, &ActivationState { h }, &Models::PerSource(&models)).unwrap();
    let expected = [9.0, 4.0, 12.0, 5.0, 15.0, 6.0];
    for (a, b) in rec.s_hat.as_slice().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{:?}", rec.s_hat);
    }
}

#[test]
fn rectification_drops_negative_entries() {
    let models: Vec<_> = (0..1).map(|i| FlowModel::<f64>::realnvp(2, &arch(), i)).collect();
    let z = vec![models[0].forward(&Matrix::from_rows(&[[-1.0, 2.0]]).unwrap()).unwrap().0];
    let dict = DictionaryState::Dds2 { z };
    let rec = reconstruct(&dict, &ActivationState { h: Matrix::filled(1, 1, 1.0) }, &Models::PerSource(&models)).unwrap();
    assert_eq!(rec.s_hat.column(0), vec![0.0, 2.0]);
}

#[test]
fn objective_examples() {
    let spec = random_matrix(3, 2, 0.0, 1.0, 1);
    let w = random_matrix(3, 2, 0.0, 1.0, 2);
    let dict = DictionaryState::Nmf { w: w.clone(), source_of: vec![0, 1], k: 2 };
    let act = ActivationState { h: random_matrix(2, 2, 0.0, 1.0, 3) };
    let rec = reconstruct(&dict, &act, &Models::None).unwrap();
    let v = objective(&spec, &rec, &dict, &act, 5.0).unwrap();
    let expected = crate::metrics::reconstruction_error(&spec, &w.matmul(&act.h)).unwrap();
    assert_eq!(v.total, expected);
    assert_eq!(v.mle, 0.0);
    let exact = objective(&rec.s_hat, &rec, &dict, &act, 5.0).unwrap();
    assert_eq!(exact.total, 0.0);
}

#[test]
fn mle_weighting_by_row_mass() {
    // Two entries with nll (2, 4) carried by H rows summing to (1, 3).
    let (mle, uniform) = objective::weighted_nll(&[2.0f64, 4.0], &[1.0, 3.0]);
    assert!((mle - 3.5).abs() < 1e-12);
    assert!(!uniform);
    let (mle, uniform) = objective::weighted_nll(&[2.0f64, 4.0], &[0.0, 0.0]);
    assert_eq!(mle, 3.0);
    assert!(uniform);
}

fn check_gradients(dict: &DictionaryState<f64>, act: &ActivationState<f64>, models: &Models<'_, f64>, spec: &Matrix<f64>) {
    let codes = dict.codes();
    let n_codes = codes.len();
    let mut params = codes;
    params.extend_from_slice(act.h.as_slice());
    let (hr, hc) = act.h.shape();
    let loss = |p: &[f64]| {
        let mut d = dict.clone();
        d.set_codes(&p[..n_codes]);
        let a = ActivationState { h: Matrix::from_vec(hr, hc, p[n_codes..].to_vec()).unwrap() };
        let ev = evaluate(spec, &d, &a, models, 0.3, true, true).unwrap();
        let mut g = ev.d_codes;
        g.extend_from_slice(ev.d_h.unwrap().as_slice());
        (ev.value.total, g)
    };
    let report = grad_check(loss, &params, 1e-4, 1);
    assert_eq!(report.checked, params.len());
    assert!(report.passed, "{:?} {report:?}", dict.kind());
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let (d, t, k, n) = (8, 4, 2, 2);
    let spec = random_matrix(d, t, 0.0, 2.0, 7);
    let models = random_models(k, d, 3);
    let glow = random_conditional(k, d, 4);

    let z1 = (0..k).map(|i| random_matrix(t, d, -1.0, 1.0, 20 + i as u64)).collect();
    check_gradients(&DictionaryState::Dds1 { z: z1 }, &ActivationState { h: random_matrix(k, t, 0.1, 1.0, 8) }, &Models::PerSource(&models), &spec);

    let z2 = (0..k).map(|i| random_matrix(n, d, -1.0, 1.0, 30 + i as u64)).collect();
    check_gradients(&DictionaryState::Dds2 { z: z2 }, &ActivationState { h: random_matrix(k * n, t, 0.1, 1.0, 9) }, &Models::PerSource(&models), &spec);

    let (mut dict3, _) = init_dds(&spec, k, n, MethodKind::Dds3, 0).unwrap();
    dict3.set_codes(random_matrix(k * n, d - k, -1.0, 1.0, 40).as_slice());
    check_gradients(&dict3, &ActivationState { h: random_matrix(k * n, t, 0.1, 1.0, 10) }, &Models::Conditional(&glow), &spec);

    let frames = random_matrix(5, d, 0.0, 1.0, 11);
    let (nmf, _) = init_nmf(&frames, &[0, 0, 1, 1, 1], k, t).unwrap();
    check_gradients(&nmf, &ActivationState { h: random_matrix(5, t, 0.1, 1.0, 12) }, &Models::None, &spec);
}

#[test]
fn zero_steps_returns_initial_state() {
    let spec = random_matrix(4, 3, 0.0, 1.0, 1);
    let frames = random_matrix(6, 4, 0.0, 1.0, 2);
    let (dict, act) = init_nmf(&frames, &[0, 0, 0, 1, 1, 1], 2, 3).unwrap();
    let c = DecompositionConfig { max_steps: 0, ..cfg(MethodKind::Nmf) };
    let r = decompose(&spec, dict.clone(), act.clone(), &Models::None, &c).unwrap();
    assert!(r.objective_trace.is_empty());
    assert_eq!(r.steps_run, 0);
    assert_eq!(r.activations, act);
    assert_eq!(r.dictionary, dict);
}

#[test]
fn nmf_recovers_feasible_factorization() {
    let (d, m, t) = (8, 6, 4);
    let frames = random_matrix(m, d, 0.0, 1.0, 3);
    let h_true = random_matrix(m, t, 0.0, 1.0, 4);
    let spec = frames.transpose().matmul(&h_true);
    let (dict, act) = init_nmf(&frames, &[0, 0, 0, 1, 1, 1], 2, t).unwrap();
    let r = decompose(&spec, dict.clone(), act, &Models::None, &cfg(MethodKind::Nmf)).unwrap();
    let first = r.objective_trace[0].recon;
    let last = crate::metrics::reconstruction_error(&spec, &r.s_hat).unwrap();
    assert!(last < 0.5 * first, "{last} vs {first}");
    // The stored dictionary never moves.
    assert_eq!(r.dictionary, dict);
    assert!(r.activations.h.as_slice().iter().all(|&v| v >= 0.0));
}

#[test]
fn dds_runs_are_deterministic_and_keep_invariants() {
    let (d, t, k, n) = (6, 5, 2, 2);
    let spec = random_matrix(d, t, 0.0, 1.0, 5);
    let glow = random_conditional(k, d, 2);
    let c = DecompositionConfig { max_steps: 30, ..cfg(MethodKind::Dds3) };
    let run = || {
        let (dict, act) = init_dds(&spec, k, n, MethodKind::Dds3, 9).unwrap();
        decompose(&spec, dict, act, &Models::Conditional(&glow), &c).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.objective_trace, b.objective_trace);
    assert_eq!(a.h_source, b.h_source);
    let (DictionaryState::Dds3 { semantic: s0, .. }, DictionaryState::Dds3 { semantic: s1, nuisance, .. }) =
        (&init_dds(&spec, k, n, MethodKind::Dds3, 9).unwrap().0, &a.dictionary)
    else {
        panic!()
    };
    assert_eq!(s0, s1);
    assert!(nuisance.as_slice().iter().any(|&v| v != 0.0));
    assert!(a.activations.h.as_slice().iter().all(|&v| v >= 0.0));
    assert!(a.h_source.as_slice().iter().all(|&v| v >= 0.0));
    assert_eq!(a.h_source.shape(), (k, t));
}

#[test]
fn dds1_and_dds2_reduce_the_objective() {
    let (d, t, k) = (6, 5, 2);
    let spec = random_matrix(d, t, 0.5, 1.5, 5);
    let models = random_models(k, d, 8);
    for kind in [MethodKind::Dds1, MethodKind::Dds2] {
        let (dict, act) = init_dds(&spec, k, 2, kind, 1).unwrap();
        let c = DecompositionConfig { max_steps: 200, step_size: 2e-2, ..cfg(kind) };
        let r = decompose(&spec, dict, act, &Models::PerSource(&models), &c).unwrap();
        let first = r.objective_trace[0].objective;
        let best = r.objective_trace.iter().map(|row| row.objective).fold(f64::INFINITY, f64::min);
        assert!(best < first, "{kind}: {best} vs {first}");
        assert!(r.steps_run <= 200);
    }
}

#[test]
fn plateau_reduces_then_stops() {
    let spec = Matrix::<f64>::zeros(3, 2);
    let frames = random_matrix(2, 3, 0.0, 1.0, 1);
    let (dict, _) = init_nmf(&frames, &[0, 1], 2, 2).unwrap();
    let act = ActivationState { h: Matrix::zeros(2, 2) };
    let plateau = PlateauConfig { window: 5, ..PlateauConfig::default() };
    let c = DecompositionConfig { plateau, ..cfg(MethodKind::Nmf) };
    let r = decompose(&spec, dict, act, &Models::None, &c).unwrap();
    assert!(r.stopped_early);
    assert_eq!(r.lr_reductions, 3);
    // The first step sets the best value, then four windows of five stale steps.
    assert_eq!(r.steps_run, 21);
    assert_eq!(r.objective_trace.last().unwrap().lr, 1e-2 / 8.0);
}

#[test]
fn exploding_steps_report_divergence() {
    let spec = random_matrix(3, 2, 0.0, 1.0, 1);
    let frames = random_matrix(2, 3, 0.0, 1.0, 2);
    let (dict, act) = init_nmf(&frames, &[0, 1], 2, 2).unwrap();
    let c = DecompositionConfig { step_size: 1e308, update: UpdateRule::Sgd, ..cfg(MethodKind::Nmf) };
    match decompose(&spec, dict, act, &Models::None, &c) {
        Err(Error::DecompositionDiverged { step, trace }) => assert_eq!(trace.len(), step),
        other => panic!("{other:?}"),
    }
}

#[test]
fn postprocess_examples() {
    // Unit-norm columns: plain aggregation.
    let w = Matrix::from_fn(2, 3, |r, c| if r == c % 2 { 1.0 } else { 0.0 });
    let h = random_matrix(3, 4, 0.0, 1.0, 2);
    let dict = DictionaryState::Nmf { w, source_of: vec![0, 0, 1], k: 2 };
    let out = postprocess(&dict, &ActivationState { h: h.clone() }, &Models::None).unwrap();
    for f in 0..4 {
        assert!((out[(0, f)] - h[(0, f)] - h[(1, f)]).abs() < 1e-12);
        assert!((out[(1, f)] - h[(2, f)]).abs() < 1e-12);
    }
    // One source, columns of norm 2 and 3.
    let w = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
    let h = Matrix::from_vec(2, 1, vec![0.25, 0.5]).unwrap();
    let dict = DictionaryState::Nmf { w, source_of: vec![0, 0], k: 1 };
    let out = postprocess(&dict, &ActivationState { h }, &Models::None).unwrap();
    assert!((out[(0, 0)] - (2.0f64 * 0.25 + 3.0 * 0.5)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn postprocess_is_rescaling_invariant(c in 0.01f64..100.0, j in 0usize..4, seed in 0u64..1000) {
        let w = random_matrix(3, 4, 0.0, 1.0, seed);
        let h = random_matrix(4, 2, 0.0, 1.0, seed + 1);
        let dict = DictionaryState::Nmf { w: w.clone(), source_of: vec![0, 1, 0, 1], k: 2 };
        let base = postprocess(&dict, &ActivationState { h: h.clone() }, &Models::None).unwrap();
        let mut w2 = w;
        let mut h2 = h;
        for r in 0..3 { w2[(r, j)] *= c; }
        for f in 0..2 { h2[(j, f)] /= c; }
        let dict2 = DictionaryState::Nmf { w: w2, source_of: vec![0, 1, 0, 1], k: 2 };
        let scaled = postprocess(&dict2, &ActivationState { h: h2 }, &Models::None).unwrap();
        prop_assert!(base.max_abs_diff(&scaled) < 1e-9);
    }

    #[test]
    fn activations_stay_nonnegative(seed in 0u64..200) {
        let spec = random_matrix(4, 3, 0.0, 1.0, seed);
        let frames = random_matrix(5, 4, 0.0, 1.0, seed + 1);
        let (dict, act) = init_nmf(&frames, &[0, 0, 1, 1, 1], 2, 3).unwrap();
        let c = DecompositionConfig { max_steps: 40, step_size: 0.2, update: UpdateRule::Sgd, ..cfg(MethodKind::Nmf) };
        let r = decompose(&spec, dict, act, &Models::None, &c).unwrap();
        prop_assert!(r.activations.h.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!(r.steps_run <= 40);
    }
}
