//! Signal → training → decomposition → metrics on a tiny two-source problem.

use dds_core::decompose::{self, DecompositionConfig, MethodKind, Models};
use dds_core::flows::{Activation, FlowArchitecture};
use dds_core::signal::{self, NoteEvent, SynthConfig};
use dds_core::train::{self, DatasetSplit, TrainConfig};
use dds_core::{metrics, Matrix};

const SR: u32 = 8000;
const WINDOW: usize = 128;
const HOP: usize = 64;

fn synth_cfg() -> SynthConfig {
    SynthConfig { fundamentals: vec![330.0, 520.0], partials: 4, ..SynthConfig::semitone_series(2, 330.0, 5) }
}

/// Frames (rows) of isolated notes of `source`.
fn note_frames(source: usize, notes: usize, cfg: &SynthConfig) -> Matrix<f64> {
    let mut rows = Vec::new();
    for n in 0..notes {
        let intensity = 0.4 + 0.1 * n as f64;
        let audio = signal::synth_note(source, 0.3, intensity, cfg, SR).unwrap();
        let spec = signal::stft_log_magnitude(&audio, WINDOW, HOP).unwrap();
        rows.extend((0..spec.t()).map(|f| spec.frame(f)));
    }
    Matrix::from_rows(&rows).unwrap()
}

struct Problem {
    spec: Matrix<f64>,
    roll: signal::PianoRoll,
}

fn mixture(cfg: &SynthConfig) -> Problem {
    let events = [
        NoteEvent::new(0, 0.0, 0.3, 0.6).unwrap(),
        NoteEvent::new(1, 0.3, 0.3, 0.6).unwrap(),
        NoteEvent::new(0, 0.6, 0.3, 0.5).unwrap(),
        NoteEvent::new(1, 0.6, 0.3, 0.5).unwrap(),
    ];
    let (audio, events) = signal::synth_mixture(&events, cfg, SR).unwrap();
    let spec = signal::stft_log_magnitude(&audio, WINDOW, HOP).unwrap();
    let roll = signal::quantize_ground_truth(&events, 2, spec.t(), HOP, WINDOW, SR).unwrap();
    let (spec, roll) = signal::discard_silent_frames(&spec, &roll).unwrap();
    Problem { spec: spec.values, roll }
}

#[test]
fn nmf_attributes_most_activity_correctly() {
    let cfg = synth_cfg();
    let a = note_frames(0, 3, &cfg);
    let b = note_frames(1, 3, &cfg);
    let mut rows: Vec<Vec<f64>> = (0..a.rows()).map(|r| a.row(r).to_vec()).collect();
    rows.extend((0..b.rows()).map(|r| b.row(r).to_vec()));
    let labels: Vec<usize> = (0..a.rows()).map(|_| 0).chain((0..b.rows()).map(|_| 1)).collect();
    let frames = Matrix::from_rows(&rows).unwrap();

    let p = mixture(&cfg);
    let (dict, act) = decompose::init_nmf(&frames, &labels, 2, p.spec.cols()).unwrap();
    let dcfg = DecompositionConfig { max_steps: 300, ..DecompositionConfig::for_method(MethodKind::Nmf) };
    let r = decompose::decompose(&p.spec, dict, act, &Models::None, &dcfg).unwrap();
    assert!(r.activations.h.as_slice().iter().all(|&v| v >= 0.0));
    let best: Vec<f64> = r.objective_trace.iter().scan(f64::INFINITY, |b, t| { *b = b.min(t.objective); Some(*b) }).collect();
    assert!(best.last().unwrap() < &(0.5 * r.objective_trace[0].objective));
    let psa = metrics::psa(&r.h_source, &p.roll).unwrap();
    assert!(psa > 0.8, "nmf psa {psa}");
}

#[test]
fn trained_flows_drive_a_dds2_decomposition() {
    let cfg = synth_cfg();
    let arch = FlowArchitecture { steps: 4, hidden: vec![32], activation: Activation::Selu };
    let tc = TrainConfig { epochs: 40, batch_size: 16, lr: 3e-3, seed: 1, patience: 40, alpha: None };
    let models: Vec<_> = (0..2)
        .map(|s| {
            let train = note_frames(s, 3, &cfg);
            let val = note_frames(s, 1, &cfg);
            let split = DatasetSplit::new(train.clone(), vec![s; train.rows()], val.clone(), vec![s; val.rows()]).unwrap();
            let out = train::train_source_model(&split, &arch, &TrainConfig { seed: s as u64, ..tc.clone() }, &mut |_| {}).unwrap();
            assert!(out.best_val_loss < out.history[0].val_loss);
            out.model
        })
        .collect();

    let p = mixture(&cfg);
    let (dict, act) = decompose::init_dds(&p.spec, 2, 4, MethodKind::Dds2, 3).unwrap();
    let dcfg = DecompositionConfig { max_steps: 200, n_components: 4, ..DecompositionConfig::for_method(MethodKind::Dds2) };
    let r = decompose::decompose(&p.spec, dict, act, &Models::PerSource(&models), &dcfg).unwrap();
    assert_eq!(r.w_final.cols(), 8);
    assert_eq!(r.h_source.shape(), p.roll.active.shape());
    let first = r.objective_trace[0].objective;
    let best = r.objective_trace.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
    assert!(best < first);
    let report = metrics::evaluate(&r.h_source, &p.roll, Some(metrics::reconstruction_error(&p.spec, &r.s_hat).unwrap()), 0.05).unwrap();
    assert!((0.0..=1.0).contains(&report.psa) && (0.0..=1.0).contains(&report.l0_eps));
    assert!(report.psa > 0.5, "dds2 psa {}", report.psa);
}
