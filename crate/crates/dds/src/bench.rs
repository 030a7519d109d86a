//! Per-iteration cost of each solver under parameter sweeps.
//!
//! Each scenario times three things on untrained (identity-initialized)
//! flows: dictionary inference (generating the entries from their codes),
//! reconstruction (forming `Ŝ` from entries and H) and one full iteration
//! (objective plus both gradient evaluations and updates). Slopes are fitted
//! on log-log axes so constant factors drop out.

use std::time::Instant;

use dds_core::decompose::{self, ActivationState, DecompositionConfig, DictionaryState, MethodKind, Models};
use dds_core::flows::{Activation, FlowArchitecture, FlowModel};
use dds_core::{rng, Matrix};
use serde::Serialize;

use crate::config::BenchSection;
use crate::error::CliResult;
use crate::pipeline::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    T,
    D,
    K,
    N,
    M,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::T => "t",
            Param::D => "d",
            Param::K => "k",
            Param::N => "n",
            Param::M => "m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scenario {
    pub t: usize,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub parameter: Param,
    pub value: usize,
    pub inference_ms: f64,
    pub reconstruction_ms: f64,
    pub iteration_ms: f64,
    pub memory_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slope {
    pub method: String,
    pub parameter: Param,
    /// `inference`, `reconstruction` or `iteration`.
    pub measure: String,
    pub slope: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub slopes: Vec<Slope>,
}

impl BenchReport {
    pub fn slope(&self, method: MethodKind, parameter: Param, measure: &str) -> Option<f64> {
        self.slopes.iter().find(|s| s.method == method.tag() && s.parameter == parameter && s.measure == measure).map(|s| s.slope)
    }
}

/// Parameters each method's cost depends on.
pub fn swept(method: MethodKind) -> &'static [Param] {
    match method {
        MethodKind::Nmf => &[Param::T, Param::D, Param::M],
        MethodKind::Dds1 => &[Param::T, Param::D, Param::K],
        MethodKind::Dds2 | MethodKind::Dds3 => &[Param::T, Param::D, Param::K, Param::N],
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.max(1e-12).ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

struct Fixture {
    spec: Matrix<Sample>,
    dict: DictionaryState<Sample>,
    act: ActivationState<Sample>,
    per_source: Vec<FlowModel<Sample>>,
    conditional: Option<FlowModel<Sample>>,
}

impl Fixture {
    fn new(method: MethodKind, s: Scenario, cfg: &BenchSection) -> CliResult<Self> {
        let mut r = rng::seeded(s.t as u64 * 31 + s.d as u64, 7);
        let spec = Matrix::from_fn(s.d, s.t, |_, _| rng::uniform(&mut r, 0.0, 1.0) as Sample);
        let hidden = vec![cfg.hidden; 2];
        let arch = FlowArchitecture { steps: cfg.steps, hidden, activation: Activation::Selu };
        let mut per_source = Vec::new();
        let mut conditional = None;
        let (mut dict, act) = match method {
            MethodKind::Nmf => {
                let frames = Matrix::from_fn(s.m, s.d, |_, _| rng::uniform(&mut r, 0.0, 1.0) as Sample);
                let labels: Vec<usize> = (0..s.m).map(|j| j % s.k).collect();
                decompose::init_nmf(&frames, &labels, s.k, s.t)?
            }
            MethodKind::Dds1 | MethodKind::Dds2 => {
                per_source = (0..s.k).map(|i| FlowModel::realnvp(s.d, &arch, i as u64)).collect();
                decompose::init_dds(&spec, s.k, s.n, method, 0)?
            }
            MethodKind::Dds3 => {
                let arch = FlowArchitecture { activation: Activation::LeakyRelu, ..arch };
                conditional = Some(FlowModel::glow_conditional(s.d, s.k, &arch, 0));
                decompose::init_dds(&spec, s.k, s.n, method, 0)?
            }
        };
        // Zero codes map to all-zero entries under identity flows, which
        // would let the products skip work; start from random codes instead.
        let codes: Vec<Sample> = dict.codes().iter().map(|_| rng::standard_normal(&mut r) as Sample).collect();
        dict.set_codes(&codes);
        Ok(Self { spec, dict, act, per_source, conditional })
    }

    fn models(&self) -> Models<'_, Sample> {
        match (&self.conditional, self.per_source.is_empty()) {
            (Some(m), _) => Models::Conditional(m),
            (None, false) => Models::PerSource(&self.per_source),
            (None, true) => Models::None,
        }
    }

    /// Rough peak working set of one iteration: spectrogram, activations,
    /// entries and their gradients, plus the flow activation caches.
    fn memory_bytes(&self, cfg: &BenchSection) -> usize {
        let entries = self.dict.row_sources().len().max(match &self.dict {
            DictionaryState::Dds1 { z } => z.len() * self.spec.cols(),
            _ => 0,
        });
        let d = self.spec.rows();
        let t = self.spec.cols();
        let h = self.act.h.as_slice().len();
        let flow_cache = if self.dict.kind().uses_flows() { entries * cfg.steps * (3 * d + 2 * cfg.hidden) } else { 0 };
        (3 * d * t + 2 * h + 3 * entries * d + flow_cache) * std::mem::size_of::<Sample>()
    }
}

/// Median wall time in ms of each closure, after warm-up. Samples are taken
/// round-robin across the closures so a slow spell hits every point of a
/// sweep alike. Fast operations are repeated within each sample so a sample
/// lasts at least about 10 ms.
fn time_ms(reps: usize, warmup: usize, fs: &mut [&mut dyn FnMut()]) -> Vec<f64> {
    let inner: Vec<usize> = fs
        .iter_mut()
        .map(|f| {
            for _ in 0..warmup {
                f();
            }
            let probe = Instant::now();
            f();
            let once = probe.elapsed().as_secs_f64();
            ((1e-2 / once.max(1e-9)).ceil() as usize).clamp(1, 100_000)
        })
        .collect();
    let mut samples = vec![Vec::with_capacity(reps); fs.len()];
    for _ in 0..reps {
        for (i, f) in fs.iter_mut().enumerate() {
            let start = Instant::now();
            for _ in 0..inner[i] {
                f();
            }
            samples[i].push(start.elapsed().as_secs_f64() * 1e3 / inner[i] as f64);
        }
    }
    samples
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect()
}

/// Inference, reconstruction and iteration times plus memory estimate for
/// each scenario of one sweep.
pub fn measure(method: MethodKind, scenarios: &[Scenario], cfg: &BenchSection) -> CliResult<Vec<(f64, f64, f64, usize)>> {
    let fixtures = scenarios.iter().map(|&s| Fixture::new(method, s, cfg)).collect::<CliResult<Vec<_>>>()?;
    let models: Vec<_> = fixtures.iter().map(Fixture::models).collect();
    let entries = fixtures.iter().zip(&models).map(|(fx, m)| decompose::dictionary_entries(&fx.dict, m)).collect::<Result<Vec<_>, _>>()?;
    let (reps, warmup) = (cfg.repetitions, cfg.warmup);

    let inference = if method.uses_flows() {
        let mut fs: Vec<_> = fixtures
            .iter()
            .zip(&models)
            .map(|(fx, m)| move || {
                std::hint::black_box(decompose::dictionary_entries(&fx.dict, m).expect("finite"));
            })
            .collect();
        time_ms(reps, warmup, &mut fs.iter_mut().map(|f| f as &mut dyn FnMut()).collect::<Vec<_>>())
    } else {
        vec![0.0; fixtures.len()]
    };

    let mut fs: Vec<_> = fixtures
        .iter()
        .zip(&entries)
        .map(|(fx, e)| move || {
            std::hint::black_box(decompose::combine(&fx.dict, e, &fx.act.h));
        })
        .collect();
    let reconstruction = time_ms(reps, warmup, &mut fs.iter_mut().map(|f| f as &mut dyn FnMut()).collect::<Vec<_>>());

    let dcfg = DecompositionConfig { max_steps: 1, ..DecompositionConfig::for_method(method) };
    let dcfg = &dcfg;
    let mut fs: Vec<_> = fixtures
        .iter()
        .zip(&models)
        .map(|(fx, m)| move || {
            let mut dict = fx.dict.clone();
            let mut act = fx.act.clone();
            iterate(&fx.spec, &mut dict, &mut act, m, dcfg);
            std::hint::black_box(&act);
        })
        .collect();
    let iteration = time_ms(reps, warmup, &mut fs.iter_mut().map(|f| f as &mut dyn FnMut()).collect::<Vec<_>>());

    Ok((0..fixtures.len()).map(|i| (inference[i], reconstruction[i], iteration[i], fixtures[i].memory_bytes(cfg))).collect())
}

/// One alternating step: codes (flows only), then H, each from a fresh
/// objective evaluation, with plain projected updates.
fn iterate(spec: &Matrix<Sample>, dict: &mut DictionaryState<Sample>, act: &mut ActivationState<Sample>, models: &Models<'_, Sample>, cfg: &DecompositionConfig) {
    let lr = cfg.step_size as Sample;
    if dict.kind().uses_flows() {
        let ev = decompose::evaluate(spec, dict, act, models, cfg.lambda_mle, true, false).expect("finite");
        let mut codes = dict.codes();
        for (c, g) in codes.iter_mut().zip(&ev.d_codes) {
            *c -= lr * g;
        }
        dict.set_codes(&codes);
    }
    let ev = decompose::evaluate(spec, dict, act, models, cfg.lambda_mle, false, true).expect("finite");
    let dh = ev.d_h.expect("H gradient");
    for (h, g) in act.h.as_mut_slice().iter_mut().zip(dh.as_slice()) {
        *h = (*h - lr * g).max(0.0);
    }
}

fn scenario_with(base: Scenario, p: Param, v: usize) -> Scenario {
    let mut s = base;
    match p {
        Param::T => s.t = v,
        Param::D => s.d = v,
        Param::K => s.k = v,
        Param::N => s.n = v,
        Param::M => s.m = v,
    }
    s
}

pub fn run(cfg: &BenchSection, methods: &[MethodKind]) -> CliResult<BenchReport> {
    let base = Scenario { t: cfg.t, d: cfg.d, k: cfg.k, n: cfg.n, m: cfg.m };
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &method in methods {
        for &p in swept(method) {
            let values = match p {
                Param::T => &cfg.t_values,
                Param::D => &cfg.d_values,
                Param::K => &cfg.k_values,
                Param::N => &cfg.n_values,
                Param::M => &cfg.m_values,
            };
            let scenarios: Vec<Scenario> = values.iter().map(|&v| scenario_with(base, p, v)).collect();
            let measured = measure(method, &scenarios, cfg)?;
            let mut pts = (Vec::new(), Vec::new(), Vec::new());
            for (&v, &(inf, rec, it, mem)) in values.iter().zip(&measured) {
                log::info!("{method} {}={v}: inference {inf:.4} ms, reconstruction {rec:.4} ms, iteration {it:.4} ms", p.name());
                rows.push(BenchRow { method: method.tag().into(), parameter: p, value: v, inference_ms: inf, reconstruction_ms: rec, iteration_ms: it, memory_bytes: mem });
                pts.0.push((v as f64, inf));
                pts.1.push((v as f64, rec));
                pts.2.push((v as f64, it));
            }
            let mut push = |measure: &str, points: &[(f64, f64)]| {
                slopes.push(Slope { method: method.tag().into(), parameter: p, measure: measure.into(), slope: log_log_slope(points), points: points.len() });
            };
            if method.uses_flows() {
                push("inference", &pts.0);
            }
            push("reconstruction", &pts.1);
            push("iteration", &pts.2);
        }
    }
    Ok(BenchReport { rows, slopes })
}
