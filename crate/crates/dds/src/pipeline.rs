//! In-memory training and decomposition shared by the commands.

use std::time::Instant;

use dds_core::decompose::{self, DecompositionConfig, DecompositionResult, MethodKind, Models};
use dds_core::flows::{FlowKind, FlowModel};
use dds_core::metrics::{self, MetricReport};
use dds_core::train::{self, DatasetSplit, EpochStats, TrainOutcome};
use dds_core::signal::PianoRoll;
use dds_core::Matrix;

use crate::config::TrainSection;
use crate::dataset::{Dataset, Snippet, Split};
use crate::error::{CliError, CliResult};

/// Working precision for training and decomposition.
pub type Sample = f32;

pub enum TrainedModels {
    None,
    PerSource(Vec<FlowModel<Sample>>),
    Conditional(FlowModel<Sample>),
}

impl TrainedModels {
    pub fn as_models(&self) -> Models<'_, Sample> {
        match self {
            TrainedModels::None => Models::None,
            TrainedModels::PerSource(v) => Models::PerSource(v),
            TrainedModels::Conditional(m) => Models::Conditional(m),
        }
    }
}

/// One epoch line of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

pub struct TrainedModel {
    /// `source03` or `conditional`.
    pub name: String,
    pub outcome: TrainOutcome<Sample>,
    pub log: Vec<EpochRow>,
}

pub fn source_seed(seed: u64, source: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(source as u64)
}

fn split_for(ds: &Dataset, source: Option<usize>) -> CliResult<DatasetSplit<Sample>> {
    let (train, tl) = ds.frames(&[Split::Train], source);
    let (val, vl) = ds.frames(&[Split::Validation], source);
    if train.rows() < 2 || val.rows() == 0 {
        return Err(CliError::Config(format!("not enough training frames for {}", source.map_or("the conditional model".into(), |s| format!("source {s}")))));
    }
    Ok(DatasetSplit::new(train.cast(), tl, val.cast(), vl)?)
}

fn with_log<F>(name: String, f: F) -> TrainRun
where
    F: FnOnce(&mut dyn FnMut(&EpochStats)) -> dds_core::Result<TrainOutcome<Sample>>,
{
    let start = Instant::now();
    let mut log = Vec::new();
    let outcome = f(&mut |s: &EpochStats| {
        log.push(EpochRow { epoch: s.epoch, train_loss: s.train_loss, val_loss: s.val_loss, lr: s.lr, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
        log::debug!("{name} epoch {} train {:.4} val {:.4}", s.epoch, s.train_loss, s.val_loss);
    });
    TrainRun { name, log, outcome: outcome.map_err(CliError::from) }
}

/// One training job and its log, kept even when training fails.
pub struct TrainRun {
    pub name: String,
    pub log: Vec<EpochRow>,
    pub outcome: CliResult<TrainOutcome<Sample>>,
}

/// The models `kind` needs: nothing for NMF, one RealNVP per source for
/// DDS-1/2 (`Some(source)`), one conditional Glow for DDS-3 (`None`).
pub fn train_jobs(kind: MethodKind, k: usize) -> Vec<Option<usize>> {
    match kind {
        MethodKind::Nmf => Vec::new(),
        MethodKind::Dds1 | MethodKind::Dds2 => (0..k).map(Some).collect(),
        MethodKind::Dds3 => vec![None],
    }
}

pub fn train_one(ds: &Dataset, cfg: &TrainSection, seed: u64, source: Option<usize>) -> TrainRun {
    let name = source.map_or_else(|| "conditional".to_string(), |s| format!("source{s:02}"));
    let split = match split_for(ds, source) {
        Ok(s) => s,
        Err(e) => return TrainRun { name, log: Vec::new(), outcome: Err(e) },
    };
    match source {
        Some(s) => {
            let tc = cfg.source_config(source_seed(seed, s));
            with_log(name, |obs| train::train_source_model(&split, &cfg.realnvp_arch(), &tc, obs))
        }
        None => {
            let tc = cfg.conditional_config(seed);
            with_log(name, |obs| train::train_conditional_model(&split, ds.k, &cfg.glow_arch(), &tc, obs))
        }
    }
}

pub fn train_models(ds: &Dataset, kind: MethodKind, cfg: &TrainSection, seed: u64) -> CliResult<Vec<TrainedModel>> {
    train_jobs(kind, ds.k)
        .into_iter()
        .map(|source| {
            let run = train_one(ds, cfg, seed, source);
            Ok(TrainedModel { name: run.name, outcome: run.outcome?, log: run.log })
        })
        .collect()
}

/// Checks that `models` are what `kind` needs for a `k`-source, `d`-bin
/// dataset.
pub fn bundle(kind: MethodKind, models: Vec<FlowModel<Sample>>, k: usize, d: usize) -> CliResult<TrainedModels> {
    let bad = |msg: String| CliError::Config(format!("incompatible checkpoint: {msg}"));
    if let Some(m) = models.iter().find(|m| m.d != d) {
        return Err(bad(format!("model has {} bins, dataset has {d}", m.d)));
    }
    match kind {
        MethodKind::Nmf => Ok(TrainedModels::None),
        MethodKind::Dds1 | MethodKind::Dds2 => {
            if models.len() != k {
                return Err(bad(format!("{kind} needs {k} per-source models, got {}", models.len())));
            }
            if models.iter().any(|m| m.kind != FlowKind::RealNvp) {
                return Err(bad(format!("{kind} needs single-source models")));
            }
            Ok(TrainedModels::PerSource(models))
        }
        MethodKind::Dds3 => {
            let mut models = models;
            if models.len() != 1 || models[0].kind != FlowKind::GlowConditional || models[0].k_semantic != k {
                return Err(bad(format!("dds3 needs exactly one conditional model over {k} sources")));
            }
            Ok(TrainedModels::Conditional(models.remove(0)))
        }
    }
}

/// Initializes and runs one decomposition of `snippet`.
pub fn decompose_snippet(
    ds: &Dataset,
    snippet: &Snippet,
    kind: MethodKind,
    models: &TrainedModels,
    cfg: &DecompositionConfig,
) -> CliResult<DecompositionResult<Sample>> {
    let spec: Matrix<Sample> = snippet.spectrogram.cast();
    let t = spec.cols();
    let (dict, act) = match kind {
        MethodKind::Nmf => {
            let (frames, labels) = ds.frames(&[Split::Train, Split::Validation], None);
            decompose::init_nmf(&frames.cast(), &labels, ds.k, t)?
        }
        _ => decompose::init_dds(&spec, ds.k, cfg.n_components, kind, cfg.seed)?,
    };
    let start = Instant::now();
    let clock = move || start.elapsed().as_secs_f64() * 1e3;
    let models = models.as_models();
    decompose::decompose_with_clock(&spec, dict, act, &models, cfg, Some(&clock)).map_err(|e| match e {
        dds_core::Error::ShapeMismatch(m) | dds_core::Error::WrongModelKind(m) => CliError::Config(format!("incompatible checkpoint: {m}")),
        other => other.into(),
    })
}

pub fn evaluate_result(h_source: &Matrix<Sample>, roll: &PianoRoll, spec: &Matrix<f64>, s_hat: Option<&Matrix<Sample>>, epsilon: f64) -> CliResult<MetricReport> {
    let recon = match s_hat {
        Some(s) => Some(metrics::reconstruction_error(&spec.cast::<Sample>(), s)?),
        None => None,
    };
    Ok(metrics::evaluate(h_source, roll, recon, epsilon)?)
}
