//! Run configuration: one TOML document for every command.

use std::path::{Path, PathBuf};

use dds_core::decompose::{DecompositionConfig, MethodKind, PlateauConfig, UpdateRule};
use dds_core::flows::{Activation, FlowArchitecture};
use dds_core::signal::SynthConfig;
use dds_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: String,
    pub seed: u64,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub decompose: DecomposeSection,
    pub bench: BenchSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: "dds3".into(),
            seed: 0,
            synth: SynthSection::default(),
            train: TrainSection::default(),
            decompose: DecomposeSection::default(),
            bench: BenchSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// Synthetic corpus: isolated notes per source for training, and test
/// snippets built from back-to-back segments of simultaneous notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub sources: usize,
    pub base_hz: f64,
    /// Spacing between consecutive fundamentals.
    pub interval_semitones: f64,
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub partials: usize,
    pub partial_decay: f64,
    pub envelope_decay: f64,
    pub noise_level: f64,
    pub notes_per_source: usize,
    pub note_seconds: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub train_fraction: f64,
    pub test_snippets: usize,
    pub segments_per_snippet: usize,
    pub segment_seconds: f64,
    pub polyphony: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            sources: 8,
            base_hz: 220.0,
            interval_semitones: 3.0,
            sample_rate: 8000,
            window: 256,
            hop: 128,
            partials: 5,
            partial_decay: 0.7,
            envelope_decay: 2.0,
            noise_level: 0.01,
            notes_per_source: 10,
            note_seconds: 0.25,
            intensity_min: 0.25,
            intensity_max: 0.75,
            train_fraction: 0.8,
            test_snippets: 1,
            segments_per_snippet: 10,
            segment_seconds: 0.35,
            polyphony: 2,
        }
    }
}

impl SynthSection {
    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        let fundamentals = (0..self.sources)
            .map(|i| self.base_hz * 2f64.powf(i as f64 * self.interval_semitones / 12.0))
            .collect();
        SynthConfig {
            fundamentals,
            partials: self.partials,
            partial_decay: self.partial_decay,
            envelope_decay: self.envelope_decay,
            noise_level: self.noise_level,
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.window / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub steps: usize,
    pub hidden: Vec<usize>,
}

impl ArchSection {
    fn to_arch(&self, activation: Activation) -> FlowArchitecture {
        FlowArchitecture { steps: self.steps, hidden: self.hidden.clone(), activation }
    }
}

impl Default for ArchSection {
    fn default() -> Self {
        let a = FlowArchitecture::realnvp_default();
        Self { steps: a.steps, hidden: a.hidden }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_source: f64,
    pub lr_conditional: f64,
    pub patience: usize,
    /// Semantic weight of the conditional loss; defaults to the source count.
    pub alpha: Option<f64>,
    pub realnvp: ArchSection,
    pub glow: ArchSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = TrainConfig::source_default();
        let g = FlowArchitecture::glow_default();
        Self {
            epochs: s.epochs,
            batch_size: s.batch_size,
            lr_source: s.lr,
            lr_conditional: TrainConfig::conditional_default().lr,
            patience: s.patience,
            alpha: None,
            realnvp: ArchSection::default(),
            glow: ArchSection { steps: g.steps, hidden: g.hidden },
        }
    }
}

impl TrainSection {
    pub fn realnvp_arch(&self) -> FlowArchitecture {
        self.realnvp.to_arch(Activation::Selu)
    }

    pub fn glow_arch(&self) -> FlowArchitecture {
        self.glow.to_arch(Activation::LeakyRelu)
    }

    pub fn source_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr_source, seed, patience: self.patience, alpha: None }
    }

    pub fn conditional_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { lr: self.lr_conditional, alpha: self.alpha, ..self.source_config(seed) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeSection {
    pub max_steps: usize,
    pub step_size_nmf: f64,
    pub step_size_dds: f64,
    pub lambda_mle: f64,
    pub n_components: usize,
    /// `adam` or `sgd`.
    pub update: String,
    pub plateau_window: usize,
    pub plateau_rel_threshold: f64,
    pub plateau_lr_factor: f64,
    pub plateau_max_reductions: usize,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        let nmf = DecompositionConfig::for_method(MethodKind::Nmf);
        let dds = DecompositionConfig::for_method(MethodKind::Dds2);
        Self {
            max_steps: nmf.max_steps,
            step_size_nmf: nmf.step_size,
            step_size_dds: dds.step_size,
            lambda_mle: dds.lambda_mle,
            n_components: dds.n_components,
            update: "adam".into(),
            plateau_window: nmf.plateau.window,
            plateau_rel_threshold: nmf.plateau.rel_threshold,
            plateau_lr_factor: nmf.plateau.lr_factor,
            plateau_max_reductions: nmf.plateau.max_reductions,
        }
    }
}

impl DecomposeSection {
    pub fn config(&self, kind: MethodKind, seed: u64) -> Result<DecompositionConfig, CliError> {
        let update = match self.update.as_str() {
            "adam" => UpdateRule::Adam,
            "sgd" => UpdateRule::Sgd,
            other => return Err(CliError::Config(format!("unknown update rule `{other}` (expected adam or sgd)"))),
        };
        let cfg = DecompositionConfig {
            max_steps: self.max_steps,
            step_size: if kind == MethodKind::Nmf { self.step_size_nmf } else { self.step_size_dds },
            lambda_mle: self.lambda_mle,
            n_components: self.n_components,
            plateau: PlateauConfig {
                window: self.plateau_window,
                rel_threshold: self.plateau_rel_threshold,
                lr_factor: self.plateau_lr_factor,
                max_reductions: self.plateau_max_reductions,
            },
            update,
            seed,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Sweeps for the per-iteration timing benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub t_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub m_values: Vec<usize>,
    /// Fixed values of the parameters not being swept.
    pub t: usize,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub hidden: usize,
    pub repetitions: usize,
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            t_values: vec![8, 16, 32, 64],
            d_values: vec![16, 32, 64],
            k_values: vec![2, 4, 8],
            n_values: vec![4, 8, 16],
            m_values: vec![64, 128, 256, 512],
            t: 32,
            d: 32,
            k: 2,
            n: 4,
            m: 128,
            steps: 2,
            hidden: 16,
            repetitions: 5,
            warmup: 2,
        }
    }
}

/// Locations; none have defaults and each command checks the ones it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn method_kind(&self) -> Result<MethodKind, CliError> {
        MethodKind::from_tag(&self.method)
            .ok_or_else(|| CliError::Config(format!("unknown method `{}` (expected nmf, dds1, dds2 or dds3)", self.method)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let kind = self.method_kind()?;
        let s = &self.synth;
        s.synth_config(self.seed).validate(s.sample_rate).map_err(|e| CliError::Config(format!("synth: {e}")))?;
        if s.window == 0 || s.window % 2 != 0 || s.hop == 0 {
            return Err(CliError::Config("synth: window must be even and positive, hop positive".into()));
        }
        if s.sources < 2 || s.polyphony == 0 || s.polyphony > s.sources {
            return Err(CliError::Config("synth: need at least two sources and 1 <= polyphony <= sources".into()));
        }
        if !(s.intensity_min > 0.0 && s.intensity_min <= s.intensity_max && s.intensity_max <= 1.0) {
            return Err(CliError::Config("synth: intensities must satisfy 0 < min <= max <= 1".into()));
        }
        if s.notes_per_source < 2 || !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            return Err(CliError::Config("synth: need >= 2 notes per source and a train fraction in (0, 1)".into()));
        }
        if !(s.note_seconds * s.sample_rate as f64 >= s.window as f64) || !(s.segment_seconds > 0.0) {
            return Err(CliError::Config("synth: notes must be at least one window long".into()));
        }
        let t = &self.train;
        t.source_config(0).validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        t.conditional_config(0).validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        if t.realnvp.steps == 0 || t.glow.steps == 0 {
            return Err(CliError::Config("train: flows need at least one step".into()));
        }
        if kind == MethodKind::Dds3 && s.sources >= s.d() {
            return Err(CliError::Config("dds3 needs fewer sources than frequency bins".into()));
        }
        self.decompose.config(kind, self.seed)?;
        let b = &self.bench;
        if b.repetitions < 5 || b.warmup < 2 {
            return Err(CliError::Config("bench: at least 5 repetitions after 2 warm-ups".into()));
        }
        for (name, v) in [("t", &b.t_values), ("d", &b.d_values), ("k", &b.k_values), ("n", &b.n_values), ("m", &b.m_values)] {
            if v.len() < 3 || v.iter().any(|&x| x == 0) {
                return Err(CliError::Config(format!("bench: {name}_values needs at least three positive points")));
            }
        }
        Ok(())
    }
}
