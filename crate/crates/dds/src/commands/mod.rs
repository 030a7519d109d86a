//! The five subcommands. Each takes a loaded [`RunConfig`] plus the
//! command-line overrides and writes its artifacts under one directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dds_core::decompose::MethodKind;
use dds_core::metrics::DEFAULT_EPSILON;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

mod bench;
mod decompose;
mod evaluate;
mod synth;
mod train;

pub use bench::bench;
pub use decompose::{decompose, ResultFile, RESULT_FILE};
pub use evaluate::{evaluate, MetricRow, SummaryRow};
pub use synth::synth;
pub use train::{checkpoint_names, train};

/// Flags shared by every subcommand; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<String>,
    pub n_components: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub epsilon: Option<f64>,
}

/// A config with the overrides folded in.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub kind: MethodKind,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub epsilon: f64,
}

impl Context {
    pub fn new(mut cfg: RunConfig, o: Overrides) -> CliResult<Self> {
        if let Some(m) = o.method {
            cfg.method = m;
        }
        if let Some(n) = o.n_components {
            cfg.decompose.n_components = n;
        }
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(p) = o.dataset {
            cfg.paths.dataset = Some(p);
        }
        if let Some(p) = o.checkpoints {
            cfg.paths.checkpoints = Some(p);
        }
        cfg.validate()?;
        let epsilon = o.epsilon.unwrap_or(DEFAULT_EPSILON);
        if !(epsilon >= 0.0) {
            return Err(CliError::Config("--epsilon must be >= 0".into()));
        }
        let jobs = o.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        Ok(Self { kind: cfg.method_kind()?, cfg, out: o.out, jobs, epsilon })
    }

    /// `--out` if given, else the config path `fallback`.
    fn out_dir(&self, fallback: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
        self.out.clone().or_else(|| fallback.clone()).ok_or_else(|| CliError::Config(format!("no {what} directory: pass --out or set it under [paths]")))
    }

    fn dataset_path(&self) -> CliResult<&Path> {
        self.cfg.paths.dataset.as_deref().ok_or_else(|| CliError::Config("no dataset: set paths.dataset or pass --dataset".into()))
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_csv<S: serde::Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Runs `f` over `items` on up to `jobs` threads. Results keep input order,
/// so output never depends on scheduling.
fn parallel_map<I: Sync, R: Send>(items: &[I], jobs: usize, f: impl Fn(&I) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every item ran")).collect()
}
