use std::path::{Path, PathBuf};

use dds_core::decompose::MethodKind;
use dds_core::flows::FlowModel;
use serde::{Deserialize, Serialize};

use super::{create_dir, parallel_map, train::checkpoint_names, write_csv, write_json, Context};
use crate::config::DecomposeSection;
use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};
use crate::format::{ddsf, ddsm};
use crate::pipeline::{self, Sample, TrainedModels};

pub const RESULT_FILE: &str = "result.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psa: f64,
    pub l0_eps: f64,
    pub recon_error: Option<f64>,
    pub epsilon: f64,
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub method: String,
    /// Index of the test snippet in the dataset manifest.
    pub snippet: usize,
    pub seed: u64,
    pub dictionary_columns: usize,
    pub steps_run: usize,
    pub lr_reductions: usize,
    pub stopped_early: bool,
    pub final_objective: f64,
    pub wall_ms: f64,
    pub config: DecomposeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

#[derive(Serialize)]
struct TraceLine {
    step: usize,
    objective: f64,
    recon: f64,
    mle: f64,
    lr: f64,
}

fn load_models(dir: Option<&Path>, kind: MethodKind, ds: &Dataset) -> CliResult<TrainedModels> {
    let names = checkpoint_names(kind, ds.k);
    if names.is_empty() {
        return Ok(TrainedModels::None);
    }
    let dir = dir.ok_or_else(|| CliError::Config(format!("{kind} needs checkpoints: set paths.checkpoints or pass --checkpoints")))?;
    let mut models: Vec<FlowModel<Sample>> = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(format!("{name}.ddsf"));
        if !path.exists() {
            return Err(CliError::Config(format!("incompatible checkpoint: {kind} expects {}", path.display())));
        }
        models.push(ddsf::load(&path)?);
    }
    pipeline::bundle(kind, models, ds.k, ds.d)
}

/// Decomposes every test snippet; writes one directory per snippet under
/// `<out>/<method>/` and returns those directories.
pub fn decompose(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let out = ctx.out_dir(&ctx.cfg.paths.results, "results")?.join(ctx.kind.tag());
    let ds = Dataset::load(ctx.dataset_path()?)?;
    if ds.snippets.is_empty() {
        return Err(CliError::Config("nothing to decompose: the dataset has no test snippets".into()));
    }
    let models = load_models(ctx.cfg.paths.checkpoints.as_deref(), ctx.kind, &ds)?;
    let dcfg = ctx.cfg.decompose.config(ctx.kind, ctx.cfg.seed)?;
    let indices: Vec<usize> = (0..ds.snippets.len()).collect();
    let runs = parallel_map(&indices, ctx.jobs, |&i| -> CliResult<PathBuf> {
        let r = pipeline::decompose_snippet(&ds, &ds.snippets[i], ctx.kind, &models, &dcfg)?;
        let dir = out.join(format!("snippet{i:03}"));
        create_dir(&dir)?;
        ddsm::save(&dir.join("h_source.ddsm"), &r.h_source)?;
        ddsm::save(&dir.join("s_hat.ddsm"), &r.s_hat)?;
        let trace: Vec<TraceLine> = r.objective_trace.iter().map(|t| TraceLine { step: t.step, objective: t.objective, recon: t.recon, mle: t.mle, lr: t.lr }).collect();
        write_csv(&dir.join("objective_trace.csv"), &trace)?;
        let result = ResultFile {
            method: ctx.kind.tag().into(),
            snippet: i,
            seed: ctx.cfg.seed,
            dictionary_columns: r.w_final.cols(),
            steps_run: r.steps_run,
            lr_reductions: r.lr_reductions,
            stopped_early: r.stopped_early,
            final_objective: r.objective_trace.last().map_or(f64::NAN, |t| t.objective),
            wall_ms: r.wall_ms,
            config: ctx.cfg.decompose.clone(),
            metrics: None,
        };
        write_json(&dir.join(RESULT_FILE), &result)?;
        log::info!("{} snippet {i}: {} steps, objective {:.4}", ctx.kind, r.steps_run, result.final_objective);
        Ok(dir)
    });
    runs.into_iter().collect()
}
