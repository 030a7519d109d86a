use std::path::{Path, PathBuf};

use dds_core::decompose::MethodKind;
use serde::Serialize;

use super::{create_dir, parallel_map, write_csv, Context};
use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};
use crate::format::ddsf;
use crate::pipeline::{self, EpochRow};

/// Checkpoint base names `kind` needs, in load order.
pub fn checkpoint_names(kind: MethodKind, k: usize) -> Vec<String> {
    match kind {
        MethodKind::Nmf => Vec::new(),
        MethodKind::Dds1 | MethodKind::Dds2 => (0..k).map(|s| format!("source{s:02}")).collect(),
        MethodKind::Dds3 => vec!["conditional".into()],
    }
}

#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    lr: f64,
    wall_ms: f64,
}

fn write_log(path: &Path, log: &[EpochRow]) -> CliResult<()> {
    let rows: Vec<LogLine> = log.iter().map(|r| LogLine { epoch: r.epoch, train_loss: r.train_loss, val_loss: r.val_loss, lr: r.lr, wall_ms: r.wall_ms }).collect();
    write_csv(path, &rows)
}

/// Trains and writes `<name>.ddsf` plus `<name>_log.csv` per model. Logs
/// are written even when training fails.
pub fn train(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let dir = ctx.out_dir(&ctx.cfg.paths.checkpoints, "checkpoint")?;
    let ds = Dataset::load(ctx.dataset_path()?)?;
    if ctx.kind == MethodKind::Nmf {
        log::info!("nmf has no models to train");
        return Ok(Vec::new());
    }
    create_dir(&dir)?;
    let jobs = pipeline::train_jobs(ctx.kind, ds.k);
    let runs = parallel_map(&jobs, ctx.jobs, |&source| pipeline::train_one(&ds, &ctx.cfg.train, ctx.cfg.seed, source));
    let mut written = Vec::new();
    let mut first_err: Option<CliError> = None;
    for run in runs {
        write_log(&dir.join(format!("{}_log.csv", run.name)), &run.log)?;
        match run.outcome {
            Ok(outcome) => {
                let path = dir.join(format!("{}.ddsf", run.name));
                ddsf::save(&path, &outcome.model)?;
                log::info!("{}: best epoch {} validation loss {:.4}", run.name, outcome.best_epoch, outcome.best_val_loss);
                written.push(path);
            }
            Err(e) => {
                log::error!("{}: {e}", run.name);
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(written),
    }
}
