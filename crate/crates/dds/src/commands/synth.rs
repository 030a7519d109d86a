use std::path::PathBuf;

use super::{create_dir, Context};
use crate::dataset::Dataset;
use crate::error::CliResult;

/// Writes the synthetic corpus and returns the manifest path.
pub fn synth(ctx: &Context) -> CliResult<PathBuf> {
    let dir = ctx.out_dir(&ctx.cfg.paths.dataset, "dataset")?;
    create_dir(&dir)?;
    let ds = Dataset::synthesize(&ctx.cfg.synth, ctx.cfg.seed)?;
    let manifest = ds.save(&dir, &ctx.cfg.synth, ctx.cfg.seed)?;
    log::info!("wrote {} notes and {} test snippets to {}", ds.notes.len(), ds.snippets.len(), dir.display());
    Ok(manifest)
}
