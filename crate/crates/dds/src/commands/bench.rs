use std::path::PathBuf;

use dds_core::decompose::MethodKind;

use super::{create_dir, write_csv, write_json, Context};
use crate::bench::{self, BenchReport};
use crate::error::CliResult;

/// Runs the sweeps for all four methods; writes `bench.csv`,
/// `slopes.csv` and `bench.json`.
pub fn bench(ctx: &Context) -> CliResult<(BenchReport, PathBuf)> {
    let dir = ctx.out_dir(&ctx.cfg.paths.results, "results")?;
    create_dir(&dir)?;
    let report = bench::run(&ctx.cfg.bench, &MethodKind::ALL)?;
    write_csv(&dir.join("bench.csv"), &report.rows)?;
    write_csv(&dir.join("slopes.csv"), &report.slopes)?;
    write_json(&dir.join("bench.json"), &report)?;
    for s in &report.slopes {
        log::info!("{} {} vs {}: slope {:.3}", s.method, s.measure, s.parameter.name(), s.slope);
    }
    Ok((report, dir))
}
