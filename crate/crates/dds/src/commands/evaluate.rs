use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::decompose::{Metrics, ResultFile, RESULT_FILE};
use super::{write_csv, write_json, Context};
use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};
use crate::format::ddsm;
use crate::pipeline::{self, Sample};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    /// Run directory relative to the results root.
    pub run: String,
    pub method: String,
    pub snippet: usize,
    pub psa: f64,
    pub l0_eps: f64,
    pub recon_error: Option<f64>,
    pub epsilon: f64,
}

/// Per-method means, ranked by PSA (best first).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub rank: usize,
    pub method: String,
    pub runs: usize,
    pub mean_psa: f64,
    pub mean_l0_eps: f64,
    pub mean_recon_error: Option<f64>,
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if p.join(RESULT_FILE).is_file() {
                out.push(p);
            } else {
                find_runs(&p, out)?;
            }
        }
    }
    Ok(())
}

fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut by_method: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    let mut out: Vec<SummaryRow> = by_method
        .into_iter()
        .map(|(method, rs)| {
            let n = rs.len() as f64;
            let recon: Option<Vec<f64>> = rs.iter().map(|r| r.recon_error).collect();
            SummaryRow {
                rank: 0,
                method: method.into(),
                runs: rs.len(),
                mean_psa: rs.iter().map(|r| r.psa).sum::<f64>() / n,
                mean_l0_eps: rs.iter().map(|r| r.l0_eps).sum::<f64>() / n,
                mean_recon_error: recon.map(|v| v.iter().sum::<f64>() / n),
            }
        })
        .collect();
    out.sort_by(|a, b| b.mean_psa.total_cmp(&a.mean_psa).then_with(|| a.method.cmp(&b.method)));
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    out
}

/// Scores every run under the results directory, writes `metrics.csv` and
/// `summary.csv` there and records the metrics in each `result.json`.
pub fn evaluate(ctx: &Context) -> CliResult<(Vec<MetricRow>, Vec<SummaryRow>)> {
    let root = ctx.out_dir(&ctx.cfg.paths.results, "results")?;
    let ds = Dataset::load(ctx.dataset_path()?)?;
    let mut runs = Vec::new();
    find_runs(&root, &mut runs)?;
    if runs.is_empty() {
        return Err(CliError::Config(format!("no results under {}", root.display())));
    }
    let mut rows = Vec::new();
    for dir in runs {
        let json = dir.join(RESULT_FILE);
        let text = fs::read_to_string(&json).map_err(|e| CliError::io(&json, e))?;
        let mut result: ResultFile = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", json.display())))?;
        let Some(roll) = ds.snippets.get(result.snippet).and_then(|s| s.roll.as_ref()) else {
            log::warn!("{}: no ground truth for snippet {}, skipped", dir.display(), result.snippet);
            continue;
        };
        let h: dds_core::Matrix<Sample> = ddsm::load(&dir.join("h_source.ddsm"))?;
        let s_hat_path = dir.join("s_hat.ddsm");
        let s_hat: Option<dds_core::Matrix<Sample>> = if s_hat_path.is_file() { Some(ddsm::load(&s_hat_path)?) } else { None };
        let spec = &ds.snippets[result.snippet].spectrogram;
        let report = pipeline::evaluate_result(&h, roll, spec, s_hat.as_ref(), ctx.epsilon)?;
        result.metrics = Some(Metrics { psa: report.psa, l0_eps: report.l0_eps, recon_error: report.recon_error, epsilon: report.epsilon });
        write_json(&json, &result)?;
        let run = dir.strip_prefix(&root).unwrap_or(&dir).display().to_string();
        rows.push(MetricRow { run, method: result.method, snippet: result.snippet, psa: report.psa, l0_eps: report.l0_eps, recon_error: report.recon_error, epsilon: report.epsilon });
    }
    let summary = summarize(&rows);
    write_csv(&root.join("metrics.csv"), &rows)?;
    write_csv(&root.join("summary.csv"), &summary)?;
    for s in &summary {
        log::info!("#{} {}: psa {:.4} l0 {:.4} over {} runs", s.rank, s.method, s.mean_psa, s.mean_l0_eps, s.runs);
    }
    Ok((rows, summary))
}
