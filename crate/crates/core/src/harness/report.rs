//! Report structures and artifact writing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::ClientRoundLog;
use crate::harness::eval::{AblationTable, PipelineReport, SweepRow};
use crate::harness::ExperimentConfig;
use crate::metrics::MetricReport;

/// Corpus statistics carried into the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DatasetSummary {
    pub catalog_items: usize,
    /// Post-filter interaction count (zero for synthetic corpora, which
    /// produce sequences directly).
    pub interactions: usize,
    pub sequences: usize,
    pub skipped_users: usize,
    pub clients: usize,
    pub test_users: usize,
}

/// Deterministic run output; serialized verbatim to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: DatasetSummary,
    pub lambda: f64,
    pub pipeline: PipelineReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTable>,
}

/// Paths and parsed results of a completed run.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub out_dir: PathBuf,
    pub report: ExperimentReport,
    pub report_json: PathBuf,
}

fn metric_line(label: &str, report: &MetricReport) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    };
    format!(
        "{label:<28}  {:>8}  {:>8}  {:>8}  {:>8}  (users: {})\n",
        fmt(report.recall_at_5),
        fmt(report.ndcg_at_5),
        fmt(report.recall_at_10),
        fmt(report.ndcg_at_10),
        report.user_count,
    )
}

/// Human-readable rendering of the full report.
pub fn format_report_text(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let d = &report.dataset;
    out.push_str(&format!(
        "dataset: {} items, {} sequences ({} clients, {} test users)\n",
        d.catalog_items, d.sequences, d.clients, d.test_users
    ));
    out.push_str(&format!("lambda: {:.2}\n\n", report.lambda));
    out.push_str(&format!(
        "{:<28}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "", "R@5", "N@5", "R@10", "N@10"
    ));
    out.push_str(&metric_line("stage-1 (full ranking)", &report.pipeline.stage1));
    if let Some(two) = &report.pipeline.stage2 {
        out.push_str(&metric_line("stage-2 fallback-inclusive", &two.inclusive));
        out.push_str(&metric_line("stage-2 paper-filtered", &two.filtered));
        out.push_str(&format!(
            "stage-2 outcomes: {} reranked, {} fallback, {} skipped\n",
            two.counts.reranked, two.counts.fallback, two.counts.skipped
        ));
    }
    if let Some(sweep) = &report.sweep {
        out.push_str("\nlambda sweep (stage 1):\n");
        out.push_str(&format!(
            "{:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n",
            "lambda", "R@5", "N@5", "R@10", "N@10"
        ));
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        for row in sweep {
            out.push_str(&format!(
                "{:>8.2}  {:>8}  {:>8}  {:>8}  {:>8}\n",
                row.lambda,
                fmt(row.stage1.recall_at_5),
                fmt(row.stage1.ndcg_at_5),
                fmt(row.stage1.recall_at_10),
                fmt(row.stage1.ndcg_at_10),
            ));
        }
    }
    if let Some(table) = &report.ablation {
        out.push_str("\nablation:\n");
        out.push_str(&table.format_text());
    }
    out
}

pub(crate) fn write_report(
    json_path: &Path,
    text_path: &Path,
    report: &ExperimentReport,
) -> Result<()> {
    let display = json_path.display().to_string();
    let file = File::create(json_path).map_err(|e| Error::io(&display, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, report)?;
    writer
        .write_all(b"\n")
        .map_err(|e| Error::io(&display, e))?;

    let display = text_path.display().to_string();
    std::fs::write(text_path, format_report_text(report))
        .map_err(|e| Error::io(&display, e))?;
    Ok(())
}

/// Training log: one JSON line per (round, client) with losses and wall
/// time. Wall times are why this file is not byte-reproducible; the report
/// files are.
pub(crate) fn write_training_log(path: &Path, logs: &[ClientRoundLog]) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut writer = BufWriter::new(file);
    for log in logs {
        serde_json::to_writer(&mut writer, log)?;
        writer.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunManifest {
    config_hash: String,
    seed: u64,
    version: String,
    config: ExperimentConfig,
}

pub(crate) fn write_manifest(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let manifest = RunManifest {
        config_hash: cfg.content_hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
    };
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(())
}
