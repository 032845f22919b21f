//! JSON reports and CSV tables written by the commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use loanscore_core::pipeline::{
    Approach, ApproachResult, ClassificationMetrics, Comparison, Gate, RegressionMetrics, ScoredLoan,
};
use loanscore_core::widedeep::TrainReport;
use serde::Serialize;

use crate::artifact::FORMAT_VERSION;
use crate::config::RunConfig;
use crate::io::IngestError;

/// Provenance block at the top of every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportHeader {
    pub tool: &'static str,
    pub version: &'static str,
    pub artifact_format: u32,
    pub command: String,
    pub config: BTreeMap<String, String>,
}

impl ReportHeader {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            artifact_format: FORMAT_VERSION,
            command: command.to_string(),
            config: config.entries().into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproachSummary {
    pub approach: Approach,
    pub number: u8,
    pub requested: usize,
    pub selected: usize,
    pub shortfall: bool,
    pub average_actual_irr: Option<f64>,
}

impl From<&ApproachResult> for ApproachSummary {
    fn from(r: &ApproachResult) -> Self {
        Self {
            approach: r.approach,
            number: r.approach.number(),
            requested: r.requested,
            selected: r.selected.len(),
            shortfall: r.shortfall,
            average_actual_irr: r.average_actual_irr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub components: String,
    pub resample: String,
    pub metrics: ClassificationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionCell {
    pub components: String,
    pub metrics: RegressionMetrics,
}

/// Write `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn csv_file(path: &Path) -> Result<csv::Writer<fs::File>, IngestError> {
    Ok(csv::Writer::from_writer(crate::io::create(path)?))
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<(), IngestError> {
    w.flush().map_err(|e| IngestError::Csv(e.into()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `step,loss[,validation_loss]`; validation is filled on the steps where
/// it was measured.
pub fn write_loss_curve(path: &Path, report: &TrainReport) -> Result<(), IngestError> {
    let mut w = csv_file(path)?;
    w.write_record(["step", "loss", "validation_loss"])?;
    let validation: BTreeMap<usize, f64> = report.validation_curve.iter().copied().collect();
    for (i, loss) in report.loss_curve.iter().enumerate() {
        let step = i + 1;
        w.write_record([step.to_string(), loss.to_string(), opt(validation.get(&step).copied())])?;
    }
    finish(w)
}

/// Per-loan listing of each approach's picks, in rank order.
pub fn write_selections(path: &Path, comparison: &Comparison) -> Result<(), IngestError> {
    let mut w = csv_file(path)?;
    w.write_record(["approach", "rank", "loan_id", "score", "actual_irr", "grade"])?;
    for r in &comparison.results {
        for (rank, c) in r.selected.iter().enumerate() {
            w.write_record([
                r.approach.number().to_string(),
                (rank + 1).to_string(),
                c.loan_id.clone(),
                c.score.to_string(),
                opt(c.actual_irr),
                c.grade.clone(),
            ])?;
        }
    }
    finish(w)
}

/// Actual IRR against each approach's score for every scored test loan.
pub fn write_scatter(path: &Path, comparison: &Comparison) -> Result<(), IngestError> {
    let mut w = csv_file(path)?;
    w.write_record(["approach", "loan_id", "actual_irr", "score"])?;
    for p in &comparison.scatter {
        w.write_record([p.approach.number().to_string(), p.loan_id.clone(), p.actual_irr.to_string(), p.score.to_string()])?;
    }
    finish(w)
}

/// Scored listings. `actual_irr` is written only when `with_actual`.
pub fn write_scored<W: Write>(writer: W, scored: &[ScoredLoan], with_actual: bool) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["loan_id", "pd", "gate", "predicted_irr", "unseen_levels"];
    if with_actual {
        header.push("actual_irr");
    }
    w.write_record(&header)?;
    for s in scored {
        let gate = match s.gate {
            Gate::Passed => "passed",
            Gate::Filtered => "filtered",
        };
        let unseen = s.unseen.iter().map(|f| f.name()).collect::<Vec<_>>().join(";");
        let mut row = vec![s.loan_id.clone(), s.pd.to_string(), gate.to_string(), opt(s.predicted_irr), unseen];
        if with_actual {
            row.push(opt(s.actual_irr));
        }
        w.write_record(&row)?;
    }
    finish(w)
}
