//! The six commands behind the CLI. Each takes a resolved [`RunConfig`],
//! writes its artifacts under `out_dir` and returns a short summary.

use std::fs;
use std::path::{Path, PathBuf};

use loanscore_core::cohort::{attach_cashflows, filter_cohort, split_train_test, summarize, AttachReport, CohortError, Summary};
use loanscore_core::domain::{DatasetSplit, LoanRecord};
use loanscore_core::features::FeatureError;
use loanscore_core::irr::{assign_irr, IrrConfig};
use loanscore_core::pipeline::{
    eval_classification, eval_regression, irr_samples, run_experiment, score_loans, train_two_stage, ClassificationMetrics,
    Experiment, PipelineConfig, PipelineError, RegressionMetrics, TrainingSummary, TwoStageModel,
};
use loanscore_core::resample::ResampleMethod;
use loanscore_core::synth::{gen_synthetic, SynthError};
use loanscore_core::widedeep::{self, Components};
use serde::Serialize;
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::config::{ConfigError, RunConfig};
use crate::io::{self, IngestError, Reject};
use crate::report::{self, ApproachSummary, GridCell, RegressionCell, ReportHeader};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Data(String),
    #[error("training failed: {0}")]
    Training(#[from] PipelineError),
}

impl From<SynthError> for CommandError {
    fn from(e: SynthError) -> Self {
        CommandError::Config(ConfigError::BadValue { key: "synth".into(), value: String::new(), reason: e.to_string() })
    }
}

impl From<CohortError> for CommandError {
    fn from(e: CohortError) -> Self {
        CommandError::Data(e.to_string())
    }
}

impl CommandError {
    /// 1 usage, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 1,
            CommandError::Ingest(_) | CommandError::Artifact(_) | CommandError::Data(_) => 2,
            CommandError::Training(PipelineError::MissingLabel(_))
            | CommandError::Training(PipelineError::Feature(FeatureError::EmptyInput)) => 2,
            CommandError::Training(PipelineError::BadGamma(_)) => 1,
            CommandError::Training(_) => 3,
        }
    }
}

fn out_path(config: &RunConfig, name: &str) -> Result<PathBuf, CommandError> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|source| IngestError::Io { path: config.out_dir.clone(), source })?;
    Ok(config.out_dir.join(name))
}

/// Where the cohort came from and what was dropped on the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CohortReport {
    pub source: String,
    pub rows_loaded: usize,
    pub rejected_rows: usize,
    pub outside_years: usize,
    pub attach: Option<AttachReport>,
    pub irr_total_loss: usize,
    pub irr_failures: usize,
    /// Loans lacking a status or an IRR, left out of training and evaluation.
    pub unlabeled: usize,
    pub loans: usize,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub loans: Vec<LoanRecord>,
    pub rejects: Vec<Reject>,
    pub report: CohortReport,
}

/// Load (or synthesize) the cohort: read loans, join payments, label IRR,
/// apply the issue-year filter.
pub fn load_cohort(config: &RunConfig) -> Result<Cohort, CommandError> {
    let mut report = CohortReport::default();
    let (loans, rejects) = match &config.loans {
        Some(path) => {
            let loaded = io::load_loans(path, &config.columns)?;
            report.source = path.display().to_string();
            report.rows_loaded = loaded.loans.len() + count_rows(&loaded.rejects);
            report.rejected_rows = count_rows(&loaded.rejects);
            let mut loans = loaded.loans;
            if let Some(p) = &config.payments {
                let payments = io::load_payments(p)?;
                let (attached, attach) = attach_cashflows(loans, &payments);
                loans = attached;
                let irr = assign_irr(&mut loans, &IrrConfig::default());
                report.attach = Some(attach);
                report.irr_total_loss = irr.total_loss;
                report.irr_failures = irr.failures.len();
            }
            (loans, loaded.rejects)
        }
        None => {
            let loans = gen_synthetic(&config.synth)?;
            report.source = format!("synthetic(n={}, seed={})", config.synth.n_loans, config.synth.seed);
            report.rows_loaded = loans.len();
            (loans, Vec::new())
        }
    };
    let kept = filter_cohort(&loans, config.min_year, config.max_year);
    report.outside_years = loans.len() - kept.len();
    report.loans = kept.len();
    Ok(Cohort { loans: kept, rejects, report })
}

fn count_rows(rejects: &[Reject]) -> usize {
    let mut rows: Vec<usize> = rejects.iter().map(|r| r.row).collect();
    rows.dedup();
    rows.len()
}

/// Labeled loans split into train and test.
pub fn labeled_split(config: &RunConfig, cohort: &mut Cohort) -> Result<DatasetSplit, CommandError> {
    let labeled: Vec<LoanRecord> =
        cohort.loans.iter().filter(|l| l.status.is_some() && l.irr.is_some()).cloned().collect();
    cohort.report.unlabeled = cohort.loans.len() - labeled.len();
    if labeled.is_empty() {
        return Err(CommandError::Data(
            "no loan has both a status and an IRR; supply data.payments with the loans".into(),
        ));
    }
    Ok(split_train_test(&labeled, config.train_fraction, config.split_seed)?)
}

fn write_rejects(config: &RunConfig, rejects: &[Reject]) -> Result<(), CommandError> {
    if !rejects.is_empty() {
        io::write_rejects(io::create(&out_path(config, "rejects.csv")?)?, rejects)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthOutput {
    pub loans: PathBuf,
    pub payments: PathBuf,
    pub rows: usize,
}

/// Generate a synthetic cohort and write `loans.csv` and `payments.csv`.
pub fn cmd_synth(config: &RunConfig) -> Result<SynthOutput, CommandError> {
    let loans = gen_synthetic(&config.synth)?;
    let loans_path = out_path(config, "loans.csv")?;
    let payments_path = out_path(config, "payments.csv")?;
    io::write_loans(io::create(&loans_path)?, &loans)?;
    io::write_payments(io::create(&payments_path)?, &loans)?;
    Ok(SynthOutput { loans: loans_path, payments: payments_path, rows: loans.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescribeReport {
    pub header: ReportHeader,
    pub cohort: CohortReport,
    pub summary: Summary,
}

pub fn cmd_describe(config: &RunConfig) -> Result<DescribeReport, CommandError> {
    let cohort = load_cohort(config)?;
    write_rejects(config, &cohort.rejects)?;
    let summary = summarize(&cohort.loans)?;
    let report = DescribeReport { header: ReportHeader::new("describe", config), cohort: cohort.report, summary };
    report::write_json(&out_path(config, "describe.json")?, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummaryReport {
    pub header: ReportHeader,
    pub cohort: CohortReport,
    pub train_rows: usize,
    pub test_rows: usize,
    pub stage1_rows: usize,
    pub stage1_defaults: usize,
    pub stage2_rows: usize,
    pub stage1_final_loss: Option<f64>,
    pub stage2_final_loss: Option<f64>,
}

fn write_curves(config: &RunConfig, training: &TrainingSummary) -> Result<(), CommandError> {
    report::write_loss_curve(&out_path(config, "stage1_loss.csv")?, &training.stage1)?;
    report::write_loss_curve(&out_path(config, "stage2_loss.csv")?, &training.stage2)?;
    Ok(())
}

/// Train both stages on the training split; write the two model files and
/// their loss curves.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummaryReport, CommandError> {
    let mut cohort = load_cohort(config)?;
    write_rejects(config, &cohort.rejects)?;
    let split = labeled_split(config, &mut cohort)?;
    let (model, training) = train_two_stage(&split.train, &config.pipeline)?;
    artifact::save_model(&out_path(config, "stage1.model")?, &model.stage1, &model.schema)?;
    artifact::save_model(&out_path(config, "stage2.model")?, &model.stage2, &model.schema)?;
    write_curves(config, &training)?;
    let report = TrainSummaryReport {
        header: ReportHeader::new("train", config),
        cohort: cohort.report,
        train_rows: split.train.len(),
        test_rows: split.test.len(),
        stage1_rows: training.stage1_rows,
        stage1_defaults: training.stage1_defaults,
        stage2_rows: training.stage2_rows,
        stage1_final_loss: training.stage1.loss_curve.last().copied(),
        stage2_final_loss: training.stage2.loss_curve.last().copied(),
    };
    report::write_json(&out_path(config, "train.json")?, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub header: ReportHeader,
    pub cohort: CohortReport,
    pub gamma: f64,
    pub classification: Vec<GridCell>,
    pub regression: Vec<RegressionCell>,
}

const GRID_COMPONENTS: [Components; 3] = [Components::Wide, Components::Deep, Components::WideAndDeep];
const GRID_RESAMPLING: [ResampleMethod; 3] =
    [ResampleMethod::Undersample, ResampleMethod::Oversample, ResampleMethod::Smote];

/// Stage-1 metrics for one (components, resampling) cell.
pub fn classification_cell(
    split: &DatasetSplit,
    pipeline: &PipelineConfig,
    components: Components,
    method: ResampleMethod,
) -> Result<ClassificationMetrics, CommandError> {
    let mut p = pipeline.clone();
    p.stage1.components = components;
    p.resample.method = method;
    let schema = loanscore_core::features::fit_schema(&split.train, &p.schema).map_err(PipelineError::from)?;
    let samples = loanscore_core::pipeline::pd_samples(&schema, &split.train)?;
    let set = loanscore_core::resample::resample(&samples, &p.resample).map_err(PipelineError::from)?;
    let mut params = widedeep::init_params(&schema, &p.stage1);
    widedeep::train(&mut params, &set, &p.stage1).map_err(PipelineError::from)?;
    Ok(eval_classification(&params, &schema, &split.test, p.gamma)?)
}

/// Stage-2 test MSE for one components setting.
pub fn regression_cell(
    split: &DatasetSplit,
    pipeline: &PipelineConfig,
    components: Components,
) -> Result<RegressionMetrics, CommandError> {
    let mut t = pipeline.stage2.clone();
    t.components = components;
    let schema = loanscore_core::features::fit_schema(&split.train, &pipeline.schema).map_err(PipelineError::from)?;
    let set = irr_samples(&schema, &split.train);
    let mut params = widedeep::init_params(&schema, &t);
    widedeep::train(&mut params, &set, &t).map_err(PipelineError::from)?;
    Ok(eval_regression(&params, &schema, &split.test)?)
}

/// Classification grid over {wide, deep, wide&deep} x {under, over, smote}
/// and the stage-2 MSE of each component setting.
pub fn cmd_evaluate(config: &RunConfig) -> Result<EvaluateReport, CommandError> {
    let mut cohort = load_cohort(config)?;
    write_rejects(config, &cohort.rejects)?;
    let split = labeled_split(config, &mut cohort)?;
    let mut classification = Vec::new();
    for components in GRID_COMPONENTS {
        for method in GRID_RESAMPLING {
            classification.push(GridCell {
                components: components.as_str().to_string(),
                resample: method.as_str().to_string(),
                metrics: classification_cell(&split, &config.pipeline, components, method)?,
            });
        }
    }
    let mut regression = Vec::new();
    for components in GRID_COMPONENTS {
        regression.push(RegressionCell {
            components: components.as_str().to_string(),
            metrics: regression_cell(&split, &config.pipeline, components)?,
        });
    }
    let report = EvaluateReport {
        header: ReportHeader::new("evaluate", config),
        cohort: cohort.report,
        gamma: config.pipeline.gamma,
        classification,
        regression,
    };
    report::write_json(&out_path(config, "evaluate.json")?, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub header: ReportHeader,
    pub cohort: CohortReport,
    pub train_rows: usize,
    pub test_rows: usize,
    pub stage1: ClassificationMetrics,
    pub logistic: ClassificationMetrics,
    pub stage2: RegressionMetrics,
    pub approaches: Vec<ApproachSummary>,
}

/// Train the two-stage model and both comparison scorers, then compare
/// their top-k picks on the test split.
pub fn cmd_compare(config: &RunConfig) -> Result<(CompareReport, Experiment), CommandError> {
    let mut cohort = load_cohort(config)?;
    write_rejects(config, &cohort.rejects)?;
    let split = labeled_split(config, &mut cohort)?;
    let experiment = run_experiment(&split.train, &split.test, &config.pipeline)?;
    write_curves(config, &experiment.training)?;
    report::write_selections(&out_path(config, "selections.csv")?, &experiment.comparison)?;
    report::write_scatter(&out_path(config, "scatter.csv")?, &experiment.comparison)?;
    let report = CompareReport {
        header: ReportHeader::new("compare", config),
        cohort: cohort.report,
        train_rows: split.train.len(),
        test_rows: split.test.len(),
        stage1: experiment.stage1_metrics,
        logistic: experiment.logistic_metrics,
        stage2: experiment.stage2_metrics,
        approaches: experiment.comparison.results.iter().map(ApproachSummary::from).collect(),
    };
    report::write_json(&out_path(config, "compare.json")?, &report)?;
    Ok((report, experiment))
}

/// Load the two stage files from `dir` into a scorer with `gamma`.
pub fn load_two_stage(dir: &Path, gamma: f64) -> Result<TwoStageModel, CommandError> {
    let stage1 = artifact::load_model(&dir.join("stage1.model"))?;
    let stage2 = artifact::load_model(&dir.join("stage2.model"))?;
    if stage1.schema != stage2.schema {
        return Err(CommandError::Data("stage1.model and stage2.model were fitted on different schemas".into()));
    }
    Ok(TwoStageModel { schema: stage1.schema, stage1: stage1.params, stage2: stage2.params, gamma })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreOutput {
    pub scored: PathBuf,
    pub rows: usize,
    pub passed: usize,
    pub rejected_rows: usize,
}

/// Score listings with saved models; writes `scored.csv`.
pub fn cmd_score(config: &RunConfig) -> Result<ScoreOutput, CommandError> {
    let dir = config.model_dir.as_ref().ok_or_else(|| {
        CommandError::Config(ConfigError::BadValue {
            key: "model_dir".into(),
            value: String::new(),
            reason: "score needs --model".into(),
        })
    })?;
    let listings = config.listings.as_ref().ok_or_else(|| {
        CommandError::Config(ConfigError::BadValue {
            key: "data.listings".into(),
            value: String::new(),
            reason: "score needs --listings".into(),
        })
    })?;
    let model = load_two_stage(dir, config.pipeline.gamma)?;
    let loaded = io::load_loans(listings, &config.columns)?;
    write_rejects(config, &loaded.rejects)?;
    let scored = score_loans(&model, &loaded.loans)?;
    let path = out_path(config, "scored.csv")?;
    report::write_scored(io::create(&path)?, &scored, false)?;
    Ok(ScoreOutput {
        scored: path,
        rows: scored.len(),
        passed: scored.iter().filter(|s| s.predicted_irr.is_some()).count(),
        rejected_rows: count_rows(&loaded.rejects),
    })
}
