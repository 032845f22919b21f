//! The two-stage scorer, the top-k selection rules for the three lending
//! approaches, and the evaluation metrics.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, CartConfig, CartError, CartNode};
use crate::domain::{LoanRecord, LoanStatus};
use crate::features::{fit_schema, CategoricalFeature, FeatureError, FeatureSchema, SchemaConfig};
use crate::resample::{resample, ResampleError, ResamplePlan};
use crate::widedeep::{self, ModelError, ModelParams, Sample, TrainConfig, TrainReport};

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cart(#[from] CartError),
    #[error("loan {0} has no outcome label")]
    MissingLabel(String),
    #[error("gamma must be in [0, 1], got {0}")]
    BadGamma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema: SchemaConfig,
    /// Rebalancing of the stage-1 (and logistic baseline) training set.
    pub resample: ResamplePlan,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub gamma: f64,
    pub cart: CartConfig,
    pub top_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: SchemaConfig::default(),
            resample: ResamplePlan::default(),
            stage1: TrainConfig::classification(),
            stage2: TrainConfig { seed: 1, ..TrainConfig::regression() },
            gamma: DEFAULT_GAMMA,
            cart: CartConfig::default(),
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PipelineError::BadGamma(self.gamma));
        }
        self.stage1.validate()?;
        self.stage2.validate()?;
        Ok(())
    }
}

/// Stage-1 samples: every loan with a status, target 1 for Default.
pub fn pd_samples(schema: &FeatureSchema, loans: &[LoanRecord]) -> Result<Vec<Sample>, PipelineError> {
    loans
        .iter()
        .map(|l| {
            let status = l.status.ok_or_else(|| PipelineError::MissingLabel(l.loan_id.clone()))?;
            Ok(Sample { input: schema.encode(l), target: status.default_label() })
        })
        .collect()
}

/// Stage-2 samples: loans with a strictly positive IRR.
pub fn irr_samples(schema: &FeatureSchema, loans: &[LoanRecord]) -> Vec<Sample> {
    loans
        .iter()
        .filter_map(|l| l.irr.filter(|&r| r > 0.0).map(|r| Sample { input: schema.encode(l), target: r }))
        .collect()
}

/// Both stages and the gate. The two networks share one schema fitted on
/// the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    pub schema: FeatureSchema,
    pub stage1: ModelParams,
    pub stage2: ModelParams,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub stage1_rows: usize,
    pub stage1_defaults: usize,
    pub stage2_rows: usize,
    pub stage1: TrainReport,
    pub stage2: TrainReport,
}

pub fn train_two_stage(
    train: &[LoanRecord],
    config: &PipelineConfig,
) -> Result<(TwoStageModel, TrainingSummary), PipelineError> {
    config.validate()?;
    let schema = fit_schema(train, &config.schema)?;
    let stage1_set = resample(&pd_samples(&schema, train)?, &config.resample)?;
    let mut stage1 = widedeep::init_params(&schema, &config.stage1);
    let stage1_report = widedeep::train(&mut stage1, &stage1_set, &config.stage1)?;

    let stage2_set = irr_samples(&schema, train);
    let mut stage2 = widedeep::init_params(&schema, &config.stage2);
    let stage2_report = widedeep::train(&mut stage2, &stage2_set, &config.stage2)?;

    let summary = TrainingSummary {
        stage1_rows: stage1_set.len(),
        stage1_defaults: stage1_set.iter().filter(|s| s.target > 0.5).count(),
        stage2_rows: stage2_set.len(),
        stage1: stage1_report,
        stage2: stage2_report,
    };
    Ok((TwoStageModel { schema, stage1, stage2, gamma: config.gamma }, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Passed,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLoan {
    pub loan_id: String,
    pub pd: f64,
    /// Present exactly when the loan passed the gate.
    pub predicted_irr: Option<f64>,
    pub gate: Gate,
    pub actual_irr: Option<f64>,
    pub status: Option<LoanStatus>,
    pub grade: String,
    pub unseen: Vec<CategoricalFeature>,
}

impl TwoStageModel {
    /// `pd > gamma` is filtered; `pd == gamma` passes.
    pub fn gate(&self, pd: f64) -> Gate {
        if pd > self.gamma {
            Gate::Filtered
        } else {
            Gate::Passed
        }
    }

    pub fn score(&self, loan: &LoanRecord) -> Result<ScoredLoan, PipelineError> {
        let input = self.schema.encode(loan);
        let pd = self.stage1.predict_pd(&input)?;
        let gate = self.gate(pd);
        let predicted_irr = match gate {
            Gate::Passed => Some(self.stage2.predict_irr(&input)?),
            Gate::Filtered => None,
        };
        Ok(ScoredLoan {
            loan_id: loan.loan_id.clone(),
            pd,
            predicted_irr,
            gate,
            actual_irr: loan.irr,
            status: loan.status,
            grade: loan.grade.clone(),
            unseen: self.schema.unseen_levels(loan),
        })
    }
}

pub fn score_loans(model: &TwoStageModel, loans: &[LoanRecord]) -> Result<Vec<ScoredLoan>, PipelineError> {
    loans.iter().map(|l| model.score(l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// Rank by ascending PD from the logistic scorer.
    CreditScoring,
    /// Rank by descending IRR predicted by the regression tree.
    ProfitScoring,
    /// Rank gate-passing loans by descending stage-2 IRR.
    TwoStage,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::CreditScoring, Approach::ProfitScoring, Approach::TwoStage];

    pub fn number(self) -> u8 {
        match self {
            Approach::CreditScoring => 1,
            Approach::ProfitScoring => 2,
            Approach::TwoStage => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::CreditScoring => "credit_scoring",
            Approach::ProfitScoring => "profit_scoring",
            Approach::TwoStage => "two_stage",
        }
    }
}

/// A loan as one approach sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub loan_id: String,
    /// PD for credit scoring, predicted IRR otherwise.
    pub score: f64,
    pub actual_irr: Option<f64>,
    pub grade: String,
}

/// Two-stage candidates: only loans that passed the gate.
pub fn two_stage_candidates(scored: &[ScoredLoan]) -> Vec<Candidate> {
    scored
        .iter()
        .filter_map(|s| {
            s.predicted_irr.map(|irr| Candidate {
                loan_id: s.loan_id.clone(),
                score: irr,
                actual_irr: s.actual_irr,
                grade: s.grade.clone(),
            })
        })
        .collect()
}

/// Order candidates the way `approach` ranks them: ascending score for
/// credit scoring, descending otherwise, ties by loan id.
pub fn rank(candidates: &[Candidate], approach: Approach) -> Vec<Candidate> {
    let mut out = candidates.to_vec();
    out.sort_by(|a, b| {
        let by_score = match approach {
            Approach::CreditScoring => a.score.total_cmp(&b.score),
            Approach::ProfitScoring | Approach::TwoStage => b.score.total_cmp(&a.score),
        };
        by_score.then_with(|| a.loan_id.cmp(&b.loan_id))
    });
    out
}

/// The first `k` of [`rank`]; fewer if there are not enough candidates.
pub fn select_top_k(candidates: &[Candidate], k: usize, approach: Approach) -> Vec<Candidate> {
    let mut out = rank(candidates, approach);
    out.truncate(k);
    out
}

/// Confusion counts with Non-Default as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    /// Non-Default predicted Non-Default.
    pub tp: usize,
    /// Non-Default predicted Default.
    pub fn_: usize,
    /// Default predicted Non-Default.
    pub fp: usize,
    /// Default predicted Default.
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall of both classes. A ratio with an empty
/// denominator is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub confusion: Confusion,
    pub precision_p: f64,
    pub recall_p: f64,
    pub precision_n: f64,
    pub recall_n: f64,
    pub accuracy: f64,
}

impl Confusion {
    /// Predict Default when `pd > gamma`.
    pub fn from_predictions(pds: &[f64], statuses: &[LoanStatus], gamma: f64) -> Self {
        let mut c = Confusion::default();
        for (&pd, &status) in pds.iter().zip(statuses) {
            let predicted_default = pd > gamma;
            match (status, predicted_default) {
                (LoanStatus::NonDefault, false) => c.tp += 1,
                (LoanStatus::NonDefault, true) => c.fn_ += 1,
                (LoanStatus::Default, false) => c.fp += 1,
                (LoanStatus::Default, true) => c.tn += 1,
            }
        }
        c
    }

    pub fn metrics(self) -> ClassificationMetrics {
        let Confusion { tp, fn_, fp, tn } = self;
        ClassificationMetrics {
            confusion: self,
            precision_p: ratio(tp, tp + fp),
            recall_p: ratio(tp, tp + fn_),
            precision_n: ratio(tn, tn + fn_),
            recall_n: ratio(tn, tn + fp),
            accuracy: ratio(tp + tn, tp + fn_ + fp + tn),
        }
    }
}

/// Classification quality of a PD model on labeled loans.
pub fn eval_classification(
    params: &ModelParams,
    schema: &FeatureSchema,
    loans: &[LoanRecord],
    gamma: f64,
) -> Result<ClassificationMetrics, PipelineError> {
    let mut pds = Vec::with_capacity(loans.len());
    let mut statuses = Vec::with_capacity(loans.len());
    for l in loans {
        let status = l.status.ok_or_else(|| PipelineError::MissingLabel(l.loan_id.clone()))?;
        pds.push(params.predict_pd(&schema.encode(l))?);
        statuses.push(status);
    }
    Ok(Confusion::from_predictions(&pds, &statuses, gamma).metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub mse: f64,
}

/// Squared error of an IRR model over loans with positive actual IRR.
pub fn eval_regression(
    params: &ModelParams,
    schema: &FeatureSchema,
    loans: &[LoanRecord],
) -> Result<RegressionMetrics, PipelineError> {
    let mut n = 0;
    let mut total = 0.0;
    for l in loans {
        if let Some(irr) = l.irr.filter(|&r| r > 0.0) {
            let e = params.predict_irr(&schema.encode(l))? - irr;
            total += e * e;
            n += 1;
        }
    }
    Ok(RegressionMetrics { n, mse: if n == 0 { 0.0 } else { total / n as f64 } })
}

/// The comparison models, trained on the same split as the two-stage model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub logistic: ModelParams,
    pub logistic_report: TrainReport,
    /// Regression tree over all labeled loans, negative IRRs included.
    pub cart: CartNode,
}

pub fn train_baselines(
    schema: &FeatureSchema,
    train: &[LoanRecord],
    config: &PipelineConfig,
) -> Result<Baselines, PipelineError> {
    let pd_set = resample(&pd_samples(schema, train)?, &config.resample)?;
    let (logistic, logistic_report) = baselines::train_logistic(schema, &pd_set, &config.stage1)?;
    let (xs, ys): (Vec<_>, Vec<_>) = train
        .iter()
        .filter_map(|l| l.irr.map(|r| (baselines::tree_input(schema, l), r)))
        .unzip();
    let cart = baselines::train_cart(&xs, &ys, &config.cart)?;
    Ok(Baselines { logistic, logistic_report, cart })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachResult {
    pub approach: Approach,
    pub requested: usize,
    pub selected: Vec<Candidate>,
    /// Fewer candidates than requested were available.
    pub shortfall: bool,
    /// Mean actual IRR of the selected loans that have one.
    pub average_actual_irr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub approach: Approach,
    pub loan_id: String,
    pub actual_irr: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub results: Vec<ApproachResult>,
    /// Actual IRR against each approach's score, for every scored test loan
    /// with an IRR.
    pub scatter: Vec<ScatterPoint>,
}

impl Comparison {
    pub fn result(&self, approach: Approach) -> Option<&ApproachResult> {
        self.results.iter().find(|r| r.approach == approach)
    }
}

/// Candidates of every approach for `loans`.
pub fn candidates(
    model: &TwoStageModel,
    baselines: &Baselines,
    loans: &[LoanRecord],
) -> Result<Vec<(Approach, Vec<Candidate>)>, PipelineError> {
    let mut credit = Vec::with_capacity(loans.len());
    let mut profit = Vec::with_capacity(loans.len());
    for l in loans {
        let input = model.schema.encode(l);
        let make = |score| Candidate { loan_id: l.loan_id.clone(), score, actual_irr: l.irr, grade: l.grade.clone() };
        credit.push(make(baselines.logistic.predict_pd(&input)?));
        profit.push(make(baselines::cart_predict(&baselines.cart, &baselines::tree_input(&model.schema, l))));
    }
    let scored = score_loans(model, loans)?;
    Ok(alloc::vec![
        (Approach::CreditScoring, credit),
        (Approach::ProfitScoring, profit),
        (Approach::TwoStage, two_stage_candidates(&scored)),
    ])
}

/// Pick the top `k` test loans under each approach and average their
/// realized IRR.
pub fn compare_approaches(
    model: &TwoStageModel,
    baselines: &Baselines,
    test: &[LoanRecord],
    k: usize,
) -> Result<Comparison, PipelineError> {
    let mut results = Vec::new();
    let mut scatter = Vec::new();
    for (approach, cands) in candidates(model, baselines, test)? {
        for c in &cands {
            if let Some(actual) = c.actual_irr {
                scatter.push(ScatterPoint { approach, loan_id: c.loan_id.clone(), actual_irr: actual, score: c.score });
            }
        }
        let selected = select_top_k(&cands, k, approach);
        let irrs: Vec<f64> = selected.iter().filter_map(|c| c.actual_irr).collect();
        let average_actual_irr = (!irrs.is_empty()).then(|| irrs.iter().sum::<f64>() / irrs.len() as f64);
        results.push(ApproachResult { approach, requested: k, shortfall: selected.len() < k, selected, average_actual_irr });
    }
    Ok(Comparison { results, scatter })
}

/// Train everything on `train` and compare on `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: TwoStageModel,
    pub training: TrainingSummary,
    pub baselines: Baselines,
    pub stage1_metrics: ClassificationMetrics,
    pub logistic_metrics: ClassificationMetrics,
    pub stage2_metrics: RegressionMetrics,
    pub comparison: Comparison,
}

pub fn run_experiment(
    train: &[LoanRecord],
    test: &[LoanRecord],
    config: &PipelineConfig,
) -> Result<Experiment, PipelineError> {
    let (model, training) = train_two_stage(train, config)?;
    let baselines = train_baselines(&model.schema, train, config)?;
    let stage1_metrics = eval_classification(&model.stage1, &model.schema, test, config.gamma)?;
    let logistic_metrics = eval_classification(&baselines.logistic, &model.schema, test, config.gamma)?;
    let stage2_metrics = eval_regression(&model.stage2, &model.schema, test)?;
    let comparison = compare_approaches(&model, &baselines, test, config.top_k)?;
    Ok(Experiment { model, training, baselines, stage1_metrics, logistic_metrics, stage2_metrics, comparison })
}

/// Order two approaches by the average realized IRR of their picks.
pub fn compare_average(a: &ApproachResult, b: &ApproachResult) -> Option<Ordering> {
    a.average_actual_irr?.partial_cmp(&b.average_actual_irr?)
}
