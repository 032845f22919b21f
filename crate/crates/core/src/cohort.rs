//! In-memory cohort handling: joining payments onto loans, the issue-year
//! filter, the train/test split and descriptive statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::Datelike;
use rand::seq::index;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{CashFlowEvent, DatasetSplit, LoanRecord, LoanStatus};
use crate::features::{CategoricalFeature, ContinuousFeature};
use crate::seeded_rng;

pub const DEFAULT_MIN_YEAR: i32 = 2008;
pub const DEFAULT_MAX_YEAR: i32 = 2013;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CohortError {
    #[error("input is empty")]
    EmptyInput,
    #[error("train fraction must be strictly between 0 and 1")]
    BadFraction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AttachReport {
    pub with_payments: usize,
    pub without_payments: usize,
    /// Payment loan ids that match no loan in the cohort.
    pub unknown_loan_ids: usize,
    pub unknown_events: usize,
}

/// Prepend the funding outflow to each loan's payment events.
pub fn attach_cashflows(
    loans: Vec<LoanRecord>,
    payments: &BTreeMap<String, Vec<CashFlowEvent>>,
) -> (Vec<LoanRecord>, AttachReport) {
    let mut report = AttachReport::default();
    let known: BTreeSet<&str> = loans.iter().map(|l| l.loan_id.as_str()).collect();
    for (id, events) in payments {
        if !known.contains(id.as_str()) {
            report.unknown_loan_ids += 1;
            report.unknown_events += events.len();
        }
    }
    let loans = loans
        .into_iter()
        .map(|mut loan| {
            match payments.get(&loan.loan_id) {
                Some(events) => {
                    let mut flows = Vec::with_capacity(events.len() + 1);
                    flows.push(CashFlowEvent::new(loan.issue_date, -loan.funded_amount));
                    flows.extend_from_slice(events);
                    loan.cash_flows = Some(flows);
                    report.with_payments += 1;
                }
                None => {
                    loan.cash_flows = None;
                    report.without_payments += 1;
                }
            }
            loan
        })
        .collect();
    (loans, report)
}

/// Keep loans issued in `[min_year, max_year]`.
pub fn filter_cohort(loans: &[LoanRecord], min_year: i32, max_year: i32) -> Vec<LoanRecord> {
    loans
        .iter()
        .filter(|l| (min_year..=max_year).contains(&l.issue_date.year()))
        .cloned()
        .collect()
}

/// Seeded uniform partition with `round(train_fraction * n)` training loans.
/// Both halves keep the input order.
pub fn split_train_test(
    loans: &[LoanRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CohortError> {
    if loans.is_empty() {
        return Err(CohortError::EmptyInput);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CohortError::BadFraction);
    }
    let n = loans.len();
    let n_train = libm::round(train_fraction * n as f64) as usize;
    let mut in_train = alloc::vec![false; n];
    for i in index::sample(&mut seeded_rng(seed), n, n_train) {
        in_train[i] = true;
    }
    let mut split = DatasetSplit { train: Vec::with_capacity(n_train), test: Vec::new(), seed };
    for (loan, t) in loans.iter().zip(in_train) {
        if t {
            split.train.push(loan.clone());
        } else {
            split.test.push(loan.clone());
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuousSummary {
    pub feature: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalSummary {
    pub feature: String,
    pub levels: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub loans: usize,
    pub labeled: usize,
    /// Share of labeled loans that defaulted; `None` without labels.
    pub default_rate: Option<f64>,
    pub positive_irr_rate: Option<f64>,
    pub continuous: Vec<ContinuousSummary>,
    pub categorical: Vec<CategoricalSummary>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn describe(feature: &str, mut values: Vec<f64>) -> Option<ContinuousSummary> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(ContinuousSummary {
        feature: feature.to_string(),
        count: values.len(),
        mean,
        std: libm::sqrt(var),
        min: values[0],
        q1: quantile(&values, 0.25),
        median: quantile(&values, 0.5),
        q3: quantile(&values, 0.75),
        max: values[values.len() - 1],
    })
}

/// Descriptive statistics of a cohort.
pub fn summarize(loans: &[LoanRecord]) -> Result<Summary, CohortError> {
    if loans.is_empty() {
        return Err(CohortError::EmptyInput);
    }
    let labeled: Vec<LoanStatus> = loans.iter().filter_map(|l| l.status).collect();
    let default_rate = (!labeled.is_empty()).then(|| {
        labeled.iter().filter(|s| **s == LoanStatus::Default).count() as f64 / labeled.len() as f64
    });
    let irrs: Vec<f64> = loans.iter().filter_map(|l| l.irr).collect();
    let positive_irr_rate =
        (!irrs.is_empty()).then(|| irrs.iter().filter(|&&r| r > 0.0).count() as f64 / irrs.len() as f64);

    let mut continuous = Vec::new();
    continuous.extend(describe("funded_amount", loans.iter().map(|l| l.funded_amount).collect()));
    continuous.extend(describe("installment", loans.iter().map(|l| l.installment).collect()));
    for f in ContinuousFeature::BASIS {
        let values = if f == ContinuousFeature::MonthsSinceLastDelinq {
            loans
                .iter()
                .filter(|l| !l.months_since_last_delinq.is_never())
                .map(|l| f.value(l))
                .collect()
        } else {
            loans.iter().map(|l| f.value(l)).collect()
        };
        continuous.extend(describe(f.name(), values));
    }
    continuous.extend(describe("interest_rate", loans.iter().filter_map(|l| l.interest_rate).collect()));
    continuous.extend(describe("irr", irrs));

    let mut categorical = Vec::new();
    for f in CategoricalFeature::ALL {
        let mut levels = BTreeMap::new();
        for l in loans {
            *levels.entry(f.level(l)).or_insert(0) += 1;
        }
        categorical.push(CategoricalSummary { feature: f.name().to_string(), levels });
    }
    let mut terms = BTreeMap::new();
    let mut status = BTreeMap::new();
    let mut never = BTreeMap::new();
    for l in loans {
        *terms.entry(alloc::format!("{}", l.term_months)).or_insert(0) += 1;
        let s = l.status.map(|s| s.as_str()).unwrap_or("unlabeled");
        *status.entry(s.to_string()).or_insert(0) += 1;
        let n = if l.months_since_last_delinq.is_never() { "never" } else { "some" };
        *never.entry(n.to_string()).or_insert(0) += 1;
    }
    categorical.push(CategoricalSummary { feature: "term_months".to_string(), levels: terms });
    categorical.push(CategoricalSummary { feature: "status".to_string(), levels: status });
    categorical.push(CategoricalSummary { feature: "delinquency_history".to_string(), levels: never });

    Ok(Summary {
        loans: loans.len(),
        labeled: labeled.len(),
        default_rate,
        positive_irr_rate,
        continuous,
        categorical,
    })
}
