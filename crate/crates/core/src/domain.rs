//! Loan records and the value types shared by every stage of the pipeline.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Repayment outcome of a finished loan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoanStatus {
    Default,
    NonDefault,
}

impl LoanStatus {
    /// Training label used by the PD model: `Default = 1`, `NonDefault = 0`.
    pub fn default_label(self) -> f64 {
        match self {
            LoanStatus::Default => 1.0,
            LoanStatus::NonDefault => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LoanStatus::Default => "Default",
            LoanStatus::NonDefault => "NonDefault",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "Default" | "default" | "Charged Off" | "1" => Some(LoanStatus::Default),
            "NonDefault" | "nondefault" | "non-default" | "Fully Paid" | "0" => {
                Some(LoanStatus::NonDefault)
            }
            _ => None,
        }
    }
}

/// A dated payment. Outflows (funding) are negative, inflows positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CashFlowEvent {
    pub date: NaiveDate,
    pub amount: f64,
}

impl CashFlowEvent {
    pub fn new(date: NaiveDate, amount: f64) -> Self {
        Self { date, amount }
    }
}

/// Months since the borrower's last delinquency, or an explicit marker for
/// borrowers with no delinquency on file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelinquencyAge {
    Never,
    Months(u32),
}

impl DelinquencyAge {
    /// Numeric value fed to the dense block; `Never` encodes as 0 alongside
    /// the never-delinquent indicator.
    pub fn months_value(self) -> f64 {
        match self {
            DelinquencyAge::Never => 0.0,
            DelinquencyAge::Months(m) => m as f64,
        }
    }

    pub fn is_never(self) -> bool {
        matches!(self, DelinquencyAge::Never)
    }
}

/// One loan application with its borrower features and, for historical
/// loans, its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct LoanRecord {
    pub loan_id: String,
    pub issue_date: NaiveDate,
    pub funded_amount: f64,
    pub installment: f64,
    pub term_months: u32,
    /// Contract rate (effective annual). Informational; not a model feature.
    pub interest_rate: Option<f64>,
    pub grade: String,
    pub subgrade: String,
    pub purpose: String,
    pub fico: u16,
    pub annual_income: f64,
    pub housing: String,
    pub employment_length: String,
    pub credit_history_length: f64,
    pub delinq_2yrs: u32,
    pub inquiries_6m: u32,
    pub public_records: u32,
    pub revol_util: f64,
    pub open_accounts: u32,
    pub months_since_last_delinq: DelinquencyAge,
    pub loan_to_income: f64,
    pub installment_to_income: f64,
    pub dti: f64,
    pub status: Option<LoanStatus>,
    pub cash_flows: Option<Vec<CashFlowEvent>>,
    pub irr: Option<f64>,
}

pub const GRADES: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];
pub const HOUSING_LEVELS: [&str; 4] = ["own", "rent", "mortgage", "other"];
pub const PURPOSES: [&str; 14] = [
    "wedding",
    "credit_card",
    "car",
    "major_purchase",
    "home_improvement",
    "debt_consolidation",
    "house",
    "vacation",
    "medical",
    "moving",
    "renewable_energy",
    "educational",
    "small_business",
    "other",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("annual income is zero; loan-to-income ratios are undefined")]
    ZeroIncome,
}

/// Fill in the two income-derived ratios.
pub fn derive_ratios(record: &LoanRecord) -> Result<LoanRecord, DomainError> {
    if !(record.annual_income > 0.0) {
        return Err(DomainError::ZeroIncome);
    }
    let mut out = record.clone();
    out.loan_to_income = record.funded_amount / record.annual_income;
    out.installment_to_income = 12.0 * record.installment / record.annual_income;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    NotFinite,
    Negative,
    NotPositive,
    OutOfRange,
    UnknownLevel,
    GradeSubgradeMismatch,
    RatioInconsistent,
    Empty,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::NotFinite => "not finite",
            Rule::Negative => "negative",
            Rule::NotPositive => "not positive",
            Rule::OutOfRange => "out of range",
            Rule::UnknownLevel => "unknown level",
            Rule::GradeSubgradeMismatch => "grade/subgrade mismatch",
            Rule::RatioInconsistent => "derived ratio inconsistent",
            Rule::Empty => "empty",
        }
    }
}

/// A broken record invariant: which field, which rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.rule.as_str())
    }
}

fn check_nonneg(out: &mut Vec<Violation>, field: &'static str, v: f64) {
    if !v.is_finite() {
        out.push(Violation { field, rule: Rule::NotFinite });
    } else if v < 0.0 {
        out.push(Violation { field, rule: Rule::Negative });
    }
}

fn check_positive(out: &mut Vec<Violation>, field: &'static str, v: f64) {
    if !v.is_finite() {
        out.push(Violation { field, rule: Rule::NotFinite });
    } else if v <= 0.0 {
        out.push(Violation { field, rule: Rule::NotPositive });
    }
}

fn ratio_matches(stored: f64, expected: f64) -> bool {
    (stored - expected).abs() <= 1e-9 * expected.abs().max(1.0)
}

/// List every broken invariant of `record`. Empty means the record is valid.
pub fn validate_record(record: &LoanRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.loan_id.trim().is_empty() {
        out.push(Violation { field: "loan_id", rule: Rule::Empty });
    }
    check_positive(&mut out, "funded_amount", record.funded_amount);
    check_positive(&mut out, "installment", record.installment);
    if record.term_months == 0 {
        out.push(Violation { field: "term_months", rule: Rule::NotPositive });
    }
    if let Some(r) = record.interest_rate {
        if !r.is_finite() {
            out.push(Violation { field: "interest_rate", rule: Rule::NotFinite });
        }
    }

    let grade_ok = GRADES.contains(&record.grade.as_str());
    if !grade_ok {
        out.push(Violation { field: "grade", rule: Rule::UnknownLevel });
    }
    let sub = record.subgrade.as_bytes();
    let sub_ok = sub.len() == 2
        && (b'A'..=b'G').contains(&sub[0])
        && (b'1'..=b'5').contains(&sub[1]);
    if !sub_ok {
        out.push(Violation { field: "subgrade", rule: Rule::UnknownLevel });
    }
    if grade_ok && sub_ok && record.grade.as_bytes()[0] != sub[0] {
        out.push(Violation { field: "subgrade", rule: Rule::GradeSubgradeMismatch });
    }
    if record.purpose.trim().is_empty() {
        out.push(Violation { field: "purpose", rule: Rule::Empty });
    }
    if !(300..=850).contains(&record.fico) {
        out.push(Violation { field: "fico", rule: Rule::OutOfRange });
    }
    if !HOUSING_LEVELS.contains(&record.housing.as_str()) {
        out.push(Violation { field: "housing", rule: Rule::UnknownLevel });
    }
    if record.employment_length.trim().is_empty() {
        out.push(Violation { field: "employment_length", rule: Rule::Empty });
    }

    check_nonneg(&mut out, "annual_income", record.annual_income);
    check_nonneg(&mut out, "credit_history_length", record.credit_history_length);
    check_nonneg(&mut out, "revol_util", record.revol_util);
    check_nonneg(&mut out, "loan_to_income", record.loan_to_income);
    check_nonneg(&mut out, "installment_to_income", record.installment_to_income);
    check_nonneg(&mut out, "dti", record.dti);

    if record.annual_income > 0.0 && record.annual_income.is_finite() {
        if !ratio_matches(record.loan_to_income, record.funded_amount / record.annual_income) {
            out.push(Violation { field: "loan_to_income", rule: Rule::RatioInconsistent });
        }
        let expected = 12.0 * record.installment / record.annual_income;
        if !ratio_matches(record.installment_to_income, expected) {
            out.push(Violation {
                field: "installment_to_income",
                rule: Rule::RatioInconsistent,
            });
        }
    }

    if let Some(flows) = &record.cash_flows {
        if flows.iter().any(|e| !e.amount.is_finite()) {
            out.push(Violation { field: "cash_flows", rule: Rule::NotFinite });
        }
    }
    if let Some(irr) = record.irr {
        if !irr.is_finite() {
            out.push(Violation { field: "irr", rule: Rule::NotFinite });
        }
    }
    out
}

/// An 80/20-style partition of a loan set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LoanRecord>,
    pub test: Vec<LoanRecord>,
    pub seed: u64,
}
