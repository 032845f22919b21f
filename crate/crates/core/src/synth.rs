//! Seeded generator for desk-scale loan cohorts.
//!
//! Borrower features are drawn from fixed marginals. A latent risk index is
//! a linear function of those features; the platform's grade is a noisy
//! view of it, and the contract rate rises with the subgrade. Default is
//! Bernoulli on the logistic of the risk index plus a grade-by-purpose
//! interaction, with the intercept calibrated to the target default rate.
//! Repaid loans follow a monthly annuity schedule (some prepay early);
//! defaulted loans stop paying at a random month in the first half of the
//! term, with no recovery.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Days, Months, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CashFlowEvent, DelinquencyAge, LoanRecord, LoanStatus, GRADES, PURPOSES};
use crate::irr::{assign_irr, IrrConfig};
use crate::seeded_rng;
use crate::widedeep::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_loans: usize,
    pub default_rate_target: f64,
    pub seed: u64,
    /// Effective annual contract rate of the safest and riskiest subgrade.
    pub note_rate_range: (f64, f64),
    /// Allowed terms; drawn 3:1 in favour of the first.
    pub term_months: Vec<u32>,
    /// Share of repaid loans that pay off early.
    pub prepay_fraction: f64,
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_loans: 20_000,
            default_rate_target: 0.15,
            seed: 1,
            note_rate_range: (0.06, 0.28),
            term_months: alloc::vec![36, 60],
            prepay_fraction: 0.2,
            first_year: 2008,
            last_year: 2013,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(&'static str),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.default_rate_target > 0.0 && self.default_rate_target < 1.0) {
            return Err(SynthError::InvalidConfig("default_rate_target must be in (0, 1)"));
        }
        if !(self.note_rate_range.0 < self.note_rate_range.1) || self.note_rate_range.0 <= -1.0 {
            return Err(SynthError::InvalidConfig("note rate range must satisfy -1 < low < high"));
        }
        if self.term_months.is_empty() || self.term_months.iter().any(|t| !matches!(t, 36 | 60)) {
            return Err(SynthError::InvalidConfig("terms must be drawn from {36, 60}"));
        }
        if !(0.0..=1.0).contains(&self.prepay_fraction) {
            return Err(SynthError::InvalidConfig("prepay_fraction must be in [0, 1]"));
        }
        if self.first_year > self.last_year {
            return Err(SynthError::InvalidConfig("first_year after last_year"));
        }
        Ok(())
    }
}

/// Share of loans per grade A..G.
const GRADE_SHARES: [f64; 7] = [0.18, 0.30, 0.24, 0.15, 0.08, 0.04, 0.01];
/// Scale of the latent risk index inside the default logit.
const RISK_SIGNAL: f64 = 5.0;
/// Noise in the platform's grading relative to the risk index.
const GRADE_NOISE: f64 = 2.0;
/// Strength of the planted grade-by-purpose interaction.
const INTERACTION: f64 = 2.0;

const PURPOSE_WEIGHTS: [f64; 14] = [2.0, 20.0, 3.0, 3.0, 6.0, 48.0, 1.0, 1.0, 2.0, 1.0, 0.3, 0.7, 4.0, 8.0];
const EMPLOYMENT: [&str; 11] = ["<1", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10+"];
const EMPLOYMENT_WEIGHTS: [f64; 11] = [8.0, 7.0, 9.0, 8.0, 6.0, 7.0, 6.0, 5.0, 4.0, 4.0, 26.0];
const HOUSING: [&str; 4] = ["own", "rent", "mortgage", "other"];
const HOUSING_WEIGHTS: [f64; 4] = [8.0, 45.0, 45.0, 2.0];

fn purpose_effect(p: &str) -> f64 {
    match p {
        "small_business" => 0.6,
        "educational" => 0.3,
        "medical" | "moving" => 0.2,
        "wedding" => -0.2,
        "car" => -0.3,
        "credit_card" => -0.1,
        _ => 0.0,
    }
}

/// Purposes whose default risk grows (+1) or shrinks (-1) with grade.
fn interaction_sign(p: &str) -> f64 {
    match p {
        "small_business" | "educational" | "moving" | "vacation" | "medical" => 1.0,
        "car" | "wedding" | "house" | "home_improvement" | "major_purchase" => -1.0,
        _ => 0.0,
    }
}

fn housing_effect(h: &str) -> f64 {
    match h {
        "own" => -0.1,
        "mortgage" => -0.2,
        "rent" => 0.15,
        _ => 0.3,
    }
}

struct Draft {
    record: LoanRecord,
    risk: f64,
}

fn choose<'a>(rng: &mut ChaCha8Rng, levels: &[&'a str], weights: &[f64]) -> &'a str {
    let idx = WeightedIndex::new(weights).expect("static positive weights");
    levels[idx.sample(rng)]
}

fn draw_borrower(rng: &mut ChaCha8Rng, config: &SynthConfig, n: usize, i: usize) -> Draft {
    let start = NaiveDate::from_ymd_opt(config.first_year, 1, 1).expect("valid year");
    let end = NaiveDate::from_ymd_opt(config.last_year, 12, 31).expect("valid year");
    let span = (end - start).num_days() as u64;
    let issue_date = start + Days::new(rng.random_range(0..=span));

    let purpose = choose(rng, &PURPOSES, &PURPOSE_WEIGHTS).to_string();
    let housing = choose(rng, &HOUSING, &HOUSING_WEIGHTS).to_string();
    let employment_length = choose(rng, &EMPLOYMENT, &EMPLOYMENT_WEIGHTS).to_string();

    let fico_raw: f64 = Normal::new(705.0f64, 30.0).unwrap().sample(rng);
    let fico = (libm::round(fico_raw.clamp(660.0, 850.0) / 5.0) * 5.0) as u16;
    let annual_income = libm::round(LogNormal::new(libm::log(62_000.0), 0.5f64).unwrap().sample(rng).clamp(8_000.0, 1_000_000.0));
    let funded: f64 = LogNormal::new(libm::log(11_000.0), 0.55).unwrap().sample(rng);
    let funded_amount = libm::round(funded.clamp(1_000.0, 35_000.0) / 25.0) * 25.0;
    let credit_history_length = libm::round(Normal::new(14.0f64, 7.0).unwrap().sample(rng).clamp(1.0, 50.0) * 10.0) / 10.0;
    let delinq_2yrs = if rng.random::<f64>() < 0.82 { 0 } else { rng.random_range(1..=4) };
    let inquiries_6m = choose(rng, &["0", "1", "2", "3", "4", "5"], &[45.0, 28.0, 14.0, 7.0, 4.0, 2.0])
        .parse::<u32>()
        .unwrap();
    let public_records = if rng.random::<f64>() < 0.93 { 0 } else { rng.random_range(1..=2) };
    let revol_util = libm::round(Normal::new(0.52f64, 0.25).unwrap().sample(rng).clamp(0.0, 1.3) * 1000.0) / 1000.0;
    let open_accounts = libm::round(Normal::new(10.0f64, 4.5).unwrap().sample(rng).clamp(1.0, 40.0)) as u32;
    let months_since_last_delinq = if delinq_2yrs > 0 {
        DelinquencyAge::Months(rng.random_range(1..=24))
    } else if rng.random::<f64>() < 0.6 {
        DelinquencyAge::Never
    } else {
        DelinquencyAge::Months(rng.random_range(25..=120))
    };
    let dti = libm::round(Normal::new(0.16f64, 0.075).unwrap().sample(rng).clamp(0.0, 0.35) * 10_000.0) / 10_000.0;
    let term_months = if config.term_months.len() == 1 || rng.random::<f64>() < 0.75 {
        config.term_months[0]
    } else {
        config.term_months[1]
    };
    let loan_to_income = funded_amount / annual_income;

    let risk = 0.8 * (705.0 - fico as f64) / 30.0
        + 0.5 * (dti - 0.16) / 0.075
        + 0.35 * (inquiries_6m as f64 - 1.0)
        + 0.4 * delinq_2yrs as f64
        + 0.5 * public_records as f64
        + 0.4 * (revol_util - 0.52) / 0.25
        - 0.4 * (libm::log(annual_income) - libm::log(62_000.0)) / 0.5
        + 0.3 * (loan_to_income - 0.2) / 0.1
        - 0.3 * (credit_history_length - 14.0) / 7.0
        + if months_since_last_delinq.is_never() { -0.2 } else { 0.0 }
        + housing_effect(&housing)
        + purpose_effect(&purpose)
        + if term_months == 60 { 0.3 } else { 0.0 };

    let width = libm::ceil(libm::log10(n.max(1) as f64)).max(1.0) as usize;
    let record = LoanRecord {
        loan_id: format!("L{:0width$}", i + 1, width = width),
        issue_date,
        funded_amount,
        installment: 0.0,
        term_months,
        interest_rate: None,
        grade: String::new(),
        subgrade: String::new(),
        purpose,
        fico,
        annual_income,
        housing,
        employment_length,
        credit_history_length,
        delinq_2yrs,
        inquiries_6m,
        public_records,
        revol_util,
        open_accounts,
        months_since_last_delinq,
        loan_to_income,
        installment_to_income: 0.0,
        dti,
        status: None,
        cash_flows: None,
        irr: None,
    };
    Draft { record, risk }
}

fn round_cents(x: f64) -> f64 {
    libm::round(x * 100.0) / 100.0
}

/// Monthly rate equivalent to an effective annual `rate`.
pub fn monthly_rate(rate: f64) -> f64 {
    libm::pow(1.0 + rate, 1.0 / 12.0) - 1.0
}

/// Level monthly payment repaying `principal` over `term` months.
pub fn annuity_payment(principal: f64, monthly: f64, term: u32) -> f64 {
    if monthly == 0.0 {
        return principal / term as f64;
    }
    principal * monthly / (1.0 - libm::pow(1.0 + monthly, -(term as f64)))
}

/// Payment events for a loan: full schedule, early payoff after
/// `prepay_month` installments, or default after `stop_month` installments.
/// A default ends with a zero-amount event for the first missed payment.
fn schedule(
    record: &LoanRecord,
    monthly: f64,
    prepay_month: Option<u32>,
    stop_month: Option<u32>,
) -> Vec<CashFlowEvent> {
    let mut flows = Vec::new();
    let mut balance = record.funded_amount;
    let last = stop_month.unwrap_or(record.term_months);
    for k in 1..=last {
        let date = record.issue_date + Months::new(k);
        let interest = balance * monthly;
        if Some(k) == prepay_month {
            flows.push(CashFlowEvent::new(date, round_cents(balance + interest)));
            return flows;
        }
        let pay = if k == record.term_months {
            round_cents(balance + interest)
        } else {
            record.installment
        };
        balance = balance + interest - pay;
        flows.push(CashFlowEvent::new(date, pay));
    }
    if let Some(stop) = stop_month {
        flows.push(CashFlowEvent::new(record.issue_date + Months::new(stop + 1), 0.0));
    }
    flows
}

/// Generate a labeled cohort with cash flows and IRR filled in.
pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<LoanRecord>, SynthError> {
    config.validate()?;
    let n = config.n_loans;
    let mut rng = seeded_rng(config.seed);
    let mut drafts: Vec<Draft> = (0..n).map(|i| draw_borrower(&mut rng, config, n, i)).collect();

    // Platform grading: rank a noisy view of the risk index into the
    // subgrade quantiles implied by GRADE_SHARES.
    let grade_noise = Normal::new(0.0, GRADE_NOISE).unwrap();
    let mut order: Vec<(f64, usize)> = drafts
        .iter()
        .enumerate()
        .map(|(i, d)| (d.risk + grade_noise.sample(&mut rng), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cum = [0.0; 8];
    for g in 0..7 {
        cum[g + 1] = cum[g] + GRADE_SHARES[g];
    }
    let (lo_rate, hi_rate) = config.note_rate_range;
    for (rank, &(_, i)) in order.iter().enumerate() {
        let q = (rank as f64 + 0.5) / n as f64 * cum[7];
        let g = (0..7).find(|&g| q < cum[g + 1]).unwrap_or(6);
        let within = ((q - cum[g]) / GRADE_SHARES[g] * 5.0) as usize;
        let sub = within.min(4);
        let sub_index = g * 5 + sub;
        let rate = lo_rate + (hi_rate - lo_rate) * sub_index as f64 / 34.0;
        let r = &mut drafts[i].record;
        r.grade = GRADES[g].to_string();
        r.subgrade = format!("{}{}", GRADES[g], sub + 1);
        r.interest_rate = Some(rate);
        r.installment = round_cents(annuity_payment(r.funded_amount, monthly_rate(rate), r.term_months));
        r.installment_to_income = 12.0 * r.installment / r.annual_income;
    }

    let logits: Vec<f64> = drafts
        .iter()
        .map(|d| {
            let g = GRADES.iter().position(|x| *x == d.record.grade).unwrap() as f64;
            RISK_SIGNAL * d.risk + INTERACTION * (g - 3.0) / 3.0 * interaction_sign(&d.record.purpose)
        })
        .collect();
    let intercept = calibrate_intercept(&logits, config.default_rate_target);

    for (d, logit) in drafts.iter_mut().zip(&logits) {
        let pd = sigmoid(intercept + logit);
        let defaulted = rng.random::<f64>() < pd;
        let r = &mut d.record;
        let monthly = monthly_rate(r.interest_rate.unwrap());
        let events = if defaulted {
            let stop = rng.random_range(0..r.term_months / 2);
            schedule(r, monthly, None, Some(stop))
        } else if rng.random::<f64>() < config.prepay_fraction {
            let month = rng.random_range(1..r.term_months);
            schedule(r, monthly, Some(month), None)
        } else {
            schedule(r, monthly, None, None)
        };
        r.status = Some(if defaulted { LoanStatus::Default } else { LoanStatus::NonDefault });
        let mut flows = Vec::with_capacity(events.len() + 1);
        flows.push(CashFlowEvent::new(r.issue_date, -r.funded_amount));
        flows.extend(events);
        r.cash_flows = Some(flows);
    }
    let mut loans: Vec<LoanRecord> = drafts.into_iter().map(|d| d.record).collect();
    assign_irr(&mut loans, &IrrConfig::default());
    Ok(loans)
}

/// Intercept `a` with `mean(sigmoid(a + logit)) = target`.
fn calibrate_intercept(logits: &[f64], target: f64) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    let mean_pd = |a: f64| logits.iter().map(|l| sigmoid(a + l)).sum::<f64>() / logits.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_pd(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
