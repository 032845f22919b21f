//! Internal rate of return over dated cash flows.
//!
//! Day count is actual/365 with annual compounding, measured from the
//! earliest flow date. The solver is plain bisection over a fixed rate
//! bracket; loans whose payments cannot recover the principal even at the
//! lower bound are pinned to that bound.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::domain::{CashFlowEvent, LoanRecord};

pub const DEFAULT_RATE_FLOOR: f64 = -0.9999;
pub const DEFAULT_RATE_CEILING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrrConfig {
    /// Allowed |NPV| at the root, relative to the total outflow.
    pub npv_tolerance: f64,
    /// Bisection stops once the bracket is narrower than this.
    pub rate_tolerance: f64,
    pub max_iter: usize,
    pub rate_lo: f64,
    pub rate_hi: f64,
}

impl Default for IrrConfig {
    fn default() -> Self {
        Self {
            npv_tolerance: 1e-9,
            rate_tolerance: 1e-12,
            max_iter: 200,
            rate_lo: DEFAULT_RATE_FLOOR,
            rate_hi: DEFAULT_RATE_CEILING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSolution {
    pub rate: f64,
    pub iterations: usize,
    pub residual_npv: f64,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IrrError {
    #[error("cash-flow series is empty")]
    EmptyFlows,
    #[error("rate {0} is outside the domain (rate > -1)")]
    RateOutOfDomain(f64),
    #[error("NPV has the same sign at both bounds ({npv_lo} at lo, {npv_hi} at hi)")]
    NoSignChange {
        npv_lo: f64,
        npv_hi: f64,
        /// Payments cannot recover the outlay even at the floor rate.
        total_loss: bool,
    },
    #[error("bisection did not converge after {iterations} iterations (rate {rate}, npv {npv})")]
    NonConvergence { iterations: usize, rate: f64, npv: f64 },
}

fn year_fractions(flows: &[CashFlowEvent]) -> Option<Vec<(f64, f64)>> {
    let base = flows.iter().map(|e| e.date).min()?;
    Some(
        flows
            .iter()
            .map(|e| ((e.date - base).num_days() as f64 / 365.0, e.amount))
            .collect(),
    )
}

fn npv_at(times: &[(f64, f64)], rate: f64) -> f64 {
    let growth = 1.0 + rate;
    times.iter().map(|&(t, a)| a / libm::pow(growth, t)).sum()
}

/// Net present value of `flows` at annual `rate`.
pub fn npv(flows: &[CashFlowEvent], rate: f64) -> Result<f64, IrrError> {
    if !(rate > -1.0) {
        return Err(IrrError::RateOutOfDomain(rate));
    }
    let times = year_fractions(flows).ok_or(IrrError::EmptyFlows)?;
    Ok(npv_at(&times, rate))
}

/// Solve `npv(flows, rate) = 0` by bisection.
pub fn solve_irr(flows: &[CashFlowEvent], config: &IrrConfig) -> Result<RateSolution, IrrError> {
    if !(config.rate_lo > -1.0) {
        return Err(IrrError::RateOutOfDomain(config.rate_lo));
    }
    let times = year_fractions(flows).ok_or(IrrError::EmptyFlows)?;
    let outlay: f64 = flows.iter().filter(|e| e.amount < 0.0).map(|e| -e.amount).sum();
    let scale = if outlay > 0.0 {
        outlay
    } else {
        flows.iter().map(|e| e.amount.abs()).fold(0.0, f64::max).max(1.0)
    };
    let tolerance = config.npv_tolerance * scale;

    let (mut lo, mut hi) = (config.rate_lo, config.rate_hi);
    let mut f_lo = npv_at(&times, lo);
    let f_hi = npv_at(&times, hi);
    if f_lo == 0.0 {
        return Ok(RateSolution { rate: lo, iterations: 0, residual_npv: 0.0, bracket: (lo, hi) });
    }
    if f_hi == 0.0 {
        return Ok(RateSolution { rate: hi, iterations: 0, residual_npv: 0.0, bracket: (lo, hi) });
    }
    if (f_lo < 0.0) == (f_hi < 0.0) {
        return Err(IrrError::NoSignChange { npv_lo: f_lo, npv_hi: f_hi, total_loss: f_lo < 0.0 });
    }

    let mut iterations = 0;
    let mut mid = 0.5 * (lo + hi);
    let mut f_mid = npv_at(&times, mid);
    while iterations < config.max_iter {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        f_mid = npv_at(&times, mid);
        if f_mid == 0.0 {
            break;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= config.rate_tolerance {
            mid = 0.5 * (lo + hi);
            f_mid = npv_at(&times, mid);
            break;
        }
    }
    if f_mid.abs() <= tolerance {
        Ok(RateSolution {
            rate: mid,
            iterations,
            residual_npv: f_mid,
            bracket: (config.rate_lo, config.rate_hi),
        })
    } else {
        Err(IrrError::NonConvergence { iterations, rate: mid, npv: f_mid })
    }
}

/// Per-cohort outcome of IRR labeling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IrrReport {
    pub labeled: usize,
    pub total_loss: usize,
    pub missing_cash_flows: usize,
    pub failures: Vec<(String, IrrError)>,
}

/// Label every loan that carries cash flows with its IRR. Total losses get
/// the configured floor rate; loans without flows are left unlabeled.
pub fn assign_irr(loans: &mut [LoanRecord], config: &IrrConfig) -> IrrReport {
    let mut report = IrrReport::default();
    for loan in loans.iter_mut() {
        let Some(flows) = &loan.cash_flows else {
            report.missing_cash_flows += 1;
            loan.irr = None;
            continue;
        };
        match solve_irr(flows, config) {
            Ok(sol) => {
                loan.irr = Some(sol.rate);
                report.labeled += 1;
            }
            Err(IrrError::NoSignChange { total_loss: true, .. }) => {
                loan.irr = Some(config.rate_lo);
                report.labeled += 1;
                report.total_loss += 1;
            }
            Err(e) => {
                loan.irr = None;
                report.failures.push((loan.loan_id.clone(), e));
            }
        }
    }
    report
}
