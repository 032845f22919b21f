//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any automated criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{Months, NaiveDate};
use loanscore::artifact;
use loanscore::commands::{self, classification_cell};
use loanscore::config::RunConfig;
use loanscore::io::{load_loans, load_payments, write_loans, write_payments, ColumnMap};
use loanscore_core::cohort::attach_cashflows;
use loanscore_core::domain::{CashFlowEvent, LoanRecord};
use loanscore_core::features::{
    fit_schema, CategoricalFeature, CrossSpec, DeepVector, EmbeddingSpec, EncodedLoan, FeatureSchema,
    SchemaConfig, WideVector,
};
use loanscore_core::irr::{assign_irr, solve_irr, IrrConfig};
use loanscore_core::pipeline::{pd_samples, run_experiment, Approach, Experiment};
use loanscore_core::resample::{resample, smote, ResampleMethod, ResamplePlan};
use loanscore_core::seeded_rng;
use loanscore_core::synth::{gen_synthetic, SynthConfig};
use loanscore_core::widedeep::{
    batch_gradients, init_params, loss, Components, LossKind, Mode, ModelParams, ParamFamily, ParamRef, Sample,
    TrainConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(number: u8, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && elapsed <= budget, o.detail),
        Err(_) => (false, "panicked".to_string()),
    };
    let over = if elapsed > budget { format!(", over the {}s budget", budget.as_secs()) } else { String::new() };
    println!(
        "criterion {number} {name}: {} ({detail}; {:.1}s{over})",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------------------
// 1. gradients against central finite differences

const FD_STEP: f64 = 1e-5;
const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_CONFIGS: usize = 20;

fn random_schema_config(rng: &mut ChaCha8Rng) -> SchemaConfig {
    let all = CategoricalFeature::ALL;
    let mut crosses = Vec::new();
    for _ in 0..rng.random_range(0..=3) {
        let a = all[rng.random_range(0..all.len())];
        let b = all[rng.random_range(0..all.len())];
        if a != b && !crosses.contains(&CrossSpec { a, b }) {
            crosses.push(CrossSpec { a, b });
        }
    }
    let mut embeddings = Vec::new();
    for feature in all {
        if rng.random_bool(0.5) {
            embeddings.push(EmbeddingSpec { feature, dim: rng.random_range(1..=8) });
        }
    }
    SchemaConfig { crosses, embeddings, never_delinquent_indicator: rng.random_bool(0.5) }
}

fn coordinates(p: &ModelParams) -> Vec<ParamRef> {
    let mut out: Vec<ParamRef> = (0..p.wide.len()).map(ParamRef::Wide).collect();
    for (table, t) in p.embeddings.iter().enumerate() {
        out.extend((0..t.values.len()).map(|index| ParamRef::Embedding { table, index }));
    }
    for (layer, l) in p.layers.iter().enumerate() {
        out.extend((0..l.weights.len()).map(|index| ParamRef::LayerWeight { layer, index }));
        out.extend((0..l.bias.len()).map(|index| ParamRef::LayerBias { layer, index }));
    }
    out.extend((0..p.output.len()).map(ParamRef::Output));
    out.push(ParamRef::Bias);
    out
}

fn relu_signs(p: &ModelParams, batch: &[Sample]) -> Vec<bool> {
    batch
        .iter()
        .flat_map(|s| {
            let trace = p.forward_trace(&s.input, Mode::Eval).expect("forward");
            trace.pre_activations.into_iter().flatten().map(|z| z > 0.0).collect::<Vec<_>>()
        })
        .collect()
}

fn batch_loss(p: &ModelParams, batch: &[Sample], kind: LossKind) -> f64 {
    batch.iter().map(|s| loss(kind, p.predict(&s.input).expect("predict"), s.target)).sum()
}

struct GradStats {
    configs: usize,
    checked: usize,
    kinks: usize,
    max_err: f64,
    families_uncovered: usize,
}

fn gradient_configs(task_seed: u64, kind: LossKind) -> GradStats {
    let mut rng = seeded_rng(task_seed);
    let mut stats = GradStats { configs: 0, checked: 0, kinks: 0, max_err: 0.0, families_uncovered: 0 };
    for _ in 0..GRAD_CONFIGS {
        let loans = gen_synthetic(&SynthConfig { n_loans: 300, seed: rng.random(), ..SynthConfig::default() })
            .expect("synthetic cohort");
        let schema = fit_schema(&loans, &random_schema_config(&mut rng)).expect("schema");
        let components = [Components::Wide, Components::Deep, Components::WideAndDeep][rng.random_range(0..3)];
        let hidden = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=12)).collect();
        let base = match kind {
            LossKind::CrossEntropy => TrainConfig::classification(),
            LossKind::MeanSquaredError => TrainConfig::regression(),
        };
        let config = TrainConfig { components, hidden_layers: hidden, seed: rng.random(), dropout_rate: 0.0, ..base };
        let mut params = init_params(&schema, &config);
        for c in coordinates(&params) {
            *params.get_mut(c) += rng.random_range(-0.3..0.3);
        }
        let batch: Vec<Sample> = (0..3)
            .map(|_| {
                let loan = &loans[rng.random_range(0..loans.len())];
                let target = match kind {
                    LossKind::CrossEntropy => f64::from(rng.random_bool(0.5)),
                    LossKind::MeanSquaredError => rng.random_range(-0.5..0.5),
                };
                Sample { input: schema.encode(loan), target }
            })
            .collect();
        let refs: Vec<&Sample> = batch.iter().collect();
        let sum_config = TrainConfig { reduction: loanscore_core::widedeep::LossReduction::Sum, ..config };
        let (grads, _) = batch_gradients(&params, &refs, &sum_config, None).expect("gradients");

        let signs = relu_signs(&params, &batch);
        let mut probe = params.clone();
        let mut covered: BTreeMap<ParamFamily, bool> = BTreeMap::new();
        for c in coordinates(&params) {
            let original = probe.get(c);
            *probe.get_mut(c) = original + FD_STEP;
            let plus = batch_loss(&probe, &batch, kind);
            let plus_signs = relu_signs(&probe, &batch);
            *probe.get_mut(c) = original - FD_STEP;
            let minus = batch_loss(&probe, &batch, kind);
            let minus_signs = relu_signs(&probe, &batch);
            *probe.get_mut(c) = original;
            let entry = covered.entry(c.family()).or_insert(false);
            if plus_signs != signs || minus_signs != signs {
                stats.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads.get(c);
            let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            stats.max_err = stats.max_err.max(err);
            stats.checked += 1;
            *entry = true;
        }
        stats.families_uncovered += covered.values().filter(|&&c| !c).count();
        stats.configs += 1;
    }
    stats
}

fn criterion_gradients() -> Outcome {
    let ce = gradient_configs(101, LossKind::CrossEntropy);
    let mse = gradient_configs(202, LossKind::MeanSquaredError);
    let pass = [&ce, &mse]
        .iter()
        .all(|s| s.configs >= 20 && s.max_err < GRAD_TOLERANCE && s.families_uncovered == 0);
    outcome(
        pass,
        format!(
            "classification {} configs, {} coords, max rel err {:.2e}; regression {} configs, {} coords, max rel err {:.2e}; {} kink coords skipped",
            ce.configs,
            ce.checked,
            ce.max_err,
            mse.configs,
            mse.checked,
            mse.max_err,
            ce.kinks + mse.kinks
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. IRR against a grid scan and closed forms

const GRID_LO: f64 = -0.9999;
const GRID_HI: f64 = 10.0;
const GRID_POINTS: usize = 1_000_000;
const COARSE: usize = 1000;

fn oracle_npv(flows: &[CashFlowEvent], rate: f64) -> f64 {
    let t0 = flows[0].date;
    flows.iter().map(|f| f.amount * (1.0 + rate).powf(-((f.date - t0).num_days() as f64) / 365.0)).sum()
}

fn grid_rate(i: usize) -> f64 {
    GRID_LO + (GRID_HI - GRID_LO) * i as f64 / GRID_POINTS as f64
}

/// Grid point minimizing |NPV| over the full grid. NPV of a loan-shaped
/// schedule is decreasing, so the coarse pass locates the single sign
/// change and the fine pass scans every grid point inside it.
fn grid_oracle(flows: &[CashFlowEvent]) -> Option<f64> {
    let coarse: Vec<f64> = (0..=GRID_POINTS / COARSE).map(|j| oracle_npv(flows, grid_rate(j * COARSE))).collect();
    let changes = coarse.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
    if changes != 1 || coarse[0] <= 0.0 {
        return None;
    }
    let j = coarse.iter().position(|&v| v <= 0.0)?;
    let lo = (j - 1) * COARSE;
    (lo..=j * COARSE)
        .map(|i| (oracle_npv(flows, grid_rate(i)).abs(), i))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, i)| grid_rate(i))
}

fn date(rng: &mut ChaCha8Rng) -> NaiveDate {
    NaiveDate::from_ymd_opt(rng.random_range(2008..=2013), rng.random_range(1..=12), rng.random_range(1..=28))
        .expect("valid date")
}

/// Amortizing loan: funding, monthly annuity payments, and either full
/// repayment, an early payoff, or a default with an optional recovery.
/// The IRR may lie below the rate floor; callers redraw those.
fn random_schedule(rng: &mut ChaCha8Rng) -> Vec<CashFlowEvent> {
    let issue = date(rng);
    let principal: f64 = rng.random_range(1000.0..35000.0);
    let term: u32 = if rng.random_bool(0.75) { 36 } else { 60 };
    let annual: f64 = rng.random_range(0.05..0.30);
    let m = (1.0 + annual).powf(1.0 / 12.0) - 1.0;
    let pay = principal * m / (1.0 - (1.0 + m).powi(-(term as i32)));
    let at = |k: u32| issue.checked_add_months(Months::new(k)).expect("date in range");
    let mut flows = vec![CashFlowEvent::new(issue, -principal)];
    let outcome = rng.random_range(0..3);
    let stop = if outcome == 0 { term } else { rng.random_range(1..term) };
    for k in 1..=stop {
        flows.push(CashFlowEvent::new(at(k), pay));
    }
    let growth = (1.0 + m).powi(stop as i32);
    let balance = principal * growth - pay * (growth - 1.0) / m;
    match outcome {
        1 => flows.push(CashFlowEvent::new(at(stop + 1), balance)),
        2 if rng.random_bool(0.5) => flows.push(CashFlowEvent::new(at(stop + 3), balance * rng.random_range(0.0..0.3))),
        _ => {}
    }
    flows
}

fn criterion_irr() -> Outcome {
    let cfg = IrrConfig::default();
    let step = (GRID_HI - GRID_LO) / GRID_POINTS as f64;
    let mut rng = seeded_rng(2);
    let mut grid_worst: f64 = 0.0;
    let mut grid_fail = 0;
    let mut scale_worst: f64 = 0.0;
    for _ in 0..100 {
        let flows = loop {
            let f = random_schedule(&mut rng);
            if oracle_npv(&f, GRID_LO) > 0.0 {
                break f;
            }
        };
        let solved = solve_irr(&flows, &cfg).map(|s| s.rate);
        match (solved, grid_oracle(&flows)) {
            (Ok(rate), Some(grid)) => grid_worst = grid_worst.max((rate - grid).abs()),
            _ => grid_fail += 1,
        }
        let c = 10f64.powf(rng.random_range(-3.0..6.0));
        let scaled: Vec<CashFlowEvent> = flows.iter().map(|f| CashFlowEvent::new(f.date, c * f.amount)).collect();
        if let (Ok(a), Ok(b)) = (solve_irr(&flows, &cfg), solve_irr(&scaled, &cfg)) {
            scale_worst = scale_worst.max((a.rate - b.rate).abs());
        } else {
            grid_fail += 1;
        }
    }
    let mut closed_worst: f64 = 0.0;
    for _ in 0..100 {
        let start = date(&mut rng);
        let p: f64 = rng.random_range(100.0..50_000.0);
        let r: f64 = rng.random_range(-0.9..2.0);
        let years = rng.random_range(1..=3);
        let back = p * (1.0 + r).powi(years);
        let end = start + chrono::Duration::days(365 * i64::from(years));
        let flows = [CashFlowEvent::new(start, -p), CashFlowEvent::new(end, back)];
        match solve_irr(&flows, &cfg) {
            Ok(s) => closed_worst = closed_worst.max((s.rate - r).abs()),
            Err(_) => grid_fail += 1,
        }
    }
    let pass = grid_fail == 0 && grid_worst <= step && closed_worst <= 1e-9 && scale_worst <= 1e-9;
    outcome(
        pass,
        format!(
            "grid max gap {grid_worst:.2e} (step {step:.2e}), closed-form max err {closed_worst:.2e}, scale max diff {scale_worst:.2e}, {grid_fail} unsolved"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. resampling invariants

type SampleKey = (Vec<usize>, Vec<u64>, Vec<usize>, u64);

fn key(s: &Sample) -> SampleKey {
    (
        s.input.wide.active.clone(),
        s.input.deep.dense.iter().map(|v| v.to_bits()).collect(),
        s.input.deep.embedding_ids.clone(),
        s.target.to_bits(),
    )
}

fn counts(samples: &[Sample]) -> HashMap<SampleKey, usize> {
    let mut m = HashMap::new();
    for s in samples {
        *m.entry(key(s)).or_insert(0) += 1;
    }
    m
}

fn class_counts(samples: &[Sample]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.target > 0.5).count();
    (pos, samples.len() - pos)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn criterion_resampling() -> Outcome {
    let loans = gen_synthetic(&SynthConfig { n_loans: 20_000, seed: 3, ..SynthConfig::default() }).expect("cohort");
    let schema = fit_schema(&loans, &SchemaConfig::default()).expect("schema");
    let samples = pd_samples(&schema, &loans).expect("labels");
    let plan = |method| ResamplePlan { method, k_neighbors: 5, seed: 3 };
    let mut problems = Vec::new();

    let under = resample(&samples, &plan(ResampleMethod::Undersample)).expect("undersample");
    let (p, n) = class_counts(&under);
    if p != n {
        problems.push(format!("undersample counts {p}/{n}"));
    }
    let input = counts(&samples);
    if counts(&under).iter().any(|(k, c)| input.get(k).copied().unwrap_or(0) < *c) {
        problems.push("undersample output not a subset".into());
    }

    let over = resample(&samples, &plan(ResampleMethod::Oversample)).expect("oversample");
    let (p, n) = class_counts(&over);
    if p != n {
        problems.push(format!("oversample counts {p}/{n}"));
    }
    let minority_positive = class_counts(&samples).0 <= class_counts(&samples).1;
    let is_minority = |s: &Sample| (s.target > 0.5) == minority_positive;
    let minority_keys = counts(&samples.iter().filter(|s| is_minority(s)).cloned().collect::<Vec<_>>());
    if over[..samples.len()] != samples[..] || over[samples.len()..].iter().any(|s| !minority_keys.contains_key(&key(s)))
    {
        problems.push("oversample additions are not copies of minority rows".into());
    }

    let sm = resample(&samples, &plan(ResampleMethod::Smote)).expect("smote");
    let (p, n) = class_counts(&sm);
    if p != n {
        problems.push(format!("smote counts {p}/{n}"));
    }
    let minority: Vec<&Sample> = samples.iter().filter(|s| is_minority(s)).collect();
    let matrix: Vec<Vec<f64>> = minority.iter().map(|s| s.input.deep.dense.clone()).collect();
    let provenance = smote(&matrix, samples.len() - minority.len(), &plan(ResampleMethod::Smote)).expect("provenance");
    let added = &sm[samples.len()..];
    if sm[..samples.len()] != samples[..] || added.len() != provenance.len() {
        problems.push("smote did not append exactly the synthetic rows".into());
    }
    let mut worst_u_spread: f64 = 0.0;
    let mut bad_rows = 0;
    for (row, out) in provenance.iter().zip(added) {
        let base = minority[row.base];
        let b = &matrix[row.base];
        let z = &matrix[row.neighbor];
        let x = &out.input.deep.dense;
        if out.input.wide != base.input.wide || out.input.deep.embedding_ids != base.input.deep.embedding_ids {
            bad_rows += 1;
            continue;
        }
        let mut dists: Vec<f64> =
            matrix.iter().enumerate().filter(|&(j, _)| j != row.base).map(|(_, m)| sq_dist(b, m)).collect();
        dists.select_nth_unstable_by(4, f64::total_cmp);
        let kth = dists[4];
        if row.neighbor == row.base || sq_dist(b, z) > kth {
            bad_rows += 1;
            continue;
        }
        let us: Vec<f64> = (0..b.len())
            .filter_map(|j| {
                let d = z[j] - b[j];
                if d.abs() > 1e-12 {
                    Some((x[j] - b[j]) / d)
                } else {
                    if (x[j] - b[j]).abs() > 1e-9 {
                        worst_u_spread = f64::INFINITY;
                    }
                    None
                }
            })
            .collect();
        if us.is_empty() {
            continue;
        }
        let lo = us.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = us.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst_u_spread = worst_u_spread.max(hi - lo);
        if lo < -1e-9 || hi > 1.0 + 1e-9 {
            bad_rows += 1;
        }
    }
    if bad_rows > 0 || worst_u_spread > 1e-9 {
        problems.push(format!("{bad_rows} SMOTE rows fail reconstruction, u spread {worst_u_spread:.2e}"));
    }
    let detail = if problems.is_empty() {
        format!(
            "n={}, minority {}, {} SMOTE rows reconstructed, max u spread {worst_u_spread:.1e}",
            samples.len(),
            minority.len(),
            provenance.len()
        )
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// 4-6. training, imbalance and approach comparison on the default run

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn default_experiment() -> (RunConfig, loanscore_core::domain::DatasetSplit, Experiment, Duration) {
    let start = Instant::now();
    let config = RunConfig::default();
    let mut cohort = commands::load_cohort(&config).expect("cohort");
    let split = commands::labeled_split(&config, &mut cohort).expect("split");
    let experiment = run_experiment(&split.train, &split.test, &config.pipeline).expect("experiment");
    (config, split, experiment, start.elapsed())
}

fn criterion_training(e: &Experiment) -> Outcome {
    let ce = &e.training.stage1.loss_curve;
    let mse = &e.training.stage2.loss_curve;
    let (ce_first, ce_last) = (mean(&ce[..100]), mean(&ce[ce.len() - 100..]));
    let (mse_first, mse_last) = (mean(&mse[..100]), mean(&mse[mse.len() - 100..]));
    let ratio = ce_last / ce_first;
    outcome(
        ratio < 0.5 && mse_last < mse_first,
        format!(
            "stage-1 cross-entropy {ce_first:.4} -> {ce_last:.4} (ratio {ratio:.3} < 0.5); stage-2 MSE {mse_first:.5} -> {mse_last:.5}"
        ),
    )
}

fn criterion_imbalance(config: &RunConfig, split: &loanscore_core::domain::DatasetSplit) -> Outcome {
    let cell = |c, m| classification_cell(split, &config.pipeline, c, m).expect("grid cell").recall_n;
    let smote = cell(Components::WideAndDeep, ResampleMethod::Smote);
    let none = cell(Components::WideAndDeep, ResampleMethod::None);
    let wide = cell(Components::Wide, ResampleMethod::Smote);
    outcome(
        smote - none >= 0.05 && smote >= wide,
        format!("Recall_N wide&deep smote {smote:.4} vs none {none:.4} (gap {:.4} >= 0.05); wide-only smote {wide:.4}", smote - none),
    )
}

fn criterion_comparison(e: &Experiment) -> Outcome {
    let avg = |a| e.comparison.result(a).and_then(|r| r.average_actual_irr);
    let (a1, a2, a3) = (avg(Approach::CreditScoring), avg(Approach::ProfitScoring), avg(Approach::TwoStage));
    let pass = matches!((a1, a2, a3), (Some(a1), Some(a2), Some(a3)) if a3 > a2 && a3 > a1);
    let show = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    outcome(
        pass,
        format!("top-30 average actual IRR: approach 1 {}, approach 2 {}, approach 3 {}", show(a1), show(a2), show(a3)),
    )
}

// ---------------------------------------------------------------------------
// 7. determinism and round trips

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("read dir") {
        let entry = entry.expect("entry");
        out.insert(entry.file_name().to_string_lossy().into_owned(), fs::read(entry.path()).expect("read"));
    }
    out
}

fn random_input(schema: &FeatureSchema, rng: &mut ChaCha8Rng) -> EncodedLoan {
    let mut active: Vec<usize> = schema.wide_blocks.iter().map(|b| b.offset + rng.random_range(0..b.size)).collect();
    active.sort_unstable();
    let dense = (0..schema.dense_len()).map(|_| rng.random_range(-3.0..3.0)).collect();
    let embedding_ids = schema.embedding_vocab_sizes().into_iter().map(|n| rng.random_range(0..n)).collect();
    EncodedLoan { wide: WideVector { active, wide_dim: schema.wide_dim }, deep: DeepVector { dense, embedding_ids } }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

fn same_loan(a: &LoanRecord, b: &LoanRecord) -> bool {
    let floats = [
        (a.funded_amount, b.funded_amount),
        (a.installment, b.installment),
        (a.annual_income, b.annual_income),
        (a.credit_history_length, b.credit_history_length),
        (a.revol_util, b.revol_util),
        (a.loan_to_income, b.loan_to_income),
        (a.installment_to_income, b.installment_to_income),
        (a.dti, b.dti),
        (a.interest_rate.unwrap_or(0.0), b.interest_rate.unwrap_or(0.0)),
        (a.irr.unwrap_or(f64::NAN), b.irr.unwrap_or(f64::NAN)),
    ];
    let flows_match = match (&a.cash_flows, &b.cash_flows) {
        (Some(x), Some(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.date == q.date && close(p.amount, q.amount)),
        (None, None) => true,
        _ => false,
    };
    floats.iter().all(|&(x, y)| close(x, y))
        && a.interest_rate.is_some() == b.interest_rate.is_some()
        && flows_match
        && (a.loan_id.as_str(), a.issue_date, a.term_months, a.fico, a.status)
            == (b.loan_id.as_str(), b.issue_date, b.term_months, b.fico, b.status)
        && (&a.grade, &a.subgrade, &a.purpose, &a.housing, &a.employment_length)
            == (&b.grade, &b.subgrade, &b.purpose, &b.housing, &b.employment_length)
        && (a.delinq_2yrs, a.inquiries_6m, a.public_records, a.open_accounts, a.months_since_last_delinq)
            == (b.delinq_2yrs, b.inquiries_6m, b.public_records, b.open_accounts, b.months_since_last_delinq)
}

fn criterion_round_trips(e: &Experiment) -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut problems = Vec::new();

    let mut config = RunConfig::default();
    config.out_dir = tmp.path().join("run");
    let run_all = |config: &RunConfig| {
        commands::cmd_synth(config).expect("synth");
        commands::cmd_train(config).expect("train");
        commands::cmd_compare(config).expect("compare");
        snapshot(&config.out_dir)
    };
    let first = run_all(&config);
    let second = run_all(&config);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    if !differing.is_empty() || first.len() != second.len() {
        problems.push(format!("reports differ between identical runs: {differing:?}"));
    }

    let mut rng = seeded_rng(7);
    let mut mismatches = 0;
    for (name, params) in [("stage1.model", &e.model.stage1), ("stage2.model", &e.model.stage2)] {
        let path = tmp.path().join(name);
        artifact::save_model(&path, params, &e.model.schema).expect("save");
        let loaded = artifact::load_model(&path).expect("load");
        for _ in 0..1000 {
            let x = random_input(&e.model.schema, &mut rng);
            let before = params.predict(&x).expect("predict");
            let after = loaded.params.predict(&x).expect("predict");
            if before.to_bits() != after.to_bits() {
                mismatches += 1;
            }
        }
    }
    if mismatches > 0 {
        problems.push(format!("{mismatches} predictions changed after save/load"));
    }

    let loans = gen_synthetic(&SynthConfig { n_loans: 2000, seed: 11, ..SynthConfig::default() }).expect("cohort");
    let loans_path = tmp.path().join("loans.csv");
    let payments_path = tmp.path().join("payments.csv");
    write_loans(fs::File::create(&loans_path).expect("create"), &loans).expect("write loans");
    write_payments(fs::File::create(&payments_path).expect("create"), &loans).expect("write payments");
    let loaded = load_loans(&loans_path, &ColumnMap::default()).expect("reload");
    let (mut back, _) = attach_cashflows(loaded.loans, &load_payments(&payments_path).expect("payments"));
    assign_irr(&mut back, &IrrConfig::default());
    let differing = loans.iter().zip(&back).filter(|(a, b)| !same_loan(a, b)).count();
    if back.len() != loans.len() || differing > 0 || !loaded.rejects.is_empty() {
        problems.push(format!(
            "CSV round trip: {} of {} loans back, {differing} differ, {} rejects",
            back.len(),
            loans.len(),
            loaded.rejects.len()
        ));
    }
    let detail = if problems.is_empty() {
        format!(
            "{} report files byte-identical across runs, 2000 predictions bit-exact after reload, {} loans round-tripped",
            first.len(),
            loans.len()
        )
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "gradient correctness", Duration::from_secs(60), criterion_gradients);
    ok &= run(2, "IRR oracle equivalence", Duration::from_secs(30), criterion_irr);
    ok &= run(3, "resampling invariants", Duration::from_secs(30), criterion_resampling);

    let (config, split, experiment, train_time) = default_experiment();
    println!("(default run: {} train / {} test loans, trained in {:.1}s)", split.train.len(), split.test.len(), train_time.as_secs_f64());
    ok &= run(4, "training behavior", Duration::from_secs(300).saturating_sub(train_time), || criterion_training(&experiment));
    ok &= run(5, "imbalance direction", Duration::from_secs(600), || criterion_imbalance(&config, &split));
    ok &= run(6, "two-stage superiority", Duration::from_secs(600).saturating_sub(train_time), || {
        criterion_comparison(&experiment)
    });
    ok &= run(7, "determinism and round trips", Duration::from_secs(600), || criterion_round_trips(&experiment));
    println!("criterion 8 full-data reproduction: SKIP (manual reproduction guide in README, not an automated gate)");

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
