use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 12] = [
    "--set",
    "synth.n_loans=1500",
    "--set",
    "stage1.steps=40",
    "--set",
    "stage2.steps=40",
    "--set",
    "stage1.hidden=8,4",
    "--set",
    "stage2.hidden=8,4",
    "--set",
    "top_k=10",
];

fn loanscore(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loanscore")).current_dir(dir).args(args).args(SMALL).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&loanscore(p, &[])), 1);
    assert_eq!(code(&loanscore(p, &["--help"])), 0);
    assert_eq!(code(&loanscore(p, &["describe", "--set", "no.such.key=1"])), 1);
    assert_eq!(code(&loanscore(p, &["describe", "--gamma", "1.5"])), 1);
    assert_eq!(code(&loanscore(p, &["describe", "--resample", "bootstrap"])), 1);
    let out = loanscore(p, &["score"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--model"));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&loanscore(p, &["describe", "--set", "data.loans=absent.csv"])), 2);
    assert_eq!(code(&loanscore(p, &["synth", "--out-dir", "data"])), 0);
    let out = loanscore(p, &["train", "--set", "data.loans=data/loans.csv"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("status and an IRR"));
}

#[test]
fn identical_runs_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let read = |name: &str| fs::read(p.join("out").join(name)).unwrap();
    assert_eq!(code(&loanscore(p, &["compare", "--seed", "4"])), 0);
    let first = (read("compare.json"), read("selections.csv"), read("scatter.csv"), read("stage1_loss.csv"));
    assert_eq!(code(&loanscore(p, &["compare", "--seed", "4"])), 0);
    let second = (read("compare.json"), read("selections.csv"), read("scatter.csv"), read("stage1_loss.csv"));
    assert!(first == second);
    assert_eq!(code(&loanscore(p, &["compare", "--seed", "5"])), 0);
    assert_ne!(read("compare.json"), first.0);
}

#[test]
fn train_then_score_listings() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&loanscore(p, &["synth", "--out-dir", "data"])), 0);
    let out = loanscore(
        p,
        &["train", "--out-dir", "model", "--set", "data.loans=data/loans.csv", "--set", "data.payments=data/payments.csv"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["stage1.model", "stage2.model", "stage1_loss.csv", "stage2_loss.csv", "train.json"] {
        assert!(p.join("model").join(f).exists(), "{f}");
    }

    let header = "loan_id,issue_date,funded_amount,installment,term_months,grade,subgrade,purpose,fico,\
annual_income,housing,employment_length,credit_history_length,delinq_2yrs,inquiries_6m,public_records,\
revol_util,open_accounts,months_since_last_delinq,dti";
    let listing = |id: &str, purpose: &str| {
        format!("{id},2014-02-01,12000,380,36,B,B2,{purpose},705,64000,rent,3,9,0,1,0,0.5,8,never,0.12")
    };
    let text = format!("{header}\n{}\n{}\n", listing("L1", "credit_card"), listing("L2", "space_travel"));
    fs::write(p.join("listings.csv"), text).unwrap();
    let out = loanscore(p, &["score", "--model", "model", "--listings", "listings.csv", "--out-dir", "scored"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let scored = fs::read_to_string(p.join("scored/scored.csv")).unwrap();
    let lines: Vec<&str> = scored.lines().collect();
    assert_eq!(lines[0], "loan_id,pd,gate,predicted_irr,unseen_levels");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("L1,") && lines[1].ends_with(','), "{scored}");
    assert!(lines[1].contains(",passed,") && lines[2].contains(",passed,"), "{scored}");
    assert!(lines[2].starts_with("L2,") && lines[2].ends_with(",purpose"));

    fs::write(p.join("empty.csv"), format!("{header}\n")).unwrap();
    let out = loanscore(p, &["score", "--model", "model", "--listings", "empty.csv", "--out-dir", "empty"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(p.join("empty/scored.csv")).unwrap().lines().count(), 1);
}

#[test]
fn evaluate_writes_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = loanscore(p, &["evaluate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p.join("out/evaluate.json")).unwrap()).unwrap();
    assert_eq!(report["classification"].as_array().unwrap().len(), 9);
    assert_eq!(report["regression"].as_array().unwrap().len(), 3);
    assert_eq!(report["header"]["config"]["synth.n_loans"], "1500");
}
