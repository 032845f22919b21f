use chrono::NaiveDate;
use loanscore::io::{read_loans, read_payments, write_loans, write_payments, ColumnMap, IngestError};
use loanscore_core::domain::{DelinquencyAge, LoanStatus};
use loanscore_core::synth::{gen_synthetic, SynthConfig};

const HEADER: &str = "loan_id,issue_date,funded_amount,installment,term_months,grade,subgrade,purpose,fico,\
annual_income,housing,employment_length,credit_history_length,delinq_2yrs,inquiries_6m,public_records,\
revol_util,open_accounts,months_since_last_delinq,dti,status";

fn row(id: &str, grade: &str, subgrade: &str, status: &str) -> String {
    format!(
        "{id},2011-03-15,10000,300,36 months,{grade},{subgrade},credit_card,700,50000,rent,5 years,12.5,0,1,0,0.45,9,never,14.2,{status}"
    )
}

fn file(rows: &[String]) -> String {
    let mut s = String::from(HEADER);
    for r in rows {
        s.push('\n');
        s.push_str(r);
    }
    s.push('\n');
    s
}

#[test]
fn three_rows_load_with_derived_ratios() {
    let text = file(&[row("a", "B", "B3", "Fully Paid"), row("b", "C", "C1", "Charged Off"), row("c", "A", "A5", "")]);
    let loaded = read_loans(text.as_bytes(), &ColumnMap::default()).unwrap();
    assert!(loaded.rejects.is_empty(), "{:?}", loaded.rejects);
    assert_eq!(loaded.loans.len(), 3);
    let a = &loaded.loans[0];
    assert_eq!(a.issue_date, NaiveDate::from_ymd_opt(2011, 3, 15).unwrap());
    assert_eq!(a.term_months, 36);
    assert_eq!(a.months_since_last_delinq, DelinquencyAge::Never);
    assert!((a.loan_to_income - 0.2).abs() < 1e-15);
    assert!((a.installment_to_income - 0.072).abs() < 1e-15);
    let statuses: Vec<_> = loaded.loans.iter().map(|l| l.status).collect();
    assert_eq!(statuses, [Some(LoanStatus::NonDefault), Some(LoanStatus::Default), None]);
}

#[test]
fn grade_subgrade_mismatch_is_rejected_with_its_row() {
    let text = file(&[row("a", "B", "B3", "Fully Paid"), row("b", "B", "C2", "Fully Paid"), row("c", "A", "A1", "")]);
    let loaded = read_loans(text.as_bytes(), &ColumnMap::default()).unwrap();
    assert_eq!(loaded.loans.iter().map(|l| l.loan_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
    assert_eq!(loaded.rejects.len(), 1);
    let r = &loaded.rejects[0];
    assert_eq!((r.row, r.loan_id.as_str(), r.field.as_str()), (2, "b", "subgrade"));
    assert_eq!(r.violation, "grade/subgrade mismatch");
}

#[test]
fn missing_required_column_is_a_schema_error() {
    let text = file(&[row("a", "B", "B3", "")]).replace(",purpose,", ",reason,");
    match read_loans(text.as_bytes(), &ColumnMap::default()) {
        Err(IngestError::Schema { field, .. }) => assert_eq!(field, "purpose"),
        other => panic!("expected a schema error, got {other:?}"),
    }
    let mut map = ColumnMap::default();
    map.set("purpose", "reason").unwrap();
    assert_eq!(read_loans(text.as_bytes(), &map).unwrap().loans.len(), 1);
}

#[test]
fn unknown_field_in_column_map() {
    assert!(matches!(ColumnMap::default().set("colour", "x"), Err(IngestError::UnknownField(_))));
}

#[test]
fn unparseable_value_names_row_and_field() {
    let text = file(&[row("a", "B", "B3", ""), row("b", "B", "B3", "").replace(",700,", ",seven hundred,")]);
    match read_loans(text.as_bytes(), &ColumnMap::default()) {
        Err(IngestError::Parse { row, field, .. }) => assert_eq!((row, field.as_str()), (2, "fico")),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn empty_file_yields_no_loans() {
    let loaded = read_loans("".as_bytes(), &ColumnMap::default()).unwrap();
    assert!(loaded.loans.is_empty() && loaded.rejects.is_empty());
    let header_only = read_loans(format!("{HEADER}\n").as_bytes(), &ColumnMap::default()).unwrap();
    assert!(header_only.loans.is_empty());
}

#[test]
fn payments_are_grouped_and_sorted() {
    let text = "loan_id,date,amount\nx,2012-03-01,10\ny,2012-01-01,5\nx,2012-01-01,30\nx,2012-02-01,20\n";
    let p = read_payments(text.as_bytes()).unwrap();
    let amounts: Vec<f64> = p["x"].iter().map(|e| e.amount).collect();
    assert_eq!(amounts, [30.0, 20.0, 10.0]);
    assert_eq!(p["y"].len(), 1);
    assert!(read_payments("loan_id,date,amount\n".as_bytes()).unwrap().is_empty());
}

#[test]
fn synthetic_loans_survive_a_csv_round_trip() {
    let loans = gen_synthetic(&SynthConfig { n_loans: 200, seed: 5, ..SynthConfig::default() }).unwrap();
    let mut buf = Vec::new();
    write_loans(&mut buf, &loans).unwrap();
    let back = read_loans(buf.as_slice(), &ColumnMap::default()).unwrap();
    assert!(back.rejects.is_empty());
    for (a, b) in loans.iter().zip(&back.loans) {
        let mut a = a.clone();
        a.cash_flows = None;
        a.irr = None;
        assert_eq!(&a, b);
    }
    let mut pay = Vec::new();
    write_payments(&mut pay, &loans).unwrap();
    let payments = read_payments(pay.as_slice()).unwrap();
    for l in &loans {
        let flows = l.cash_flows.as_ref().unwrap();
        assert_eq!(payments.get(&l.loan_id).map(Vec::as_slice).unwrap_or(&[]), &flows[1..]);
    }
}
