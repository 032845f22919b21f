//! Loan and payment CSV files.
//!
//! Loans are read through a [`ColumnMap`] so exports with other header
//! names can be loaded without editing. Rows that parse but break a record
//! invariant are returned as rejects; rows that do not parse stop the load.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use loanscore_core::domain::{derive_ratios, validate_record, CashFlowEvent, DelinquencyAge, LoanRecord, LoanStatus};
use serde::Serialize;
use thiserror::Error;

/// Fields read from a loans file, in the order they are written.
pub const LOAN_FIELDS: [&str; 24] = [
    "loan_id",
    "issue_date",
    "funded_amount",
    "installment",
    "term_months",
    "interest_rate",
    "grade",
    "subgrade",
    "purpose",
    "fico",
    "annual_income",
    "housing",
    "employment_length",
    "credit_history_length",
    "delinq_2yrs",
    "inquiries_6m",
    "public_records",
    "revol_util",
    "open_accounts",
    "months_since_last_delinq",
    "loan_to_income",
    "installment_to_income",
    "dti",
    "status",
];

/// Fields that may be absent from the file. The two income ratios are
/// derived when missing; rate and status are simply left empty.
pub const OPTIONAL_FIELDS: [&str; 4] = ["interest_rate", "loan_to_income", "installment_to_income", "status"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {column:?} (field {field}) not found in header")]
    Schema { field: String, column: String },
    #[error("row {row}: cannot parse {field} from {value:?}")]
    Parse { row: usize, field: String, value: String },
    #[error("unknown loan field {0:?} in column map")]
    UnknownField(String),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

/// Source column for every loan field. Unmapped fields use their own name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ColumnMap {
    overrides: BTreeMap<String, String>,
}

impl ColumnMap {
    pub fn set(&mut self, field: &str, column: &str) -> Result<(), IngestError> {
        if !LOAN_FIELDS.contains(&field) {
            return Err(IngestError::UnknownField(field.to_string()));
        }
        self.overrides.insert(field.to_string(), column.to_string());
        Ok(())
    }

    pub fn column<'a>(&'a self, field: &'a str) -> &'a str {
        self.overrides.get(field).map(String::as_str).unwrap_or(field)
    }

    pub fn overrides(&self) -> &BTreeMap<String, String> {
        &self.overrides
    }
}

/// One rejected row; `row` counts data rows from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub row: usize,
    pub loan_id: String,
    pub field: String,
    pub violation: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedLoans {
    pub loans: Vec<LoanRecord>,
    pub rejects: Vec<Reject>,
}

struct RowReader<'a> {
    record: &'a csv::StringRecord,
    index: &'a BTreeMap<&'static str, usize>,
    row: usize,
}

impl RowReader<'_> {
    fn raw(&self, field: &'static str) -> Option<&str> {
        self.index.get(field).and_then(|&i| self.record.get(i)).map(str::trim)
    }

    fn text(&self, field: &'static str) -> String {
        self.raw(field).unwrap_or("").to_string()
    }

    fn error(&self, field: &str, value: &str) -> IngestError {
        IngestError::Parse { row: self.row, field: field.to_string(), value: value.to_string() }
    }

    fn parse<T: std::str::FromStr>(&self, field: &'static str) -> Result<T, IngestError> {
        let v = self.raw(field).unwrap_or("");
        v.parse().map_err(|_| self.error(field, v))
    }

    fn optional_f64(&self, field: &'static str) -> Result<Option<f64>, IngestError> {
        match self.raw(field) {
            None | Some("") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| self.error(field, v)),
        }
    }

    /// Leading integer of values such as `36` or `36 months`.
    fn term(&self) -> Result<u32, IngestError> {
        let v = self.raw("term_months").unwrap_or("");
        let digits: String = v.chars().take_while(char::is_ascii_digit).collect();
        digits.parse().map_err(|_| self.error("term_months", v))
    }

    fn date(&self, field: &'static str) -> Result<NaiveDate, IngestError> {
        let v = self.raw(field).unwrap_or("");
        NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|_| self.error(field, v))
    }

    fn delinquency(&self) -> Result<DelinquencyAge, IngestError> {
        match self.raw("months_since_last_delinq") {
            None | Some("") => Ok(DelinquencyAge::Never),
            Some(v) if v.eq_ignore_ascii_case("never") => Ok(DelinquencyAge::Never),
            Some(v) => v.parse().map(DelinquencyAge::Months).map_err(|_| self.error("months_since_last_delinq", v)),
        }
    }

    fn status(&self) -> Result<Option<LoanStatus>, IngestError> {
        match self.raw("status") {
            None | Some("") => Ok(None),
            Some(v) => LoanStatus::parse(v).map(Some).ok_or_else(|| self.error("status", v)),
        }
    }
}

fn parse_row(r: &RowReader<'_>) -> Result<LoanRecord, IngestError> {
    Ok(LoanRecord {
        loan_id: r.text("loan_id"),
        issue_date: r.date("issue_date")?,
        funded_amount: r.parse("funded_amount")?,
        installment: r.parse("installment")?,
        term_months: r.term()?,
        interest_rate: r.optional_f64("interest_rate")?,
        grade: r.text("grade"),
        subgrade: r.text("subgrade"),
        purpose: r.text("purpose"),
        fico: r.parse("fico")?,
        annual_income: r.parse("annual_income")?,
        housing: r.text("housing"),
        employment_length: r.text("employment_length"),
        credit_history_length: r.parse("credit_history_length")?,
        delinq_2yrs: r.parse("delinq_2yrs")?,
        inquiries_6m: r.parse("inquiries_6m")?,
        public_records: r.parse("public_records")?,
        revol_util: r.parse("revol_util")?,
        open_accounts: r.parse("open_accounts")?,
        months_since_last_delinq: r.delinquency()?,
        loan_to_income: r.optional_f64("loan_to_income")?.unwrap_or(f64::NAN),
        installment_to_income: r.optional_f64("installment_to_income")?.unwrap_or(f64::NAN),
        dti: r.parse("dti")?,
        status: r.status()?,
        cash_flows: None,
        irr: None,
    })
}

/// Read loans from any CSV source.
pub fn read_loans<R: Read>(reader: R, map: &ColumnMap) -> Result<LoadedLoans, IngestError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    if header.is_empty() {
        return Ok(LoadedLoans::default());
    }
    let mut index = BTreeMap::new();
    for field in LOAN_FIELDS {
        let column = map.column(field);
        match header.iter().position(|h| h == column) {
            Some(i) => {
                index.insert(field, i);
            }
            None if OPTIONAL_FIELDS.contains(&field) => {}
            None => return Err(IngestError::Schema { field: field.to_string(), column: column.to_string() }),
        }
    }

    let mut out = LoadedLoans::default();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let reader = RowReader { record: &record, index: &index, row };
        let mut loan = parse_row(&reader)?;
        if loan.loan_to_income.is_nan() || loan.installment_to_income.is_nan() {
            match derive_ratios(&loan) {
                Ok(derived) => {
                    loan.loan_to_income = derived.loan_to_income;
                    loan.installment_to_income = derived.installment_to_income;
                }
                Err(e) => {
                    out.rejects.push(Reject {
                        row,
                        loan_id: loan.loan_id.clone(),
                        field: "annual_income".to_string(),
                        violation: e.to_string(),
                    });
                    continue;
                }
            }
        }
        let violations = validate_record(&loan);
        if violations.is_empty() {
            out.loans.push(loan);
        } else {
            out.rejects.extend(violations.into_iter().map(|v| Reject {
                row,
                loan_id: loan.loan_id.clone(),
                field: v.field.to_string(),
                violation: v.rule.as_str().to_string(),
            }));
        }
    }
    Ok(out)
}

pub fn load_loans(path: &Path, map: &ColumnMap) -> Result<LoadedLoans, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_loans(file, map)
}

/// Read `loan_id,date,amount` rows into per-loan event lists sorted by date.
pub fn read_payments<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<CashFlowEvent>>, IngestError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    let mut cols = [0usize; 3];
    for (slot, name) in cols.iter_mut().zip(["loan_id", "date", "amount"]) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::Schema { field: name.to_string(), column: name.to_string() })?;
    }
    let mut out: BTreeMap<String, Vec<CashFlowEvent>> = BTreeMap::new();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let get = |c: usize| record.get(c).unwrap_or("");
        let err = |field: &str, value: &str| IngestError::Parse {
            row,
            field: field.to_string(),
            value: value.to_string(),
        };
        let date = NaiveDate::parse_from_str(get(cols[1]), "%Y-%m-%d").map_err(|_| err("date", get(cols[1])))?;
        let amount: f64 = get(cols[2]).parse().map_err(|_| err("amount", get(cols[2])))?;
        out.entry(get(cols[0]).to_string()).or_default().push(CashFlowEvent::new(date, amount));
    }
    for events in out.values_mut() {
        events.sort_by_key(|e| e.date);
    }
    Ok(out)
}

pub fn load_payments(path: &Path) -> Result<BTreeMap<String, Vec<CashFlowEvent>>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_payments(file)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write loans with canonical headers. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_loans<W: Write>(writer: W, loans: &[LoanRecord]) -> Result<(), IngestError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(LOAN_FIELDS)?;
    for l in loans {
        let delinq = match l.months_since_last_delinq {
            DelinquencyAge::Never => "never".to_string(),
            DelinquencyAge::Months(m) => m.to_string(),
        };
        csv.write_record([
            l.loan_id.clone(),
            l.issue_date.format("%Y-%m-%d").to_string(),
            l.funded_amount.to_string(),
            l.installment.to_string(),
            l.term_months.to_string(),
            opt(l.interest_rate),
            l.grade.clone(),
            l.subgrade.clone(),
            l.purpose.clone(),
            l.fico.to_string(),
            l.annual_income.to_string(),
            l.housing.clone(),
            l.employment_length.clone(),
            l.credit_history_length.to_string(),
            l.delinq_2yrs.to_string(),
            l.inquiries_6m.to_string(),
            l.public_records.to_string(),
            l.revol_util.to_string(),
            l.open_accounts.to_string(),
            delinq,
            l.loan_to_income.to_string(),
            l.installment_to_income.to_string(),
            l.dti.to_string(),
            l.status.map(|s| s.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

/// Write every loan's payment events (the funding outflow is implied by
/// the loan row and not written).
pub fn write_payments<W: Write>(writer: W, loans: &[LoanRecord]) -> Result<(), IngestError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["loan_id", "date", "amount"])?;
    for l in loans {
        for e in l.cash_flows.iter().flat_map(|f| f.iter().skip(1)) {
            csv.write_record([l.loan_id.as_str(), &e.date.format("%Y-%m-%d").to_string(), &e.amount.to_string()])?;
        }
    }
    csv.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

pub fn write_rejects<W: Write>(writer: W, rejects: &[Reject]) -> Result<(), IngestError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["row", "field", "violation"])?;
    for r in rejects {
        csv.write_record([r.row.to_string().as_str(), &r.field, &r.violation])?;
    }
    csv.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

/// Create `path` for writing, mapping errors to [`IngestError::Io`].
pub fn create(path: &Path) -> Result<File, IngestError> {
    File::create(path).map_err(|e| IngestError::io(path, e))
}
