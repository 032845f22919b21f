//! Feature schema: vocabularies, cross-product blocks and standardization
//! statistics, fitted on training loans and used to encode any loan into a
//! sparse wide vector and a dense-plus-embedding deep vector.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::LoanRecord;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalFeature {
    Grade,
    Subgrade,
    Purpose,
    Fico,
    Housing,
    EmploymentLength,
}

impl CategoricalFeature {
    /// Basis features of the wide component, in block order.
    pub const ALL: [CategoricalFeature; 6] = [
        CategoricalFeature::Grade,
        CategoricalFeature::Subgrade,
        CategoricalFeature::Purpose,
        CategoricalFeature::Fico,
        CategoricalFeature::Housing,
        CategoricalFeature::EmploymentLength,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CategoricalFeature::Grade => "grade",
            CategoricalFeature::Subgrade => "subgrade",
            CategoricalFeature::Purpose => "purpose",
            CategoricalFeature::Fico => "fico",
            CategoricalFeature::Housing => "housing",
            CategoricalFeature::EmploymentLength => "employment_length",
        }
    }

    pub fn level(self, record: &LoanRecord) -> String {
        match self {
            CategoricalFeature::Grade => record.grade.clone(),
            CategoricalFeature::Subgrade => record.subgrade.clone(),
            CategoricalFeature::Purpose => record.purpose.clone(),
            CategoricalFeature::Fico => format!("{}", record.fico),
            CategoricalFeature::Housing => record.housing.clone(),
            CategoricalFeature::EmploymentLength => record.employment_length.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousFeature {
    AnnualIncome,
    CreditHistoryLength,
    Delinq2yrs,
    Inquiries6m,
    PublicRecords,
    RevolUtil,
    OpenAccounts,
    MonthsSinceLastDelinq,
    LoanToIncome,
    InstallmentToIncome,
    Dti,
    /// 1 when the borrower has no delinquency on file.
    NeverDelinquent,
}

impl ContinuousFeature {
    /// The eleven real-valued basis features of the deep component.
    pub const BASIS: [ContinuousFeature; 11] = [
        ContinuousFeature::AnnualIncome,
        ContinuousFeature::CreditHistoryLength,
        ContinuousFeature::Delinq2yrs,
        ContinuousFeature::Inquiries6m,
        ContinuousFeature::PublicRecords,
        ContinuousFeature::RevolUtil,
        ContinuousFeature::OpenAccounts,
        ContinuousFeature::MonthsSinceLastDelinq,
        ContinuousFeature::LoanToIncome,
        ContinuousFeature::InstallmentToIncome,
        ContinuousFeature::Dti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContinuousFeature::AnnualIncome => "annual_income",
            ContinuousFeature::CreditHistoryLength => "credit_history_length",
            ContinuousFeature::Delinq2yrs => "delinq_2yrs",
            ContinuousFeature::Inquiries6m => "inquiries_6m",
            ContinuousFeature::PublicRecords => "public_records",
            ContinuousFeature::RevolUtil => "revol_util",
            ContinuousFeature::OpenAccounts => "open_accounts",
            ContinuousFeature::MonthsSinceLastDelinq => "months_since_last_delinq",
            ContinuousFeature::LoanToIncome => "loan_to_income",
            ContinuousFeature::InstallmentToIncome => "installment_to_income",
            ContinuousFeature::Dti => "dti",
            ContinuousFeature::NeverDelinquent => "never_delinquent",
        }
    }

    pub fn value(self, r: &LoanRecord) -> f64 {
        match self {
            ContinuousFeature::AnnualIncome => r.annual_income,
            ContinuousFeature::CreditHistoryLength => r.credit_history_length,
            ContinuousFeature::Delinq2yrs => r.delinq_2yrs as f64,
            ContinuousFeature::Inquiries6m => r.inquiries_6m as f64,
            ContinuousFeature::PublicRecords => r.public_records as f64,
            ContinuousFeature::RevolUtil => r.revol_util,
            ContinuousFeature::OpenAccounts => r.open_accounts as f64,
            ContinuousFeature::MonthsSinceLastDelinq => r.months_since_last_delinq.months_value(),
            ContinuousFeature::LoanToIncome => r.loan_to_income,
            ContinuousFeature::InstallmentToIncome => r.installment_to_income,
            ContinuousFeature::Dti => r.dti,
            ContinuousFeature::NeverDelinquent => {
                if r.months_since_last_delinq.is_never() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub feature: CategoricalFeature,
    /// Observed levels, sorted and duplicate-free. The UNK slot follows them.
    pub levels: Vec<String>,
}

impl Vocabulary {
    pub fn unk_index(&self) -> usize {
        self.levels.len()
    }

    /// Block size including the UNK slot.
    pub fn size(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn index_of(&self, level: &str) -> usize {
        self.levels
            .binary_search_by(|probe| probe.as_str().cmp(level))
            .unwrap_or(self.unk_index())
    }

    pub fn contains(&self, level: &str) -> bool {
        self.levels.binary_search_by(|probe| probe.as_str().cmp(level)).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossSpec {
    pub a: CategoricalFeature,
    pub b: CategoricalFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub feature: CategoricalFeature,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStat {
    pub feature: ContinuousFeature,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BlockKind {
    Basis { feature: CategoricalFeature },
    Cross { a: CategoricalFeature, b: CategoricalFeature },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WideBlock {
    #[serde(flatten)]
    pub kind: BlockKind,
    pub offset: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub crosses: Vec<CrossSpec>,
    pub embeddings: Vec<EmbeddingSpec>,
    pub never_delinquent_indicator: bool,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        use CategoricalFeature::*;
        Self {
            crosses: alloc::vec![
                CrossSpec { a: Fico, b: Purpose },
                CrossSpec { a: Subgrade, b: Fico },
            ],
            embeddings: alloc::vec![
                EmbeddingSpec { feature: Subgrade, dim: 8 },
                EmbeddingSpec { feature: Purpose, dim: 8 },
                EmbeddingSpec { feature: Fico, dim: 8 },
            ],
            never_delinquent_indicator: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("cannot fit a schema on an empty training set")]
    EmptyInput,
    #[error("embedding dimension for {0} must be positive")]
    ZeroEmbeddingDim(&'static str),
}

/// Fitted encoding of loans into model inputs. Immutable after fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub vocabularies: Vec<Vocabulary>,
    pub crosses: Vec<CrossSpec>,
    pub continuous: Vec<ContinuousStat>,
    pub embeddings: Vec<EmbeddingSpec>,
    pub wide_blocks: Vec<WideBlock>,
    pub wide_dim: usize,
}

/// Indices of the active (value 1) coordinates of the wide input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WideVector {
    pub active: Vec<usize>,
    pub wide_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepVector {
    /// Standardized continuous values, schema order.
    pub dense: Vec<f64>,
    /// One vocabulary index per embedded feature, schema order.
    pub embedding_ids: Vec<usize>,
}

/// Wide and deep encodings of one loan.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLoan {
    pub wide: WideVector,
    pub deep: DeepVector,
}

/// Fit vocabularies and standardization statistics on `train` only.
pub fn fit_schema(train: &[LoanRecord], config: &SchemaConfig) -> Result<FeatureSchema, FeatureError> {
    if train.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    if let Some(e) = config.embeddings.iter().find(|e| e.dim == 0) {
        return Err(FeatureError::ZeroEmbeddingDim(e.feature.name()));
    }

    let vocabularies: Vec<Vocabulary> = CategoricalFeature::ALL
        .iter()
        .map(|&feature| {
            let levels: BTreeSet<String> = train.iter().map(|r| feature.level(r)).collect();
            Vocabulary { feature, levels: levels.into_iter().collect() }
        })
        .collect();

    let mut features: Vec<ContinuousFeature> = ContinuousFeature::BASIS.to_vec();
    if config.never_delinquent_indicator {
        features.push(ContinuousFeature::NeverDelinquent);
    }
    let n = train.len() as f64;
    let continuous = features
        .into_iter()
        .map(|feature| {
            let mean = train.iter().map(|r| feature.value(r)).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|r| {
                    let d = feature.value(r) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let mut std = libm::sqrt(var);
            if !(std >= 1e-12) {
                std = 1.0;
            }
            ContinuousStat { feature, mean, std }
        })
        .collect();

    let mut schema = FeatureSchema {
        version: SCHEMA_VERSION,
        vocabularies,
        crosses: config.crosses.clone(),
        continuous,
        embeddings: config.embeddings.clone(),
        wide_blocks: Vec::new(),
        wide_dim: 0,
    };
    let mut offset = 0;
    let mut blocks = Vec::new();
    for &feature in CategoricalFeature::ALL.iter() {
        let size = schema.vocabulary(feature).size();
        blocks.push(WideBlock { kind: BlockKind::Basis { feature }, offset, size });
        offset += size;
    }
    for c in &schema.crosses {
        let size = schema.vocabulary(c.a).size() * schema.vocabulary(c.b).size();
        blocks.push(WideBlock { kind: BlockKind::Cross { a: c.a, b: c.b }, offset, size });
        offset += size;
    }
    schema.wide_blocks = blocks;
    schema.wide_dim = offset;
    Ok(schema)
}

impl FeatureSchema {
    pub fn vocabulary(&self, feature: CategoricalFeature) -> &Vocabulary {
        self.vocabularies
            .iter()
            .find(|v| v.feature == feature)
            .expect("schema carries a vocabulary for every categorical feature")
    }

    pub fn dense_len(&self) -> usize {
        self.continuous.len()
    }

    /// Width of the deep input: dense values plus all embedding dims.
    pub fn deep_input_dim(&self) -> usize {
        self.dense_len() + self.embeddings.iter().map(|e| e.dim).sum::<usize>()
    }

    /// Vocabulary sizes (incl. UNK) of the embedded features, schema order.
    pub fn embedding_vocab_sizes(&self) -> Vec<usize> {
        self.embeddings.iter().map(|e| self.vocabulary(e.feature).size()).collect()
    }

    pub fn encode_onehot(&self, feature: CategoricalFeature, level: &str) -> usize {
        self.vocabulary(feature).index_of(level)
    }

    /// Row-major cell of the (a, b) cross block.
    pub fn encode_cross(&self, pair: CrossSpec, level_a: &str, level_b: &str) -> usize {
        let ia = self.encode_onehot(pair.a, level_a);
        let ib = self.encode_onehot(pair.b, level_b);
        ia * self.vocabulary(pair.b).size() + ib
    }

    pub fn encode_wide(&self, record: &LoanRecord) -> WideVector {
        let mut active = Vec::with_capacity(self.wide_blocks.len());
        for block in &self.wide_blocks {
            let within = match block.kind {
                BlockKind::Basis { feature } => self.encode_onehot(feature, &feature.level(record)),
                BlockKind::Cross { a, b } => {
                    self.encode_cross(CrossSpec { a, b }, &a.level(record), &b.level(record))
                }
            };
            active.push(block.offset + within);
        }
        WideVector { active, wide_dim: self.wide_dim }
    }

    pub fn encode_deep(&self, record: &LoanRecord) -> DeepVector {
        let dense = self
            .continuous
            .iter()
            .map(|s| (s.feature.value(record) - s.mean) / s.std)
            .collect();
        let embedding_ids = self
            .embeddings
            .iter()
            .map(|e| self.encode_onehot(e.feature, &e.feature.level(record)))
            .collect();
        DeepVector { dense, embedding_ids }
    }

    pub fn encode(&self, record: &LoanRecord) -> EncodedLoan {
        EncodedLoan { wide: self.encode_wide(record), deep: self.encode_deep(record) }
    }

    /// Categorical features whose level in `record` was never seen in training.
    pub fn unseen_levels(&self, record: &LoanRecord) -> Vec<CategoricalFeature> {
        CategoricalFeature::ALL
            .iter()
            .copied()
            .filter(|&f| !self.vocabulary(f).contains(&f.level(record)))
            .collect()
    }

    pub fn continuous_names(&self) -> Vec<String> {
        self.continuous.iter().map(|s| s.feature.name().to_owned()).collect()
    }
}
