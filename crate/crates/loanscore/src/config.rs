//! Run configuration: a flat `key = value` text format.
//!
//! Lines starting with `#` and blank lines are ignored. Values are resolved
//! in this order, later sources winning:
//!
//! 1. built-in defaults,
//! 2. the `--config` file,
//! 3. `--set key=value` flags, in the order given,
//! 4. the dedicated flags (`--seed`, `--out-dir`, `--resample`, `--gamma`,
//!    `--top-k`).
//!
//! `seed = N` is shorthand that sets every per-module seed: synthetic data,
//! split and resampling get `N`, stage 1 gets `N`, stage 2 gets `N + 1`.
//!
//! Every report echoes the fully resolved config as produced by
//! [`RunConfig::entries`].

use std::fs;
use std::path::{Path, PathBuf};

use loanscore_core::cohort::{DEFAULT_MAX_YEAR, DEFAULT_MIN_YEAR};
use loanscore_core::pipeline::PipelineConfig;
use loanscore_core::resample::ResampleMethod;
use loanscore_core::synth::SynthConfig;
use loanscore_core::widedeep::{Components, LossReduction, TrainConfig};
use thiserror::Error;

use crate::io::{ColumnMap, IngestError};

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Loans CSV; when unset, commands that need data generate a synthetic
    /// cohort from the `synth.*` keys.
    pub loans: Option<PathBuf>,
    pub payments: Option<PathBuf>,
    /// Unlabeled listings for `score`.
    pub listings: Option<PathBuf>,
    /// Directory holding `stage1.model` and `stage2.model` for `score`.
    pub model_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub columns: ColumnMap,
    pub min_year: i32,
    pub max_year: i32,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut config = Self {
            loans: None,
            payments: None,
            listings: None,
            model_dir: None,
            out_dir: PathBuf::from("out"),
            columns: ColumnMap::default(),
            min_year: DEFAULT_MIN_YEAR,
            max_year: DEFAULT_MAX_YEAR,
            train_fraction: 0.8,
            split_seed: 1,
            synth: SynthConfig::default(),
            pipeline: PipelineConfig::default(),
        };
        config.set_seed(DEFAULT_SEED);
        config
    }
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| bad(key, value, e))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn apply_train(t: &mut TrainConfig, field: &str, key: &str, value: &str) -> Result<(), ConfigError> {
    match field {
        "steps" => t.steps = num(key, value)?,
        "batch_size" => t.batch_size = num(key, value)?,
        "learning_rate" => t.learning_rate = num(key, value)?,
        "dropout" => t.dropout_rate = num(key, value)?,
        "hidden" => t.hidden_layers = list(key, value)?,
        "seed" => t.seed = num(key, value)?,
        "components" => {
            t.components = Components::parse(value).ok_or_else(|| bad(key, value, "expected wide, deep or wide_deep"))?
        }
        "reduction" => {
            t.reduction = match value {
                "sum" => LossReduction::Sum,
                "mean" => LossReduction::Mean,
                _ => return Err(bad(key, value, "expected sum or mean")),
            }
        }
        "validation_fraction" => t.validation_fraction = num(key, value)?,
        _ => return Err(ConfigError::UnknownKey(key.to_string())),
    }
    Ok(())
}

fn train_entries(prefix: &str, t: &TrainConfig, out: &mut Vec<(String, String)>) {
    let reduction = match t.reduction {
        LossReduction::Sum => "sum",
        LossReduction::Mean => "mean",
    };
    for (k, v) in [
        ("steps", t.steps.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("learning_rate", t.learning_rate.to_string()),
        ("dropout", t.dropout_rate.to_string()),
        ("hidden", join(&t.hidden_layers)),
        ("seed", t.seed.to_string()),
        ("components", t.components.as_str().to_string()),
        ("reduction", reduction.to_string()),
        ("validation_fraction", t.validation_fraction.to_string()),
    ] {
        out.push((format!("{prefix}.{k}"), v));
    }
}

impl RunConfig {
    /// Set every per-module seed from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.split_seed = seed;
        self.pipeline.resample.seed = seed;
        self.pipeline.stage1.seed = seed;
        self.pipeline.stage2.seed = seed.wrapping_add(1);
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        if let Some(field) = key.strip_prefix("column.") {
            return self.columns.set(field, value).map_err(|e| match e {
                IngestError::UnknownField(_) => ConfigError::UnknownKey(key.to_string()),
                other => bad(key, value, other),
            });
        }
        if let Some(field) = key.strip_prefix("stage1.") {
            return apply_train(&mut self.pipeline.stage1, field, key, value);
        }
        if let Some(field) = key.strip_prefix("stage2.") {
            return apply_train(&mut self.pipeline.stage2, field, key, value);
        }
        let p = &mut self.pipeline;
        match key {
            "seed" => self.set_seed(num(key, value)?),
            "data.loans" => self.loans = path(value),
            "data.payments" => self.payments = path(value),
            "data.listings" => self.listings = path(value),
            "model_dir" => self.model_dir = path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "cohort.min_year" => self.min_year = num(key, value)?,
            "cohort.max_year" => self.max_year = num(key, value)?,
            "split.train_fraction" => self.train_fraction = num(key, value)?,
            "split.seed" => self.split_seed = num(key, value)?,
            "synth.n_loans" => self.synth.n_loans = num(key, value)?,
            "synth.default_rate_target" => self.synth.default_rate_target = num(key, value)?,
            "synth.seed" => self.synth.seed = num(key, value)?,
            "synth.note_rate_low" => self.synth.note_rate_range.0 = num(key, value)?,
            "synth.note_rate_high" => self.synth.note_rate_range.1 = num(key, value)?,
            "synth.terms" => self.synth.term_months = list(key, value)?,
            "synth.prepay_fraction" => self.synth.prepay_fraction = num(key, value)?,
            "synth.first_year" => self.synth.first_year = num(key, value)?,
            "synth.last_year" => self.synth.last_year = num(key, value)?,
            "resample.method" => {
                p.resample.method = ResampleMethod::parse(value)
                    .ok_or_else(|| bad(key, value, "expected none, undersample, oversample or smote"))?
            }
            "resample.k" => p.resample.k_neighbors = num(key, value)?,
            "resample.seed" => p.resample.seed = num(key, value)?,
            "gamma" => p.gamma = num(key, value)?,
            "top_k" => p.top_k = num(key, value)?,
            "cart.max_depth" => p.cart.max_depth = num(key, value)?,
            "cart.min_leaf" => p.cart.min_leaf = num(key, value)?,
            "schema.never_delinquent_indicator" => p.schema.never_delinquent_indicator = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Apply every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        self.apply_text(&text)
    }

    /// Every setting as `(key, value)`, in a fixed order. Feeding these back
    /// through [`RunConfig::apply`] reproduces the config.
    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.pipeline;
        let mut out: Vec<(String, String)> = [
            ("data.loans", show(&self.loans)),
            ("data.payments", show(&self.payments)),
            ("data.listings", show(&self.listings)),
            ("model_dir", show(&self.model_dir)),
            ("out_dir", self.out_dir.display().to_string()),
            ("cohort.min_year", self.min_year.to_string()),
            ("cohort.max_year", self.max_year.to_string()),
            ("split.train_fraction", self.train_fraction.to_string()),
            ("split.seed", self.split_seed.to_string()),
            ("synth.n_loans", self.synth.n_loans.to_string()),
            ("synth.default_rate_target", self.synth.default_rate_target.to_string()),
            ("synth.seed", self.synth.seed.to_string()),
            ("synth.note_rate_low", self.synth.note_rate_range.0.to_string()),
            ("synth.note_rate_high", self.synth.note_rate_range.1.to_string()),
            ("synth.terms", join(&self.synth.term_months)),
            ("synth.prepay_fraction", self.synth.prepay_fraction.to_string()),
            ("synth.first_year", self.synth.first_year.to_string()),
            ("synth.last_year", self.synth.last_year.to_string()),
            ("resample.method", p.resample.method.as_str().to_string()),
            ("resample.k", p.resample.k_neighbors.to_string()),
            ("resample.seed", p.resample.seed.to_string()),
            ("gamma", p.gamma.to_string()),
            ("top_k", p.top_k.to_string()),
            ("cart.max_depth", p.cart.max_depth.to_string()),
            ("cart.min_leaf", p.cart.min_leaf.to_string()),
            ("schema.never_delinquent_indicator", p.schema.never_delinquent_indicator.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        train_entries("stage1", &p.stage1, &mut out);
        train_entries("stage2", &p.stage2, &mut out);
        for (field, column) in self.columns.overrides() {
            out.push((format!("column.{field}"), column.clone()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
