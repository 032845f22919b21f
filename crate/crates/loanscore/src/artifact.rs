//! Versioned, checksummed container for trained models and trees.
//!
//! Layout (UTF-8 text):
//!
//! ```text
//! loanscore <kind> v<version>
//! sha256 <64 hex digits of the payload bytes>
//! <payload: one JSON document>
//! ```
//!
//! Floats in the payload are written in shortest round-trip form and read
//! back with exact parsing, so a save/load cycle is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use loanscore_core::baselines::CartNode;
use loanscore_core::features::FeatureSchema;
use loanscore_core::widedeep::ModelParams;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "loanscore";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    WideDeep,
    Cart,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::WideDeep => "wide-deep",
            ArtifactKind::Cart => "cart",
        }
    }
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a loanscore artifact: {0}")]
    Malformed(String),
    #[error("artifact format v{found} is not supported (this build reads v{expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("expected a {expected} artifact, found {found}")]
    KindMismatch { expected: &'static str, found: String },
    #[error("checksum mismatch: header says {expected}, payload hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("payload: {0}")]
    Json(#[from] serde_json::Error),
}

/// A network together with the schema that encodes its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema: FeatureSchema,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedTree {
    pub schema: FeatureSchema,
    pub tree: CartNode,
}

fn digest(payload: &str) -> String {
    hex::encode(Sha256::digest(payload.as_bytes()))
}

pub fn encode<T: Serialize>(kind: ArtifactKind, value: &T) -> Result<String, ArtifactError> {
    let payload = serde_json::to_string(value)?;
    Ok(format!("{MAGIC} {} v{FORMAT_VERSION}\nsha256 {}\n{payload}", kind.as_str(), digest(&payload)))
}

pub fn decode<T: DeserializeOwned>(kind: ArtifactKind, text: &str) -> Result<T, ArtifactError> {
    let (header, rest) = text.split_once('\n').ok_or_else(|| ArtifactError::Malformed("missing header".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err(ArtifactError::Malformed("bad magic".into()));
    }
    let found_kind = parts.next().unwrap_or("");
    let version = parts
        .next()
        .and_then(|v| v.strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| ArtifactError::Malformed("bad version field".into()))?;
    if version != FORMAT_VERSION {
        return Err(ArtifactError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if found_kind != kind.as_str() {
        return Err(ArtifactError::KindMismatch { expected: kind.as_str(), found: found_kind.to_string() });
    }
    let (sum_line, payload) = rest.split_once('\n').unwrap_or((rest, ""));
    let expected = sum_line.strip_prefix("sha256 ").unwrap_or("").to_string();
    let actual = digest(payload);
    if expected != actual {
        return Err(ArtifactError::ChecksumMismatch { expected, actual });
    }
    Ok(serde_json::from_str(payload)?)
}

pub fn save<T: Serialize>(path: &Path, kind: ArtifactKind, value: &T) -> Result<(), ArtifactError> {
    let text = encode(kind, value)?;
    fs::write(path, text).map_err(|source| ArtifactError::Io { path: path.to_path_buf(), source })
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: ArtifactKind) -> Result<T, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|source| ArtifactError::Io { path: path.to_path_buf(), source })?;
    decode(kind, &text)
}

pub fn save_model(path: &Path, params: &ModelParams, schema: &FeatureSchema) -> Result<(), ArtifactError> {
    save(path, ArtifactKind::WideDeep, &SavedModel { schema: schema.clone(), params: params.clone() })
}

pub fn load_model(path: &Path) -> Result<SavedModel, ArtifactError> {
    load(path, ArtifactKind::WideDeep)
}

pub fn save_tree(path: &Path, tree: &CartNode, schema: &FeatureSchema) -> Result<(), ArtifactError> {
    save(path, ArtifactKind::Cart, &SavedTree { schema: schema.clone(), tree: tree.clone() })
}

pub fn load_tree(path: &Path) -> Result<SavedTree, ArtifactError> {
    load(path, ArtifactKind::Cart)
}
