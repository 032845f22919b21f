//! Class rebalancing for the PD training set: random undersampling, random
//! oversampling and SMOTE.
//!
//! SMOTE interpolates only the dense (standardized continuous) block of the
//! encoded loan; the wide indices and embedding ids are copied from the base
//! sample so every synthetic row still decodes to valid categorical levels.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeded_rng;
use crate::widedeep::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    None,
    Undersample,
    Oversample,
    Smote,
}

impl ResampleMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ResampleMethod::None => "none",
            ResampleMethod::Undersample => "undersample",
            ResampleMethod::Oversample => "oversample",
            ResampleMethod::Smote => "smote",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(ResampleMethod::None),
            "undersample" | "under" => Some(ResampleMethod::Undersample),
            "oversample" | "over" => Some(ResampleMethod::Oversample),
            "smote" => Some(ResampleMethod::Smote),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub method: ResampleMethod,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        Self { method: ResampleMethod::Smote, k_neighbors: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ResampleError {
    #[error("training set contains only one class")]
    OneClassOnly,
    #[error("SMOTE needs more than k={k} minority samples, got {minority}")]
    TooFewMinority { minority: usize, k: usize },
    #[error("k_neighbors must be at least 1")]
    ZeroNeighbors,
}

/// Indices of the minority and majority class (ties: Default is minority).
fn split_classes(samples: &[Sample]) -> Result<(Vec<usize>, Vec<usize>), ResampleError> {
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| samples[i].target > 0.5);
    if pos.is_empty() || neg.is_empty() {
        return Err(ResampleError::OneClassOnly);
    }
    Ok(if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) })
}

/// Drop majority samples at random (without replacement) down to the
/// minority count. Original order is preserved.
pub fn undersample(samples: &[Sample], plan: &ResamplePlan) -> Result<Vec<Sample>, ResampleError> {
    let (minority, majority) = split_classes(samples)?;
    let mut rng = seeded_rng(plan.seed);
    let mut keep = alloc::vec![false; samples.len()];
    for &i in &minority {
        keep[i] = true;
    }
    for j in index::sample(&mut rng, majority.len(), minority.len()) {
        keep[majority[j]] = true;
    }
    Ok(samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

/// Replicate random minority samples (with replacement) up to the majority
/// count. Copies are appended after the originals.
pub fn oversample(samples: &[Sample], plan: &ResamplePlan) -> Result<Vec<Sample>, ResampleError> {
    let (minority, majority) = split_classes(samples)?;
    let mut rng = seeded_rng(plan.seed);
    let mut out = samples.to_vec();
    for _ in 0..majority.len() - minority.len() {
        let pick = minority[rng.random_range(0..minority.len())];
        out.push(samples[pick].clone());
    }
    Ok(out)
}

/// One SMOTE output row with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRow {
    /// Index of the base row in the minority matrix.
    pub base: usize,
    /// Index of the chosen neighbour in the minority matrix.
    pub neighbor: usize,
    pub u: f64,
    pub values: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other rows of each row (Euclidean; ties by index).
pub fn nearest_neighbors(rows: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let mut dists: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, other)| (squared_distance(row, other), j))
                .collect();
            let k = k.min(dists.len());
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dists.len() {
                dists.select_nth_unstable_by(k, cmp);
                dists.truncate(k);
            }
            dists.sort_by(cmp);
            dists.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Generate `majority_count - minority.len()` synthetic minority rows.
///
/// Bases are visited round-robin; each emission draws one of the base's
/// k nearest neighbours and a fresh `u ~ U[0, 1)`, and emits
/// `base + u * (neighbor - base)`. Output is ordered by base, then emission.
pub fn smote(
    minority: &[Vec<f64>],
    majority_count: usize,
    plan: &ResamplePlan,
) -> Result<Vec<SyntheticRow>, ResampleError> {
    let k = plan.k_neighbors;
    if k == 0 {
        return Err(ResampleError::ZeroNeighbors);
    }
    if minority.len() <= k {
        return Err(ResampleError::TooFewMinority { minority: minority.len(), k });
    }
    let needed = majority_count.saturating_sub(minority.len());
    let neighbors = nearest_neighbors(minority, k);
    let mut rng = seeded_rng(plan.seed);
    let mut rows = Vec::with_capacity(needed);
    for e in 0..needed {
        let base = e % minority.len();
        let neighbor = neighbors[base][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let b = &minority[base];
        let z = &minority[neighbor];
        let values = b.iter().zip(z).map(|(bi, zi)| bi + u * (zi - bi)).collect();
        rows.push((base, e, SyntheticRow { base, neighbor, u, values }));
    }
    rows.sort_by_key(|(base, e, _)| (*base, *e));
    Ok(rows.into_iter().map(|(_, _, r)| r).collect())
}

/// Apply `plan` to a labeled training set.
pub fn resample(samples: &[Sample], plan: &ResamplePlan) -> Result<Vec<Sample>, ResampleError> {
    match plan.method {
        ResampleMethod::None => Ok(samples.to_vec()),
        ResampleMethod::Undersample => undersample(samples, plan),
        ResampleMethod::Oversample => oversample(samples, plan),
        ResampleMethod::Smote => {
            let (minority, majority) = split_classes(samples)?;
            let matrix: Vec<Vec<f64>> =
                minority.iter().map(|&i| samples[i].input.deep.dense.clone()).collect();
            let synthetic = smote(&matrix, majority.len(), plan)?;
            let mut out = samples.to_vec();
            out.extend(synthetic.into_iter().map(|row| {
                let mut s = samples[minority[row.base]].clone();
                s.input.deep.dense = row.values;
                s
            }));
            Ok(out)
        }
    }
}
