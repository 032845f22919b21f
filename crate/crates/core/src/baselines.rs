//! Comparison scorers: a logistic-regression credit scorer (the wide half
//! of the network on its own) and a CART regression tree that predicts IRR
//! directly from all loans, defaulted or not.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::LoanRecord;
use crate::features::{CategoricalFeature, FeatureSchema};
use crate::widedeep::{self, Components, ModelError, ModelParams, Sample, TrainConfig, TrainReport};

/// Fit a logistic regression over the wide indices: the wide-and-deep model
/// with its deep half switched off.
pub fn train_logistic(
    schema: &FeatureSchema,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport), ModelError> {
    let config = TrainConfig { components: Components::Wide, ..config.clone() };
    let mut params = widedeep::init_params(schema, &config);
    let report = widedeep::train(&mut params, samples, &config)?;
    Ok((params, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for CartConfig {
    fn default() -> Self {
        Self { max_depth: 6, min_leaf: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CartError {
    #[error("cannot grow a tree on an empty training set")]
    EmptyInput,
    #[error("min_leaf must be at least 1")]
    ZeroMinLeaf,
}

/// Features a tree can split on.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeInput {
    pub continuous: Vec<f64>,
    /// Vocabulary index of each categorical feature (UNK for unseen).
    pub categorical: Vec<usize>,
}

/// Tree inputs for `record`: raw continuous values in schema order and the
/// vocabulary index of each wide basis feature.
pub fn tree_input(schema: &FeatureSchema, record: &LoanRecord) -> TreeInput {
    TreeInput {
        continuous: schema.continuous.iter().map(|s| s.feature.value(record)).collect(),
        categorical: CategoricalFeature::ALL
            .iter()
            .map(|&f| schema.encode_onehot(f, &f.level(record)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// `x <= threshold` goes left.
    Threshold { feature: usize, threshold: f64 },
    /// Levels seen at this node, partitioned between the children.
    Levels { feature: usize, left: Vec<usize>, right: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum CartNode {
    Leaf { prediction: f64, count: usize },
    Split { rule: SplitRule, left: Box<CartNode>, right: Box<CartNode>, left_count: usize, right_count: usize },
}

impl CartNode {
    pub fn depth(&self) -> usize {
        match self {
            CartNode::Leaf { .. } => 0,
            CartNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            CartNode::Leaf { .. } => 1,
            CartNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    /// Route `x` to a leaf and return its mean label.
    pub fn predict(&self, x: &TreeInput) -> f64 {
        let mut node = self;
        loop {
            match node {
                CartNode::Leaf { prediction, .. } => return *prediction,
                CartNode::Split { rule, left, right, left_count, right_count } => {
                    let go_left = match rule {
                        SplitRule::Threshold { feature, threshold } => x.continuous[*feature] <= *threshold,
                        SplitRule::Levels { feature, left: l, right: r } => {
                            let level = x.categorical[*feature];
                            if l.contains(&level) {
                                true
                            } else if r.contains(&level) {
                                false
                            } else {
                                left_count >= right_count
                            }
                        }
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    gain: f64,
    rule: SplitRule,
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        (sum_sq - sum * sum / n).max(0.0)
    }
}

fn best_threshold(xs: &[TreeInput], ys: &[f64], rows: &[usize], feature: usize, min_leaf: usize) -> Option<Candidate> {
    let mut sorted: Vec<usize> = rows.to_vec();
    sorted.sort_by(|&a, &b| xs[a].continuous[feature].total_cmp(&xs[b].continuous[feature]).then(a.cmp(&b)));
    let n = sorted.len();
    let total: f64 = sorted.iter().map(|&i| ys[i]).sum();
    let total_sq: f64 = sorted.iter().map(|&i| ys[i] * ys[i]).sum();
    let parent = sse(total, total_sq, n as f64);
    let (mut left, mut left_sq) = (0.0, 0.0);
    let mut best: Option<Candidate> = None;
    for k in 0..n - 1 {
        let y = ys[sorted[k]];
        left += y;
        left_sq += y * y;
        let nl = k + 1;
        if nl < min_leaf || n - nl < min_leaf {
            continue;
        }
        let (a, b) = (xs[sorted[k]].continuous[feature], xs[sorted[k + 1]].continuous[feature]);
        if a == b {
            continue;
        }
        let child = sse(left, left_sq, nl as f64) + sse(total - left, total_sq - left_sq, (n - nl) as f64);
        let gain = parent - child;
        if best.as_ref().map_or(true, |c| gain > c.gain) {
            best = Some(Candidate { gain, rule: SplitRule::Threshold { feature, threshold: 0.5 * (a + b) } });
        }
    }
    best
}

fn best_level_split(xs: &[TreeInput], ys: &[f64], rows: &[usize], feature: usize, min_leaf: usize) -> Option<Candidate> {
    let mut groups: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for &i in rows {
        let e = groups.entry(xs[i].categorical[feature]).or_insert((0.0, 0.0, 0));
        e.0 += ys[i];
        e.1 += ys[i] * ys[i];
        e.2 += 1;
    }
    if groups.len() < 2 {
        return None;
    }
    let mut levels: Vec<(usize, (f64, f64, usize))> = groups.into_iter().collect();
    levels.sort_by(|a, b| {
        let ma = a.1 .0 / a.1 .2 as f64;
        let mb = b.1 .0 / b.1 .2 as f64;
        ma.total_cmp(&mb).then(a.0.cmp(&b.0))
    });
    let (total, total_sq, n) = levels
        .iter()
        .fold((0.0, 0.0, 0), |acc, (_, g)| (acc.0 + g.0, acc.1 + g.1, acc.2 + g.2));
    let parent = sse(total, total_sq, n as f64);
    let (mut left, mut left_sq, mut nl) = (0.0, 0.0, 0);
    let mut best: Option<(f64, usize)> = None;
    for (cut, (_, g)) in levels.iter().enumerate().take(levels.len() - 1) {
        left += g.0;
        left_sq += g.1;
        nl += g.2;
        if nl < min_leaf || n - nl < min_leaf {
            continue;
        }
        let child = sse(left, left_sq, nl as f64) + sse(total - left, total_sq - left_sq, (n - nl) as f64);
        let gain = parent - child;
        if best.map_or(true, |(g, _)| gain > g) {
            best = Some((gain, cut));
        }
    }
    best.map(|(gain, cut)| {
        let mut l: Vec<usize> = levels[..=cut].iter().map(|(lv, _)| *lv).collect();
        let mut r: Vec<usize> = levels[cut + 1..].iter().map(|(lv, _)| *lv).collect();
        l.sort_unstable();
        r.sort_unstable();
        Candidate { gain, rule: SplitRule::Levels { feature, left: l, right: r } }
    })
}

fn goes_left(rule: &SplitRule, x: &TreeInput) -> bool {
    match rule {
        SplitRule::Threshold { feature, threshold } => x.continuous[*feature] <= *threshold,
        SplitRule::Levels { feature, left, .. } => left.contains(&x.categorical[*feature]),
    }
}

fn grow(xs: &[TreeInput], ys: &[f64], rows: Vec<usize>, depth: usize, config: &CartConfig) -> CartNode {
    let n = rows.len();
    let mean = rows.iter().map(|&i| ys[i]).sum::<f64>() / n as f64;
    let leaf = CartNode::Leaf { prediction: mean, count: n };
    if depth >= config.max_depth || n < 2 * config.min_leaf {
        return leaf;
    }
    let n_cont = xs[rows[0]].continuous.len();
    let n_cat = xs[rows[0]].categorical.len();
    let mut best: Option<Candidate> = None;
    let candidates = (0..n_cont)
        .map(|f| best_threshold(xs, ys, &rows, f, config.min_leaf))
        .chain((0..n_cat).map(|f| best_level_split(xs, ys, &rows, f, config.min_leaf)));
    for c in candidates.flatten() {
        if best.as_ref().map_or(true, |b| c.gain > b.gain) {
            best = Some(c);
        }
    }
    let Some(best) = best else { return leaf };
    // relative guard against splitting on float noise
    let scale = rows.iter().map(|&i| (ys[i] - mean) * (ys[i] - mean)).sum::<f64>();
    if !(best.gain > 1e-12 * scale.max(1e-300)) {
        return leaf;
    }
    let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| goes_left(&best.rule, &xs[i]));
    let (lc, rc) = (l.len(), r.len());
    CartNode::Split {
        rule: best.rule,
        left: Box::new(grow(xs, ys, l, depth + 1, config)),
        right: Box::new(grow(xs, ys, r, depth + 1, config)),
        left_count: lc,
        right_count: rc,
    }
}

/// Grow a regression tree by greedy variance reduction.
pub fn train_cart(xs: &[TreeInput], ys: &[f64], config: &CartConfig) -> Result<CartNode, CartError> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(CartError::EmptyInput);
    }
    if config.min_leaf == 0 {
        return Err(CartError::ZeroMinLeaf);
    }
    Ok(grow(xs, ys, (0..xs.len()).collect(), 0, config))
}

pub fn cart_predict(tree: &CartNode, x: &TreeInput) -> f64 {
    tree.predict(x)
}

/// Sum of squared deviations of each label from its leaf mean.
pub fn training_sse(tree: &CartNode, xs: &[TreeInput], ys: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(x, y)| (tree.predict(x) - y) * (tree.predict(x) - y)).sum()
}
