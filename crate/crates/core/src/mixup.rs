//! Mixup arithmetic for pairing label-flipped samples with their originals.
//!
//! For a pair `(flipped, original)` and `λ ~ Beta(α, β)` the tagger mixes
//! hidden states at layer m and the label distributions with the same
//! weight: `ĥ = λ·h_f + (1−λ)·h_o`, `ŷ = λ·y_f + (1−λ)·y_o`. Only
//! label-flipping samples are paired, each with its own parent.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixupError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sample {flipped} has no parent {parent} among the originals")]
    MissingParent { flipped: String, parent: String },
    #[error("invalid mixup config: {0}")]
    InvalidConfig(String),
    #[error("invalid label distribution: {0}")]
    InvalidDistribution(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixupConfig {
    pub alpha: f64,
    pub beta: f64,
    pub layer_choices: Vec<usize>,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            alpha: 130.0,
            beta: 5.0,
            layer_choices: vec![8, 9, 10],
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<(), MixupError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(MixupError::InvalidConfig(format!(
                "alpha={} and beta={} must be positive",
                self.alpha, self.beta
            )));
        }
        if self.layer_choices.is_empty() {
            return Err(MixupError::InvalidConfig("layer_choices is empty".into()));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// Draw `λ ~ Beta(α, β)`, strictly inside (0, 1).
pub fn sample_lambda<R: Rng + ?Sized>(cfg: &MixupConfig, rng: &mut R) -> Result<f64, MixupError> {
    cfg.validate()?;
    let dist = Beta::new(cfg.alpha, cfg.beta).map_err(|e| MixupError::InvalidConfig(e.to_string()))?;
    loop {
        let x = dist.sample(rng);
        if x > 0.0 && x < 1.0 {
            return Ok(x);
        }
    }
}

/// Per-position convex combination `λ·flipped + (1−λ)·original`.
pub fn interpolate_states(flipped: &[Vec<f64>], original: &[Vec<f64>], lambda: f64) -> Result<Vec<Vec<f64>>, MixupError> {
    if flipped.len() != original.len() {
        return Err(MixupError::DimensionMismatch(format!(
            "sequence lengths {} and {}",
            flipped.len(),
            original.len()
        )));
    }
    flipped
        .iter()
        .zip(original)
        .enumerate()
        .map(|(i, (f, o))| {
            if f.len() != o.len() {
                return Err(MixupError::DimensionMismatch(format!(
                    "position {i}: widths {} and {}",
                    f.len(),
                    o.len()
                )));
            }
            Ok(f.iter().zip(o).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect())
        })
        .collect()
}

/// Per-position probability vectors over the tag set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistributionSeq(Vec<Vec<f64>>);

const SIMPLEX_TOL: f64 = 1e-9;

impl LabelDistributionSeq {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, MixupError> {
        let width = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(MixupError::InvalidDistribution(format!("row {i} has width {}", row.len())));
            }
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(MixupError::InvalidDistribution(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(MixupError::InvalidDistribution(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self(rows))
    }

    pub fn one_hot(tags: &[usize], n_tags: usize) -> Self {
        Self(
            tags.iter()
                .map(|&t| {
                    let mut row = vec![0.0; n_tags];
                    row[t] = 1.0;
                    row
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn width(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }
}

pub fn mix_labels(
    flipped: &LabelDistributionSeq,
    original: &LabelDistributionSeq,
    lambda: f64,
) -> Result<LabelDistributionSeq, MixupError> {
    if flipped.len() != original.len() || (!flipped.is_empty() && flipped.width() != original.width()) {
        return Err(MixupError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            flipped.len(),
            flipped.width(),
            original.len(),
            original.width()
        )));
    }
    interpolate_states(&flipped.0, &original.0, lambda).map(LabelDistributionSeq)
}

/// How sequences of different length are brought to a common length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignPolicy {
    /// Pad the shorter side with zero vectors / one-hot `outside`.
    #[default]
    Pad,
    Truncate,
}

/// Align two hidden-state sequences.
pub fn align_states(a: &[Vec<f64>], b: &[Vec<f64>], policy: AlignPolicy) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let width = a.first().or(b.first()).map_or(0, Vec::len);
    match policy {
        AlignPolicy::Truncate => {
            let n = a.len().min(b.len());
            (a[..n].to_vec(), b[..n].to_vec())
        }
        AlignPolicy::Pad => {
            let n = a.len().max(b.len());
            let pad = |s: &[Vec<f64>]| {
                let mut v = s.to_vec();
                v.resize(n, vec![0.0; width]);
                v
            };
            (pad(a), pad(b))
        }
    }
}

/// Align two label sequences; padding rows are one-hot on `outside`.
pub fn align_labels(
    a: &LabelDistributionSeq,
    b: &LabelDistributionSeq,
    outside: usize,
    policy: AlignPolicy,
) -> (LabelDistributionSeq, LabelDistributionSeq) {
    let width = a.width().max(b.width());
    match policy {
        AlignPolicy::Truncate => {
            let n = a.len().min(b.len());
            (LabelDistributionSeq(a.0[..n].to_vec()), LabelDistributionSeq(b.0[..n].to_vec()))
        }
        AlignPolicy::Pad => {
            let n = a.len().max(b.len());
            let mut pad_row = vec![0.0; width];
            if width > 0 {
                pad_row[outside] = 1.0;
            }
            let pad = |s: &LabelDistributionSeq| {
                let mut v = s.0.clone();
                v.resize(n, pad_row.clone());
                LabelDistributionSeq(v)
            };
            (pad(a), pad(b))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupPair {
    pub flipped_id: String,
    pub original_id: String,
    pub lambda: f64,
    pub layer: usize,
}

/// What pairing needs to know about an augmented sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCandidate<'a> {
    pub id: &'a str,
    pub parent_id: &'a str,
    pub label_flipping: bool,
}

/// F-Mixup: pair every label-flipping sample with its parent original.
/// λ and the layer come from a stream keyed by the flipped sample's id.
pub fn build_pairs(
    candidates: &[PairCandidate<'_>],
    originals: &HashSet<String>,
    cfg: &MixupConfig,
    seed: u64,
) -> Result<Vec<MixupPair>, MixupError> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    for c in candidates.iter().filter(|c| c.label_flipping) {
        if !originals.contains(c.parent_id) {
            return Err(MixupError::MissingParent {
                flipped: c.id.to_string(),
                parent: c.parent_id.to_string(),
            });
        }
        let mut stream = rng::stream(seed, &["mixup-pair", c.id]);
        let lambda = sample_lambda(cfg, &mut stream)?;
        let layer = cfg.layer_choices[stream.random_range(0..cfg.layer_choices.len())];
        pairs.push(MixupPair {
            flipped_id: c.id.to_string(),
            original_id: c.parent_id.to_string(),
            lambda,
            layer,
        });
    }
    Ok(pairs)
}
