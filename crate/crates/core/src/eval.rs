//! Span-level micro-averaged precision, recall and F1.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntitySpan, TaggedSentence};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("sentence {index}: gold id {gold:?} but prediction id {pred:?}")]
    IdMismatch { index: usize, gold: String, pred: String },
    #[error("gold has {gold} sentences, predictions {pred}")]
    LengthMismatch { gold: usize, pred: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    /// Ratios from raw counts; an empty denominator yields 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { tp, fp, fn_, precision, recall, f1 }
    }
}

/// Exact match on `(start, end, type)`, micro-averaged over all sentences.
/// Sentences are aligned by position and must carry the same ids.
pub fn micro_f1(gold: &[TaggedSentence], pred: &[TaggedSentence]) -> Result<Score, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.id != p.id {
            return Err(EvalError::IdMismatch { index, gold: g.id.clone(), pred: p.id.clone() });
        }
        let gs: HashSet<&EntitySpan> = g.spans.iter().collect();
        let ps: HashSet<&EntitySpan> = p.spans.iter().collect();
        let hit = gs.intersection(&ps).count();
        tp += hit;
        fp += ps.len() - hit;
        fn_ += gs.len() - hit;
    }
    Ok(Score::from_counts(tp, fp, fn_))
}
