//! Choosing the new entity type for label-flipping operations.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSchema, TypeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlipError {
    #[error("label schema has a single type, nothing to flip to")]
    SingletonSchema,
    #[error("similarity-based flipping needs type embeddings in the schema")]
    MissingEmbeddings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipKind {
    #[default]
    Random,
    /// Always the most (or least) similar type.
    Fixed,
    /// Softmax over similarities.
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMetric {
    #[default]
    Cosine,
    NegativeEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlipDirection {
    /// More similar types are preferred.
    #[default]
    SimilarHigh,
    /// Less similar types are preferred.
    SimilarLow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipScheme {
    pub kind: FlipKind,
    pub metric: SimilarityMetric,
    pub direction: FlipDirection,
    pub temperature: f64,
}

impl Default for FlipScheme {
    fn default() -> Self {
        Self {
            kind: FlipKind::Random,
            metric: SimilarityMetric::Cosine,
            direction: FlipDirection::SimilarHigh,
            temperature: 1.0,
        }
    }
}

macro_rules! from_str_kebab {
    ($ty:ty { $($name:literal => $variant:expr),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)*
                    other => Err(format!("unknown value {other:?}")),
                }
            }
        }
    };
}

from_str_kebab!(FlipKind { "random" => FlipKind::Random, "fixed" => FlipKind::Fixed, "probability" => FlipKind::Probability });
from_str_kebab!(SimilarityMetric { "cosine" => SimilarityMetric::Cosine, "negative-euclidean" => SimilarityMetric::NegativeEuclidean, "euclidean" => SimilarityMetric::NegativeEuclidean });
from_str_kebab!(FlipDirection { "similar-high" => FlipDirection::SimilarHigh, "high" => FlipDirection::SimilarHigh, "similar-low" => FlipDirection::SimilarLow, "low" => FlipDirection::SimilarLow });

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn neg_euclidean(a: &[f64], b: &[f64]) -> f64 {
    -a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn type_similarity(
    a: TypeId,
    b: TypeId,
    schema: &LabelSchema,
    metric: SimilarityMetric,
) -> Result<f64, FlipError> {
    let (ha, hb) = match (schema.embedding(a), schema.embedding(b)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(FlipError::MissingEmbeddings),
    };
    Ok(match metric {
        SimilarityMetric::Cosine => cosine(ha, hb),
        SimilarityMetric::NegativeEuclidean => neg_euclidean(ha, hb),
    })
}

/// Probability of flipping `current` to each other type under `scheme`.
/// The current type is excluded; order follows the schema.
pub fn flip_distribution(
    current: TypeId,
    schema: &LabelSchema,
    scheme: &FlipScheme,
) -> Result<Vec<(TypeId, f64)>, FlipError> {
    let others: Vec<TypeId> = schema.type_ids().filter(|&t| t != current).collect();
    if others.is_empty() {
        return Err(FlipError::SingletonSchema);
    }
    if scheme.kind == FlipKind::Random {
        let p = 1.0 / others.len() as f64;
        return Ok(others.into_iter().map(|t| (t, p)).collect());
    }
    let sign = match scheme.direction {
        FlipDirection::SimilarHigh => 1.0,
        FlipDirection::SimilarLow => -1.0,
    };
    let scores = others
        .iter()
        .map(|&t| type_similarity(current, t, schema, scheme.metric).map(|s| sign * s))
        .collect::<Result<Vec<f64>, _>>()?;
    match scheme.kind {
        FlipKind::Fixed => {
            // first maximum in schema order
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            Ok(others
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, if i == best { 1.0 } else { 0.0 }))
                .collect())
        }
        FlipKind::Probability => {
            let temp = if scheme.temperature > 0.0 { scheme.temperature } else { 1.0 };
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temp).exp()).collect();
            let z: f64 = exps.iter().sum();
            Ok(others.into_iter().zip(exps).map(|(t, e)| (t, e / z)).collect())
        }
        FlipKind::Random => unreachable!(),
    }
}

pub fn choose_flip_type<R: Rng + ?Sized>(
    current: TypeId,
    schema: &LabelSchema,
    scheme: &FlipScheme,
    rng: &mut R,
) -> Result<TypeId, FlipError> {
    let dist = flip_distribution(current, schema, scheme)?;
    if scheme.kind == FlipKind::Random {
        return Ok(dist[rng.random_range(0..dist.len())].0);
    }
    if scheme.kind == FlipKind::Fixed {
        return Ok(dist.iter().find(|(_, p)| *p > 0.0).map(|(t, _)| *t).unwrap());
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(t, p) in &dist {
        acc += p;
        if u < acc {
            return Ok(t);
        }
    }
    Ok(dist.last().unwrap().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelEntry;
    use crate::rng;

    fn schema(vectors: Option<Vec<Vec<f64>>>, n: usize) -> LabelSchema {
        let entries = (0..n)
            .map(|i| LabelEntry {
                tag: format!("T{i}"),
                display_name: format!("t{i}"),
            })
            .collect();
        LabelSchema::with_embeddings(entries, vectors).unwrap()
    }

    #[test]
    fn similarity_values() {
        let s = schema(Some(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 0.0], vec![0.0, 1.0]]), 4);
        let (a, b, c, d) = (TypeId(0), TypeId(1), TypeId(2), TypeId(3));
        assert_eq!(type_similarity(a, c, &s, SimilarityMetric::Cosine).unwrap(), 1.0);
        assert_eq!(type_similarity(a, c, &s, SimilarityMetric::NegativeEuclidean).unwrap(), 0.0);
        assert_eq!(type_similarity(a, d, &s, SimilarityMetric::Cosine).unwrap(), 0.0);
        let ne = type_similarity(a, b, &s, SimilarityMetric::NegativeEuclidean).unwrap();
        assert!((ne + 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(ne, type_similarity(b, a, &s, SimilarityMetric::NegativeEuclidean).unwrap());
    }

    #[test]
    fn missing_embeddings() {
        let s = schema(None, 3);
        assert_eq!(
            type_similarity(TypeId(0), TypeId(1), &s, SimilarityMetric::Cosine),
            Err(FlipError::MissingEmbeddings)
        );
        let scheme = FlipScheme { kind: FlipKind::Fixed, ..Default::default() };
        assert_eq!(
            choose_flip_type(TypeId(0), &s, &scheme, &mut rng::seeded(0)),
            Err(FlipError::MissingEmbeddings)
        );
    }

    #[test]
    fn singleton_schema() {
        let s = schema(None, 1);
        assert_eq!(
            choose_flip_type(TypeId(0), &s, &FlipScheme::default(), &mut rng::seeded(0)),
            Err(FlipError::SingletonSchema)
        );
    }

    #[test]
    fn two_types_always_flip_to_the_other() {
        let s = schema(Some(vec![vec![1.0, 0.2], vec![0.3, 1.0]]), 2);
        let mut r = rng::seeded(5);
        for kind in [FlipKind::Random, FlipKind::Fixed, FlipKind::Probability] {
            for direction in [FlipDirection::SimilarHigh, FlipDirection::SimilarLow] {
                let scheme = FlipScheme { kind, direction, ..Default::default() };
                for _ in 0..50 {
                    assert_eq!(choose_flip_type(TypeId(1), &s, &scheme, &mut r).unwrap(), TypeId(0));
                }
            }
        }
    }

    #[test]
    fn equal_similarities_split_evenly() {
        let s = schema(Some(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]), 3);
        let scheme = FlipScheme { kind: FlipKind::Probability, ..Default::default() };
        let d = flip_distribution(TypeId(0), &s, &scheme).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d[0].1 - 0.5).abs() < 1e-12 && (d[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fixed_picks_extremes_with_schema_order_ties() {
        let s = schema(Some(vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.9, 0.1]]), 4);
        let high = FlipScheme { kind: FlipKind::Fixed, ..Default::default() };
        let low = FlipScheme { kind: FlipKind::Fixed, direction: FlipDirection::SimilarLow, ..Default::default() };
        let mut r = rng::seeded(1);
        assert_eq!(choose_flip_type(TypeId(0), &s, &high, &mut r).unwrap(), TypeId(1));
        assert_eq!(choose_flip_type(TypeId(0), &s, &low, &mut r).unwrap(), TypeId(2));
    }

    #[test]
    fn probability_is_monotone_in_similarity() {
        let s = schema(Some(vec![vec![1.0, 0.0], vec![0.8, 0.6], vec![0.0, 1.0], vec![-1.0, 0.1]]), 4);
        let high = FlipScheme { kind: FlipKind::Probability, ..Default::default() };
        let d = flip_distribution(TypeId(0), &s, &high).unwrap();
        let total: f64 = d.iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(d[0].1 >= d[1].1 && d[1].1 >= d[2].1);
        let low = FlipScheme { direction: FlipDirection::SimilarLow, ..high };
        let d = flip_distribution(TypeId(0), &s, &low).unwrap();
        assert!(d[0].1 <= d[1].1 && d[1].1 <= d[2].1);
    }

    #[test]
    fn random_is_uniform_over_other_types() {
        let s = schema(None, 4);
        let mut r = rng::seeded(2024);
        let mut counts = [0usize; 4];
        let draws = 30_000;
        for _ in 0..draws {
            counts[choose_flip_type(TypeId(2), &s, &FlipScheme::default(), &mut r).unwrap().index()] += 1;
        }
        assert_eq!(counts[2], 0);
        for i in [0, 1, 3] {
            let f = counts[i] as f64 / draws as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "type {i}: {f}");
        }
    }
}
