//! Shot-K few-shot sampling.
//!
//! Types are visited in schema order. For each type the sentences containing
//! it are shuffled with the seeded stream and taken until the type has K
//! selected sentences. A selected sentence counts toward every type it
//! contains, so sentences picked for earlier types reduce later quotas.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, TypeId};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotWarning {
    pub type_id: TypeId,
    pub tag: String,
    pub available: usize,
    pub requested: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotSplit {
    pub train: Dataset,
    pub unlabeled: Dataset,
    /// Types with fewer than K candidate sentences in the whole corpus.
    pub warnings: Vec<ShotWarning>,
}

/// Panics if `k == 0`.
pub fn sample_shots(dataset: &Dataset, k: usize, seed: u64) -> ShotSplit {
    assert!(k >= 1, "shot count must be positive");
    let schema = &dataset.schema;
    let mut selected = vec![false; dataset.sentences.len()];
    let mut warnings = Vec::new();

    for type_id in schema.type_ids() {
        let mut candidates: Vec<usize> = dataset
            .sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.has_type(type_id))
            .map(|(i, _)| i)
            .collect();
        if candidates.len() < k {
            warnings.push(ShotWarning {
                type_id,
                tag: schema.tag(type_id).to_string(),
                available: candidates.len(),
                requested: k,
            });
        }
        let mut have = candidates.iter().filter(|&&i| selected[i]).count();
        let mut stream = rng::stream(seed, &["shots", schema.tag(type_id)]);
        candidates.shuffle(&mut stream);
        for i in candidates {
            if have >= k {
                break;
            }
            if !selected[i] {
                selected[i] = true;
                have += 1;
            }
        }
    }

    let mut train = Dataset::empty(schema.clone());
    let mut unlabeled = Dataset::empty(schema.clone());
    unlabeled.unlabeled = true;
    for (sentence, picked) in dataset.sentences.iter().zip(selected) {
        if picked {
            train.sentences.push(sentence.clone());
        } else {
            unlabeled.sentences.push(sentence.clone());
        }
    }
    ShotSplit {
        train,
        unlabeled,
        warnings,
    }
}
