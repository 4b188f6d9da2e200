#![allow(dead_code)]

use nerflip_core::corpus::{Dataset, EntitySpan, LabelEntry, LabelSchema, TaggedSentence, TypeId};
use nerflip_core::pipeline::{Inputs, RunConfig};
use nerflip_core::rng;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const TYPES: [(&str, &str); 5] = [
    ("PER", "person"),
    ("ORG", "organization"),
    ("LOC", "location"),
    ("MISC", "miscellaneous"),
    ("GPE", "geo political entity"),
];

pub fn schema() -> LabelSchema {
    LabelSchema::new(
        TYPES
            .iter()
            .map(|(t, n)| LabelEntry { tag: t.to_string(), display_name: n.to_string() })
            .collect(),
    )
    .unwrap()
}

pub fn schema_with_embeddings() -> LabelSchema {
    let e = schema().entries().to_vec();
    let vecs = vec![
        vec![1.0, 0.1, 0.0],
        vec![0.2, 1.0, 0.1],
        vec![0.0, 0.3, 1.0],
        vec![0.5, 0.5, 0.5],
        vec![0.1, 0.2, 0.9],
    ];
    LabelSchema::with_embeddings(e, Some(vecs)).unwrap()
}

const WORDS: [&str; 16] = [
    "the", "met", "in", "said", "on", "a", "visit", "report", "with", "from", "after", "talks", "new", "said", "of", ",",
];
const NASTY: [&str; 8] = ["[", "]", "|", "\\", "\\[", "\\|", "a|b", "]["];

/// Random sentence exercising adjacent entities, boundary entities, empty
/// contexts and reserved-symbol tokens.
pub fn fuzz_sentence<R: Rng>(rng: &mut R, id: &str, n_types: u32) -> TaggedSentence {
    let mut tokens: Vec<String> = Vec::new();
    let mut spans = Vec::new();
    let n_entities = rng.random_range(0..=4);
    let word = |rng: &mut R| -> String {
        if rng.random_bool(0.2) {
            NASTY.choose(rng).unwrap().to_string()
        } else {
            WORDS.choose(rng).unwrap().to_string()
        }
    };
    for _ in 0..n_entities {
        for _ in 0..rng.random_range(0..=3) {
            tokens.push(word(rng));
        }
        let start = tokens.len();
        for _ in 0..rng.random_range(1..=3) {
            tokens.push(word(rng));
        }
        spans.push(EntitySpan::new(start, tokens.len(), TypeId(rng.random_range(0..n_types))));
    }
    for _ in 0..rng.random_range(0..=3) {
        tokens.push(word(rng));
    }
    if tokens.is_empty() {
        tokens.push(word(rng));
    }
    TaggedSentence::new(id, tokens, spans).unwrap()
}

const SURFACES: [&[&str]; 5] = [
    &["Ann Lee", "Bo", "Carla Diaz", "Deng", "Eve Stone", "Farid"],
    &["Acme", "Globex Corp", "Initech", "Umbrella", "Stark Industries"],
    &["Paris", "Lake Como", "Rome", "Mount Fuji", "Oslo"],
    &["Olympics", "Nobel Prize", "Python", "Euro"],
    &["France", "Kenya", "Peru", "New Zealand"],
];

const CONTEXT: [&str; 22] = [
    "met", "visited", "joined", "left", "praised", "in", "at", "with", "today", "yesterday", "the", "team", "said",
    "that", "won", "lost", "after", "talks", "near", "again", "quietly", "reportedly",
];

/// Plain newswire-like sentence with consistent entity surfaces per type.
pub fn natural_sentence<R: Rng>(rng: &mut R, id: &str) -> TaggedSentence {
    let mut tokens: Vec<String> = Vec::new();
    let mut spans = Vec::new();
    let n = rng.random_range(0..=3);
    for i in 0..n {
        let ctx = if i == 0 { rng.random_range(0..=2) } else { rng.random_range(1..=3) };
        for _ in 0..ctx {
            tokens.push(CONTEXT.choose(rng).unwrap().to_string());
        }
        let t = rng.random_range(0..SURFACES.len());
        let start = tokens.len();
        tokens.extend(SURFACES[t].choose(rng).unwrap().split(' ').map(String::from));
        spans.push(EntitySpan::new(start, tokens.len(), TypeId(t as u32)));
    }
    for _ in 0..rng.random_range(1..=3) {
        tokens.push(CONTEXT.choose(rng).unwrap().to_string());
    }
    TaggedSentence::new(id, tokens, spans).unwrap()
}

pub fn natural_corpus(n: usize, seed: u64, prefix: &str) -> Vec<TaggedSentence> {
    let mut r = rng::stream(seed, &["corpus", prefix]);
    (0..n).map(|i| natural_sentence(&mut r, &format!("{prefix}{i}"))).collect()
}

pub fn dataset(sentences: Vec<TaggedSentence>) -> Dataset {
    Dataset::new(schema(), sentences).unwrap()
}

/// Small run: 24 labeled, 30 unlabeled, 20 test sentences.
pub fn small_inputs(seed: u64) -> Inputs {
    let unlabeled = natural_corpus(30, seed, "u")
        .into_iter()
        .map(|mut s| {
            s.spans.clear();
            s
        })
        .collect();
    Inputs {
        schema: schema(),
        train: natural_corpus(24, seed, ""),
        unlabeled,
        test: natural_corpus(20, seed, "t"),
    }
}

pub fn small_config(seed: u64, iterations: usize) -> RunConfig {
    let mut cfg = RunConfig { seed, iterations, multiplier: 2, ..RunConfig::default() };
    cfg.gateway.backoff_ms = 0;
    cfg
}
