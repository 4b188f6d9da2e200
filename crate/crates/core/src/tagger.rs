//! Sequence-tagger interface used by the self-training loop.
//!
//! A [`NerTrainer`] trains a model from labeled sentences plus mixup pairs
//! and returns an opaque handle; the handle is later used to annotate
//! sentences with per-token confidences. [`StubTrainer`] is a deterministic
//! memorizing tagger for tests and desk-scale runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{EntitySpan, LabelSchema, TaggedSentence, TypeId};
use crate::gateway::BackendError;
use crate::mixup::{MixupConfig, MixupPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerTrainRequest {
    pub schema: LabelSchema,
    pub examples: Vec<TaggedSentence>,
    /// Originals referenced by `mixup_pairs` that are not in `examples`.
    #[serde(default)]
    pub originals: Vec<TaggedSentence>,
    #[serde(default)]
    pub mixup_pairs: Vec<MixupPair>,
    pub mixup: MixupConfig,
    /// Warm start from an earlier model.
    #[serde(default)]
    pub init_model: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerTrainResponse {
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateInput {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerAnnotateRequest {
    pub model: String,
    pub sentences: Vec<AnnotateInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerAnnotateResponse {
    pub annotations: Vec<ConfidenceAnnotation>,
}

/// Predicted spans for one sentence with its confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceAnnotation {
    pub id: String,
    pub spans: Vec<EntitySpan>,
    /// Per-token maximum label probability.
    #[serde(default)]
    pub token_confidences: Vec<f64>,
    pub confidence: f64,
}

impl ConfidenceAnnotation {
    /// Recompute `confidence` from `token_confidences` under `policy`.
    /// Annotations without token confidences keep the reported value.
    pub fn apply_policy(&mut self, policy: ConfidencePolicy) {
        if !self.token_confidences.is_empty() {
            self.confidence = sentence_confidence(&self.token_confidences, policy);
        }
    }

    pub fn to_sentence(&self, tokens: Vec<String>) -> Result<TaggedSentence, crate::corpus::CorpusError> {
        TaggedSentence::new(self.id.clone(), tokens, self.spans.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidencePolicy {
    #[default]
    Min,
    Mean,
}

impl std::str::FromStr for ConfidencePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Self::Min),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown confidence policy {other:?}")),
        }
    }
}

/// Sentence confidence from per-token maximum label probabilities.
/// An empty sequence has confidence 1.
pub fn sentence_confidence(token_confidences: &[f64], policy: ConfidencePolicy) -> f64 {
    if token_confidences.is_empty() {
        return 1.0;
    }
    match policy {
        ConfidencePolicy::Min => token_confidences.iter().copied().fold(f64::INFINITY, f64::min),
        ConfidencePolicy::Mean => token_confidences.iter().sum::<f64>() / token_confidences.len() as f64,
    }
}

/// Keep annotations whose confidence is at least `tau`, in input order.
pub fn high_conf_select(annotations: &[ConfidenceAnnotation], tau: f64) -> Vec<ConfidenceAnnotation> {
    annotations.iter().filter(|a| a.confidence >= tau).cloned().collect()
}

pub trait NerTrainer: Send + Sync {
    fn train(&self, req: &NerTrainRequest) -> Result<NerTrainResponse, BackendError>;

    fn annotate(&self, req: &NerAnnotateRequest) -> Result<NerAnnotateResponse, BackendError>;
}

/// Gazetteer model: entity surfaces with type counts and per-token
/// outside/inside counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubModel {
    pub surfaces: BTreeMap<String, BTreeMap<u32, u64>>,
    pub outside: BTreeMap<String, u64>,
    pub inside: BTreeMap<String, u64>,
    pub max_surface_len: usize,
    pub mixup_pairs: usize,
    pub examples: usize,
}

fn surface_key(tokens: &[String]) -> String {
    tokens.join(" ")
}

impl StubModel {
    fn learn(&mut self, sentence: &TaggedSentence) {
        let mut inside = vec![false; sentence.tokens.len()];
        for span in &sentence.spans {
            let surface = &sentence.tokens[span.start..span.end];
            *self
                .surfaces
                .entry(surface_key(surface))
                .or_default()
                .entry(span.type_id.0)
                .or_default() += 1;
            self.max_surface_len = self.max_surface_len.max(surface.len());
            inside[span.start..span.end].iter_mut().for_each(|f| *f = true);
        }
        for (tok, ins) in sentence.tokens.iter().zip(inside) {
            let map = if ins { &mut self.inside } else { &mut self.outside };
            *map.entry(tok.to_lowercase()).or_default() += 1;
        }
        self.examples += 1;
    }

    /// Greedy longest-match tagging. Entity tokens carry the share of the
    /// best type among the surface's observed types; outside tokens the
    /// share of outside observations, or `unseen` for unknown words.
    pub fn tag(&self, id: &str, tokens: &[String], unseen: f64) -> ConfidenceAnnotation {
        let mut spans = Vec::new();
        let mut conf = vec![0.0; tokens.len()];
        let mut i = 0;
        while i < tokens.len() {
            let mut matched = None;
            for len in (1..=self.max_surface_len.min(tokens.len() - i)).rev() {
                if let Some(counts) = self.surfaces.get(&surface_key(&tokens[i..i + len])) {
                    let total: u64 = counts.values().sum();
                    let (&ty, &best) = counts
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .expect("non-empty counts");
                    matched = Some((len, TypeId(ty), best as f64 / total as f64));
                    break;
                }
            }
            match matched {
                Some((len, ty, p)) => {
                    spans.push(EntitySpan::new(i, i + len, ty));
                    conf[i..i + len].iter_mut().for_each(|c| *c = p);
                    i += len;
                }
                None => {
                    let key = tokens[i].to_lowercase();
                    let out = self.outside.get(&key).copied().unwrap_or(0);
                    let ins = self.inside.get(&key).copied().unwrap_or(0);
                    conf[i] = if out + ins == 0 {
                        unseen
                    } else {
                        out.max(1) as f64 / (out + ins).max(1) as f64
                    };
                    i += 1;
                }
            }
        }
        ConfidenceAnnotation {
            id: id.to_string(),
            spans,
            confidence: sentence_confidence(&conf, ConfidencePolicy::Min),
            token_confidences: conf,
        }
    }

    pub fn handle(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        format!("stub-{}", &hex::encode(Sha256::digest(&bytes))[..16])
    }
}

/// Deterministic memorizing tagger. Models live in memory and, when a
/// directory is given, are persisted as `<handle>.json` so a resumed run
/// can annotate with a model trained by an earlier process.
#[derive(Debug, Default)]
pub struct StubTrainer {
    models: Mutex<HashMap<String, StubModel>>,
    dir: Option<PathBuf>,
    pub unseen_confidence: f64,
}

impl StubTrainer {
    pub fn new() -> Self {
        Self {
            models: Mutex::new(HashMap::new()),
            dir: None,
            unseen_confidence: 0.95,
        }
    }

    pub fn persistent(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::new()
        }
    }

    pub fn with_unseen_confidence(mut self, c: f64) -> Self {
        self.unseen_confidence = c;
        self
    }

    fn load(&self, handle: &str) -> Result<StubModel, BackendError> {
        if let Some(m) = self.models.lock().expect("model table").get(handle) {
            return Ok(m.clone());
        }
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| BackendError::Fatal(format!("unknown model {handle}")))?;
        let text = fs::read_to_string(dir.join(format!("{handle}.json")))
            .map_err(|e| BackendError::Fatal(format!("unknown model {handle}: {e}")))?;
        let model: StubModel =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("corrupt model {handle}: {e}")))?;
        self.models.lock().expect("model table").insert(handle.to_string(), model.clone());
        Ok(model)
    }
}

impl NerTrainer for StubTrainer {
    fn train(&self, req: &NerTrainRequest) -> Result<NerTrainResponse, BackendError> {
        let mut model = match &req.init_model {
            Some(h) => self.load(h)?,
            None => StubModel::default(),
        };
        for s in &req.examples {
            model.learn(s);
        }
        model.mixup_pairs += req.mixup_pairs.len();
        let handle = model.handle();
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir).map_err(|e| BackendError::Fatal(e.to_string()))?;
            let json = serde_json::to_string(&model).expect("model serializes");
            fs::write(dir.join(format!("{handle}.json")), json).map_err(|e| BackendError::Fatal(e.to_string()))?;
        }
        self.models.lock().expect("model table").insert(handle.clone(), model);
        Ok(NerTrainResponse { model: handle })
    }

    fn annotate(&self, req: &NerAnnotateRequest) -> Result<NerAnnotateResponse, BackendError> {
        let model = self.load(&req.model)?;
        Ok(NerAnnotateResponse {
            annotations: req
                .sentences
                .iter()
                .map(|s| model.tag(&s.id, &s.tokens, self.unseen_confidence))
                .collect(),
        })
    }
}
