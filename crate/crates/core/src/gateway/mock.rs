//! Deterministic backends for tests and desk-scale runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, FillRequest, FillResponse, GeneratorTrainRequest, TypeScoreRequest, TypeScoreResponse};
use crate::corpus::{normalize_name, Dataset, LabelSchema};
use crate::linearize::{delinearize, escape_token, unescape_token, LinearizedText, OPEN, SEP};
use crate::masking::{Piece, SlotKind};
use crate::rng;

/// Entity surfaces per display name plus a pool of context tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    pub entities: BTreeMap<String, Vec<Vec<String>>>,
    pub context: Vec<String>,
}

fn read_entries(path: &Path) -> io::Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|e| !e.is_empty())
        .collect())
}

impl Lexicons {
    /// Harvest entity surfaces and context tokens from a labeled corpus,
    /// keeping first-seen order.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut lex = Self::default();
        lex.absorb(dataset);
        lex
    }

    pub fn absorb(&mut self, dataset: &Dataset) {
        for s in &dataset.sentences {
            let mut in_entity = vec![false; s.tokens.len()];
            for span in &s.spans {
                let name = dataset.schema.display_name(span.type_id).to_string();
                let surface = s.tokens[span.start..span.end].to_vec();
                let entry = self.entities.entry(name).or_default();
                if !entry.contains(&surface) {
                    entry.push(surface);
                }
                in_entity[span.start..span.end].iter_mut().for_each(|f| *f = true);
            }
            for (tok, inside) in s.tokens.iter().zip(in_entity) {
                if !inside && !self.context.contains(tok) {
                    self.context.push(tok.clone());
                }
            }
        }
    }

    /// Plain-text lexicon files, one entry per line. Entity files are keyed
    /// by display name.
    pub fn from_files(entity_files: &BTreeMap<String, PathBuf>, context_file: Option<&Path>) -> io::Result<Self> {
        let mut lex = Self::default();
        for (name, path) in entity_files {
            lex.entities.insert(normalize_name(name), read_entries(path)?);
        }
        if let Some(p) = context_file {
            lex.context = read_entries(p)?.into_iter().flatten().collect();
        }
        Ok(lex)
    }

    pub fn merge(&mut self, other: &Lexicons) {
        for (name, entries) in &other.entities {
            let mine = self.entities.entry(name.clone()).or_default();
            for e in entries {
                if !mine.contains(e) {
                    mine.push(e.clone());
                }
            }
        }
        for t in &other.context {
            if !self.context.contains(t) {
                self.context.push(t.clone());
            }
        }
    }
}

/// Lexicon-driven generator. Entity slots draw a whole entry from the
/// lexicon of the slot's type; context slots draw one to three context
/// tokens. Word2Type looks the entity surface up in the lexicons and
/// answers the first type (schema order) that lists it, or `unknown`.
///
/// Output is a pure function of the template, the decode seed and the
/// lexicons.
#[derive(Debug)]
pub struct MockBackend {
    schema: LabelSchema,
    lexicons: RwLock<Lexicons>,
}

impl MockBackend {
    pub fn new(schema: LabelSchema, lexicons: Lexicons) -> Self {
        Self {
            schema,
            lexicons: RwLock::new(lexicons),
        }
    }

    pub fn lexicons(&self) -> Lexicons {
        self.lexicons.read().expect("lexicon lock").clone()
    }

    fn lookup(&self, surface: &[String]) -> Option<String> {
        let lex = self.lexicons.read().expect("lexicon lock");
        self.schema
            .type_ids()
            .map(|t| self.schema.display_name(t))
            .find(|name| lex.entities.get(*name).is_some_and(|v| v.iter().any(|e| e == surface)))
            .map(String::from)
    }
}

impl Backend for MockBackend {
    fn fill(&self, req: &FillRequest) -> Result<FillResponse, BackendError> {
        let key = serde_json::to_string(&req.template).map_err(|e| BackendError::Fatal(e.to_string()))?;
        let mut stream = rng::stream(req.decode.seed, &["mock-fill", &key]);
        let lex = self.lexicons.read().expect("lexicon lock");
        let mut fills = Vec::new();
        for piece in &req.template.pieces {
            let Piece::Slot(slot) = piece else { continue };
            match slot.kind {
                SlotKind::EntityWords => {
                    let type_id = slot
                        .constraint
                        .ok_or_else(|| BackendError::Fatal("entity slot without a type".into()))?;
                    if !self.schema.contains(type_id) {
                        return Err(BackendError::Fatal(format!("type {type_id} not in schema")));
                    }
                    let name = self.schema.display_name(type_id);
                    let entries = lex
                        .entities
                        .get(name)
                        .filter(|v| !v.is_empty())
                        .ok_or_else(|| BackendError::Fatal(format!("no lexicon entries for {name}")))?;
                    let pick = &entries[stream.random_range(0..entries.len())];
                    fills.push(pick.iter().map(|t| escape_token(t)).collect());
                }
                SlotKind::ContextWords => {
                    if lex.context.is_empty() {
                        fills.push(Vec::new());
                        continue;
                    }
                    let n = stream.random_range(1..=3);
                    fills.push(
                        (0..n)
                            .map(|_| escape_token(&lex.context[stream.random_range(0..lex.context.len())]))
                            .collect(),
                    );
                }
            }
        }
        let filled_text = req
            .template
            .fill(&fills)
            .map(|t| t.to_string())
            .unwrap_or_default();
        Ok(FillResponse {
            request_id: req.request_id.clone(),
            filled_text,
            per_slot_fills: fills,
        })
    }

    fn score_types(&self, req: &TypeScoreRequest) -> Result<TypeScoreResponse, BackendError> {
        let mut types = Vec::with_capacity(req.slot_count());
        for seg in &req.segments[..req.slot_count()] {
            let toks: Vec<&str> = seg.split_whitespace().collect();
            let open = toks.iter().rposition(|t| *t == OPEN);
            let surface: Vec<String> = match (open, toks.last()) {
                (Some(o), Some(&SEP)) => toks[o + 1..toks.len() - 1]
                    .iter()
                    .map(|t| unescape_token(t).to_string())
                    .collect(),
                _ => return Err(BackendError::Fatal(format!("malformed query segment {seg:?}"))),
            };
            types.push(self.lookup(&surface).unwrap_or_else(|| "unknown".into()));
        }
        Ok(TypeScoreResponse {
            request_id: req.request_id.clone(),
            types,
            scores: None,
        })
    }

    fn train_generator(&self, req: &GeneratorTrainRequest) -> Result<(), BackendError> {
        let mut sentences = Vec::new();
        for (i, line) in req.linearized.iter().enumerate() {
            let s = delinearize(&LinearizedText::parse(line), &self.schema, i.to_string())
                .map_err(|e| BackendError::Fatal(format!("training sentence {i}: {e}")))?;
            sentences.push(s);
        }
        let dataset = Dataset::new(self.schema.clone(), sentences).map_err(|e| BackendError::Fatal(e.to_string()))?;
        self.lexicons.write().expect("lexicon lock").absorb(&dataset);
        Ok(())
    }
}

/// Word2Type stand-in that answers from a fixed table keyed by request id.
/// Fill requests are rejected.
#[derive(Debug, Clone, Default)]
pub struct ScriptedScorer {
    answers: HashMap<String, Vec<String>>,
}

impl ScriptedScorer {
    pub fn new(answers: HashMap<String, Vec<String>>) -> Self {
        Self { answers }
    }

    pub fn insert(&mut self, request_id: impl Into<String>, types: Vec<String>) {
        self.answers.insert(request_id.into(), types);
    }

    /// Replace the answer at `position` for `request_id`.
    pub fn corrupt(&mut self, request_id: &str, position: usize, replacement: &str) {
        if let Some(v) = self.answers.get_mut(request_id) {
            if let Some(slot) = v.get_mut(position) {
                *slot = replacement.to_string();
            }
        }
    }
}

impl Backend for ScriptedScorer {
    fn fill(&self, _req: &FillRequest) -> Result<FillResponse, BackendError> {
        Err(BackendError::Fatal("scripted scorer cannot fill".into()))
    }

    fn score_types(&self, req: &TypeScoreRequest) -> Result<TypeScoreResponse, BackendError> {
        let types = self
            .answers
            .get(&req.request_id)
            .cloned()
            .ok_or_else(|| BackendError::Fatal(format!("no scripted answer for {}", req.request_id)))?;
        Ok(TypeScoreResponse {
            request_id: req.request_id.clone(),
            types,
            scores: None,
        })
    }
}
