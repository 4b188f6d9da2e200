//! Mask filling and type scoring behind a backend interface.
//!
//! The [`Gateway`] owns the retry policy and the validation contract: a
//! fill is only returned if its text parses as linearized text and carries
//! exactly the template's expected type sequence. Entity type names are
//! template literals, never generated.

mod batch;
mod http;
mod mock;

pub use batch::bounded_map;
pub use http::{HttpBackend, HttpPaths};
pub use mock::{Lexicons, MockBackend, ScriptedScorer};

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_name, LabelSchema, TaggedSentence};
use crate::linearize::{delinearize, LinearizedText};
use crate::masking::{MaskedTemplate, SlotFillError};

pub const TYPE_PLACEHOLDER: &str = "<TYPE>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 32,
            temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRequest {
    pub request_id: String,
    pub template: MaskedTemplate,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResponse {
    pub request_id: String,
    pub filled_text: String,
    pub per_slot_fills: Vec<Vec<String>>,
}

/// Word2Type query: the linearized sentence with every type name cut out.
/// `segments` holds the literal text between slots, so there is always one
/// more segment than slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScoreRequest {
    pub request_id: String,
    pub segments: Vec<String>,
    /// Rendering with [`TYPE_PLACEHOLDER`] in each slot.
    pub text: String,
}

impl TypeScoreRequest {
    pub fn new(request_id: impl Into<String>, segments: Vec<String>) -> Self {
        assert!(!segments.is_empty(), "a query has at least one segment");
        let text = render_segments(&segments, TYPE_PLACEHOLDER);
        Self {
            request_id: request_id.into(),
            segments,
            text,
        }
    }

    pub fn slot_count(&self) -> usize {
        self.segments.len() - 1
    }

    /// Interleave `names` into the slots.
    pub fn substitute(&self, names: &[&str]) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(self.segments.len() * 2);
        for (i, seg) in self.segments.iter().enumerate() {
            parts.push(seg);
            if let Some(n) = names.get(i) {
                parts.push(n);
            }
        }
        parts.retain(|p| !p.is_empty());
        parts.join(" ")
    }
}

fn render_segments(segments: &[String], placeholder: &str) -> String {
    let names = vec![placeholder; segments.len().saturating_sub(1)];
    let mut parts: Vec<&str> = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        parts.push(seg);
        if let Some(n) = names.get(i) {
            parts.push(n);
        }
    }
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScoreResponse {
    pub request_id: String,
    pub types: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

/// Few-shot corpus handed to the generator before augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainRequest {
    pub schema: LabelSchema,
    pub linearized: Vec<String>,
    pub seed: u64,
}

/// Error body of the HTTP protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Worth retrying: connection failures, timeouts, 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend rejected request: {0}")]
    Fatal(String),
}

/// A generation backend. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn fill(&self, req: &FillRequest) -> Result<FillResponse, BackendError>;

    fn score_types(&self, req: &TypeScoreRequest) -> Result<TypeScoreResponse, BackendError>;

    fn train_generator(&self, _req: &GeneratorTrainRequest) -> Result<(), BackendError> {
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: usize, last: String },
    #[error("backend rejected the request: {0}")]
    BackendRejected(String),
    #[error("generation unparseable after {attempts} attempts: {reason}")]
    UnparseableGeneration { attempts: usize, reason: String },
    #[error("slot mismatch: {0}")]
    SlotMismatch(String),
}

impl GatewayError {
    pub fn reason(&self) -> &'static str {
        match self {
            GatewayError::BackendUnavailable { .. } => "backend_unavailable",
            GatewayError::BackendRejected(_) => "backend_rejected",
            GatewayError::UnparseableGeneration { .. } => "unparseable",
            GatewayError::SlotMismatch(_) => "slot_mismatch",
        }
    }
}

impl From<SlotFillError> for GatewayError {
    fn from(e: SlotFillError) -> Self {
        GatewayError::SlotMismatch(e.to_string())
    }
}

/// Retry policy and validation in front of a [`Backend`].
#[derive(Debug, Clone)]
pub struct Gateway {
    pub schema: LabelSchema,
    /// Retries after the first attempt.
    pub retries: usize,
    pub backoff: Duration,
    pub max_in_flight: usize,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl Gateway {
    pub fn new(schema: LabelSchema) -> Self {
        Self {
            schema,
            retries: 3,
            backoff: Duration::from_millis(50),
            max_in_flight: 8,
        }
    }

    pub fn with_retries(mut self, retries: usize, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn sleep(&self, attempt: usize) {
        if !self.backoff.is_zero() {
            thread::sleep(self.backoff * 2u32.saturating_pow(attempt as u32));
        }
    }

    /// Runs `call` up to `retries + 1` times. Transient backend failures and
    /// `Attempt::Retry` outcomes are retried; anything else returns.
    fn with_retry<T>(
        &self,
        mut call: impl FnMut(usize) -> Result<Attempt<T>, GatewayError>,
        transient: impl Fn(&GatewayError) -> bool,
    ) -> Result<T, GatewayError> {
        let attempts = self.retries + 1;
        let mut last_unparseable = None;
        let mut last_transient = None;
        for attempt in 0..attempts {
            match call(attempt) {
                Ok(Attempt::Done(v)) => return Ok(v),
                Ok(Attempt::Retry(reason)) => last_unparseable = Some(reason),
                Err(e) if transient(&e) => {
                    last_transient = Some(e.to_string());
                    if attempt + 1 < attempts {
                        self.sleep(attempt);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        match (last_unparseable, last_transient) {
            (Some(reason), _) => Err(GatewayError::UnparseableGeneration { attempts, reason }),
            (None, Some(last)) => Err(GatewayError::BackendUnavailable { attempts, last }),
            (None, None) => unreachable!("at least one attempt"),
        }
    }

    fn backend_call<T>(r: Result<T, BackendError>) -> Result<T, GatewayError> {
        r.map_err(|e| match e {
            BackendError::Transient(m) => GatewayError::BackendUnavailable { attempts: 1, last: m },
            BackendError::Fatal(m) => GatewayError::BackendRejected(m),
        })
    }

    fn is_transient(e: &GatewayError) -> bool {
        matches!(e, GatewayError::BackendUnavailable { .. })
    }

    /// Fill one template. A zero-slot template is answered locally.
    pub fn fill(&self, req: &FillRequest, backend: &dyn Backend) -> Result<FillResponse, GatewayError> {
        self.fill_parsed(req, backend).map(|(resp, _)| resp)
    }

    /// Like [`Gateway::fill`], also returning the delinearized sentence.
    pub fn fill_parsed(
        &self,
        req: &FillRequest,
        backend: &dyn Backend,
    ) -> Result<(FillResponse, TaggedSentence), GatewayError> {
        let template = &req.template;
        if template.slot_count() == 0 {
            let text = template.fill(&[])?;
            let sentence = delinearize(&text, &self.schema, req.request_id.clone()).map_err(|e| {
                GatewayError::UnparseableGeneration {
                    attempts: 0,
                    reason: e.to_string(),
                }
            })?;
            let resp = FillResponse {
                request_id: req.request_id.clone(),
                filled_text: text.to_string(),
                per_slot_fills: Vec::new(),
            };
            return Ok((resp, sentence));
        }
        // The decode seed advances only after an unparseable generation.
        let mut reseeds = 0u64;
        self.with_retry(
            |_| {
                let mut r = req.clone();
                r.decode.seed = req.decode.seed.wrapping_add(reseeds);
                let raw = Self::backend_call(backend.fill(&r))?;
                if raw.request_id != req.request_id {
                    return Err(GatewayError::SlotMismatch(format!(
                        "response for {} answered request {}",
                        raw.request_id, req.request_id
                    )));
                }
                let text = template.fill(&raw.per_slot_fills)?;
                match self.check_filled(&text, template, &req.request_id) {
                    Ok(sentence) => Ok(Attempt::Done((
                        FillResponse {
                            request_id: raw.request_id,
                            filled_text: text.to_string(),
                            per_slot_fills: raw.per_slot_fills,
                        },
                        sentence,
                    ))),
                    Err(reason) => {
                        reseeds += 1;
                        Ok(Attempt::Retry(reason))
                    }
                }
            },
            Self::is_transient,
        )
    }

    fn check_filled(&self, text: &LinearizedText, template: &MaskedTemplate, id: &str) -> Result<TaggedSentence, String> {
        let sentence = delinearize(text, &self.schema, id).map_err(|e| e.to_string())?;
        if sentence.type_sequence() != template.expected_types {
            return Err(format!(
                "filled text carries {} entities where {} were expected",
                sentence.spans.len(),
                template.expected_types.len()
            ));
        }
        Ok(sentence)
    }

    /// Word2Type scoring with lowercase-normalized output.
    pub fn score_types(
        &self,
        req: &TypeScoreRequest,
        backend: &dyn Backend,
    ) -> Result<TypeScoreResponse, GatewayError> {
        if req.slot_count() == 0 {
            return Ok(TypeScoreResponse {
                request_id: req.request_id.clone(),
                types: Vec::new(),
                scores: None,
            });
        }
        self.with_retry(
            |_| {
                let mut resp = Self::backend_call(backend.score_types(req))?;
                if resp.types.len() != req.slot_count() {
                    return Err(GatewayError::SlotMismatch(format!(
                        "{} type slots, {} predictions",
                        req.slot_count(),
                        resp.types.len()
                    )));
                }
                for t in &mut resp.types {
                    *t = normalize_name(t);
                }
                Ok(Attempt::Done(resp))
            },
            Self::is_transient,
        )
    }

    /// Fill many requests with at most `max_in_flight` outstanding calls.
    /// Output order matches input order; failures stay per request.
    pub fn fill_batch(
        &self,
        reqs: &[FillRequest],
        backend: &dyn Backend,
        max_in_flight: usize,
    ) -> Vec<Result<FillResponse, GatewayError>> {
        bounded_map(reqs, max_in_flight, |r| self.fill(r, backend))
    }

    pub fn fill_batch_parsed(
        &self,
        reqs: &[FillRequest],
        backend: &dyn Backend,
    ) -> Vec<Result<(FillResponse, TaggedSentence), GatewayError>> {
        bounded_map(reqs, self.max_in_flight, |r| self.fill_parsed(r, backend))
    }

    pub fn score_batch(
        &self,
        reqs: &[TypeScoreRequest],
        backend: &dyn Backend,
    ) -> Vec<Result<TypeScoreResponse, GatewayError>> {
        bounded_map(reqs, self.max_in_flight, |r| self.score_types(r, backend))
    }
}
