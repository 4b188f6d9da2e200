//! JSON-over-HTTP client for a remote model server.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendError, ErrorBody, FillRequest, FillResponse, GeneratorTrainRequest, TypeScoreRequest,
    TypeScoreResponse,
};
use crate::tagger::{NerAnnotateRequest, NerAnnotateResponse, NerTrainRequest, NerTrainResponse, NerTrainer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpPaths {
    pub fill: String,
    pub score_types: String,
    pub generator_train: String,
    pub ner_train: String,
    pub ner_annotate: String,
}

impl Default for HttpPaths {
    fn default() -> Self {
        Self {
            fill: "/v1/fill".into(),
            score_types: "/v1/score-types".into(),
            generator_train: "/v1/generator/train".into(),
            ner_train: "/v1/ner/train".into(),
            ner_annotate: "/v1/ner/annotate".into(),
        }
    }
}

/// Talks to the model server for generation, type scoring and tagging.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    paths: HttpPaths,
    client: Client,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        Self::with_paths(base_url, HttpPaths::default(), timeout)
    }

    pub fn with_paths(base_url: impl Into<String>, paths: HttpPaths, timeout: Duration) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(format!("http client: {e}")))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            paths,
            client,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transient(format!("POST {url}: {e}")))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json::<Resp>()
                .map_err(|e| BackendError::Fatal(format!("POST {url}: malformed response body: {e}")));
        }
        let text = resp.text().unwrap_or_default();
        let detail = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => format!("{} {}: {}", status.as_u16(), b.code, b.message),
            Err(_) => format!("{} {}", status.as_u16(), text.trim()),
        };
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT {
            Err(BackendError::Transient(format!("POST {url}: {detail}")))
        } else {
            Err(BackendError::Fatal(format!("POST {url}: {detail}")))
        }
    }
}

#[derive(Deserialize)]
struct Ack {}

impl Backend for HttpBackend {
    fn fill(&self, req: &FillRequest) -> Result<FillResponse, BackendError> {
        self.post(&self.paths.fill, req)
    }

    fn score_types(&self, req: &TypeScoreRequest) -> Result<TypeScoreResponse, BackendError> {
        self.post(&self.paths.score_types, req)
    }

    fn train_generator(&self, req: &GeneratorTrainRequest) -> Result<(), BackendError> {
        self.post::<_, Ack>(&self.paths.generator_train, req).map(|_| ())
    }
}

impl NerTrainer for HttpBackend {
    fn train(&self, req: &NerTrainRequest) -> Result<NerTrainResponse, BackendError> {
        self.post(&self.paths.ner_train, req)
    }

    fn annotate(&self, req: &NerAnnotateRequest) -> Result<NerAnnotateResponse, BackendError> {
        self.post(&self.paths.ner_annotate, req)
    }
}
