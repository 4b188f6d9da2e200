//! Run configuration, read from TOML.
//!
//! Keys mirror the fields of [`RunConfig`]; relative paths resolve against
//! the directory of the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};

use crate::augment::{AugmentConfig, ExhaustionPolicy};
use crate::filter::QueryMode;
use crate::flip::{FlipDirection, FlipKind, FlipScheme, SimilarityMetric};
use crate::gateway::{DecodeParams, Gateway, HttpPaths};
use crate::masking::OpConfig;
use crate::mixup::MixupConfig;
use crate::strategy::{parse_strategy_list, StrategyConfig, StrategyKind};
use crate::tagger::ConfidencePolicy;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub retries: usize,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self { retries: 3, backoff_ms: 50, max_in_flight: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub url: String,
    pub timeout_ms: u64,
    pub paths: HttpPaths,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000".into(),
            timeout_ms: 60_000,
            paths: HttpPaths::default(),
        }
    }
}

impl HttpSettings {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSettings {
    /// Tab-separated `tag<TAB>display name[<TAB>v1,v2,..]` lines.
    pub schema: Option<PathBuf>,
    /// Labeled CoNLL corpus; sampled down to `shots` per type when set.
    pub train: Option<PathBuf>,
    /// Unlabeled CoNLL corpus (tags ignored).
    pub unlabeled: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Mock entity lexicons keyed by display name.
    pub entity_lexicons: BTreeMap<String, PathBuf>,
    pub context_lexicon: Option<PathBuf>,
}

impl PathSettings {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.schema, &mut self.train, &mut self.unlabeled, &mut self.test, &mut self.context_lexicon]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        self.entity_lexicons.values_mut().for_each(fix);
    }

    fn check_exist(&self) -> Result<(), PipelineError> {
        let all = [&self.schema, &self.train, &self.unlabeled, &self.test, &self.context_lexicon]
            .into_iter()
            .flatten()
            .chain(self.entity_lexicons.values());
        for p in all {
            if !p.exists() {
                return Err(PipelineError::Config(format!("path {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

fn strategies_de<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<StrategyKind>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        One(String),
        Many(Vec<StrategyKind>),
    }
    match Raw::deserialize(d)? {
        Raw::One(s) => parse_strategy_list(&s).map_err(serde::de::Error::custom),
        Raw::Many(v) => Ok(v),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Examples per entity type when sampling the training set.
    pub shots: Option<usize>,
    #[serde(deserialize_with = "strategies_de")]
    pub strategy: Vec<StrategyKind>,
    /// Augmented samples per strategy per original sentence.
    pub multiplier: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M_choices")]
    pub m_choices: Vec<usize>,
    #[serde(rename = "N_choices")]
    pub n_choices: Vec<usize>,
    pub flip_scheme: FlipKind,
    pub flip_metric: SimilarityMetric,
    pub flip_direction: FlipDirection,
    pub flip_temperature: f64,
    pub context_mask_max: usize,
    pub exhaustion: ExhaustionPolicy,
    pub filter_mode: QueryMode,
    /// Confidence threshold τ for pseudo-label selection.
    pub tau: f64,
    /// Self-training iterations N.
    pub iterations: usize,
    pub confidence: ConfidencePolicy,
    /// Keep only confident re-annotations of the unlabeled pool in the
    /// second loop.
    pub filter_reannotated: bool,
    pub backend: BackendKind,
    pub mixup: MixupConfig,
    pub decode: DecodeParams,
    pub gateway: GatewaySettings,
    pub http: HttpSettings,
    pub paths: PathSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = StrategyConfig::default();
        let f = FlipScheme::default();
        Self {
            seed: 0,
            shots: None,
            strategy: StrategyKind::ALL.to_vec(),
            multiplier: 1,
            k: s.k,
            m_choices: s.m_choices,
            n_choices: s.n_choices,
            flip_scheme: f.kind,
            flip_metric: f.metric,
            flip_direction: f.direction,
            flip_temperature: f.temperature,
            context_mask_max: OpConfig::default().context_mask_max,
            exhaustion: ExhaustionPolicy::default(),
            filter_mode: QueryMode::default(),
            tau: 0.9,
            iterations: 3,
            confidence: ConfidencePolicy::default(),
            filter_reannotated: true,
            backend: BackendKind::default(),
            mixup: MixupConfig::default(),
            decode: DecodeParams::default(),
            gateway: GatewaySettings::default(),
            http: HttpSettings::default(),
            paths: PathSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.paths.resolve(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig { k: self.k, m_choices: self.m_choices.clone(), n_choices: self.n_choices.clone() }
    }

    pub fn flip(&self) -> FlipScheme {
        FlipScheme {
            kind: self.flip_scheme,
            metric: self.flip_metric,
            direction: self.flip_direction,
            temperature: self.flip_temperature,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            strategies: self.strategy.clone(),
            multiplier: self.multiplier,
            strategy: self.strategy_config(),
            flip: self.flip(),
            ops: OpConfig { context_mask_min: 0, context_mask_max: self.context_mask_max },
            exhaustion: self.exhaustion,
            decode: self.decode,
        }
    }

    pub fn gateway(&self, schema: crate::corpus::LabelSchema) -> Gateway {
        Gateway::new(schema)
            .with_retries(self.gateway.retries, Duration::from_millis(self.gateway.backoff_ms))
            .with_max_in_flight(self.gateway.max_in_flight)
    }

    /// Value ranges only; see [`RunConfig::validate`] for paths.
    pub fn validate_values(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau={} must lie in (0, 1]", self.tau));
        }
        if self.multiplier < 1 {
            return bad("multiplier must be at least 1".into());
        }
        if self.strategy.is_empty() {
            return bad("no strategy selected".into());
        }
        if self.shots == Some(0) {
            return bad("shots must be at least 1".into());
        }
        if !(self.flip_temperature > 0.0) {
            return bad(format!("flip_temperature={} must be positive", self.flip_temperature));
        }
        self.strategy_config().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.mixup.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// Value ranges plus existence of every configured path.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validate_values()?;
        self.paths.check_exist()
    }
}
