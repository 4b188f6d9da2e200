//! Augmentation engine: sentences × strategies × multiplier → filled samples.
//!
//! Each job draws its op list and template from a stream keyed by
//! `(seed, parent id, strategy, copy)`, so the result does not depend on
//! scheduling. Every job ends in exactly one bucket of the report:
//! produced, skipped for a failed op precondition, or unparseable.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TaggedSentence, TypeId};
use crate::flip::FlipScheme;
use crate::gateway::{Backend, DecodeParams, FillRequest, Gateway, GatewayError};
use crate::linearize::segment;
use crate::masking::{compose_template, AppliedOp, MaskError, MaskedTemplate, OpConfig, OpKind, Operation};
use crate::rng;
use crate::strategy::{compose_strategy, StrategyConfig, StrategyError, StrategyKind};

/// What to do when a label-preserving op finds no untouched target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExhaustionPolicy {
    /// Skip the whole sample and count the precondition failure.
    #[default]
    Skip,
    /// Drop the failing Op1/Op5 and keep composing.
    Truncate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub strategies: Vec<StrategyKind>,
    /// Samples per strategy per original sentence.
    pub multiplier: usize,
    pub strategy: StrategyConfig,
    pub flip: FlipScheme,
    pub ops: OpConfig,
    pub exhaustion: ExhaustionPolicy,
    pub decode: DecodeParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            strategies: StrategyKind::ALL.to_vec(),
            multiplier: 1,
            strategy: StrategyConfig::default(),
            flip: FlipScheme::default(),
            ops: OpConfig::default(),
            exhaustion: ExhaustionPolicy::Skip,
            decode: DecodeParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("invalid op config: {0}")]
    Ops(String),
    #[error("sample {id}: {source}")]
    Backend { id: String, source: GatewayError },
}

/// A filled, delinearized sentence with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub id: String,
    pub parent_id: String,
    pub strategy: StrategyKind,
    pub copy: usize,
    pub operations: Vec<AppliedOp>,
    pub sentence: TaggedSentence,
    pub linearized: String,
    pub expected_types: Vec<TypeId>,
    pub original_types: Vec<TypeId>,
    pub flipped_positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_verdict: Option<crate::filter::FilterVerdict>,
}

impl AugmentedSample {
    pub fn is_label_flipping(&self) -> bool {
        self.strategy.is_label_flipping()
    }
}

pub fn sample_id(parent: &str, strategy: StrategyKind, copy: usize) -> String {
    format!("{parent}:{}:{copy}", strategy.as_str())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyCounts {
    pub attempted: usize,
    pub produced: usize,
    /// Precondition failures keyed by reason, e.g. `no_entity`.
    pub skipped: BTreeMap<String, usize>,
    pub unparseable: usize,
    /// Label-preserving ops dropped under [`ExhaustionPolicy::Truncate`].
    pub truncated_ops: usize,
}

impl StrategyCounts {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }

    pub fn reconciles(&self) -> bool {
        self.attempted == self.produced + self.skipped_total() + self.unparseable
    }

    fn merge(&mut self, other: &StrategyCounts) {
        self.attempted += other.attempted;
        self.produced += other.produced;
        self.unparseable += other.unparseable;
        self.truncated_ops += other.truncated_ops;
        for (k, v) in &other.skipped {
            *self.skipped.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub sentences: usize,
    pub strategies: usize,
    pub multiplier: usize,
    pub per_strategy: BTreeMap<StrategyKind, StrategyCounts>,
}

impl AugmentReport {
    pub fn totals(&self) -> StrategyCounts {
        let mut t = StrategyCounts::default();
        for c in self.per_strategy.values() {
            t.merge(c);
        }
        t
    }

    /// `sentences × strategies × multiplier = produced + skipped + unparseable`,
    /// in total and per strategy.
    pub fn reconciles(&self) -> bool {
        let t = self.totals();
        t.attempted == self.sentences * self.strategies * self.multiplier
            && t.reconciles()
            && self.per_strategy.values().all(StrategyCounts::reconciles)
    }

    pub fn merge(&mut self, other: &AugmentReport) {
        self.sentences += other.sentences;
        self.strategies = self.strategies.max(other.strategies);
        self.multiplier = self.multiplier.max(other.multiplier);
        for (k, c) in &other.per_strategy {
            self.per_strategy.entry(*k).or_default().merge(c);
        }
    }
}

impl fmt::Display for AugmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>9} {:>9} {:>9} {:>11}  skip reasons",
            "strategy", "attempted", "produced", "skipped", "unparseable"
        )?;
        let mut row = |name: &str, c: &StrategyCounts| {
            let reasons: Vec<String> = c.skipped.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(
                f,
                "{:<8} {:>9} {:>9} {:>9} {:>11}  {}",
                name,
                c.attempted,
                c.produced,
                c.skipped_total(),
                c.unparseable,
                reasons.join(",")
            )
        };
        for (k, c) in &self.per_strategy {
            row(&k.to_string(), c)?;
        }
        row("total", &self.totals())?;
        write!(
            f,
            "{} sentences x {} strategies x {} = {} ({})",
            self.sentences,
            self.strategies,
            self.multiplier,
            self.sentences * self.strategies * self.multiplier,
            if self.reconciles() { "reconciled" } else { "NOT reconciled" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub samples: Vec<AugmentedSample>,
    pub report: AugmentReport,
}

/// A composed template awaiting generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSample {
    pub id: String,
    pub parent_id: String,
    pub strategy: StrategyKind,
    pub copy: usize,
    pub template: MaskedTemplate,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Ready(PlannedSample, usize),
    Skipped(StrategyKind, &'static str),
}

fn compose_with_policy<R: Rng + ?Sized>(
    sentence: &TaggedSentence,
    ops: &[Operation],
    cfg: &AugmentConfig,
    schema: &crate::corpus::LabelSchema,
    rng: &mut R,
) -> Result<(MaskedTemplate, usize), MaskError> {
    let seg = segment(sentence);
    match cfg.exhaustion {
        ExhaustionPolicy::Skip => compose_template(&seg, ops, schema, &cfg.flip, &cfg.ops, rng).map(|t| (t, 0)),
        ExhaustionPolicy::Truncate => {
            let mut draft = crate::masking::TemplateDraft::new(&seg);
            let mut dropped = 0;
            for op in ops {
                match draft.apply(op, schema, &cfg.flip, &cfg.ops, rng) {
                    Ok(()) => {}
                    Err(MaskError::OverlapExhausted(k) | MaskError::NoEntity(k))
                        if matches!(k, OpKind::Op1 | OpKind::Op5) =>
                    {
                        dropped += 1
                    }
                    Err(MaskError::NoContext) => dropped += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((draft.finish(schema), dropped))
        }
    }
}

/// Compose every template without touching a backend.
pub fn plan(
    sentences: &[TaggedSentence],
    schema: &crate::corpus::LabelSchema,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(Vec<PlannedSample>, AugmentReport), AugmentError> {
    cfg.strategy.validate()?;
    cfg.ops.validate().map_err(AugmentError::Ops)?;
    let mut report = AugmentReport {
        sentences: sentences.len(),
        strategies: cfg.strategies.len(),
        multiplier: cfg.multiplier,
        per_strategy: cfg.strategies.iter().map(|k| (*k, StrategyCounts::default())).collect(),
    };
    let mut jobs = Vec::new();
    for s in sentences {
        for &kind in &cfg.strategies {
            for copy in 0..cfg.multiplier {
                jobs.push((s, kind, copy));
            }
        }
    }
    let plans = crate::gateway::bounded_map(&jobs, 8, |&(s, kind, copy)| -> Result<Plan, StrategyError> {
        let copy_str = copy.to_string();
        let mut stream = rng::stream(seed, &["augment", &s.id, kind.as_str(), &copy_str]);
        let ops = compose_strategy(kind, &cfg.strategy, &mut stream)?;
        match compose_with_policy(s, &ops, cfg, schema, &mut stream) {
            Ok((template, dropped)) => Ok(Plan::Ready(
                PlannedSample {
                    id: sample_id(&s.id, kind, copy),
                    parent_id: s.id.clone(),
                    strategy: kind,
                    copy,
                    template,
                    seed: stream.random(),
                },
                dropped,
            )),
            Err(e) => Ok(Plan::Skipped(kind, e.reason())),
        }
    });
    let mut ready = Vec::new();
    for p in plans {
        match p? {
            Plan::Ready(ps, dropped) => {
                let c = report.per_strategy.entry(ps.strategy).or_default();
                c.attempted += 1;
                c.truncated_ops += dropped;
                ready.push(ps);
            }
            Plan::Skipped(kind, reason) => {
                let c = report.per_strategy.entry(kind).or_default();
                c.attempted += 1;
                *c.skipped.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    Ok((ready, report))
}

/// Plan, fill through the gateway, and delinearize. Unparseable
/// generations are dropped and counted; a backend that stays unavailable
/// or rejects a request aborts the phase.
pub fn augment(
    sentences: &[TaggedSentence],
    cfg: &AugmentConfig,
    seed: u64,
    gateway: &Gateway,
    backend: &dyn Backend,
) -> Result<AugmentOutcome, AugmentError> {
    let (planned, mut report) = plan(sentences, &gateway.schema, cfg, seed)?;
    let reqs: Vec<FillRequest> = planned
        .iter()
        .map(|p| FillRequest {
            request_id: p.id.clone(),
            template: p.template.clone(),
            decode: DecodeParams { seed: p.seed, ..cfg.decode },
        })
        .collect();
    let results = gateway.fill_batch_parsed(&reqs, backend);
    let mut samples = Vec::with_capacity(planned.len());
    for (p, r) in planned.into_iter().zip(results) {
        let counts = report.per_strategy.entry(p.strategy).or_default();
        match r {
            Ok((resp, sentence)) => {
                counts.produced += 1;
                samples.push(AugmentedSample {
                    id: p.id,
                    parent_id: p.parent_id,
                    strategy: p.strategy,
                    copy: p.copy,
                    operations: p.template.provenance,
                    sentence,
                    linearized: resp.filled_text,
                    expected_types: p.template.expected_types,
                    original_types: p.template.original_types,
                    flipped_positions: p.template.flipped_positions,
                    filter_verdict: None,
                });
            }
            Err(GatewayError::UnparseableGeneration { .. } | GatewayError::SlotMismatch(_)) => counts.unparseable += 1,
            Err(e) => return Err(AugmentError::Backend { id: p.id, source: e }),
        }
    }
    Ok(AugmentOutcome { samples, report })
}
