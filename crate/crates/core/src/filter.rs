//! Self-consistency filtering.
//!
//! Every entity type name of an augmented sample is cut out of its
//! linearized form and regenerated by the type scorer (Word2Type). A sample
//! survives only if the regenerated names match its expected names at every
//! position, after lowercase and whitespace normalization.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentedSample;
use crate::corpus::{normalize_name, LabelSchema, TaggedSentence, TypeId};
use crate::gateway::{bounded_map, Backend, Gateway, ScriptedScorer, TypeScoreRequest};
use crate::linearize::{escape_token, CLOSE, OPEN, SEP};
use crate::strategy::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// All type slots masked in one query.
    #[default]
    Joint,
    /// One query per slot with the other names left in place.
    OneAtATime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Kept,
    DroppedMismatch,
    DroppedUnparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub status: VerdictStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicted: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mismatched_positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Literal segments around the type names of `sentence`. With `only`
/// set, just that entity's name becomes a slot.
fn query_segments(sentence: &TaggedSentence, schema: &LabelSchema, only: Option<usize>) -> Vec<String> {
    let mut segments = Vec::with_capacity(sentence.spans.len() + 1);
    let mut cur: Vec<String> = Vec::new();
    let mut cursor = 0;
    for (i, span) in sentence.spans.iter().enumerate() {
        cur.extend(sentence.tokens[cursor..span.start].iter().map(|t| escape_token(t)));
        cur.push(OPEN.into());
        cur.extend(sentence.tokens[span.start..span.end].iter().map(|t| escape_token(t)));
        cur.push(SEP.into());
        if only.is_none_or(|j| j == i) {
            segments.push(cur.join(" "));
            cur.clear();
        } else {
            cur.push(schema.display_name(span.type_id).to_string());
        }
        cur.push(CLOSE.into());
        cursor = span.end;
    }
    cur.extend(sentence.tokens[cursor..].iter().map(|t| escape_token(t)));
    segments.push(cur.join(" "));
    segments
}

/// Word2Type query for a sample; the request id is the sample id.
pub fn make_word2type_query(sample: &AugmentedSample, schema: &LabelSchema) -> TypeScoreRequest {
    TypeScoreRequest::new(sample.id.clone(), query_segments(&sample.sentence, schema, None))
}

/// Single-slot query for entity `position` (one-at-a-time mode).
pub fn make_single_slot_query(sample: &AugmentedSample, schema: &LabelSchema, position: usize) -> TypeScoreRequest {
    TypeScoreRequest::new(
        format!("{}#{position}", sample.id),
        query_segments(&sample.sentence, schema, Some(position)),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub input: usize,
    pub kept: usize,
    pub dropped_mismatch: usize,
    pub dropped_unparseable: usize,
}

impl FilterCounts {
    pub fn retention(&self) -> f64 {
        if self.input == 0 {
            0.0
        } else {
            self.kept as f64 / self.input as f64
        }
    }

    pub fn balanced(&self) -> bool {
        self.input == self.kept + self.dropped_mismatch + self.dropped_unparseable
    }

    fn record(&mut self, status: VerdictStatus) {
        self.input += 1;
        match status {
            VerdictStatus::Kept => self.kept += 1,
            VerdictStatus::DroppedMismatch => self.dropped_mismatch += 1,
            VerdictStatus::DroppedUnparseable => self.dropped_unparseable += 1,
        }
    }

    fn add(&mut self, o: &FilterCounts) {
        self.input += o.input;
        self.kept += o.kept;
        self.dropped_mismatch += o.dropped_mismatch;
        self.dropped_unparseable += o.dropped_unparseable;
    }
}

/// Mergeable per-strategy counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub per_strategy: BTreeMap<StrategyKind, FilterCounts>,
}

#[derive(Serialize)]
struct ReportJson {
    per_strategy: BTreeMap<StrategyKind, CountsJson>,
    total: CountsJson,
}

#[derive(Serialize)]
struct CountsJson {
    #[serde(flatten)]
    counts: FilterCounts,
    retention: f64,
}

impl FilterReport {
    pub fn total(&self) -> FilterCounts {
        let mut t = FilterCounts::default();
        self.per_strategy.values().for_each(|c| t.add(c));
        t
    }

    pub fn merge(&mut self, other: &FilterReport) {
        for (k, c) in &other.per_strategy {
            self.per_strategy.entry(*k).or_default().add(c);
        }
    }

    /// JSON summary with retention fractions.
    pub fn to_json(&self) -> serde_json::Value {
        let cj = |c: &FilterCounts| CountsJson { counts: *c, retention: c.retention() };
        serde_json::to_value(ReportJson {
            per_strategy: self.per_strategy.iter().map(|(k, c)| (*k, cj(c))).collect(),
            total: cj(&self.total()),
        })
        .expect("report serializes")
    }
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>7} {:>7} {:>9} {:>12} {:>10}",
            "strategy", "input", "kept", "mismatch", "unparseable", "retention"
        )?;
        let mut row = |name: &str, c: &FilterCounts| {
            writeln!(
                f,
                "{:<8} {:>7} {:>7} {:>9} {:>12} {:>9.1}%",
                name,
                c.input,
                c.kept,
                c.dropped_mismatch,
                c.dropped_unparseable,
                100.0 * c.retention()
            )
        };
        for (k, c) in &self.per_strategy {
            row(&k.to_string(), c)?;
        }
        row("total", &self.total())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<AugmentedSample>,
    pub dropped: Vec<AugmentedSample>,
    pub report: FilterReport,
}

fn expected_names(types: &[TypeId], schema: &LabelSchema) -> Vec<String> {
    types.iter().map(|t| normalize_name(schema.display_name(*t))).collect()
}

fn judge(sample: &AugmentedSample, schema: &LabelSchema, predicted: Result<Vec<String>, String>) -> FilterVerdict {
    match predicted {
        Err(detail) => FilterVerdict {
            status: VerdictStatus::DroppedUnparseable,
            predicted: Vec::new(),
            mismatched_positions: Vec::new(),
            detail: Some(detail),
        },
        Ok(predicted) => {
            let gold = expected_names(&sample.expected_types, schema);
            let mut mismatched: Vec<usize> = gold
                .iter()
                .zip(&predicted)
                .enumerate()
                .filter(|(_, (g, p))| g != p)
                .map(|(i, _)| i)
                .collect();
            if predicted.len() != gold.len() {
                mismatched.extend(predicted.len().min(gold.len())..predicted.len().max(gold.len()));
            }
            FilterVerdict {
                status: if mismatched.is_empty() { VerdictStatus::Kept } else { VerdictStatus::DroppedMismatch },
                predicted,
                mismatched_positions: mismatched,
                detail: None,
            }
        }
    }
}

fn predict(
    sample: &AugmentedSample,
    schema: &LabelSchema,
    mode: QueryMode,
    gateway: &Gateway,
    backend: &dyn Backend,
) -> Result<Vec<String>, String> {
    match mode {
        QueryMode::Joint => gateway
            .score_types(&make_word2type_query(sample, schema), backend)
            .map(|r| r.types)
            .map_err(|e| e.to_string()),
        QueryMode::OneAtATime => (0..sample.sentence.spans.len())
            .map(|i| {
                let r = gateway
                    .score_types(&make_single_slot_query(sample, schema, i), backend)
                    .map_err(|e| e.to_string())?;
                Ok(r.types.into_iter().next().unwrap_or_default())
            })
            .collect(),
    }
}

/// Scorer that answers every joint query with the sample's expected names.
pub fn echo_oracle(samples: &[AugmentedSample], schema: &LabelSchema) -> ScriptedScorer {
    ScriptedScorer::new(
        samples
            .iter()
            .map(|s| (s.id.clone(), expected_names(&s.expected_types, schema)))
            .collect(),
    )
}

/// Score every sample and split into kept and dropped, each annotated with
/// its verdict. Backend errors drop the sample as unparseable.
pub fn filter(samples: &[AugmentedSample], mode: QueryMode, gateway: &Gateway, backend: &dyn Backend) -> FilterOutcome {
    let schema = &gateway.schema;
    let verdicts = bounded_map(samples, gateway.max_in_flight, |s| {
        if s.sentence.spans.is_empty() && s.expected_types.is_empty() {
            return judge(s, schema, Ok(Vec::new()));
        }
        judge(s, schema, predict(s, schema, mode, gateway, backend))
    });
    let mut out = FilterOutcome { kept: Vec::new(), dropped: Vec::new(), report: FilterReport::default() };
    for (s, v) in samples.iter().zip(verdicts) {
        out.report.per_strategy.entry(s.strategy).or_default().record(v.status);
        let mut s = s.clone();
        let kept = v.status == VerdictStatus::Kept;
        s.filter_verdict = Some(v);
        if kept {
            out.kept.push(s);
        } else {
            out.dropped.push(s);
        }
    }
    out
}
