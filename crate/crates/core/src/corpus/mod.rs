//! Corpus records, the label schema, CoNLL column I/O and few-shot sampling.

mod conll;
mod schema;
mod shots;

pub use conll::{emit_conll, parse_conll, ParseMode};
pub use schema::{normalize_name, LabelEntry, LabelSchema, TypeId};
pub use shots::{sample_shots, ShotSplit, ShotWarning};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: unknown tag {tag:?}")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: malformed line {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("line {line}: {tag} does not continue an entity of the same type")]
    InvalidBioTransition { line: usize, tag: String },
    #[error("invalid sentence {id}: {reason}")]
    InvalidSentence { id: String, reason: String },
    #[error("schema error: {0}")]
    Schema(String),
}

/// Half-open token range `[start, end)` carrying one entity type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub type_id: TypeId,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, type_id: TypeId) -> Self {
        Self {
            start,
            end,
            type_id,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Pre-tokenized sentence with sorted, non-overlapping entity spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub spans: Vec<EntitySpan>,
}

impl TaggedSentence {
    /// Validates token and span invariants. Spans are sorted first.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        mut spans: Vec<EntitySpan>,
    ) -> Result<Self, CorpusError> {
        spans.sort();
        let s = Self {
            id: id.into(),
            tokens,
            spans,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: String| CorpusError::InvalidSentence {
            id: self.id.clone(),
            reason,
        };
        if let Some(t) = self
            .tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(bad(format!("token {t:?} is empty or contains whitespace")));
        }
        let mut prev_end = 0;
        for (i, span) in self.spans.iter().enumerate() {
            if span.start >= span.end || span.end > self.tokens.len() {
                return Err(bad(format!(
                    "span {}..{} out of bounds for {} tokens",
                    span.start,
                    span.end,
                    self.tokens.len()
                )));
            }
            if i > 0 && span.start < prev_end {
                return Err(bad(format!(
                    "span {}..{} overlaps or is out of order",
                    span.start, span.end
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }

    pub fn type_sequence(&self) -> Vec<TypeId> {
        self.spans.iter().map(|s| s.type_id).collect()
    }

    pub fn has_type(&self, type_id: TypeId) -> bool {
        self.spans.iter().any(|s| s.type_id == type_id)
    }

    /// BIO2 tag per token.
    pub fn bio_tags(&self, schema: &LabelSchema) -> Vec<String> {
        let mut tags = vec!["O".to_string(); self.tokens.len()];
        for span in &self.spans {
            let tag = schema.tag(span.type_id);
            tags[span.start] = format!("B-{tag}");
            for t in &mut tags[span.start + 1..span.end] {
                *t = format!("I-{tag}");
            }
        }
        tags
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: LabelSchema,
    pub sentences: Vec<TaggedSentence>,
    /// Set on the unlabeled side of a few-shot split: spans are kept for
    /// oracle evaluation only and must not be used as supervision.
    #[serde(default)]
    pub unlabeled: bool,
}

impl Dataset {
    pub fn new(schema: LabelSchema, sentences: Vec<TaggedSentence>) -> Result<Self, CorpusError> {
        for s in &sentences {
            s.validate()?;
            if let Some(span) = s.spans.iter().find(|sp| !schema.contains(sp.type_id)) {
                return Err(CorpusError::InvalidSentence {
                    id: s.id.clone(),
                    reason: format!("type {} not in schema", span.type_id),
                });
            }
        }
        Ok(Self {
            schema,
            sentences,
            unlabeled: false,
        })
    }

    pub fn empty(schema: LabelSchema) -> Self {
        Self {
            schema,
            sentences: Vec::new(),
            unlabeled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn rejects_overlap_and_out_of_bounds() {
        let t = TypeId(0);
        assert!(TaggedSentence::new("a", toks("x y z"), vec![EntitySpan::new(0, 2, t), EntitySpan::new(1, 3, t)]).is_err());
        assert!(TaggedSentence::new("a", toks("x y"), vec![EntitySpan::new(1, 3, t)]).is_err());
        assert!(TaggedSentence::new("a", toks("x y"), vec![EntitySpan::new(1, 1, t)]).is_err());
    }

    #[test]
    fn sorts_spans() {
        let t = TypeId(0);
        let s = TaggedSentence::new("a", toks("x y z"), vec![EntitySpan::new(2, 3, t), EntitySpan::new(0, 1, t)]).unwrap();
        assert_eq!(s.spans[0].start, 0);
    }

    #[test]
    fn rejects_whitespace_tokens() {
        assert!(TaggedSentence::new("a", vec!["New York".into()], vec![]).is_err());
        assert!(TaggedSentence::new("a", vec![String::new()], vec![]).is_err());
    }
}
