//! Reversible linearized form of a tagged sentence.
//!
//! Each entity is rendered inline as `[ tok … tok | display name ]`; all
//! other tokens are copied. The text is a token sequence joined by single
//! spaces. Tokens equal to `[`, `]` or `|`, and tokens starting with a
//! backslash, get one extra leading backslash so the mapping is a bijection.
//!
//! ```
//! # use nerflip_core::corpus::*;
//! # use nerflip_core::linearize::*;
//! let schema = LabelSchema::parse("RAT\trating\nPRI\tprice\n").unwrap();
//! let text = LinearizedText::parse("find me a [ nice | rating ] place");
//! let s = delinearize(&text, &schema, "q1").unwrap();
//! assert_eq!(s.spans, vec![EntitySpan::new(3, 4, TypeId(0))]);
//! assert_eq!(linearize(&s, &schema).unwrap(), text);
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntitySpan, LabelSchema, TaggedSentence, TypeId};

pub const OPEN: &str = "[";
pub const CLOSE: &str = "]";
pub const SEP: &str = "|";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizeError {
    #[error("type {0} is not in the schema")]
    UnknownType(TypeId),
    #[error("unbalanced brackets at token {0}")]
    UnbalancedBrackets(usize),
    #[error("entity group closed without a separator at token {0}")]
    MissingSeparator(usize),
    #[error("separator outside an entity group or repeated at token {0}")]
    UnexpectedSeparator(usize),
    #[error("unknown display name {0:?}")]
    UnknownDisplayName(String),
    #[error("entity group without tokens at token {0}")]
    EmptyEntity(usize),
    #[error("token {0:?} does not unescape to a valid token")]
    InvalidToken(String),
}

pub fn is_reserved(token: &str) -> bool {
    token == OPEN || token == CLOSE || token == SEP
}

pub fn escape_token(token: &str) -> String {
    if is_reserved(token) || token.starts_with('\\') {
        format!("\\{token}")
    } else {
        token.to_string()
    }
}

pub fn unescape_token(token: &str) -> &str {
    token.strip_prefix('\\').unwrap_or(token)
}

/// Token sequence of the linearized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinearizedText(Vec<String>);

impl LinearizedText {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    /// Splits on any whitespace.
    pub fn parse(text: &str) -> Self {
        Self(text.split_whitespace().map(String::from).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }
}

impl fmt::Display for LinearizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySegment {
    pub tokens: Vec<String>,
    #[serde(rename = "type")]
    pub type_id: TypeId,
}

/// Alternating decomposition `C1 E1 C2 … En Cn+1`. Contexts may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedSentence {
    pub id: String,
    /// Always `entities.len() + 1` entries.
    pub contexts: Vec<Vec<String>>,
    pub entities: Vec<EntitySegment>,
}

impl SegmentedSentence {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn type_sequence(&self) -> Vec<TypeId> {
        self.entities.iter().map(|e| e.type_id).collect()
    }

    pub fn unsegment(&self) -> TaggedSentence {
        let mut tokens = Vec::new();
        let mut spans = Vec::with_capacity(self.entities.len());
        for (i, ctx) in self.contexts.iter().enumerate() {
            tokens.extend(ctx.iter().cloned());
            if let Some(e) = self.entities.get(i) {
                let start = tokens.len();
                tokens.extend(e.tokens.iter().cloned());
                spans.push(EntitySpan::new(start, tokens.len(), e.type_id));
            }
        }
        TaggedSentence {
            id: self.id.clone(),
            tokens,
            spans,
        }
    }
}

pub fn segment(sentence: &TaggedSentence) -> SegmentedSentence {
    let mut contexts = Vec::with_capacity(sentence.spans.len() + 1);
    let mut entities = Vec::with_capacity(sentence.spans.len());
    let mut cursor = 0;
    for span in &sentence.spans {
        contexts.push(sentence.tokens[cursor..span.start].to_vec());
        entities.push(EntitySegment {
            tokens: sentence.tokens[span.start..span.end].to_vec(),
            type_id: span.type_id,
        });
        cursor = span.end;
    }
    contexts.push(sentence.tokens[cursor..].to_vec());
    SegmentedSentence {
        id: sentence.id.clone(),
        contexts,
        entities,
    }
}

/// Linearized tokens of one entity group.
pub(crate) fn push_group(out: &mut Vec<String>, tokens: &[String], display_name: &str) {
    out.push(OPEN.to_string());
    out.extend(tokens.iter().map(|t| escape_token(t)));
    out.push(SEP.to_string());
    out.extend(display_name.split(' ').map(String::from));
    out.push(CLOSE.to_string());
}

pub fn linearize(sentence: &TaggedSentence, schema: &LabelSchema) -> Result<LinearizedText, LinearizeError> {
    let mut out = Vec::with_capacity(sentence.tokens.len() + 4 * sentence.spans.len());
    let mut cursor = 0;
    for span in &sentence.spans {
        if !schema.contains(span.type_id) {
            return Err(LinearizeError::UnknownType(span.type_id));
        }
        out.extend(sentence.tokens[cursor..span.start].iter().map(|t| escape_token(t)));
        push_group(
            &mut out,
            &sentence.tokens[span.start..span.end],
            schema.display_name(span.type_id),
        );
        cursor = span.end;
    }
    out.extend(sentence.tokens[cursor..].iter().map(|t| escape_token(t)));
    Ok(LinearizedText(out))
}

enum State {
    Outside,
    Entity { start: usize, at: usize },
    Name { start: usize, name: Vec<String> },
}

fn plain(token: &str) -> Result<String, LinearizeError> {
    let t = unescape_token(token);
    if t.is_empty() {
        return Err(LinearizeError::InvalidToken(token.to_string()));
    }
    Ok(t.to_string())
}

pub fn delinearize(
    text: &LinearizedText,
    schema: &LabelSchema,
    id: impl Into<String>,
) -> Result<TaggedSentence, LinearizeError> {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut state = State::Outside;

    for (pos, tok) in text.tokens().iter().enumerate() {
        let tok = tok.as_str();
        state = match state {
            State::Outside => match tok {
                OPEN => State::Entity {
                    start: tokens.len(),
                    at: pos,
                },
                CLOSE => return Err(LinearizeError::UnbalancedBrackets(pos)),
                SEP => return Err(LinearizeError::UnexpectedSeparator(pos)),
                _ => {
                    tokens.push(plain(tok)?);
                    State::Outside
                }
            },
            State::Entity { start, at } => match tok {
                OPEN => return Err(LinearizeError::UnbalancedBrackets(pos)),
                CLOSE => return Err(LinearizeError::MissingSeparator(pos)),
                SEP if tokens.len() == start => return Err(LinearizeError::EmptyEntity(at)),
                SEP => State::Name {
                    start,
                    name: Vec::new(),
                },
                _ => {
                    tokens.push(plain(tok)?);
                    State::Entity { start, at }
                }
            },
            State::Name { start, mut name } => match tok {
                OPEN => return Err(LinearizeError::UnbalancedBrackets(pos)),
                SEP => return Err(LinearizeError::UnexpectedSeparator(pos)),
                CLOSE => {
                    let joined = name.join(" ");
                    let type_id = schema
                        .by_display_name(&joined)
                        .ok_or(LinearizeError::UnknownDisplayName(joined))?;
                    spans.push(EntitySpan::new(start, tokens.len(), type_id));
                    State::Outside
                }
                _ => {
                    name.push(tok.to_string());
                    State::Name { start, name }
                }
            },
        };
    }
    if !matches!(state, State::Outside) {
        return Err(LinearizeError::UnbalancedBrackets(text.tokens().len()));
    }
    Ok(TaggedSentence {
        id: id.into(),
        tokens,
        spans,
    })
}
