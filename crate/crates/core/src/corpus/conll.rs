//! CoNLL column format, BIO2 tags.
//!
//! The first column is the token and the last column is the tag, so both
//! two-column files and the four-column CoNLL-2003 layout are accepted.
//! `-DOCSTART-` lines are skipped. Sentence ids are their zero-based ordinal.

use super::{CorpusError, Dataset, EntitySpan, LabelSchema, TaggedSentence, TypeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    /// Repairs a dangling `I-X` into `B-X`.
    Lenient,
}

enum Tag {
    Outside,
    Begin(TypeId),
    Inside(TypeId),
}

fn parse_tag(raw: &str, schema: &LabelSchema, line: usize) -> Result<Tag, CorpusError> {
    if raw == "O" {
        return Ok(Tag::Outside);
    }
    let unknown = || CorpusError::UnknownTag {
        line,
        tag: raw.to_string(),
    };
    let (prefix, label) = raw.split_once('-').ok_or_else(unknown)?;
    let type_id = schema.by_tag(label).ok_or_else(unknown)?;
    match prefix {
        "B" => Ok(Tag::Begin(type_id)),
        "I" => Ok(Tag::Inside(type_id)),
        _ => Err(unknown()),
    }
}

struct SentenceBuilder {
    tokens: Vec<String>,
    spans: Vec<EntitySpan>,
    open: Option<(usize, TypeId)>,
}

impl SentenceBuilder {
    fn new() -> Self {
        Self {
            tokens: Vec::new(),
            spans: Vec::new(),
            open: None,
        }
    }

    fn close(&mut self) {
        if let Some((start, type_id)) = self.open.take() {
            self.spans
                .push(EntitySpan::new(start, self.tokens.len(), type_id));
        }
    }

    fn finish(mut self, id: usize) -> Result<TaggedSentence, CorpusError> {
        self.close();
        TaggedSentence::new(id.to_string(), self.tokens, self.spans)
    }
}

pub fn parse_conll(text: &str, schema: &LabelSchema, mode: ParseMode) -> Result<Dataset, CorpusError> {
    let mut sentences = Vec::new();
    let mut current = SentenceBuilder::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.tokens.is_empty() {
                let done = std::mem::replace(&mut current, SentenceBuilder::new());
                sentences.push(done.finish(sentences.len())?);
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(CorpusError::MalformedLine {
                line: lineno,
                content: raw_line.to_string(),
            });
        }
        let token = cols[0];
        let tag = parse_tag(cols[cols.len() - 1], schema, lineno)?;
        match tag {
            Tag::Outside => current.close(),
            Tag::Begin(t) => {
                current.close();
                current.open = Some((current.tokens.len(), t));
            }
            Tag::Inside(t) => match current.open {
                Some((_, open_t)) if open_t == t => {}
                _ => match mode {
                    ParseMode::Strict => {
                        return Err(CorpusError::InvalidBioTransition {
                            line: lineno,
                            tag: cols[cols.len() - 1].to_string(),
                        })
                    }
                    ParseMode::Lenient => {
                        current.close();
                        current.open = Some((current.tokens.len(), t));
                    }
                },
            },
        }
        current.tokens.push(token.to_string());
    }
    if !current.tokens.is_empty() {
        sentences.push(current.finish(sentences.len())?);
    }
    Dataset::new(schema.clone(), sentences)
}

/// One `token tag` line per token, a blank line after every sentence.
pub fn emit_conll(dataset: &Dataset) -> String {
    let mut out = String::new();
    for sentence in &dataset.sentences {
        for (token, tag) in sentence
            .tokens
            .iter()
            .zip(sentence.bio_tags(&dataset.schema))
        {
            out.push_str(token);
            out.push(' ');
            out.push_str(&tag);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
