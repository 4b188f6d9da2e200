use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Index of an entity type inside its [`LabelSchema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeId(pub u32);

impl TypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    /// Short tag used in BIO columns, e.g. `PER`.
    pub tag: String,
    /// Natural-language form, canonical lowercase, e.g. `person`.
    pub display_name: String,
}

/// Entity types of a corpus, their natural-language names and optional
/// embedding vectors used by similarity-based flipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSchema {
    entries: Vec<LabelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<Vec<Vec<f64>>>,
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

const RESERVED: [&str; 3] = ["[", "]", "|"];

impl LabelSchema {
    pub fn new(entries: Vec<LabelEntry>) -> Result<Self, CorpusError> {
        Self::with_embeddings(entries, None)
    }

    pub fn with_embeddings(
        entries: Vec<LabelEntry>,
        embeddings: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, CorpusError> {
        let mut clean = Vec::with_capacity(entries.len());
        for entry in entries {
            let tag = entry.tag.trim().to_string();
            let display_name = normalize_name(&entry.display_name);
            if tag.is_empty() || tag.chars().any(char::is_whitespace) || tag == "O" {
                return Err(CorpusError::Schema(format!("invalid tag {:?}", entry.tag)));
            }
            if display_name.is_empty() {
                return Err(CorpusError::Schema(format!("empty display name for {tag}")));
            }
            if display_name
                .split(' ')
                .any(|w| RESERVED.contains(&w) || w.starts_with('\\'))
            {
                return Err(CorpusError::Schema(format!(
                    "display name {display_name:?} contains a reserved symbol"
                )));
            }
            let lower_tag = tag.to_lowercase();
            if clean
                .iter()
                .any(|e: &LabelEntry| e.tag.to_lowercase() == lower_tag)
            {
                return Err(CorpusError::Schema(format!("duplicate tag {tag}")));
            }
            if clean.iter().any(|e| e.display_name == display_name) {
                return Err(CorpusError::Schema(format!(
                    "duplicate display name {display_name}"
                )));
            }
            clean.push(LabelEntry { tag, display_name });
        }
        if let Some(vectors) = &embeddings {
            if vectors.len() != clean.len() {
                return Err(CorpusError::Schema(
                    "embeddings must be given for every type or none".into(),
                ));
            }
            let dim = vectors.first().map_or(0, Vec::len);
            if vectors
                .iter()
                .any(|v| v.len() != dim || dim == 0 || v.iter().any(|x| !x.is_finite()))
            {
                return Err(CorpusError::Schema(
                    "embedding vectors must share one non-zero dimension".into(),
                ));
            }
        }
        Ok(Self {
            entries: clean,
            embeddings,
        })
    }

    /// Parse the schema file format: `tag<TAB>display_name[<TAB>v1,v2,...]`
    /// per line. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        let mut vectors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() < 2 || cols.len() > 3 {
                return Err(CorpusError::MalformedLine {
                    line: lineno + 1,
                    content: line.to_string(),
                });
            }
            entries.push(LabelEntry {
                tag: cols[0].to_string(),
                display_name: cols[1].to_string(),
            });
            if let Some(raw) = cols.get(2) {
                let v = raw
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| CorpusError::MalformedLine {
                        line: lineno + 1,
                        content: line.to_string(),
                    })?;
                vectors.push(v);
            }
        }
        let embeddings = match vectors.len() {
            0 => None,
            n if n == entries.len() => Some(vectors),
            _ => {
                return Err(CorpusError::Schema(
                    "embeddings must be given for every type or none".into(),
                ))
            }
        };
        Self::with_embeddings(entries, embeddings)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&e.tag);
            out.push('\t');
            out.push_str(&e.display_name);
            if let Some(vs) = &self.embeddings {
                out.push('\t');
                let parts: Vec<String> = vs[i].iter().map(|x| x.to_string()).collect();
                out.push_str(&parts.join(","));
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn type_ids(&self) -> impl Iterator<Item = TypeId> + '_ {
        (0..self.entries.len() as u32).map(TypeId)
    }

    pub fn contains(&self, id: TypeId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn tag(&self, id: TypeId) -> &str {
        &self.entries[id.index()].tag
    }

    pub fn display_name(&self, id: TypeId) -> &str {
        &self.entries[id.index()].display_name
    }

    /// Exact match first, then case-insensitive.
    pub fn by_tag(&self, tag: &str) -> Option<TypeId> {
        self.entries
            .iter()
            .position(|e| e.tag == tag)
            .or_else(|| {
                let lower = tag.to_lowercase();
                self.entries
                    .iter()
                    .position(|e| e.tag.to_lowercase() == lower)
            })
            .map(|i| TypeId(i as u32))
    }

    /// Case-insensitive after trimming.
    pub fn by_display_name(&self, name: &str) -> Option<TypeId> {
        let wanted = normalize_name(name);
        self.entries
            .iter()
            .position(|e| e.display_name == wanted)
            .map(|i| TypeId(i as u32))
    }

    pub fn embeddings(&self) -> Option<&[Vec<f64>]> {
        self.embeddings.as_deref()
    }

    pub fn embedding(&self, id: TypeId) -> Option<&[f64]> {
        self.embeddings
            .as_ref()
            .and_then(|v| v.get(id.index()))
            .map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(tag: &str, name: &str) -> LabelEntry {
        LabelEntry {
            tag: tag.into(),
            display_name: name.into(),
        }
    }

    #[test]
    fn parses_schema_file_with_embeddings() {
        let s = LabelSchema::parse("PER\tPerson\t1,0\nLOC\tlocation\t0,2\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.display_name(TypeId(0)), "person");
        assert_eq!(s.embedding(TypeId(1)).unwrap(), &[0.0, 2.0]);
        assert_eq!(LabelSchema::parse(&s.to_file_string()).unwrap(), s);
    }

    #[test]
    fn rejects_duplicates_after_lowercasing() {
        assert!(LabelSchema::new(vec![entry("PER", "person"), entry("per", "human")]).is_err());
        assert!(LabelSchema::new(vec![entry("PER", "Person"), entry("P2", "person ")]).is_err());
    }

    #[test]
    fn rejects_ragged_embeddings() {
        assert!(LabelSchema::parse("A\ta\t1,2\nB\tb\t1\n").is_err());
        assert!(LabelSchema::parse("A\ta\t1,2\nB\tb\n").is_err());
    }

    #[test]
    fn lookups_are_case_insensitive() {
        let s = LabelSchema::new(vec![entry("ORG", "Organization"), entry("MISC", "miscellaneous")])
            .unwrap();
        assert_eq!(s.by_display_name("  ORGANIZATION "), Some(TypeId(0)));
        assert_eq!(s.by_tag("misc"), Some(TypeId(1)));
        assert_eq!(s.by_tag("LOC"), None);
    }

    #[test]
    fn reserved_symbols_not_allowed_in_names() {
        assert!(LabelSchema::new(vec![entry("X", "a | b")]).is_err());
    }
}
