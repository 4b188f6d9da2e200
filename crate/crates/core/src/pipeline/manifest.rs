//! Append-only run manifest: one entry per completed phase, each listing
//! the files it produced with their SHA-256 and the seed it used.
//!
//! Paths are relative to the output directory and there are no timestamps,
//! so two runs with the same inputs and seeds produce identical bytes.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    TrainLm,
    Augment,
    Filter,
    TrainNer0,
    IterateK,
    AnnotateUnlabeled,
    AugmentUnlabeled,
    IterateUnlabeledK,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::TrainLm => "train_lm",
            Phase::Augment => "augment",
            Phase::Filter => "filter",
            Phase::TrainNer0 => "train_ner_0",
            Phase::IterateK => "iterate_k",
            Phase::AnnotateUnlabeled => "annotate_unlabeled",
            Phase::AugmentUnlabeled => "augment_unlabeled",
            Phase::IterateUnlabeledK => "iterate_unlabeled_k",
            Phase::Done => "done",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A phase together with its iteration counter (0 for one-shot phases).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub phase: Phase,
    pub iteration: usize,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.phase {
            Phase::IterateK | Phase::IterateUnlabeledK => write!(f, "{}[{}]", self.phase, self.iteration),
            _ => write!(f, "{}", self.phase),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: Phase,
    pub iteration: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub consumes: Vec<String>,
    pub artifacts: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub counts: serde_json::Map<String, serde_json::Value>,
}

impl PhaseEntry {
    pub fn step(&self) -> Step {
        Step { phase: self.phase, iteration: self.iteration }
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Run,
    RunStar,
}

/// Current position in the workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub phase: Phase,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub mode: RunMode,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<Artifact>,
    pub state: RunState,
    pub entries: Vec<PhaseEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(mode: RunMode, seed: u64, config_sha256: String, inputs: Vec<Artifact>) -> Self {
        Self {
            version: 1,
            mode,
            seed,
            config_sha256,
            inputs,
            state: RunState { phase: Phase::TrainLm, iteration: 0 },
            entries: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| PipelineError::Corrupt(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    /// Write atomically through a temporary file.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))
    }

    pub fn push(&mut self, entry: PhaseEntry, next: RunState) {
        self.entries.push(entry);
        self.state = next;
    }

    /// Entries in order of completion.
    pub fn steps(&self) -> Vec<Step> {
        self.entries.iter().map(PhaseEntry::step).collect()
    }

    pub fn find(&self, step: Step) -> Option<&PhaseEntry> {
        self.entries.iter().find(|e| e.step() == step)
    }
}

/// Read/write helper rooted at the output directory.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| PipelineError::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&self, name: &str, rel: &str, bytes: &[u8]) -> Result<Artifact, PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        Ok(Artifact {
            name: name.to_string(),
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        })
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, rel: &str, records: &[T]) -> Result<Artifact, PipelineError> {
        self.write_bytes(name, rel, &to_jsonl(records))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, rel: &str, value: &T) -> Result<Artifact, PipelineError> {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        self.write_bytes(name, rel, text.as_bytes())
    }

    /// Read an artifact back, failing if its content changed.
    pub fn read_verified(&self, a: &Artifact) -> Result<Vec<u8>, PipelineError> {
        let path = self.root.join(&a.path);
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        if sha256_hex(&bytes) != a.sha256 {
            return Err(PipelineError::Corrupt(format!("{} does not match its manifest hash", path.display())));
        }
        Ok(bytes)
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, a: &Artifact) -> Result<Vec<T>, PipelineError> {
        let bytes = self.read_verified(a)?;
        from_jsonl(&bytes[..]).map_err(|e| PipelineError::Corrupt(format!("{}: {e}", a.path)))
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.write_all(b"\n").expect("vec write");
    }
    out
}

pub fn from_jsonl<T: DeserializeOwned, R: io::Read>(reader: R) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
