//! Self-training orchestration.
//!
//! The workflow is a fixed sequence of steps:
//!
//! ```text
//! train_lm → augment → filter → train_ner_0 → iterate_k[1..N]
//!   (run-star with unlabeled data)
//!   → annotate_unlabeled → augment_unlabeled → iterate_unlabeled_k[1..N]
//! → done
//! ```
//!
//! After every step the manifest is rewritten. Re-running into the same
//! output directory replays completed steps from their artifacts (verified
//! by hash) and continues with the first missing one.

pub mod config;
pub mod manifest;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::augment::{augment, AugmentError, AugmentedSample};
use crate::corpus::{parse_conll, sample_shots, Dataset, LabelSchema, ParseMode, TaggedSentence};
use crate::eval::micro_f1;
use crate::filter::filter;
use crate::flip::FlipKind;
use crate::gateway::{Backend, BackendError, Gateway, GeneratorTrainRequest, HttpBackend, Lexicons, MockBackend};
use crate::linearize::linearize;
use crate::mixup::{build_pairs, MixupPair, PairCandidate};
use crate::rng;
use crate::tagger::{
    AnnotateInput, ConfidenceAnnotation, NerAnnotateRequest, NerTrainRequest, NerTrainer, StubTrainer,
};

pub use config::{BackendKind, RunConfig};
pub use manifest::{Artifact, ArtifactStore, Manifest, Phase, PhaseEntry, RunMode, RunState, Step};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("corrupt run state: {0}")]
    Corrupt(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl PipelineError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 2 for configuration, 3 for backend failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Backend(_) => 3,
            _ => 1,
        }
    }
}

impl From<AugmentError> for PipelineError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Backend { .. } => PipelineError::Backend(e.to_string()),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

/// Everything the workflow reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub schema: LabelSchema,
    pub train: Vec<TaggedSentence>,
    /// Spans, if any, are ignored.
    pub unlabeled: Vec<TaggedSentence>,
    pub test: Vec<TaggedSentence>,
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn read_conll(path: &Path, schema: &LabelSchema, mode: ParseMode) -> Result<Dataset, PipelineError> {
    parse_conll(&read_text(path)?, schema, mode).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

impl Inputs {
    /// Load the files named in `cfg.paths`. With `shots` set, the training
    /// corpus is sampled down and the remainder becomes the unlabeled pool
    /// unless an unlabeled file is configured.
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let schema_path = cfg.paths.schema.as_ref().ok_or_else(|| PipelineError::Config("paths.schema is required".into()))?;
        let train_path = cfg.paths.train.as_ref().ok_or_else(|| PipelineError::Config("paths.train is required".into()))?;
        let schema = LabelSchema::parse(&read_text(schema_path)?)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", schema_path.display())))?;
        let corpus = read_conll(train_path, &schema, ParseMode::Lenient)?;
        let (train, mut unlabeled) = match cfg.shots {
            Some(k) => {
                let split = sample_shots(&corpus, k, cfg.seed);
                (split.train.sentences, split.unlabeled.sentences)
            }
            None => (corpus.sentences, Vec::new()),
        };
        if let Some(p) = &cfg.paths.unlabeled {
            unlabeled = read_conll(p, &schema, ParseMode::Lenient)?
                .sentences
                .into_iter()
                .map(|s| TaggedSentence { id: format!("u{}", s.id), ..s })
                .collect();
        }
        for s in &mut unlabeled {
            s.spans.clear();
        }
        let test = match &cfg.paths.test {
            Some(p) => read_conll(p, &schema, ParseMode::Lenient)?.sentences,
            None => Vec::new(),
        };
        Ok(Self { schema, train, unlabeled, test })
    }
}

/// Backend and trainer chosen by `cfg.backend`. The mock pairs a lexicon
/// generator with the stub tagger persisted under `out/models`.
/// Generation backend and tagger for a run.
pub type Backends = (Box<dyn Backend>, Box<dyn NerTrainer>);

pub fn build_backends(
    cfg: &RunConfig,
    inputs: &Inputs,
    out_dir: &Path,
) -> Result<Backends, PipelineError> {
    match cfg.backend {
        BackendKind::Mock => {
            let mut lex = Lexicons::from_files(&cfg.paths.entity_lexicons, cfg.paths.context_lexicon.as_deref())
                .map_err(|e| PipelineError::Config(format!("lexicons: {e}")))?;
            let train = Dataset::new(inputs.schema.clone(), inputs.train.clone())
                .map_err(|e| PipelineError::Data(e.to_string()))?;
            lex.merge(&Lexicons::from_dataset(&train));
            Ok((
                Box::new(MockBackend::new(inputs.schema.clone(), lex)),
                Box::new(StubTrainer::persistent(out_dir.join("models"))),
            ))
        }
        BackendKind::Http => {
            let make = || {
                HttpBackend::with_paths(cfg.http.url.clone(), cfg.http.paths.clone(), cfg.http.timeout())
                    .map_err(|e| PipelineError::Config(e.to_string()))
            };
            Ok((Box::new(make()?), Box::new(make()?)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub model: String,
    pub manifest: Manifest,
    pub executed: Vec<Step>,
    pub replayed: Vec<Step>,
}

/// One selection decision in a self-training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub confidence: f64,
    pub selected: bool,
}

#[derive(Default)]
struct State {
    t_a0: Vec<AugmentedSample>,
    t_af: Vec<AugmentedSample>,
    t_u: Vec<TaggedSentence>,
    t_au: Vec<AugmentedSample>,
    model: Option<String>,
}

const ANNOTATE_CHUNK: usize = 512;

fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.paths = Default::default();
    manifest::sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
}

pub fn plan_steps(mode: RunMode, iterations: usize, has_unlabeled: bool) -> Vec<Step> {
    let s = |phase, iteration| Step { phase, iteration };
    let mut steps = vec![s(Phase::TrainLm, 0), s(Phase::Augment, 0), s(Phase::Filter, 0), s(Phase::TrainNer0, 0)];
    steps.extend((1..=iterations).map(|k| s(Phase::IterateK, k)));
    if mode == RunMode::RunStar && has_unlabeled {
        steps.push(s(Phase::AnnotateUnlabeled, 0));
        steps.push(s(Phase::AugmentUnlabeled, 0));
        steps.extend((1..=iterations).map(|k| s(Phase::IterateUnlabeledK, k)));
    }
    steps.push(s(Phase::Done, 0));
    steps
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    inputs: &'a Inputs,
    gateway: Gateway,
    backend: &'a dyn Backend,
    trainer: &'a dyn NerTrainer,
    store: ArtifactStore,
    state: State,
}

/// Run the workflow in `mode`, resuming from `out_dir` if it holds a
/// manifest of the same run.
pub fn run_pipeline(
    mode: RunMode,
    cfg: &RunConfig,
    inputs: &Inputs,
    backend: &dyn Backend,
    trainer: &dyn NerTrainer,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    if cfg.iterations < 1 {
        return Err(PipelineError::Config("iterations must be at least 1".into()));
    }
    if inputs.train.is_empty() {
        return Err(PipelineError::Config("the few-shot training set is empty".into()));
    }
    if cfg.flip_scheme != FlipKind::Random && cfg.strategy.iter().any(|s| s.is_label_flipping()) && inputs.schema.embeddings().is_none() {
        return Err(PipelineError::Config(format!("flip_scheme {:?} needs type embeddings in the schema", cfg.flip_scheme)));
    }
    Dataset::new(inputs.schema.clone(), inputs.train.clone()).map_err(|e| PipelineError::Data(e.to_string()))?;
    let ids: HashSet<&str> = inputs.train.iter().map(|s| s.id.as_str()).collect();
    if let Some(dup) = inputs.unlabeled.iter().find(|s| ids.contains(s.id.as_str())) {
        return Err(PipelineError::Data(format!("unlabeled sentence id {} collides with a training id", dup.id)));
    }

    let store = ArtifactStore::new(out_dir)?;
    let input_artifacts = vec![
        store.write_bytes("schema", "inputs/schema.tsv", inputs.schema.to_file_string().as_bytes())?,
        store.write_jsonl("train", "inputs/train.jsonl", &inputs.train)?,
        store.write_jsonl("unlabeled", "inputs/unlabeled.jsonl", &inputs.unlabeled)?,
        store.write_jsonl("test", "inputs/test.jsonl", &inputs.test)?,
    ];
    let fresh = Manifest::new(mode, cfg.seed, config_hash(cfg), input_artifacts);
    let mut manifest = match Manifest::load(out_dir)? {
        Some(old) => {
            if old.mode != fresh.mode || old.config_sha256 != fresh.config_sha256 || old.inputs != fresh.inputs || old.seed != fresh.seed {
                return Err(PipelineError::Config(format!(
                    "{} holds a different run; choose a fresh output directory",
                    out_dir.display()
                )));
            }
            old
        }
        None => fresh,
    };

    let mut runner = Runner {
        cfg,
        inputs,
        gateway: cfg.gateway(inputs.schema.clone()),
        backend,
        trainer,
        store,
        state: State::default(),
    };
    let steps = plan_steps(mode, cfg.iterations, !inputs.unlabeled.is_empty());
    if manifest.entries.len() > steps.len() {
        return Err(PipelineError::Corrupt("manifest has more entries than the plan".into()));
    }
    let (mut executed, mut replayed) = (Vec::new(), Vec::new());
    for (i, &step) in steps.iter().enumerate() {
        let next = steps.get(i + 1).copied().unwrap_or(Step { phase: Phase::Done, iteration: 0 });
        if let Some(entry) = manifest.entries.get(i) {
            if entry.step() != step {
                return Err(PipelineError::Corrupt(format!("manifest entry {i} is {} but the plan expects {step}", entry.step())));
            }
            runner.restore(entry)?;
            replayed.push(step);
            continue;
        }
        let entry = runner.execute(step)?;
        manifest.push(entry, RunState { phase: next.phase, iteration: next.iteration });
        manifest.save(out_dir)?;
        executed.push(step);
    }
    let model = runner.state.model.clone().ok_or_else(|| PipelineError::Corrupt("no model after training".into()))?;
    Ok(RunOutcome { model, manifest, executed, replayed })
}

pub fn run_labeled(
    cfg: &RunConfig,
    inputs: &Inputs,
    backend: &dyn Backend,
    trainer: &dyn NerTrainer,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    run_pipeline(RunMode::Run, cfg, inputs, backend, trainer, out_dir)
}

pub fn run_with_unlabeled(
    cfg: &RunConfig,
    inputs: &Inputs,
    backend: &dyn Backend,
    trainer: &dyn NerTrainer,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    run_pipeline(RunMode::RunStar, cfg, inputs, backend, trainer, out_dir)
}

fn entry(step: Step, seed: u64) -> PhaseEntry {
    PhaseEntry {
        phase: step.phase,
        iteration: step.iteration,
        seed,
        consumes: Vec::new(),
        artifacts: Vec::new(),
        model: None,
        counts: Default::default(),
    }
}

fn ids_file(examples: &[TaggedSentence]) -> Vec<u8> {
    examples.iter().flat_map(|s| format!("{}\n", s.id).into_bytes()).collect()
}

fn backend_err(what: &str, e: BackendError) -> PipelineError {
    PipelineError::Backend(format!("{what}: {e}"))
}

impl Runner<'_> {
    fn find<'m>(&self, e: &'m PhaseEntry, name: &str) -> Result<&'m Artifact, PipelineError> {
        e.artifact(name)
            .ok_or_else(|| PipelineError::Corrupt(format!("{} has no artifact {name}", e.step())))
    }

    fn restore(&mut self, e: &PhaseEntry) -> Result<(), PipelineError> {
        match e.phase {
            Phase::TrainLm | Phase::Done => {}
            Phase::Augment => self.state.t_a0 = self.store.read_jsonl(self.find(e, "samples")?)?,
            Phase::Filter => self.state.t_af = self.store.read_jsonl(self.find(e, "kept")?)?,
            Phase::AnnotateUnlabeled => self.state.t_u = self.store.read_jsonl(self.find(e, "pseudo_labels")?)?,
            Phase::AugmentUnlabeled => self.state.t_au = self.store.read_jsonl(self.find(e, "samples")?)?,
            Phase::TrainNer0 | Phase::IterateK | Phase::IterateUnlabeledK => {
                self.state.model = Some(
                    e.model
                        .clone()
                        .ok_or_else(|| PipelineError::Corrupt(format!("{} recorded no model", e.step())))?,
                );
            }
        }
        Ok(())
    }

    fn seed(&self, step: Step) -> u64 {
        rng::derive_seed(self.cfg.seed, &[step.phase.as_str(), &step.iteration.to_string()])
    }

    fn dir(step: Step) -> String {
        match step.phase {
            Phase::IterateK | Phase::IterateUnlabeledK => format!("{}/{}", step.phase, step.iteration),
            _ => step.phase.to_string(),
        }
    }

    /// Retry transient trainer failures with the gateway's budget.
    fn retry<T>(&self, what: &str, mut f: impl FnMut() -> Result<T, BackendError>) -> Result<T, PipelineError> {
        let attempts = self.gateway.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            match f() {
                Ok(v) => return Ok(v),
                Err(BackendError::Transient(m)) => {
                    last = Some(m);
                    if attempt + 1 < attempts && !self.gateway.backoff.is_zero() {
                        thread::sleep(self.gateway.backoff * 2u32.saturating_pow(attempt as u32));
                    }
                }
                Err(e) => return Err(backend_err(what, e)),
            }
        }
        Err(PipelineError::Backend(format!(
            "{what}: unavailable after {attempts} attempts: {}",
            last.unwrap_or_default()
        )))
    }

    fn execute(&mut self, step: Step) -> Result<PhaseEntry, PipelineError> {
        let seed = self.seed(step);
        let mut e = entry(step, seed);
        let dir = Self::dir(step);
        match step.phase {
            Phase::TrainLm => {
                let linearized: Vec<String> = self
                    .inputs
                    .train
                    .iter()
                    .map(|s| linearize(s, &self.inputs.schema).map(|t| t.to_string()))
                    .collect::<Result<_, _>>()
                    .map_err(|err| PipelineError::Data(err.to_string()))?;
                let req = GeneratorTrainRequest { schema: self.inputs.schema.clone(), linearized, seed };
                self.retry("generator training", || self.backend.train_generator(&req))?;
                let text: String = req.linearized.iter().map(|l| format!("{l}\n")).collect();
                e.consumes.push("inputs/train.jsonl".into());
                e.artifacts.push(self.store.write_bytes("linearized_train", &format!("{dir}/linearized.txt"), text.as_bytes())?);
            }
            Phase::Augment | Phase::AugmentUnlabeled => {
                let (source, consumed) = if step.phase == Phase::Augment {
                    (&self.inputs.train, "inputs/train.jsonl".to_string())
                } else {
                    (&self.state.t_u, "annotate_unlabeled/pseudo_labels.jsonl".to_string())
                };
                let out = augment(source, &self.cfg.augment_config(), seed, &self.gateway, self.backend)?;
                if !out.report.reconciles() {
                    return Err(PipelineError::Corrupt(format!("augmentation counts do not reconcile:\n{}", out.report)));
                }
                e.consumes.push(consumed);
                e.artifacts.push(self.store.write_jsonl("samples", &format!("{dir}/samples.jsonl"), &out.samples)?);
                e.artifacts.push(self.store.write_json("report", &format!("{dir}/report.json"), &out.report)?);
                let t = out.report.totals();
                e.counts.insert("attempted".into(), json!(t.attempted));
                e.counts.insert("produced".into(), json!(t.produced));
                e.counts.insert("skipped".into(), json!(t.skipped_total()));
                e.counts.insert("unparseable".into(), json!(t.unparseable));
                if step.phase == Phase::Augment {
                    self.state.t_a0 = out.samples;
                } else {
                    self.state.t_au = out.samples;
                }
            }
            Phase::Filter => {
                let out = filter(&self.state.t_a0, self.cfg.filter_mode, &self.gateway, self.backend);
                e.consumes.push("augment/samples.jsonl".into());
                e.artifacts.push(self.store.write_jsonl("kept", &format!("{dir}/kept.jsonl"), &out.kept)?);
                e.artifacts.push(self.store.write_jsonl("dropped", &format!("{dir}/dropped.jsonl"), &out.dropped)?);
                e.artifacts.push(self.store.write_json("report", &format!("{dir}/report.json"), &out.report.to_json())?);
                let t = out.report.total();
                e.counts.insert("input".into(), json!(t.input));
                e.counts.insert("kept".into(), json!(t.kept));
                e.counts.insert("dropped_mismatch".into(), json!(t.dropped_mismatch));
                e.counts.insert("dropped_unparseable".into(), json!(t.dropped_unparseable));
                self.state.t_af = out.kept;
            }
            Phase::TrainNer0 => {
                let samples = self.state.t_af.clone();
                e.consumes.push("filter/kept.jsonl".into());
                let model = self.train(&mut e, &dir, seed, Vec::new(), &samples, &[])?;
                self.state.model = Some(model);
            }
            Phase::IterateK => {
                let prev = self.current_model()?;
                let pool = self.state.t_af.clone();
                let selected = self.select(&mut e, &dir, &prev, &pool)?;
                e.consumes.extend(["inputs/train.jsonl".into(), "filter/kept.jsonl".into()]);
                let model = self.train(&mut e, &dir, seed, self.inputs.train.clone(), &selected, &[])?;
                self.state.model = Some(model);
            }
            Phase::AnnotateUnlabeled => {
                let model = self.current_model()?;
                let (all, kept) = self.annotate_pool(&model, &self.inputs.unlabeled, true)?;
                e.consumes.push("inputs/unlabeled.jsonl".into());
                e.artifacts.push(self.store.write_jsonl("annotations", &format!("{dir}/annotations.jsonl"), &all)?);
                e.artifacts.push(self.store.write_jsonl("pseudo_labels", &format!("{dir}/pseudo_labels.jsonl"), &kept)?);
                e.counts.insert("annotated".into(), json!(all.len()));
                e.counts.insert("kept".into(), json!(kept.len()));
                self.state.t_u = kept;
            }
            Phase::IterateUnlabeledK => {
                let prev = self.current_model()?;
                let mut pool = self.state.t_af.clone();
                pool.extend(self.state.t_au.iter().cloned());
                let selected = self.select(&mut e, &dir, &prev, &pool)?;
                let (all, t_u) = self.annotate_pool(&prev, &self.inputs.unlabeled, self.cfg.filter_reannotated)?;
                e.artifacts.push(self.store.write_jsonl("annotations", &format!("{dir}/annotations.jsonl"), &all)?);
                e.artifacts.push(self.store.write_jsonl("pseudo_labels", &format!("{dir}/pseudo_labels.jsonl"), &t_u)?);
                e.counts.insert("pseudo_labeled".into(), json!(t_u.len()));
                e.consumes.extend([
                    "inputs/train.jsonl".into(),
                    "inputs/unlabeled.jsonl".into(),
                    "filter/kept.jsonl".into(),
                    "augment_unlabeled/samples.jsonl".into(),
                    "annotate_unlabeled/pseudo_labels.jsonl".into(),
                ]);
                let first_pass = self.state.t_u.clone();
                let model = self.train(&mut e, &dir, seed, [self.inputs.train.clone(), t_u].concat(), &selected, &first_pass)?;
                self.state.model = Some(model);
            }
            Phase::Done => {
                let model = self.current_model()?;
                e.model = Some(model.clone());
                if !self.inputs.test.is_empty() {
                    let anns = self.annotate(&model, &self.inputs.test)?;
                    let pred = self.to_sentences(&self.inputs.test, &anns)?;
                    let score = micro_f1(&self.inputs.test, &pred).map_err(|err| PipelineError::Data(err.to_string()))?;
                    e.consumes.push("inputs/test.jsonl".into());
                    e.artifacts.push(self.store.write_json("eval", &format!("{dir}/eval.json"), &score)?);
                    e.counts.insert("f1".into(), json!(score.f1));
                }
            }
        }
        Ok(e)
    }

    fn current_model(&self) -> Result<String, PipelineError> {
        self.state.model.clone().ok_or_else(|| PipelineError::Corrupt("no trained model yet".into()))
    }

    /// Annotate `sentences` in chunks, check the response shape and apply
    /// the confidence policy.
    fn annotate(&self, model: &str, sentences: &[TaggedSentence]) -> Result<Vec<ConfidenceAnnotation>, PipelineError> {
        let mut out = Vec::with_capacity(sentences.len());
        for chunk in sentences.chunks(ANNOTATE_CHUNK) {
            let req = NerAnnotateRequest {
                model: model.to_string(),
                sentences: chunk.iter().map(|s| AnnotateInput { id: s.id.clone(), tokens: s.tokens.clone() }).collect(),
            };
            let resp = self.retry("annotation", || self.trainer.annotate(&req))?;
            if resp.annotations.len() != chunk.len() || resp.annotations.iter().zip(chunk).any(|(a, s)| a.id != s.id) {
                return Err(PipelineError::Backend("annotation response does not match the request".into()));
            }
            for mut a in resp.annotations {
                a.apply_policy(self.cfg.confidence);
                if !(0.0..=1.0).contains(&a.confidence) {
                    return Err(PipelineError::Backend(format!("confidence {} for {} outside [0, 1]", a.confidence, a.id)));
                }
                out.push(a);
            }
        }
        Ok(out)
    }

    fn to_sentences(&self, source: &[TaggedSentence], anns: &[ConfidenceAnnotation]) -> Result<Vec<TaggedSentence>, PipelineError> {
        source
            .iter()
            .zip(anns)
            .map(|(s, a)| {
                let t = a.to_sentence(s.tokens.clone()).map_err(|e| PipelineError::Backend(format!("annotation {}: {e}", a.id)))?;
                if t.spans.iter().any(|sp| !self.inputs.schema.contains(sp.type_id)) {
                    return Err(PipelineError::Backend(format!("annotation {} uses an unknown type", a.id)));
                }
                Ok(t)
            })
            .collect()
    }

    /// Annotate a pool and keep the confident sentences when `gate` is set.
    fn annotate_pool(
        &self,
        model: &str,
        pool: &[TaggedSentence],
        gate: bool,
    ) -> Result<(Vec<ConfidenceAnnotation>, Vec<TaggedSentence>), PipelineError> {
        let anns = self.annotate(model, pool)?;
        let sentences = self.to_sentences(pool, &anns)?;
        let kept = sentences
            .into_iter()
            .zip(&anns)
            .filter(|(_, a)| !gate || a.confidence >= self.cfg.tau)
            .map(|(s, _)| s)
            .collect();
        Ok((anns, kept))
    }

    /// HighConfSelect: score augmented samples with `model` and keep those
    /// at or above τ.
    fn select(
        &self,
        e: &mut PhaseEntry,
        dir: &str,
        model: &str,
        pool: &[AugmentedSample],
    ) -> Result<Vec<AugmentedSample>, PipelineError> {
        let sentences: Vec<TaggedSentence> = pool.iter().map(|s| s.sentence.clone()).collect();
        let anns = self.annotate(model, &sentences)?;
        let records: Vec<SelectionRecord> = anns
            .iter()
            .map(|a| SelectionRecord { id: a.id.clone(), confidence: a.confidence, selected: a.confidence >= self.cfg.tau })
            .collect();
        e.artifacts.push(self.store.write_jsonl("selection", &format!("{dir}/selection.jsonl"), &records)?);
        let selected: Vec<AugmentedSample> =
            pool.iter().zip(&records).filter(|(_, r)| r.selected).map(|(s, _)| s.clone()).collect();
        e.counts.insert("pool".into(), json!(pool.len()));
        e.counts.insert("selected".into(), json!(selected.len()));
        Ok(selected)
    }

    /// Train on `base ∪ samples`, pairing label-flipping samples with their
    /// parents from the training inputs, `base` or `extra_parents`.
    fn train(
        &self,
        e: &mut PhaseEntry,
        dir: &str,
        seed: u64,
        base: Vec<TaggedSentence>,
        samples: &[AugmentedSample],
        extra_parents: &[TaggedSentence],
    ) -> Result<String, PipelineError> {
        let mut parents: HashMap<String, TaggedSentence> = HashMap::new();
        for s in self.inputs.train.iter().chain(extra_parents).chain(&base) {
            parents.insert(s.id.clone(), s.clone());
        }
        let candidates: Vec<PairCandidate> = samples
            .iter()
            .map(|s| PairCandidate { id: &s.id, parent_id: &s.parent_id, label_flipping: s.is_label_flipping() })
            .collect();
        let parent_ids: HashSet<String> = parents.keys().cloned().collect();
        let pairs: Vec<MixupPair> = build_pairs(&candidates, &parent_ids, &self.cfg.mixup, self.cfg.seed)
            .map_err(|err| PipelineError::Data(err.to_string()))?;

        let mut examples = base;
        examples.extend(samples.iter().map(|s| s.sentence.clone()));
        let in_examples: HashSet<&str> = examples.iter().map(|s| s.id.as_str()).collect();
        let mut originals: Vec<TaggedSentence> = Vec::new();
        let mut seen = HashSet::new();
        for p in &pairs {
            if !in_examples.contains(p.original_id.as_str()) && seen.insert(p.original_id.clone()) {
                originals.push(parents[p.original_id.as_str()].clone());
            }
        }
        let req = NerTrainRequest {
            schema: self.inputs.schema.clone(),
            examples,
            originals,
            mixup_pairs: pairs,
            mixup: self.cfg.mixup.clone(),
            init_model: None,
            seed,
        };
        let resp = self.retry("tagger training", || self.trainer.train(&req))?;
        e.artifacts.push(self.store.write_bytes("examples", &format!("{dir}/examples.txt"), &ids_file(&req.examples))?);
        e.artifacts.push(self.store.write_jsonl("pairs", &format!("{dir}/pairs.jsonl"), &req.mixup_pairs)?);
        e.counts.insert("examples".into(), json!(req.examples.len()));
        e.counts.insert("pairs".into(), json!(req.mixup_pairs.len()));
        e.model = Some(resp.model.clone());
        Ok(resp.model)
    }
}
