//! `nerflip` command line.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 when a backend
//! stays unavailable or rejects requests, 1 for anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use nerflip_core::augment::{augment, AugmentedSample};
use nerflip_core::corpus::{emit_conll, parse_conll, sample_shots, Dataset, LabelSchema, ParseMode, TaggedSentence};
use nerflip_core::eval::micro_f1;
use nerflip_core::filter::filter;
use nerflip_core::linearize::{delinearize, linearize, LinearizedText};
use nerflip_core::mixup::{build_pairs, PairCandidate};
use nerflip_core::pipeline::manifest::{from_jsonl, to_jsonl};
use nerflip_core::pipeline::{build_backends, run_pipeline, BackendKind, Inputs, PipelineError, RunConfig, RunMode};
use nerflip_core::strategy::parse_strategy_list;

#[derive(Parser)]
#[command(name = "nerflip", version, about = "Label-aware data augmentation and self-training for low-resource NER")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured backend.
    #[arg(long, global = true, value_parser = ["mock", "http"])]
    backend: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Label schema file (overrides `paths.schema`).
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample K sentences per entity type; the rest becomes the unlabeled pool.
    SampleShots {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        k: usize,
    },
    /// Convert CoNLL to linearized lines, or back with --reverse.
    Linearize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reverse: bool,
    },
    /// Augment a labeled corpus with the configured strategies.
    Augment {
        /// CoNLL input (defaults to `paths.train`).
        #[arg(long)]
        input: Option<PathBuf>,
        /// `all` or a comma list such as `sa,elc`.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        multiplier: Option<usize>,
    },
    /// Self-consistency filter over augmented samples (JSON lines).
    Filter {
        #[arg(long)]
        input: PathBuf,
        /// Corpus used to build mock lexicons (defaults to `paths.train`).
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// F-Mixup pairs for label-flipping samples (JSON lines).
    Pairs {
        #[arg(long)]
        input: PathBuf,
        /// Originals the samples were derived from (defaults to `paths.train`).
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Augment, filter and self-train on the labeled set.
    Run,
    /// As `run`, then continue with pseudo-labeled unlabeled data.
    RunStar,
    /// Span-level micro-F1 of predictions against gold (both CoNLL).
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    PipelineError::Config(msg.into()).into()
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(b) = &g.backend {
        cfg.backend = b.parse::<BackendKind>().map_err(config_err)?;
    }
    if let Some(s) = &g.schema {
        cfg.paths.schema = Some(s.clone());
    }
    cfg.validate().map_err(anyhow::Error::from)?;
    Ok(cfg)
}

fn out_dir(g: &Global) -> Result<PathBuf> {
    let dir = g.out.clone().ok_or_else(|| config_err("--out is required"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_schema(cfg: &RunConfig) -> Result<LabelSchema> {
    let p = cfg.paths.schema.as_ref().ok_or_else(|| config_err("a schema is required (--schema or paths.schema)"))?;
    LabelSchema::parse(&read(p)?).map_err(|e| config_err(format!("{}: {e}", p.display())))
}

fn load_conll(path: &Path, schema: &LabelSchema) -> Result<Dataset> {
    parse_conll(&read(path)?, schema, ParseMode::Lenient).with_context(|| format!("parsing {}", path.display()))
}

fn corpus_path(flag: &Option<PathBuf>, cfg: &RunConfig) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.paths.train.clone())
}

fn inputs_for(schema: LabelSchema, train: Vec<TaggedSentence>) -> Inputs {
    Inputs { schema, train, unlabeled: Vec::new(), test: Vec::new() }
}

fn read_samples(path: &Path) -> Result<Vec<AugmentedSample>> {
    from_jsonl(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::SampleShots { corpus, k } => {
            let cfg = load_config(g)?;
            let schema = load_schema(&cfg)?;
            let out = out_dir(g)?;
            let split = sample_shots(&load_conll(corpus, &schema)?, *k, cfg.seed);
            write(&out.join("train.conll"), emit_conll(&split.train))?;
            write(&out.join("unlabeled.conll"), emit_conll(&split.unlabeled))?;
            write(&out.join("warnings.json"), serde_json::to_vec_pretty(&split.warnings)?)?;
            for w in &split.warnings {
                eprintln!("warning: type {} has {} sentences, {} requested", w.tag, w.available, w.requested);
            }
            println!("{} train / {} unlabeled sentences", split.train.len(), split.unlabeled.len());
        }
        Command::Linearize { input, reverse } => {
            let cfg = load_config(g)?;
            let schema = load_schema(&cfg)?;
            if *reverse {
                let sentences = read(input)?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .enumerate()
                    .map(|(i, l)| delinearize(&LinearizedText::parse(l), &schema, i.to_string()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| anyhow!("{}: {e}", input.display()))?;
                let d = Dataset::new(schema, sentences)?;
                print!("{}", emit_conll(&d));
            } else {
                for s in &load_conll(input, &schema)?.sentences {
                    println!("{}", linearize(s, &schema)?);
                }
            }
        }
        Command::Augment { input, strategy, multiplier } => {
            let mut cfg = load_config(g)?;
            if let Some(s) = strategy {
                cfg.strategy = parse_strategy_list(s).map_err(config_err)?;
            }
            if let Some(m) = multiplier {
                cfg.multiplier = *m;
            }
            cfg.validate_values()?;
            let schema = load_schema(&cfg)?;
            let input = corpus_path(input, &cfg).ok_or_else(|| config_err("--input or paths.train is required"))?;
            let data = load_conll(&input, &schema)?;
            let out = out_dir(g)?;
            let inputs = inputs_for(schema.clone(), data.sentences);
            let (backend, _) = build_backends(&cfg, &inputs, &out)?;
            let result = augment(&inputs.train, &cfg.augment_config(), cfg.seed, &cfg.gateway(schema), backend.as_ref())
                .map_err(PipelineError::from)?;
            write(&out.join("samples.jsonl"), to_jsonl(&result.samples))?;
            write(&out.join("report.json"), serde_json::to_vec_pretty(&result.report)?)?;
            println!("{}", result.report);
        }
        Command::Filter { input, train } => {
            let cfg = load_config(g)?;
            let schema = load_schema(&cfg)?;
            let samples = read_samples(input)?;
            let train = match corpus_path(train, &cfg) {
                Some(p) => load_conll(&p, &schema)?.sentences,
                None => Vec::new(),
            };
            let out = out_dir(g)?;
            let (backend, _) = build_backends(&cfg, &inputs_for(schema.clone(), train), &out)?;
            let result = filter(&samples, cfg.filter_mode, &cfg.gateway(schema), backend.as_ref());
            write(&out.join("kept.jsonl"), to_jsonl(&result.kept))?;
            write(&out.join("dropped.jsonl"), to_jsonl(&result.dropped))?;
            write(&out.join("report.json"), serde_json::to_vec_pretty(&result.report.to_json())?)?;
            print!("{}", result.report);
        }
        Command::Pairs { input, train } => {
            let cfg = load_config(g)?;
            let samples = read_samples(input)?;
            let originals = match corpus_path(train, &cfg) {
                Some(p) => load_conll(&p, &load_schema(&cfg)?)?.sentences.into_iter().map(|s| s.id).collect(),
                None => samples.iter().map(|s| s.parent_id.clone()).collect(),
            };
            let cands: Vec<PairCandidate> = samples
                .iter()
                .map(|s| PairCandidate { id: &s.id, parent_id: &s.parent_id, label_flipping: s.is_label_flipping() })
                .collect();
            let pairs = build_pairs(&cands, &originals, &cfg.mixup, cfg.seed)?;
            match &g.out {
                Some(_) => {
                    let out = out_dir(g)?;
                    write(&out.join("pairs.jsonl"), to_jsonl(&pairs))?;
                    println!("{} pairs from {} samples", pairs.len(), samples.len());
                }
                None => print!("{}", String::from_utf8(to_jsonl(&pairs))?),
            }
        }
        Command::Run | Command::RunStar => {
            let cfg = load_config(g)?;
            let mode = if matches!(cli.command, Command::Run) { RunMode::Run } else { RunMode::RunStar };
            let out = out_dir(g)?;
            let inputs = Inputs::load(&cfg)?;
            if mode == RunMode::RunStar && inputs.unlabeled.is_empty() {
                eprintln!("note: no unlabeled data; running the labeled loop only");
            }
            let (backend, trainer) = build_backends(&cfg, &inputs, &out)?;
            let outcome = run_pipeline(mode, &cfg, &inputs, backend.as_ref(), trainer.as_ref(), &out)?;
            for s in &outcome.replayed {
                println!("replayed  {s}");
            }
            for s in &outcome.executed {
                println!("completed {s}");
            }
            if let Some(f1) = outcome.manifest.entries.last().and_then(|e| e.counts.get("f1")) {
                println!("test micro-F1: {f1}");
            }
            println!("model: {}", outcome.model);
            println!("manifest: {}", out.join("manifest.json").display());
        }
        Command::Eval { gold, pred } => {
            let cfg = load_config(g)?;
            let schema = load_schema(&cfg)?;
            let score = micro_f1(&load_conll(gold, &schema)?.sentences, &load_conll(pred, &schema)?.sentences)?;
            println!("{}", serde_json::to_string_pretty(&score)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
