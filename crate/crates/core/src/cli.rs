//! The `intent-induce` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::align::AlignmentMode;
use crate::clustering::KSearchConfig;
use crate::corpus::{load_dialogues, write_records_jsonl, DatasetRegistry, INFORM_INTENT};
use crate::error::{Error, Result};
use crate::fixtures::{write_corpus_fixture, CorpusFixtureSpec};
use crate::mdb_train::{train_mdb, write_loss_trace, MdbConfig};
use crate::numerics::io::EmbeddingTable;
use crate::pgt_train::{train_pgt, write_step_trace, PgtConfig};
use crate::pipeline::{evaluate, induce, PipelineConfig};
use crate::views::{ProjectionHead, ViewMask};

#[derive(Parser, Debug)]
#[command(name = "intent-induce", version, about = "Open intent induction from dialogue corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus, training domains, embeddings and a pipeline config.
    GenFixture {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep only the intent-bearing turns of a dialogue file.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multi-domain cosine-softmax head.
    TrainMdb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_trace: Option<PathBuf>,
    },
    /// Fine-tune an MDB checkpoint with pseudo-label gradient transfer.
    TrainPgt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mdb_checkpoint: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step trace CSV; defaults to `<out>.steps.csv`.
        #[arg(long)]
        step_trace: Option<PathBuf>,
    },
    /// Induce an intent schema and score it.
    Induce {
        #[command(flatten)]
        common: Common,
    },
    /// Score a predictions file against a reference dialogue file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Overrides the configured alignment mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AlignmentMode>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<AlignmentMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown alignment mode {s:?} (one_to_one, overlapping)"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub act: String,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            act: INFORM_INTENT.to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub alignment_mode: AlignmentMode,
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // a closed pipe on stdout is not an error of the run itself
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenFixture { common, out } => {
            let spec: CorpusFixtureSpec = read_config(common.config.as_deref())?;
            let seed = common.seed.unwrap_or(0);
            write_corpus_fixture(&out, &spec, seed)?;
            let pipeline = serde_json::json!({
                "train_corpus": "train.jsonl",
                "test_corpus": "test.jsonl",
                "embeddings": "embeddings.jsonl",
                "output_dir": "run",
                "view_mask": "TFF".parse::<ViewMask>()?,
                "clustering_method": "kmeans",
                "k_search": KSearchConfig { k_min: 2, k_max: (spec.intents * 2).max(3), trials: 64, rng_seed: 0 },
                "rng_seed": seed,
            });
            let p = out.join("pipeline.json");
            std::fs::write(&p, serde_json::to_string_pretty(&pipeline).expect("json"))
                .map_err(|e| Error::io(&p, e))?;
            log::info!("fixture written to {}", out.display());
        }
        Command::Extract { common, input, out } => {
            let cfg: ExtractConfig = read_config(common.config.as_deref())?;
            let set = load_dialogues(&input)?;
            let kept: Vec<_> = set
                .dialogues
                .iter()
                .flat_map(|d| {
                    d.turns
                        .iter()
                        .enumerate()
                        .map(move |(t, r)| (d.dialogue_id.as_str(), t as u32, r))
                })
                .filter(|(_, _, r)| r.has_act(&cfg.act))
                .collect();
            log::info!("kept {} of {} turns", kept.len(), set.record_count());
            write_records_jsonl(&out, kept)?;
        }
        Command::TrainMdb {
            common,
            registry,
            embeddings,
            out,
            loss_trace,
        } => {
            let mut cfg: MdbConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.rng_seed = s;
            }
            cfg.validate()?;
            let reg = DatasetRegistry::load(&registry)?;
            let table = EmbeddingTable::read_jsonl(&embeddings)?;
            let outcome = train_mdb(&cfg, &reg, &table)?;
            outcome.head.save(&out)?;
            write_loss_trace(&loss_trace.unwrap_or_else(|| with_suffix(&out, ".loss.csv")), &outcome.loss_trace)?;
            print_json(&outcome.accuracy);
        }
        Command::TrainPgt {
            common,
            mdb_checkpoint,
            registry,
            embeddings,
            out,
            step_trace,
        } => {
            let mut cfg: PgtConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.rng_seed = s;
            }
            cfg.validate()?;
            if !mdb_checkpoint.is_file() {
                return Err(Error::config(format!(
                    "MDB checkpoint {} not found",
                    mdb_checkpoint.display()
                )));
            }
            let head = ProjectionHead::load(&mdb_checkpoint)?;
            let reg = DatasetRegistry::load(&registry)?;
            let table = EmbeddingTable::read_jsonl(&embeddings)?;
            let outcome = train_pgt(&cfg, &reg, &head, &table)?;
            outcome.head.save(&out)?;
            write_step_trace(&step_trace.unwrap_or_else(|| with_suffix(&out, ".steps.csv")), &outcome.step_trace)?;
            print_json(&outcome.epoch_trace);
        }
        Command::Induce { common } => {
            let path = common
                .config
                .ok_or_else(|| Error::config("induce needs --config <pipeline.json>"))?;
            let mut cfg = PipelineConfig::load(&path)?;
            if let Some(s) = common.seed {
                cfg.rng_seed = s;
            }
            let (report, timings) = induce(&cfg)?;
            for (stage, secs) in &timings.stages {
                log::info!("{stage}: {secs:.3}s");
            }
            print_json(&report);
        }
        Command::Evaluate {
            common,
            predictions,
            references,
            mode,
        } => {
            let cfg: EvaluateConfig = read_config(common.config.as_deref())?;
            let report = evaluate(&predictions, &references, mode.unwrap_or(cfg.alignment_mode))?;
            print_json(&report);
        }
    }
    Ok(())
}
