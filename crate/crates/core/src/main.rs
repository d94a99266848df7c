use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use gma::graph::{load_embeddings, EmbeddingTable, OovPolicy, GLOVE_DIM};
use gma::harness::ingest::{build_dataset, load_detections, IngestOptions};
use gma::harness::train::load_dataset;
use gma::harness::{
    evaluate_checkpoint, generate_synthetic, model_grad_check, prepare, train, Checkpoint, Dataset, GradCheckSize,
    RunConfig,
};
use gma::head::AnswerVocab;
use gma::{GmaError, Result};

/// Graph matching attention for visual question answering.
#[derive(Parser)]
#[command(name = "gma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.jsonl and checkpoint.gma to the
    /// configured output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare backpropagated gradients of the full model with central
    /// differences.
    GradCheck {
        #[arg(long, default_value = "small", value_parser = ["small", "medium"])]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a dataset from detection JSON and CoNLL-U parses.
    BuildGraphs {
        /// A detection JSON file or a directory of them.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        parses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// GloVe-style text embeddings; unknown words get hashed random
        /// vectors.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Answer vocabulary, one answer per line.
        #[arg(long)]
        answers: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        k1: usize,
        #[arg(long, default_value_t = 14)]
        k2: usize,
        #[arg(long, default_value_t = 0.3)]
        iou_threshold: f64,
    },
    /// Export the attention maps of every module for one example.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        example: usize,
        #[arg(long)]
        out: PathBuf,
        /// Dataset to draw the example from; defaults to the checkpoint's
        /// training data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write the synthetic matching dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Config whose sizes and synth_* keys to use (desk preset if absent).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Failures of the invocation itself exit with 2, like usage errors.
struct Failure {
    code: u8,
    error: GmaError,
}

impl From<GmaError> for Failure {
    fn from(error: GmaError) -> Self {
        Failure { code: 1, error }
    }
}

fn usage(error: GmaError) -> Failure {
    Failure { code: 2, error }
}

fn load_config(path: &Path) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path).map_err(usage)?;
    cfg.apply_env().map_err(usage)?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| GmaError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = load_config(&config)?;
            let outcome = train(&cfg, resume.as_deref())?;
            for m in &outcome.metrics {
                println!("{}", serde_json::to_string(m).map_err(GmaError::from)?);
            }
            println!("checkpoint: {}", outcome.checkpoint_path.display());
        }
        Command::Eval { checkpoint, data } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = Dataset::load(&data)?;
            let m = evaluate_checkpoint(&ckpt, &ds)?;
            println!("{}", serde_json::to_string(&m).map_err(GmaError::from)?);
        }
        Command::GradCheck { size, seed } => {
            let size: GradCheckSize = size.parse()?;
            let start = Instant::now();
            let report = model_grad_check(size, seed)?;
            println!("max relative error: {:e}", report.max_rel_error);
            println!("coordinates: {}", report.coordinates);
            println!("reduced steps: {}", report.reduced_steps);
            println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
            if !report.passes(1e-4) {
                eprintln!("gradient check failed (tolerance 1e-4)");
                return Err(Failure {
                    code: 1,
                    error: GmaError::InvalidArgument(format!(
                        "worst coordinate {:?}: analytic {:e}, numeric {:e}",
                        report.worst, report.worst_values.0, report.worst_values.1
                    )),
                });
            }
        }
        Command::BuildGraphs {
            detections,
            parses,
            out,
            embeddings,
            answers,
            k1,
            k2,
            iou_threshold,
        } => {
            let policy = OovPolicy::default();
            let emb = match embeddings {
                Some(p) => load_embeddings(&p, policy)?,
                None => EmbeddingTable::empty(GLOVE_DIM, policy),
            };
            let vocab = answers.as_deref().map(AnswerVocab::load).transpose()?;
            let images = load_detections(&detections)?;
            let text = std::fs::read_to_string(&parses).map_err(|e| GmaError::Io {
                path: parses.clone(),
                source: e,
            })?;
            let opts = IngestOptions {
                k1,
                k2,
                iou_threshold,
                embeddings: &emb,
                answers: vocab.as_ref(),
            };
            let ds = build_dataset(&images, &text, &opts)?;
            ds.save(&out)?;
            println!("{} examples from {} images -> {}", ds.examples.len(), images.len(), out.display());
        }
        Command::DumpAttention {
            checkpoint,
            example,
            out,
            data,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = match data {
                Some(p) => Dataset::load(&p)?,
                None => load_dataset(&ckpt.manifest.config)?,
            };
            let Some(ex) = ds.examples.get(example) else {
                return Err(GmaError::InvalidArgument(format!(
                    "example {example} out of range ({} examples)",
                    ds.examples.len()
                ))
                .into());
            };
            let model = ckpt.restore_model(None)?;
            let prepared = prepare(
                &Dataset::new(ds.num_answers, vec![ex.clone()]),
                None,
            )?;
            let (prediction, traces) = model.trace(&prepared[0])?;
            let doc = serde_json::json!({
                "example": example,
                "id": ex.id,
                "answer": ex.answer,
                "predicted": prediction.answer,
                "scores": prediction.scores.data(),
                "modules": traces,
            });
            write(&out, &serde_json::to_string_pretty(&doc).map_err(GmaError::from)?)?;
            println!("{} modules -> {}", traces.len(), out.display());
        }
        Command::Synth { out, seed, config } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p).map_err(usage)?,
                None => RunConfig::desk(),
            };
            let ds = generate_synthetic(&cfg, seed)?;
            ds.save(&out)?;
            println!("{} examples -> {}", ds.examples.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
