//! Mini-batch training with per-epoch metrics and checkpoints.
//!
//! All randomness is derived from the configured seed and the epoch
//! number, so a run resumed from the checkpoint of epoch `e` replays
//! epochs `e+1..` exactly as an uninterrupted run would.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::data::{prepare, Dataset, PreparedExample, Split};
use super::eval::evaluate;
use super::model::{Model, ModelConfig};
use super::schedule::lr_at_epoch;
use super::synth::generate_synthetic;
use crate::error::{GmaError, Result};
use crate::numeric::{AdamaxConfig, AdamaxState, Tape};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.gma";

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_DROPOUT: u64 = 3;

/// Mixes `tags` into `seed` (SplitMix64 finalizer per step).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
}

/// First line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub lr_schedule: String,
    pub config: RunConfig,
}

/// The dataset named by the config, or the synthetic task for its seed.
/// Examples of `eval_data` join as held-out examples.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let Some(path) = &cfg.train_data else {
        return generate_synthetic(cfg, cfg.seed);
    };
    let mut ds = Dataset::load(path)?;
    if let Some(eval) = &cfg.eval_data {
        let extra = Dataset::load(eval)?;
        if extra.num_answers != ds.num_answers {
            return Err(GmaError::Config("train and eval data disagree on the answer count".into()));
        }
        ds.examples.extend(extra.examples.into_iter().map(|mut e| {
            e.split = Split::Holdout;
            e
        }));
        ds.dims()?;
    }
    Ok(ds)
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub optimizer: AdamaxState,
    pub train: Vec<PreparedExample>,
    pub holdout: Vec<PreparedExample>,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig, ds: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let dims = ds.dims()?;
        if (dims.k1, dims.k2) != (cfg.k1, cfg.k2) {
            return Err(GmaError::Config(format!(
                "data has K1={}, K2={} but the config says K1={}, K2={}",
                dims.k1, dims.k2, cfg.k1, cfg.k2
            )));
        }
        if ds.num_answers != cfg.num_answers {
            return Err(GmaError::Config(format!(
                "data has {} answer classes, config says {}",
                ds.num_answers, cfg.num_answers
            )));
        }
        let train = prepare(ds, Some(Split::Train))?;
        if train.is_empty() {
            return Err(GmaError::InvalidArgument("no training examples".into()));
        }
        if let Some(ex) = train.iter().find(|e| e.target.is_none()) {
            return Err(GmaError::InvalidArgument(format!("training example {} has no answer", ex.index)));
        }
        let holdout = prepare(ds, Some(Split::Holdout))?;
        let model = Model::new(ModelConfig::from_run(&cfg, &dims), derive_seed(cfg.seed, &[TAG_INIT]))?;
        let optimizer = AdamaxState::for_params(
            AdamaxConfig {
                lr: cfg.schedule.peak,
                ..Default::default()
            },
            model.store.tensors(),
        );
        Ok(Trainer {
            cfg,
            model,
            optimizer,
            train,
            holdout,
            epoch: 0,
        })
    }

    /// Continues from a checkpoint written by an earlier run of the same
    /// configuration.
    pub fn resume(cfg: RunConfig, ds: &Dataset, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg, ds)?;
        if ckpt.manifest.model != t.model.config {
            return Err(GmaError::Config("checkpoint model layout differs from the configured one".into()));
        }
        ckpt.restore_into(&mut t.model)?;
        t.optimizer = ckpt
            .restore_optimizer(&t.model)?
            .ok_or_else(|| GmaError::Checkpoint("checkpoint has no optimizer state".into()))?;
        t.epoch = ckpt.manifest.epoch;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.cfg, &self.model, Some(&self.optimizer), self.epoch)
    }

    /// One optimizer step on the mean loss of `batch` (indices into the
    /// training set). Returns the per-example losses.
    pub fn train_step(&mut self, batch: &[usize], lr: f64, step_seed: u64) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(batch.len());
        for (slot, &i) in batch.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, &[slot as u64]));
            let mut tape = Tape::new();
            let p = self.model.store.bind(&mut tape);
            let ex = &self.train[i];
            let (loss, _) = self
                .model
                .loss(&mut tape, &p, ex, self.cfg.dropout, true, &mut rng)
                .map_err(|e| self.diverged(batch, losses.len(), e.to_string()))?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(self.diverged(batch, losses.len(), format!("loss {value}")));
            }
            tape.backward(loss)?;
            self.model.store.accumulate_grads(&tape, &p)?;
            losses.push(value);
        }
        let scale = 1.0 / batch.len() as f64;
        let grads: Vec<Vec<f64>> = self
            .model
            .store
            .grads()
            .into_iter()
            .map(|g| g.into_iter().map(|v| v * scale).collect())
            .collect();
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        self.optimizer.step_with_lr(self.model.store.tensors_mut(), &refs, lr)?;
        self.model.store.zero_grad();
        Ok(losses)
    }

    /// Writes the offending batch next to the metrics log and returns the
    /// error to abort with.
    fn diverged(&self, batch: &[usize], failed_slot: usize, cause: String) -> GmaError {
        let dump = self.cfg.out_dir.join(format!("diverged_epoch{}.json", self.epoch));
        let examples: Vec<serde_json::Value> = batch
            .iter()
            .map(|&i| {
                let ex = &self.train[i];
                serde_json::json!({
                    "index": ex.index,
                    "answer": ex.answer,
                    "visual": ex.visual.to_rows(),
                    "question": ex.question,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "epoch": self.epoch,
            "failed_batch_slot": failed_slot,
            "cause": cause,
            "examples": examples,
        });
        let _ = std::fs::create_dir_all(&self.cfg.out_dir);
        let _ = std::fs::write(&dump, doc.to_string());
        GmaError::Diverged {
            epoch: self.epoch,
            step: failed_slot,
            cause,
            dump,
        }
    }

    /// Trains one epoch and evaluates on both splits.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let lr = lr_at_epoch(epoch, &self.cfg.schedule);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[TAG_SHUFFLE, epoch as u64])));
        let mut total = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let seed = derive_seed(self.cfg.seed, &[TAG_DROPOUT, epoch as u64, step as u64]);
            total += self.train_step(batch, lr, seed)?.iter().sum::<f64>();
            steps += 1;
        }
        self.epoch += 1;
        let train_accuracy = evaluate(&self.model, &self.train)?.accuracy.unwrap_or(0.0);
        let holdout_accuracy = if self.holdout.is_empty() {
            None
        } else {
            evaluate(&self.model, &self.holdout)?.accuracy
        };
        Ok(EpochMetrics {
            epoch,
            lr,
            steps,
            mean_loss: total / self.train.len() as f64,
            train_accuracy,
            holdout_accuracy,
        })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<EpochMetrics>,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

fn header(cfg: &RunConfig) -> Result<String> {
    Ok(serde_json::to_string(&LogHeader {
        format: "gma-metrics/1".into(),
        lr_schedule: cfg.schedule.describe(),
        config: cfg.clone(),
    })?)
}

/// Keeps the header and the records of the first `epochs` epochs.
fn truncate_log(path: &Path, epochs: usize) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| GmaError::io(path, e))?;
    let mut kept = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GmaError::io(path, e))?;
        if i == 0 {
            kept.push(line);
            continue;
        }
        let m: EpochMetrics = serde_json::from_str(&line)?;
        if m.epoch < epochs {
            kept.push(line);
        }
    }
    Ok(kept)
}

/// Runs `cfg.epochs` epochs on `ds`, appending one JSON line per epoch to
/// `<out_dir>/metrics.jsonl` and rewriting `<out_dir>/checkpoint.gma` at
/// the end of every epoch. With `resume`, training continues after the
/// checkpoint's epoch and the log is cut back to match it.
pub fn train_on(cfg: &RunConfig, ds: &Dataset, resume: Option<&Path>) -> Result<TrainOutcome> {
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| GmaError::io(&out, e))?;
    let log_path = out.join(METRICS_FILE);
    let checkpoint_path = out.join(CHECKPOINT_FILE);

    let (mut trainer, lines) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::resume(cfg.clone(), ds, &ckpt)?;
            let lines = if log_path.exists() {
                truncate_log(&log_path, t.epoch)?
            } else {
                vec![header(cfg)?]
            };
            (t, lines)
        }
        None => (Trainer::new(cfg.clone(), ds)?, vec![header(cfg)?]),
    };
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(&log_path, text).map_err(|e| GmaError::io(&log_path, e))?;
    let mut log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| GmaError::io(&log_path, e))?;

    let mut metrics = Vec::new();
    while trainer.epoch < cfg.epochs {
        let m = trainer.run_epoch()?;
        writeln!(log, "{}", serde_json::to_string(&m)?).map_err(|e| GmaError::io(&log_path, e))?;
        trainer.checkpoint().save(&checkpoint_path)?;
        metrics.push(m);
    }
    Ok(TrainOutcome {
        trainer,
        metrics,
        log_path,
        checkpoint_path,
    })
}

/// Loads or generates the configured data and trains on it.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let ds = load_dataset(cfg)?;
    train_on(cfg, &ds, resume)
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("epoch", &self.epoch)
            .field("train", &self.train.len())
            .field("holdout", &self.holdout.len())
            .finish_non_exhaustive()
    }
}
