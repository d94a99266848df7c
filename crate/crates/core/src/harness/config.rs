//! Run configuration.
//!
//! Config files are flat `key = value` text. Blank lines and lines starting
//! with `#` are ignored. A `preset` key (`full` or `desk`) selects the
//! defaults the remaining keys override, wherever it appears in the file.
//!
//! ```text
//! preset = desk
//! n_stack = 3
//! seed = 7
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::schedule::LrSchedule;
use crate::engine::{default_tau, EncoderMode, SimilarityMode};
use crate::error::{GmaError, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "GMA_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    /// `1/√d`.
    InvSqrtD,
    Fixed(f64),
}

impl TauPolicy {
    pub fn resolve(self, d: usize) -> f64 {
        match self {
            TauPolicy::InvSqrtD => default_tau(d),
            TauPolicy::Fixed(t) => t,
        }
    }
}

impl FromStr for TauPolicy {
    type Err = GmaError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "inv_sqrt_d" {
            return Ok(TauPolicy::InvSqrtD);
        }
        match s.parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => Ok(TauPolicy::Fixed(t)),
            _ => Err(GmaError::Config(format!("tau must be inv_sqrt_d or a positive number, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for TauPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TauPolicy::InvSqrtD => f.write_str("inv_sqrt_d"),
            TauPolicy::Fixed(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutRates {
    pub word: f64,
    pub question: f64,
    pub image: f64,
    pub reasoning: f64,
}

impl DropoutRates {
    pub const NONE: DropoutRates = DropoutRates {
        word: 0.0,
        question: 0.0,
        image: 0.0,
        reasoning: 0.0,
    };
}

/// Parameters of the generated synthetic task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train_examples: usize,
    pub holdout_examples: usize,
    /// Width of the random identity key each object carries.
    pub key_dim: usize,
    /// Standard deviation of the noise on the question's copies of the key.
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub k1: usize,
    pub k2: usize,
    pub d: usize,
    pub n_stack: usize,
    /// Modules after the second reuse its weights.
    pub share_stack: bool,
    pub iou_threshold: f64,
    pub tau: TauPolicy,
    pub similarity: SimilarityMode,
    pub encoder: EncoderMode,
    pub dropout: DropoutRates,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub num_answers: usize,
    pub head_hidden: usize,
    /// Dataset files; when absent a synthetic task is generated from `seed`.
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
}

impl FromStr for Preset {
    type Err = GmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(GmaError::Config(format!("unknown preset {other:?}"))),
        }
    }
}

impl RunConfig {
    /// Full-size setting: 100 regions, 14 words, width 2048, batch 256
    /// for 35 epochs.
    pub fn full() -> Self {
        RunConfig {
            preset: Preset::Full,
            k1: 100,
            k2: 14,
            d: 2048,
            n_stack: 3,
            share_stack: false,
            iou_threshold: 0.3,
            tau: TauPolicy::InvSqrtD,
            similarity: SimilarityMode::Negated,
            encoder: EncoderMode::Dual,
            dropout: DropoutRates {
                word: 0.25,
                question: 0.25,
                image: 0.5,
                reasoning: 0.5,
            },
            schedule: LrSchedule::default(),
            batch_size: 256,
            epochs: 35,
            seed: 0,
            num_answers: 3129,
            head_hidden: 2048,
            train_data: None,
            eval_data: None,
            out_dir: PathBuf::from("runs"),
            synth: SynthConfig {
                train_examples: 2000,
                holdout_examples: 500,
                key_dim: 8,
                noise: 0.5,
            },
        }
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        RunConfig {
            preset: Preset::Desk,
            k1: 6,
            k2: 5,
            d: 16,
            n_stack: 1,
            num_answers: 10,
            head_hidden: 64,
            batch_size: 8,
            epochs: 200,
            dropout: DropoutRates {
                reasoning: 0.2,
                ..DropoutRates::NONE
            },
            schedule: LrSchedule {
                decay_after: 200,
                ..LrSchedule::default()
            },
            ..RunConfig::full()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => RunConfig::full(),
            Preset::Desk => RunConfig::desk(),
        }
    }

    pub fn tau_value(&self) -> f64 {
        self.tau.resolve(self.d)
    }

    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GmaError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if let Some((first, _, _)) = pairs.iter().find(|(_, key, _)| *key == k) {
                return Err(GmaError::Config(format!("line {}: {k} already set on line {first}", i + 1)));
            }
            pairs.push((i + 1, k, v));
        }
        let preset = match pairs.iter().find(|(_, k, _)| *k == "preset") {
            Some((_, _, v)) => v.parse()?,
            None => Preset::Desk,
        };
        let mut cfg = RunConfig::preset(preset);
        for (line, k, v) in pairs {
            cfg.set(k, v, base).map_err(|e| GmaError::Config(format!("line {line}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GmaError::io(path, e))?;
        RunConfig::parse(&text, path.parent())
    }

    /// Replaces the seed when `value` (normally `$GMA_SEED`) is present.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| GmaError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        let v = std::env::var(SEED_ENV).ok();
        self.apply_seed_override(v.as_deref())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| GmaError::Config(format!("{key}: cannot parse {v:?}")))
        }
        let path = |v: &str| match base {
            Some(b) if Path::new(v).is_relative() => b.join(v),
            _ => PathBuf::from(v),
        };
        match key {
            "preset" => self.preset = value.parse()?,
            "k1" => self.k1 = num(key, value)?,
            "k2" => self.k2 = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "n_stack" => self.n_stack = num(key, value)?,
            "share_stack" => self.share_stack = num(key, value)?,
            "iou_threshold" => self.iou_threshold = num(key, value)?,
            "tau" => self.tau = value.parse()?,
            "similarity" => self.similarity = value.parse()?,
            "encoder" => self.encoder = value.parse()?,
            "dropout_word" => self.dropout.word = num(key, value)?,
            "dropout_question" => self.dropout.question = num(key, value)?,
            "dropout_image" => self.dropout.image = num(key, value)?,
            "dropout_reasoning" => self.dropout.reasoning = num(key, value)?,
            "lr_initial" => self.schedule.initial = num(key, value)?,
            "lr_peak" => self.schedule.peak = num(key, value)?,
            "lr_warmup_epoch" => self.schedule.warmup_epoch = num(key, value)?,
            "lr_decay_after" => self.schedule.decay_after = num(key, value)?,
            "lr_decay_every" => self.schedule.decay_every = num(key, value)?,
            "lr_decay_factor" => self.schedule.decay_factor = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "num_answers" => self.num_answers = num(key, value)?,
            "head_hidden" => self.head_hidden = num(key, value)?,
            "train_data" => self.train_data = Some(path(value)),
            "eval_data" => self.eval_data = Some(path(value)),
            "out_dir" => self.out_dir = path(value),
            "synth_train_examples" => self.synth.train_examples = num(key, value)?,
            "synth_holdout_examples" => self.synth.holdout_examples = num(key, value)?,
            "synth_key_dim" => self.synth.key_dim = num(key, value)?,
            "synth_noise" => self.synth.noise = num(key, value)?,
            other => return Err(GmaError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("d", self.d),
            ("n_stack", self.n_stack),
            ("batch_size", self.batch_size),
            ("head_hidden", self.head_hidden),
            ("synth_key_dim", self.synth.key_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(GmaError::Config(format!("{name} must be positive")));
        }
        if !self.d.is_multiple_of(2) {
            return Err(GmaError::Config(format!("d = {} must be even (two GRU directions of d/2)", self.d)));
        }
        if self.num_answers < 2 {
            return Err(GmaError::Config("num_answers must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(GmaError::Config(format!("iou_threshold {} not in [0,1]", self.iou_threshold)));
        }
        let DropoutRates {
            word,
            question,
            image,
            reasoning,
        } = self.dropout;
        if [word, question, image, reasoning].iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(GmaError::Config("dropout rates must lie in [0,1)".into()));
        }
        if !(self.synth.noise >= 0.0 && self.synth.noise.is_finite()) {
            return Err(GmaError::Config("synth_noise must be non-negative".into()));
        }
        self.schedule.validate()
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let lower = |v: String| v.to_lowercase();
        kv("preset", lower(format!("{:?}", self.preset)));
        kv("k1", self.k1.to_string());
        kv("k2", self.k2.to_string());
        kv("d", self.d.to_string());
        kv("n_stack", self.n_stack.to_string());
        kv("share_stack", self.share_stack.to_string());
        kv("iou_threshold", self.iou_threshold.to_string());
        kv("tau", self.tau.to_string());
        kv("similarity", lower(format!("{:?}", self.similarity)));
        kv("encoder", lower(format!("{:?}", self.encoder)));
        kv("dropout_word", self.dropout.word.to_string());
        kv("dropout_question", self.dropout.question.to_string());
        kv("dropout_image", self.dropout.image.to_string());
        kv("dropout_reasoning", self.dropout.reasoning.to_string());
        kv("lr_initial", self.schedule.initial.to_string());
        kv("lr_peak", self.schedule.peak.to_string());
        kv("lr_warmup_epoch", self.schedule.warmup_epoch.to_string());
        kv("lr_decay_after", self.schedule.decay_after.to_string());
        kv("lr_decay_every", self.schedule.decay_every.to_string());
        kv("lr_decay_factor", self.schedule.decay_factor.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("num_answers", self.num_answers.to_string());
        kv("head_hidden", self.head_hidden.to_string());
        if let Some(p) = &self.train_data {
            kv("train_data", p.display().to_string());
        }
        if let Some(p) = &self.eval_data {
            kv("eval_data", p.display().to_string());
        }
        kv("out_dir", self.out_dir.display().to_string());
        kv("synth_train_examples", self.synth.train_examples.to_string());
        kv("synth_holdout_examples", self.synth.holdout_examples.to_string());
        kv("synth_key_dim", self.synth.key_dim.to_string());
        kv("synth_noise", self.synth.noise.to_string());
        out
    }
}
