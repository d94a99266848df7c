//! Configuration, data, training, evaluation and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod ingest;
pub mod model;
pub mod schedule;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{DropoutRates, Preset, RunConfig, SynthConfig, TauPolicy};
pub use data::{prepare, DataDims, Dataset, Example, PreparedExample, QuestionInput, QuestionKind, Split};
pub use eval::{evaluate, evaluate_checkpoint, score_predictions, EvalMetrics};
pub use gradcheck::{model_grad_check, GradCheckSize};
pub use model::{ForwardOutput, Model, ModelConfig};
pub use schedule::{lr_at_epoch, LrSchedule};
pub use synth::{generate_synthetic, nearest_neighbor_precision, question_only_probe};
pub use train::{load_dataset, train, train_on, EpochMetrics, Trainer};
