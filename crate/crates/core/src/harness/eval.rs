//! Evaluation metrics.

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::data::{prepare, Dataset, PreparedExample};
use super::model::Model;
use crate::error::{GmaError, Result};
use crate::head::vqa_accuracy;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub examples: usize,
    /// Fraction of labelled examples whose top answer is the label.
    pub accuracy: Option<f64>,
    /// Mean soft accuracy over examples with vote annotations.
    pub vqa_accuracy: Option<f64>,
}

/// Scores predicted answer indices against the examples' annotations.
pub fn score_predictions(predictions: &[usize], examples: &[PreparedExample]) -> Result<EvalMetrics> {
    if examples.is_empty() {
        return Err(GmaError::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    if predictions.len() != examples.len() {
        return Err(GmaError::InvalidArgument(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        )));
    }
    let (mut labelled, mut correct) = (0usize, 0usize);
    let (mut voted, mut soft) = (0usize, 0.0);
    for (&p, ex) in predictions.iter().zip(examples) {
        if let Some(a) = ex.answer {
            labelled += 1;
            correct += usize::from(a == p);
        }
        if let Some(v) = &ex.votes {
            let votes = *v
                .get(p)
                .ok_or_else(|| GmaError::InvalidArgument(format!("prediction {p} outside vote vector")))?;
            voted += 1;
            soft += vqa_accuracy(votes)?;
        }
    }
    Ok(EvalMetrics {
        examples: examples.len(),
        accuracy: (labelled > 0).then(|| correct as f64 / labelled as f64),
        vqa_accuracy: (voted > 0).then(|| soft / voted as f64),
    })
}

pub fn predict_all(model: &Model, examples: &[PreparedExample]) -> Result<Vec<usize>> {
    examples.iter().map(|ex| Ok(model.predict(ex)?.answer)).collect()
}

pub fn evaluate(model: &Model, examples: &[PreparedExample]) -> Result<EvalMetrics> {
    score_predictions(&predict_all(model, examples)?, examples)
}

/// Restores the checkpointed model and evaluates it on every example of
/// `ds`.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, ds: &Dataset) -> Result<EvalMetrics> {
    let model = ckpt.restore_model(None)?;
    if ds.num_answers != model.config.num_answers {
        return Err(GmaError::Config(format!(
            "dataset has {} answer classes, checkpoint was trained with {}",
            ds.num_answers, model.config.num_answers
        )));
    }
    let examples = prepare(ds, None)?;
    for ex in &examples {
        model.check_example(ex)?;
    }
    evaluate(&model, &examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;
    use crate::harness::synth::generate_synthetic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn examples(n: usize) -> Vec<PreparedExample> {
        let mut cfg = RunConfig::desk();
        cfg.synth.train_examples = n;
        cfg.synth.holdout_examples = 0;
        prepare(&generate_synthetic(&cfg, 9).unwrap(), None).unwrap()
    }

    #[test]
    fn perfect_and_random_predictors() {
        let exs = examples(1000);
        let perfect: Vec<usize> = exs.iter().map(|e| e.answer.unwrap()).collect();
        assert_eq!(score_predictions(&perfect, &exs).unwrap().accuracy, Some(1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let random: Vec<usize> = exs.iter().map(|_| rng.random_range(0..10)).collect();
        let acc = score_predictions(&random, &exs).unwrap().accuracy.unwrap();
        assert!((acc - 0.10).abs() <= 0.03, "{acc}");
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(score_predictions(&[], &[]).is_err());
        let exs = examples(3);
        assert!(score_predictions(&[0, 1], &exs).is_err());
    }

    #[test]
    fn vote_annotations_give_soft_accuracy() {
        let mut exs = examples(2);
        exs[0].votes = Some(vec![0, 2, 8, 0, 0, 0, 0, 0, 0, 0]);
        exs[1].votes = Some(vec![0; 10]);
        let m = score_predictions(&[1, 3], &exs).unwrap();
        assert!((m.vqa_accuracy.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }
}
