//! Answer prediction: fuse both graphs into a reasoning feature, gate it
//! with the question vector and score every candidate answer.
//!
//! ```text
//! H      = relu(V^m ⊕row V^n)
//! h      = max over valid rows of H
//! y      = MLP(q ∘ h)
//! scores = sigmoid(y)
//! ```

use std::path::Path;

use rand::Rng;

use crate::error::{GmaError, Result};
use crate::numeric::linear::Linear;
use crate::numeric::{sigmoid, Bound, Mask, ParamStore, Tape, Tensor, Var};

/// Largest vote count an answer can receive.
pub const ANNOTATORS: u32 = 10;

/// Two-layer scoring MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub hidden: Linear,
    pub output: Linear,
    pub num_answers: usize,
}

impl HeadParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        hidden: usize,
        num_answers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_answers < 2 || hidden == 0 || d == 0 {
            return Err(GmaError::InvalidArgument(format!(
                "head needs d > 0, hidden > 0 and at least 2 answers, got d={d}, hidden={hidden}, answers={num_answers}"
            )));
        }
        Ok(HeadParams {
            hidden: Linear::new(store, &format!("{name}.hidden"), d, hidden, true, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, num_answers, true, rng),
            num_answers,
        })
    }
}

/// Row-concatenates both node sets, applies ReLU and max-pools over the
/// valid rows. Returns `h`, shape `1×d`.
pub fn fuse_and_pool(tape: &mut Tape, visual: Var, question: Var, visual_mask: &Mask, question_mask: &Mask) -> Result<Var> {
    let (dv, dq) = (tape.shape(visual).1, tape.shape(question).1);
    if dv != dq {
        return Err(GmaError::shape("fuse_and_pool", format!("feature widths {dv} and {dq} differ")));
    }
    let stacked = tape.concat_rows(visual, question)?;
    let h = tape.relu(stacked)?;
    let mask: Vec<bool> = visual_mask.iter().chain(question_mask).copied().collect();
    tape.max_over_rows(h, Some(&mask))
}

/// Logits `MLP(q ∘ h)`, shape `1×N_a`.
pub fn head_logits(tape: &mut Tape, p: &Bound, head: &HeadParams, h: Var, q: Var) -> Result<Var> {
    if tape.shape(h) != tape.shape(q) || tape.shape(h).0 != 1 {
        return Err(GmaError::shape(
            "predict_scores",
            format!("h {:?} and q {:?} must both be 1×d", tape.shape(h), tape.shape(q)),
        ));
    }
    let gated = tape.mul(q, h)?;
    let hidden = head.hidden.forward(tape, p, gated)?;
    let hidden = tape.relu(hidden)?;
    head.output.forward(tape, p, hidden)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub scores: Tensor,
    /// Index of the highest score; ties go to the lowest index.
    pub answer: usize,
}

impl Prediction {
    pub fn from_logits(logits: Tensor) -> Self {
        let scores = logits.map(sigmoid);
        let answer = argmax(logits.data());
        Prediction { logits, scores, answer }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scores every answer for a pooled feature and question vector.
pub fn predict_scores(tape: &mut Tape, p: &Bound, head: &HeadParams, h: Var, q: Var) -> Result<Prediction> {
    let y = head_logits(tape, p, head, h, q)?;
    Ok(Prediction::from_logits(tape.value(y).clone()))
}

/// `−Σ_i [t_i·log σ(y_i) + (1−t_i)·log(1−σ(y_i))]`.
pub fn soft_loss(tape: &mut Tape, logits: Var, targets: &[f64]) -> Result<Var> {
    tape.bce_with_logits(logits, targets)
}

/// Soft accuracy of an answer that `votes` of the annotators gave:
/// `min(1, votes/3)`.
pub fn vqa_accuracy(votes: u32) -> Result<f64> {
    if votes > ANNOTATORS {
        return Err(GmaError::InvalidArgument(format!("{votes} votes from {ANNOTATORS} annotators")));
    }
    Ok((votes as f64 / 3.0).min(1.0))
}

/// Per-class soft targets `t_i = min(1, votes_i/3)`.
pub fn soft_targets(votes: &[u32]) -> Result<Vec<f64>> {
    votes.iter().map(|&v| vqa_accuracy(v)).collect()
}

/// One-hot target for a single correct class.
pub fn one_hot(class: usize, num_answers: usize) -> Result<Vec<f64>> {
    if class >= num_answers {
        return Err(GmaError::InvalidArgument(format!("class {class} outside {num_answers} answers")));
    }
    let mut t = vec![0.0; num_answers];
    t[class] = 1.0;
    Ok(t)
}

/// Answer strings, one per line; the line number is the class index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnswerVocab {
    answers: Vec<String>,
}

impl AnswerVocab {
    pub fn new(answers: Vec<String>) -> Result<Self> {
        for (i, a) in answers.iter().enumerate() {
            if answers[..i].contains(a) {
                return Err(GmaError::Parse {
                    line: i + 1,
                    message: format!("duplicate answer {a:?}"),
                });
            }
        }
        Ok(AnswerVocab { answers })
    }

    /// Trailing whitespace is trimmed; blank lines are errors because they
    /// would shift every later index.
    pub fn parse(text: &str) -> Result<Self> {
        let mut answers = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let a = line.trim_end();
            if a.is_empty() {
                return Err(GmaError::Parse {
                    line: i + 1,
                    message: "blank answer line".into(),
                });
            }
            answers.push(a.to_string());
        }
        AnswerVocab::new(answers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GmaError::io(path, e))?;
        AnswerVocab::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answer(&self, index: usize) -> Option<&str> {
        self.answers.get(index).map(String::as_str)
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == answer)
    }
}
