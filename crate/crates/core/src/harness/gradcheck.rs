//! Finite-difference check of the complete loss against every parameter.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::DropoutRates;
use super::data::{Example, PreparedExample, QuestionInput, QuestionKind, Split};
use super::model::{Model, ModelConfig};
use crate::engine::{default_tau, EngineOptions};
use crate::error::{GmaError, Result};
use crate::graph::{
    build_visual_graph, BoundingBox, DependencyParse, Detection, DetectionSet, QuestionStructure, GLOVE_DIM,
};
use crate::numeric::{grad_check_piecewise, Bound, GradCheckReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckSize {
    /// K1=5, K2=4, d=8, three modules.
    Small,
    /// K1=6, K2=5, d=8, three modules.
    Medium,
}

impl GradCheckSize {
    /// `(K1, K2, d, modules)`.
    pub fn dims(self) -> (usize, usize, usize, usize) {
        match self {
            GradCheckSize::Small => (5, 4, 8, 3),
            GradCheckSize::Medium => (6, 5, 8, 3),
        }
    }
}

impl FromStr for GradCheckSize {
    type Err = GmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(GradCheckSize::Small),
            "medium" => Ok(GradCheckSize::Medium),
            other => Err(GmaError::InvalidArgument(format!("unknown size {other:?}, expected small or medium"))),
        }
    }
}

const ROI_DIM: usize = 6;
const NUM_ANSWERS: usize = 5;
const HEAD_HIDDEN: usize = 16;

/// A random model and example of the given size. One object slot and one
/// word slot are left as padding so masks are exercised.
pub fn grad_check_instance(size: GradCheckSize, seed: u64) -> Result<(Model, PreparedExample)> {
    let (k1, k2, d, n) = size.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let detections = (0..k1 - 1)
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0));
            Ok(Detection {
                bbox: BoundingBox::new(x, y, x + rng.random_range(10.0..40.0), y + rng.random_range(10.0..40.0))?,
                feature: (0..ROI_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = DetectionSet {
        image_id: "grad-check".into(),
        image_size: [80.0, 80.0],
        detections,
    };
    let visual = build_visual_graph(&set, 0.3, k1)?;

    let n_words = k2 - 1;
    let forms: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
    let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
    let heads: Vec<usize> = (0..n_words).map(|j| if j == 0 { 0 } else { rng.random_range(1..=j) }).collect();
    let structure = QuestionStructure::from_parse(&DependencyParse::from_heads(&refs, &heads)?, k2)?;
    let words = (0..n_words)
        .map(|_| (0..GLOVE_DIM).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    let votes = (0..NUM_ANSWERS).map(|_| rng.random_range(0..=4)).collect();

    let example = Example {
        id: "grad-check".into(),
        split: Split::Train,
        visual,
        question: QuestionInput::Words { structure, words },
        answer: None,
        votes: Some(votes),
        references: None,
    };
    let config = ModelConfig {
        visual_dim: ROI_DIM + 4,
        question: QuestionKind::Words { dim: GLOVE_DIM },
        d,
        n_stack: n,
        share_stack: false,
        head_hidden: HEAD_HIDDEN,
        num_answers: NUM_ANSWERS,
        tau: default_tau(d),
        options: EngineOptions::default(),
    };
    let model = Model::new(config, rng.random())?;
    Ok((model, PreparedExample::new(0, &example, NUM_ANSWERS)?))
}

/// Finite-difference step for the full loss. The loss is of order 1, so a
/// step of 1e-5 leaves about 2e-11 of rounding noise in every numeric
/// derivative, which the 1e-8 floor of [`crate::numeric::relative_error`]
/// turns into errors near 1e-3 on coordinates with tiny gradients.
pub const MODEL_EPS: f64 = 1e-3;
/// Smallest step tried when [`MODEL_EPS`] crosses a relu or max boundary.
pub const MODEL_MIN_EPS: f64 = 1e-6;

/// Compares the backpropagated gradient of the soft loss with central
/// differences for every coordinate of every parameter.
pub fn model_grad_check(size: GradCheckSize, seed: u64) -> Result<GradCheckReport> {
    let (model, example) = grad_check_instance(size, seed)?;
    grad_check_piecewise(
        |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(model.loss(tape, &p, &example, DropoutRates::NONE, false, &mut rng)?.0)
        },
        model.store.tensors(),
        MODEL_EPS,
        MODEL_MIN_EPS,
    )
}
