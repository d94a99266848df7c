//! Dataset files and their per-example preparation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::GraphContext;
use crate::error::{GmaError, Result};
use crate::graph::{QuestionGraph, QuestionStructure, VisualGraph};
use crate::head::{one_hot, soft_targets};
use crate::numeric::Tensor;

pub const DATASET_VERSION: u32 = 1;

/// A question either as raw word vectors plus its parse-derived structure
/// (encoded by the model's Bi-GRU) or as an already encoded graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionInput {
    Words {
        structure: QuestionStructure,
        words: Vec<Vec<f64>>,
    },
    Graph {
        graph: QuestionGraph,
    },
}

impl QuestionInput {
    pub fn mask(&self) -> &[bool] {
        match self {
            QuestionInput::Words { structure, .. } => &structure.mask,
            QuestionInput::Graph { graph } => &graph.mask,
        }
    }

    pub fn edges(&self) -> &Tensor {
        match self {
            QuestionInput::Words { structure, .. } => &structure.edges,
            QuestionInput::Graph { graph } => &graph.edges,
        }
    }

    pub fn kind(&self) -> QuestionKind {
        match self {
            QuestionInput::Words { words, .. } => QuestionKind::Words {
                dim: words.first().map_or(0, Vec::len),
            },
            QuestionInput::Graph { graph } => QuestionKind::Graph { dim: graph.nodes.cols() },
        }
    }
}

/// How questions enter the model, with the input feature width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuestionKind {
    Words { dim: usize },
    Graph { dim: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    #[serde(default)]
    pub split: Split,
    pub visual: VisualGraph,
    pub question: QuestionInput,
    /// Index of the correct answer, when known.
    #[serde(default)]
    pub answer: Option<usize>,
    /// Annotator votes per answer class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<u32>>,
    /// For generated data: the visual node each valid question node copies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub num_answers: usize,
    pub examples: Vec<Example>,
}

/// Shapes shared by every example of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDims {
    pub k1: usize,
    pub k2: usize,
    pub visual_dim: usize,
    pub question: QuestionKind,
}

impl Dataset {
    pub fn new(num_answers: usize, examples: Vec<Example>) -> Self {
        Dataset {
            version: DATASET_VERSION,
            num_answers,
            examples,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(text)?;
        if ds.version != DATASET_VERSION {
            return Err(GmaError::InvalidArgument(format!("unsupported dataset version {}", ds.version)));
        }
        ds.dims()?;
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GmaError::io(path, e))?;
        Dataset::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| GmaError::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    /// Checks that all examples agree on shapes and returns them.
    pub fn dims(&self) -> Result<DataDims> {
        let first = self
            .examples
            .first()
            .ok_or_else(|| GmaError::InvalidArgument("dataset has no examples".into()))?;
        let dims = DataDims {
            k1: first.visual.num_nodes(),
            k2: first.question.mask().len(),
            visual_dim: first.visual.feature_dim(),
            question: first.question.kind(),
        };
        for ex in &self.examples {
            let got = DataDims {
                k1: ex.visual.num_nodes(),
                k2: ex.question.mask().len(),
                visual_dim: ex.visual.feature_dim(),
                question: ex.question.kind(),
            };
            if got != dims {
                return Err(GmaError::InvalidArgument(format!(
                    "example {} has shape {got:?}, the first example has {dims:?}",
                    ex.id
                )));
            }
            if let Some(a) = ex.answer.filter(|&a| a >= self.num_answers) {
                return Err(GmaError::InvalidArgument(format!(
                    "example {}: answer {a} outside {} classes",
                    ex.id, self.num_answers
                )));
            }
            if ex.votes.as_ref().is_some_and(|v| v.len() != self.num_answers) {
                return Err(GmaError::InvalidArgument(format!("example {}: vote vector length", ex.id)));
            }
        }
        Ok(dims)
    }
}

/// An example with its graph operators precomputed.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub index: usize,
    pub ctx: GraphContext,
    pub visual: Tensor,
    pub question: QuestionInput,
    pub target: Option<Vec<f64>>,
    pub answer: Option<usize>,
    pub votes: Option<Vec<u32>>,
}

impl PreparedExample {
    pub fn new(index: usize, ex: &Example, num_answers: usize) -> Result<Self> {
        let ctx = GraphContext::new(&ex.visual.edges, &ex.visual.mask, ex.question.edges(), ex.question.mask())?;
        let target = match (&ex.votes, ex.answer) {
            (Some(v), _) => Some(soft_targets(v)?),
            (None, Some(a)) => Some(one_hot(a, num_answers)?),
            (None, None) => None,
        };
        Ok(PreparedExample {
            index,
            ctx,
            visual: ex.visual.nodes.clone(),
            question: ex.question.clone(),
            target,
            answer: ex.answer,
            votes: ex.votes.clone(),
        })
    }
}

/// Prepares the examples of `split` (all examples when `None`).
pub fn prepare(ds: &Dataset, split: Option<Split>) -> Result<Vec<PreparedExample>> {
    ds.examples
        .iter()
        .enumerate()
        .filter(|(_, e)| split.is_none_or(|s| e.split == s))
        .map(|(i, e)| PreparedExample::new(i, e, ds.num_answers))
        .collect()
}
