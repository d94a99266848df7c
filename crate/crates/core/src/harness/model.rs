//! The full network: question encoder, GMA stack and answer head over one
//! parameter store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DropoutRates, RunConfig};
use super::data::{DataDims, PreparedExample, QuestionInput, QuestionKind};
use crate::engine::{stack_forward, AttentionTrace, EngineOptions, GmaParams, GraphState, ModuleTrace};
use crate::error::{GmaError, Result};
use crate::graph::{encode_question, GruParams, QuestionDropout};
use crate::head::{fuse_and_pool, head_logits, soft_loss, HeadParams, Prediction};
use crate::numeric::{Bound, ParamStore, Tape, Var};

/// Everything needed to rebuild the parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub question: QuestionKind,
    pub d: usize,
    pub n_stack: usize,
    pub share_stack: bool,
    pub head_hidden: usize,
    pub num_answers: usize,
    pub tau: f64,
    pub options: EngineOptions,
}

impl ModelConfig {
    pub fn from_run(cfg: &RunConfig, dims: &DataDims) -> Self {
        ModelConfig {
            visual_dim: dims.visual_dim,
            question: dims.question,
            d: cfg.d,
            n_stack: cfg.n_stack,
            share_stack: cfg.share_stack,
            head_hidden: cfg.head_hidden,
            num_answers: cfg.num_answers,
            tau: cfg.tau_value(),
            options: EngineOptions {
                similarity: cfg.similarity,
                encoder: cfg.encoder,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub gru: Option<GruParams>,
    pub stack: Vec<GmaParams>,
    pub head: HeadParams,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub h: Var,
    pub q: Var,
    pub state: GraphState,
    pub traces: Vec<ModuleTrace>,
}

impl Model {
    /// Initializes all weights from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d;
        if config.n_stack == 0 {
            return Err(GmaError::InvalidArgument("n_stack must be positive".into()));
        }
        let (gru, question_in) = match config.question {
            QuestionKind::Words { dim } => (Some(GruParams::new(&mut store, "gru", dim, d, &mut rng)?), d),
            QuestionKind::Graph { dim } => (None, dim),
        };
        let mut stack = Vec::with_capacity(config.n_stack);
        for i in 0..config.n_stack {
            if config.share_stack && i >= 2 {
                stack.push(stack[1]);
                continue;
            }
            let (vin, qin) = if i == 0 { (config.visual_dim, question_in) } else { (d, d) };
            stack.push(GmaParams::new(&mut store, &format!("gma{i}"), vin, qin, d, config.tau, &mut rng)?);
        }
        let head = HeadParams::new(&mut store, "head", d, config.head_hidden, config.num_answers, &mut rng)?;
        Ok(Model {
            config,
            store,
            gru,
            stack,
            head,
        })
    }

    pub fn check_example(&self, ex: &PreparedExample) -> Result<()> {
        if ex.visual.cols() != self.config.visual_dim {
            return Err(GmaError::shape(
                "model",
                format!("visual features have {} columns, model expects {}", ex.visual.cols(), self.config.visual_dim),
            ));
        }
        if ex.question.kind() != self.config.question {
            return Err(GmaError::shape(
                "model",
                format!("question input {:?}, model expects {:?}", ex.question.kind(), self.config.question),
            ));
        }
        Ok(())
    }

    /// Builds the graph of one example on `tape`. Dropout is only applied
    /// when `training` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ex: &PreparedExample,
        dropout: DropoutRates,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        self.check_example(ex)?;
        let visual = tape.constant(ex.visual.clone());
        let visual = tape.dropout(visual, dropout.image, training, rng)?;
        let (question, q) = match (&ex.question, &self.gru) {
            (QuestionInput::Words { structure, words }, Some(gru)) => {
                let qd = QuestionDropout {
                    word: dropout.word,
                    question: dropout.question,
                };
                encode_question(tape, p, gru, structure, words, qd, training, rng)?
            }
            (QuestionInput::Graph { graph }, None) => {
                if graph.q.shape() != (1, self.config.d) {
                    return Err(GmaError::shape(
                        "model",
                        format!("question vector {:?}, expected (1, {})", graph.q.shape(), self.config.d),
                    ));
                }
                let nodes = tape.constant(graph.nodes.clone());
                let q = tape.constant(graph.q.clone());
                (nodes, tape.dropout(q, dropout.question, training, rng)?)
            }
            _ => unreachable!("checked by check_example"),
        };
        let state = GraphState { visual, question };
        let (state, traces) = stack_forward(tape, p, &self.stack, &ex.ctx, state, self.config.options)?;
        let h = fuse_and_pool(tape, state.visual, state.question, &ex.ctx.visual_mask, &ex.ctx.question_mask)?;
        let h = tape.dropout(h, dropout.reasoning, training, rng)?;
        let logits = head_logits(tape, p, &self.head, h, q)?;
        Ok(ForwardOutput {
            logits,
            h,
            q,
            state,
            traces,
        })
    }

    /// Forward pass plus soft loss against the example's target.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ex: &PreparedExample,
        dropout: DropoutRates,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, ForwardOutput)> {
        let target = ex
            .target
            .as_ref()
            .ok_or_else(|| GmaError::InvalidArgument(format!("example {} has no answer", ex.index)))?;
        let out = self.forward(tape, p, ex, dropout, training, rng)?;
        let loss = soft_loss(tape, out.logits, target)?;
        Ok((loss, out))
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, ex: &PreparedExample) -> Result<Prediction> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &p, ex, DropoutRates::NONE, false, &mut rng)?;
        Ok(Prediction::from_logits(tape.value(out.logits).clone()))
    }

    /// Evaluation-mode prediction with every module's attention maps.
    pub fn trace(&self, ex: &PreparedExample) -> Result<(Prediction, Vec<AttentionTrace>)> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &p, ex, DropoutRates::NONE, false, &mut rng)?;
        let traces = out
            .traces
            .iter()
            .enumerate()
            .map(|(i, t)| AttentionTrace::from_tape(&tape, i, t))
            .collect();
        Ok((Prediction::from_logits(tape.value(out.logits).clone()), traces))
    }
}
