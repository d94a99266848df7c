//! One graph matching attention module and stacks of them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{
    fc_transform, gconv_explicit, gconv_implicit, implicit_adjacency, normalized_laplacian, symmetrize, EncoderMode,
    SimilarityMode,
};
use super::matching::{bilateral_attention, log_affinity, update_nodes};
use crate::error::{GmaError, Result};
use crate::numeric::linear::Linear;
use crate::numeric::{Bound, Mask, ParamId, ParamStore, Tape, Tensor, Var};

/// Weights of one module. `W1`, `W2`, `W3` are shared between the two
/// modalities; the input transforms are not.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmaParams {
    pub fc_visual: Linear,
    pub fc_question: Linear,
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub affinity: ParamId,
    pub w4: ParamId,
    pub w5: ParamId,
    pub tau: f64,
    pub d: usize,
}

impl GmaParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        visual_in: usize,
        question_in: usize,
        d: usize,
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if d == 0 || tau.is_nan() || tau <= 0.0 {
            return Err(GmaError::InvalidArgument(format!("need d > 0 and tau > 0, got d={d}, tau={tau}")));
        }
        Ok(GmaParams {
            fc_visual: Linear::new(store, &format!("{name}.fc_visual"), visual_in, d, true, rng),
            fc_question: Linear::new(store, &format!("{name}.fc_question"), question_in, d, true, rng),
            w1: store.uniform(format!("{name}.w1"), d, d, rng),
            w2: store.uniform(format!("{name}.w2"), d, d, rng),
            w3: store.uniform(format!("{name}.w3"), d, d, rng),
            affinity: store.uniform(format!("{name}.affinity"), d, d, rng),
            w4: store.uniform(format!("{name}.w4"), 2 * d, d, rng),
            w5: store.uniform(format!("{name}.w5"), 2 * d, d, rng),
            tau,
            d,
        })
    }
}

/// `1/√d`.
pub fn default_tau(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub similarity: SimilarityMode,
    pub encoder: EncoderMode,
}

/// Per-example quantities that stay fixed across stacked modules.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphContext {
    pub visual_edges: Tensor,
    /// Directed head→dependent edges, kept for inspection.
    pub question_edges: Tensor,
    pub visual_laplacian: Tensor,
    pub question_laplacian: Tensor,
    pub visual_mask: Vec<bool>,
    pub question_mask: Vec<bool>,
}

impl GraphContext {
    /// The question edges are symmetrized before normalization.
    pub fn new(visual_edges: &Tensor, visual_mask: &Mask, question_edges: &Tensor, question_mask: &Mask) -> Result<Self> {
        Ok(GraphContext {
            visual_laplacian: normalized_laplacian(visual_edges, visual_mask)?,
            question_laplacian: normalized_laplacian(&symmetrize(question_edges), question_mask)?,
            visual_edges: visual_edges.clone(),
            question_edges: question_edges.clone(),
            visual_mask: visual_mask.to_vec(),
            question_mask: question_mask.to_vec(),
        })
    }

    pub fn k1(&self) -> usize {
        self.visual_mask.len()
    }

    pub fn k2(&self) -> usize {
        self.question_mask.len()
    }

    /// Applies node permutations to every field.
    pub fn permuted(&self, visual_perm: &[usize], question_perm: &[usize]) -> GraphContext {
        GraphContext {
            visual_edges: self.visual_edges.permute_square(visual_perm),
            question_edges: self.question_edges.permute_square(question_perm),
            visual_laplacian: self.visual_laplacian.permute_square(visual_perm),
            question_laplacian: self.question_laplacian.permute_square(question_perm),
            visual_mask: visual_perm.iter().map(|&p| self.visual_mask[p]).collect(),
            question_mask: question_perm.iter().map(|&p| self.question_mask[p]).collect(),
        }
    }
}

/// Node features flowing between modules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphState {
    pub visual: Var,
    pub question: Var,
}

/// Tape handles of one module's intermediate maps.
#[derive(Clone, Copy, Debug)]
pub struct ModuleTrace {
    pub log_affinity: Var,
    pub v_from_q: Var,
    pub q_from_v: Var,
    pub visual_adjacency: Option<Var>,
    pub question_adjacency: Option<Var>,
}

/// One module: input transforms, dual-stage encoder, matching attention
/// and node update.
pub fn gma_forward(
    tape: &mut Tape,
    p: &Bound,
    params: &GmaParams,
    ctx: &GraphContext,
    state: GraphState,
    opts: EngineOptions,
) -> Result<(GraphState, ModuleTrace)> {
    let (vm, qm) = (&ctx.visual_mask[..], &ctx.question_mask[..]);
    let (k1, k2) = (ctx.k1(), ctx.k2());
    if tape.shape(state.visual).0 != k1 || tape.shape(state.question).0 != k2 {
        return Err(GmaError::shape(
            "gma_forward",
            format!(
                "node matrices {:?}/{:?} for K1={k1}, K2={k2}",
                tape.shape(state.visual),
                tape.shape(state.question)
            ),
        ));
    }
    let x = fc_transform(tape, p, &params.fc_visual, state.visual, vm)?;
    let y = fc_transform(tape, p, &params.fc_question, state.question, qm)?;

    let (x, y) = if opts.encoder.explicit() {
        let lm = tape.constant(ctx.visual_laplacian.clone());
        let ln = tape.constant(ctx.question_laplacian.clone());
        (
            gconv_explicit(tape, x, lm, p[params.w1], p[params.w2])?,
            gconv_explicit(tape, y, ln, p[params.w1], p[params.w2])?,
        )
    } else {
        (x, y)
    };

    let (x, y, am, an) = if opts.encoder.implicit() {
        let am = implicit_adjacency(tape, x, vm, opts.similarity)?;
        let an = implicit_adjacency(tape, y, qm, opts.similarity)?;
        (
            gconv_implicit(tape, x, am, p[params.w3])?,
            gconv_implicit(tape, y, an, p[params.w3])?,
            Some(am),
            Some(an),
        )
    } else {
        (x, y, None, None)
    };

    let log_s = log_affinity(tape, x, y, p[params.affinity], params.tau)?;
    let att = bilateral_attention(tape, log_s, vm, qm)?;
    let (visual, question) = update_nodes(tape, x, y, att, p[params.w4], p[params.w5], vm, qm)?;
    Ok((
        GraphState { visual, question },
        ModuleTrace {
            log_affinity: log_s,
            v_from_q: att.v_from_q,
            q_from_v: att.q_from_v,
            visual_adjacency: am,
            question_adjacency: an,
        },
    ))
}

/// Applies `stack` in order, collecting one trace per module.
pub fn stack_forward(
    tape: &mut Tape,
    p: &Bound,
    stack: &[GmaParams],
    ctx: &GraphContext,
    state: GraphState,
    opts: EngineOptions,
) -> Result<(GraphState, Vec<ModuleTrace>)> {
    if stack.is_empty() {
        return Err(GmaError::InvalidArgument("a GMA stack needs at least one module".into()));
    }
    let mut state = state;
    let mut traces = Vec::with_capacity(stack.len());
    for params in stack {
        let (next, trace) = gma_forward(tape, p, params, ctx, state, opts)?;
        state = next;
        traces.push(trace);
    }
    Ok((state, traces))
}

/// Materialized attention maps of one module, in the export layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub module: usize,
    #[serde(rename = "S_log")]
    pub s_log: Vec<Vec<f64>>,
    #[serde(rename = "P_v_from_q")]
    pub p_v_from_q: Vec<Vec<f64>>,
    #[serde(rename = "P_q_from_v")]
    pub p_q_from_v: Vec<Vec<f64>>,
    #[serde(rename = "A_m")]
    pub a_m: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A_n")]
    pub a_n: Option<Vec<Vec<f64>>>,
}

impl AttentionTrace {
    pub fn from_tape(tape: &Tape, module: usize, trace: &ModuleTrace) -> Self {
        let rows = |v: Var| tape.value(v).to_rows();
        AttentionTrace {
            module,
            s_log: rows(trace.log_affinity),
            p_v_from_q: rows(trace.v_from_q),
            p_q_from_v: rows(trace.q_from_v),
            a_m: trace.visual_adjacency.map(rows),
            a_n: trace.question_adjacency.map(rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture(seed: u64) -> (ParamStore, GmaParams, GraphContext, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = GmaParams::new(&mut store, "gma0", 5, 3, 4, default_tau(4), &mut rng).unwrap();
        let ve = Tensor::from_rows(&[[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let qe = Tensor::from_rows(&[[1.0, 0.0], [1.0, 1.0]]);
        let ctx = GraphContext::new(&ve, &[true; 3], &qe, &[true, true]).unwrap();
        let v = Tensor::new(3, 5, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let q = Tensor::new(2, 3, (0..6).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap();
        (store, params, ctx, v, q)
    }

    #[test]
    fn output_shapes_and_trace_export() {
        let (store, params, ctx, v, q) = fixture(0);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let state = GraphState {
            visual: tape.constant(v),
            question: tape.constant(q),
        };
        let (out, trace) = gma_forward(&mut tape, &p, &params, &ctx, state, EngineOptions::default()).unwrap();
        assert_eq!(tape.shape(out.visual), (3, 4));
        assert_eq!(tape.shape(out.question), (2, 4));
        let t = AttentionTrace::from_tape(&tape, 0, &trace);
        assert_eq!((t.s_log.len(), t.s_log[0].len()), (3, 2));
        assert_eq!((t.p_q_from_v.len(), t.p_q_from_v[0].len()), (2, 3));
        assert_eq!(t.a_m.as_ref().unwrap().len(), 3);
        let json = serde_json::to_value(&t).unwrap();
        for key in ["module", "S_log", "P_v_from_q", "P_q_from_v", "A_m", "A_n"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn empty_stack_is_an_error() {
        let (store, _, ctx, v, q) = fixture(1);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let state = GraphState {
            visual: tape.constant(v),
            question: tape.constant(q),
        };
        assert!(stack_forward(&mut tape, &p, &[], &ctx, state, EngineOptions::default()).is_err());
    }

    #[test]
    fn ablation_modes_skip_stages() {
        let (store, params, ctx, v, q) = fixture(2);
        for encoder in [EncoderMode::Explicit, EncoderMode::Implicit] {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let state = GraphState {
                visual: tape.constant(v.clone()),
                question: tape.constant(q.clone()),
            };
            let opts = EngineOptions {
                encoder,
                ..Default::default()
            };
            let (_, trace) = gma_forward(&mut tape, &p, &params, &ctx, state, opts).unwrap();
            assert_eq!(trace.visual_adjacency.is_some(), encoder == EncoderMode::Implicit);
        }
    }

    #[test]
    fn mismatched_node_count_is_an_error() {
        let (store, params, ctx, _, q) = fixture(3);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let state = GraphState {
            visual: tape.constant(Tensor::zeros(4, 5)),
            question: tape.constant(q),
        };
        assert!(gma_forward(&mut tape, &p, &params, &ctx, state, EngineOptions::default()).is_err());
    }
}
