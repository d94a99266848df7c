//! Random instances shared by the integration tests.
#![allow(dead_code)]

use gma::engine::{default_tau, stack_forward, AttentionTrace, EngineOptions, GmaParams, GraphContext, GraphState};
use gma::graph::{QuestionGraph, VisualGraph};
use gma::harness::{Example, Model, ModelConfig, PreparedExample, QuestionInput, QuestionKind, Split};
use gma::numeric::linear::Linear;
use gma::{ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// At least one entry is true.
pub fn random_mask(rng: &mut impl Rng, k: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..k).map(|_| rng.random_bool(0.75)).collect();
    let i = rng.random_range(0..k);
    m[i] = true;
    m
}

/// Symmetric 0/1 matrix with self-loops.
pub fn random_edges(rng: &mut impl Rng, k: usize, directed: bool) -> Tensor {
    let mut e = Tensor::eye(k);
    for i in 0..k {
        for j in 0..k {
            if i != j && rng.random_bool(0.4) {
                e.set(i, j, 1.0);
                if !directed {
                    e.set(j, i, 1.0);
                }
            }
        }
    }
    e
}

pub fn permutation(rng: &mut impl Rng, k: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(rng);
    p
}

/// A GMA stack and one graph pair with random sizes, masks and edges.
pub struct Instance {
    pub store: ParamStore,
    pub stack: Vec<GmaParams>,
    pub ctx: GraphContext,
    pub visual: Tensor,
    pub question: Tensor,
}

impl Instance {
    pub fn random(seed: u64, n_stack: usize) -> Self {
        let mut r = rng(seed);
        let k1 = r.random_range(2..=6);
        let k2 = r.random_range(2..=5);
        let d = r.random_range(2..=6);
        let (vin, qin) = (r.random_range(2..=7), r.random_range(2..=7));
        let mut store = ParamStore::new();
        let mut stack = Vec::new();
        for i in 0..n_stack {
            let (a, b) = if i == 0 { (vin, qin) } else { (d, d) };
            stack.push(GmaParams::new(&mut store, &format!("gma{i}"), a, b, d, default_tau(d), &mut r).unwrap());
        }
        let vm = random_mask(&mut r, k1);
        let qm = random_mask(&mut r, k2);
        let ve = random_edges(&mut r, k1, false);
        let qe = random_edges(&mut r, k2, true);
        let ctx = GraphContext::new(&ve, &vm, &qe, &qm).unwrap();
        let visual = normal(&mut r, k1, vin);
        let question = normal(&mut r, k2, qin);
        Instance {
            store,
            stack,
            ctx,
            visual,
            question,
        }
    }

    /// Zeroes `W2`, `W3` and `A_w` of every module.
    pub fn zero_message_weights(&mut self) {
        for g in self.stack.clone() {
            for id in [g.w2, g.w3, g.affinity] {
                let t = self.store.get_mut(id);
                *t = Tensor::zeros(t.rows(), t.cols());
            }
        }
    }

    pub fn run(&self, opts: EngineOptions) -> Output {
        run_stack(&self.store, &self.stack, &self.ctx, &self.visual, &self.question, opts)
    }
}

pub struct Output {
    pub visual: Tensor,
    pub question: Tensor,
    pub traces: Vec<AttentionTrace>,
}

pub fn run_stack(
    store: &ParamStore,
    stack: &[GmaParams],
    ctx: &GraphContext,
    visual: &Tensor,
    question: &Tensor,
    opts: EngineOptions,
) -> Output {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let state = GraphState {
        visual: tape.constant(visual.clone()),
        question: tape.constant(question.clone()),
    };
    let (out, traces) = stack_forward(&mut tape, &p, stack, ctx, state, opts).unwrap();
    Output {
        visual: tape.value(out.visual).clone(),
        question: tape.value(out.question).clone(),
        traces: traces.iter().enumerate().map(|(i, t)| AttentionTrace::from_tape(&tape, i, t)).collect(),
    }
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::try_from_rows(rows).unwrap()
}

/// `out[i][j] = m[rp[i]][cp[j]]`.
pub fn permute_both(m: &Tensor, rp: &[usize], cp: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(rp.len(), cp.len());
    for (i, &a) in rp.iter().enumerate() {
        for (j, &b) in cp.iter().enumerate() {
            out.set(i, j, m.get(a, b));
        }
    }
    out
}

/// A full model over precomputed question graphs, and one example for it.
pub fn graph_model(seed: u64, n_stack: usize) -> (Model, Example) {
    let mut r = rng(seed);
    let (k1, k2, d) = (r.random_range(2..=6), r.random_range(2..=5), r.random_range(2..=6));
    let (vin, qin) = (r.random_range(2..=6), r.random_range(2..=6));
    let config = ModelConfig {
        visual_dim: vin,
        question: QuestionKind::Graph { dim: qin },
        d,
        n_stack,
        share_stack: false,
        head_hidden: 7,
        num_answers: 4,
        tau: default_tau(d),
        options: EngineOptions::default(),
    };
    let model = Model::new(config, seed).unwrap();
    let example = Example {
        id: format!("ex{seed}"),
        split: Split::Train,
        visual: VisualGraph {
            nodes: normal(&mut r, k1, vin),
            edges: random_edges(&mut r, k1, false),
            mask: random_mask(&mut r, k1),
        },
        question: QuestionInput::Graph {
            graph: QuestionGraph {
                nodes: normal(&mut r, k2, qin),
                edges: random_edges(&mut r, k2, true),
                mask: random_mask(&mut r, k2),
                q: normal(&mut r, 1, d),
            },
        },
        answer: Some(r.random_range(0..4)),
        votes: None,
        references: None,
    };
    (model, example)
}

pub fn permute_example(ex: &Example, vp: &[usize], qp: &[usize]) -> Example {
    let QuestionInput::Graph { graph } = &ex.question else {
        panic!("expected a graph question");
    };
    Example {
        visual: ex.visual.permuted(vp),
        question: QuestionInput::Graph {
            graph: graph.permuted(qp),
        },
        ..ex.clone()
    }
}

/// Pooled feature and sigmoid scores in evaluation mode.
pub fn pooled_and_scores(model: &Model, ex: &Example) -> (Tensor, Tensor) {
    let prepared = PreparedExample::new(0, ex, model.config.num_answers).unwrap();
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let out = model
        .forward(&mut tape, &p, &prepared, gma::harness::DropoutRates::NONE, false, &mut rng(0))
        .unwrap();
    let h = tape.value(out.h).clone();
    let scores = tape.value(out.logits).map(gma::numeric::sigmoid);
    (h, scores)
}

/// Direct evaluation with plain loops, for `W2 = W3 = A_w = 0`.
pub fn uniform_attention_oracle(inst: &Instance) -> (Tensor, Tensor) {
    let g = &inst.stack[0];
    let st = &inst.store;
    let (vm, qm) = (&inst.ctx.visual_mask, &inst.ctx.question_mask);
    let d = g.d;
    let affine = |x: &Tensor, fc: &Linear, mask: &[bool]| {
        let (w, b) = (st.get(fc.weight), st.get(fc.bias.unwrap()));
        let mut out = Tensor::zeros(x.rows(), d);
        for i in (0..x.rows()).filter(|&i| mask[i]) {
            for o in 0..d {
                let mut acc = b.get(0, o);
                for k in 0..x.cols() {
                    acc += x.get(i, k) * w.get(k, o);
                }
                out.set(i, o, acc);
            }
        }
        let w1 = st.get(g.w1);
        let mut enc = Tensor::zeros(x.rows(), d);
        for i in 0..x.rows() {
            for o in 0..d {
                let v: f64 = (0..d).map(|k| out.get(i, k) * w1.get(k, o)).sum();
                enc.set(i, o, v.max(0.0));
            }
        }
        enc
    };
    let x = affine(&inst.visual, &g.fc_visual, vm);
    let y = affine(&inst.question, &g.fc_question, qm);
    let mean = |m: &Tensor, mask: &[bool]| {
        let n = mask.iter().filter(|&&b| b).count() as f64;
        (0..d)
            .map(|o| (0..m.rows()).filter(|&i| mask[i]).map(|i| m.get(i, o)).sum::<f64>() / n)
            .collect::<Vec<_>>()
    };
    let update = |own: &Tensor, other_mean: &[f64], w: &Tensor, mask: &[bool]| {
        let mut out = Tensor::zeros(own.rows(), d);
        for i in (0..own.rows()).filter(|&i| mask[i]) {
            for o in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += own.get(i, k) * w.get(k, o) + other_mean[k] * w.get(d + k, o);
                }
                out.set(i, o, acc);
            }
        }
        out
    };
    let vmo = update(&x, &mean(&y, qm), st.get(g.w5), vm);
    let vno = update(&y, &mean(&x, vm), st.get(g.w4), qm);
    (vmo, vno)
}
