//! Bidirectional GRU sentence and word-group encoder.
//!
//! Each direction runs the standard cell from a zero state:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! h~ = tanh(x·Wh + (r ⊙ h)·Uh + bh)
//! h' = (1 − z) ⊙ h + z ⊙ h~
//! ```
//!
//! The final forward and backward states are concatenated and projected to
//! the model width `d`. Each direction has `d/2` hidden units.

use rand::Rng;

use crate::error::{GmaError, Result};
use crate::numeric::linear::Linear;
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub update_in: Linear,
    pub update_hidden: ParamId,
    pub reset_in: Linear,
    pub reset_hidden: ParamId,
    pub cand_in: Linear,
    pub cand_hidden: ParamId,
    pub hidden: usize,
}

impl GruCell {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        GruCell {
            update_in: Linear::new(store, &format!("{name}.update_in"), input, hidden, true, rng),
            update_hidden: store.uniform(format!("{name}.update_hidden"), hidden, hidden, rng),
            reset_in: Linear::new(store, &format!("{name}.reset_in"), input, hidden, true, rng),
            reset_hidden: store.uniform(format!("{name}.reset_hidden"), hidden, hidden, rng),
            cand_in: Linear::new(store, &format!("{name}.cand_in"), input, hidden, true, rng),
            cand_hidden: store.uniform(format!("{name}.cand_hidden"), hidden, hidden, rng),
            hidden,
        }
    }

    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Result<Var> {
        let zx = self.update_in.forward(tape, p, x)?;
        let zh = tape.matmul(h, p[self.update_hidden])?;
        let z = tape.add(zx, zh)?;
        let z = tape.sigmoid(z)?;

        let rx = self.reset_in.forward(tape, p, x)?;
        let rh = tape.matmul(h, p[self.reset_hidden])?;
        let r = tape.add(rx, rh)?;
        let r = tape.sigmoid(r)?;

        let cx = self.cand_in.forward(tape, p, x)?;
        let rh = tape.mul(r, h)?;
        let ch = tape.matmul(rh, p[self.cand_hidden])?;
        let c = tape.add(cx, ch)?;
        let c = tape.tanh(c)?;

        // h + z ⊙ (h~ − h)
        let delta = tape.sub(c, h)?;
        let gated = tape.mul(z, delta)?;
        tape.add(h, gated)
    }

    pub fn run(&self, tape: &mut Tape, p: &Bound, inputs: impl Iterator<Item = Var>) -> Result<Var> {
        let mut h = tape.constant(Tensor::zeros(1, self.hidden));
        for x in inputs {
            h = self.step(tape, p, x, h)?;
        }
        Ok(h)
    }

    /// Runs several sequences side by side, one per row. `steps[t][s]` is
    /// the row of `words` fed to sequence `s` at step `t`, or `None` once
    /// that sequence has ended and its state is carried unchanged.
    fn run_rows(&self, tape: &mut Tape, p: &Bound, words: Var, steps: &[Vec<Option<usize>>]) -> Result<Var> {
        let n = steps.first().map_or(0, Vec::len);
        let mut h = tape.constant(Tensor::zeros(n, self.hidden));
        for index in steps {
            let x = tape.gather_rows(words, index)?;
            let next = self.step(tape, p, x, h)?;
            h = if index.iter().all(Option::is_some) {
                next
            } else {
                let active: Vec<bool> = index.iter().map(Option::is_some).collect();
                tape.select_rows(next, h, &active)?
            };
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub forward: GruCell,
    pub backward: GruCell,
    pub projection: Linear,
    pub input_dim: usize,
    pub output_dim: usize,
}

/// Final states of both directions and the projected encoding.
#[derive(Clone, Copy, Debug)]
pub struct BiGruStates {
    pub forward: Var,
    pub backward: Var,
    pub output: Var,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        if output_dim == 0 || !output_dim.is_multiple_of(2) {
            return Err(GmaError::InvalidArgument(format!("Bi-GRU output width {output_dim} must be even and positive")));
        }
        let hidden = output_dim / 2;
        Ok(GruParams {
            forward: GruCell::new(store, &format!("{name}.fwd"), input_dim, hidden, rng),
            backward: GruCell::new(store, &format!("{name}.bwd"), input_dim, hidden, rng),
            projection: Linear::new(store, &format!("{name}.proj"), 2 * hidden, output_dim, true, rng),
            input_dim,
            output_dim,
        })
    }

    pub fn encode_states(&self, tape: &mut Tape, p: &Bound, seq: &[Var]) -> Result<BiGruStates> {
        if seq.is_empty() {
            return Err(GmaError::InvalidArgument("Bi-GRU over an empty sequence".into()));
        }
        for &x in seq {
            if tape.shape(x) != (1, self.input_dim) {
                return Err(GmaError::shape("bigru_encode", format!("input {:?}, expected (1, {})", tape.shape(x), self.input_dim)));
            }
        }
        let forward = self.forward.run(tape, p, seq.iter().copied())?;
        let backward = self.backward.run(tape, p, seq.iter().rev().copied())?;
        let both = tape.concat_cols(forward, backward)?;
        let output = self.projection.forward(tape, p, both)?;
        Ok(BiGruStates { forward, backward, output })
    }

    /// Encodes many sequences at once. `words` holds one input row per word
    /// and each sequence lists word rows in reading order. Row `s` of the
    /// `S×d` result equals [`GruParams::encode`] of sequence `s`.
    pub fn encode_many(&self, tape: &mut Tape, p: &Bound, words: Var, seqs: &[Vec<usize>]) -> Result<Var> {
        let (n_words, width) = tape.shape(words);
        if width != self.input_dim {
            return Err(GmaError::shape("bigru_encode", format!("inputs of width {width}, expected {}", self.input_dim)));
        }
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(GmaError::InvalidArgument("Bi-GRU over an empty sequence".into()));
        }
        if let Some(bad) = seqs.iter().flatten().find(|&&w| w >= n_words) {
            return Err(GmaError::shape("bigru_encode", format!("word {bad} of {n_words}")));
        }
        let longest = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let fwd: Vec<Vec<Option<usize>>> = (0..longest)
            .map(|t| seqs.iter().map(|s| s.get(t).copied()).collect())
            .collect();
        let bwd: Vec<Vec<Option<usize>>> = (0..longest)
            .map(|t| seqs.iter().map(|s| s.len().checked_sub(t + 1).map(|i| s[i])).collect())
            .collect();
        let forward = self.forward.run_rows(tape, p, words, &fwd)?;
        let backward = self.backward.run_rows(tape, p, words, &bwd)?;
        let both = tape.concat_cols(forward, backward)?;
        self.projection.forward(tape, p, both)
    }

    /// Encodes a sequence of `1×input_dim` rows into one `1×d` row.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, seq: &[Var]) -> Result<Var> {
        Ok(self.encode_states(tape, p, seq)?.output)
    }
}

/// Untaped convenience: encodes `seq` with the parameters in `store`.
pub fn bigru_encode(store: &ParamStore, gru: &GruParams, seq: &[Vec<f64>]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xs: Vec<Var> = seq.iter().map(|v| tape.constant(Tensor::row(v))).collect();
    let out = gru.encode(&mut tape, &p, &xs)?;
    Ok(tape.value(out).clone())
}
