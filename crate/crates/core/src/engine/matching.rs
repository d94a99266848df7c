//! Bilateral matching attention.
//!
//! The affinity between visual node `i` and question node `j` is
//! `s_ij = exp(x_i·A·y_jᵀ / τ)` with `A = (A_w + A_wᵀ)/2`. Only its log is
//! ever formed on the tape; both attention maps are softmaxes of the
//! log-affinity, so the exponential never has to be materialized.

use crate::error::{GmaError, Result};
use crate::numeric::{Mask, Tape, Tensor, Var};

/// `x·((A_w + A_wᵀ)/2)·yᵀ / τ`, shape `K1×K2`.
pub fn log_affinity(tape: &mut Tape, x: Var, y: Var, a_w: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GmaError::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let at = tape.transpose(a_w)?;
    let sum = tape.add(a_w, at)?;
    let sym = tape.scale(sum, 0.5 / tau)?;
    let xa = tape.matmul(x, sym)?;
    let yt = tape.transpose(y)?;
    tape.matmul(xa, yt)
}

/// The affinity matrix `S` itself. Fails if any entry overflows.
pub fn affinity_matrix(x: &Tensor, y: &Tensor, a_w: &Tensor, tau: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xv, yv, av) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(a_w.clone()));
    let log_s = log_affinity(&mut tape, xv, yv, av, tau)?;
    let s = tape.exp(log_s)?;
    Ok(tape.value(s).clone())
}

/// Attention maps derived from the log-affinity.
#[derive(Clone, Copy, Debug)]
pub struct BilateralAttention {
    /// `K2×K1`: each question node's distribution over visual nodes.
    pub q_from_v: Var,
    /// `K1×K2`: each visual node's distribution over question nodes.
    pub v_from_q: Var,
}

pub fn bilateral_attention(tape: &mut Tape, log_s: Var, visual_mask: &Mask, question_mask: &Mask) -> Result<BilateralAttention> {
    let (k1, k2) = tape.shape(log_s);
    if visual_mask.len() != k1 || question_mask.len() != k2 {
        return Err(GmaError::shape(
            "bilateral_attention",
            format!("masks {}/{} for affinity {k1}x{k2}", visual_mask.len(), question_mask.len()),
        ));
    }
    let v_from_q = tape.masked_softmax(log_s, visual_mask, question_mask)?;
    let log_t = tape.transpose(log_s)?;
    let q_from_v = tape.masked_softmax(log_t, question_mask, visual_mask)?;
    Ok(BilateralAttention { q_from_v, v_from_q })
}

/// Updated node features:
///
/// ```text
/// V^n = [Y'' ⊕ P_q←v·X'']·W4
/// V^m = [X'' ⊕ P_v←q·Y'']·W5
/// ```
///
/// with `W4`, `W5` of shape `2d×d` and padded rows zeroed.
#[allow(clippy::too_many_arguments)]
pub fn update_nodes(
    tape: &mut Tape,
    x: Var,
    y: Var,
    att: BilateralAttention,
    w4: Var,
    w5: Var,
    visual_mask: &Mask,
    question_mask: &Mask,
) -> Result<(Var, Var)> {
    let gathered_v = tape.matmul(att.q_from_v, x)?;
    let yq = tape.concat_cols(y, gathered_v)?;
    let vn = tape.matmul(yq, w4)?;
    let vn = tape.mask_rows(vn, question_mask)?;

    let gathered_q = tape.matmul(att.v_from_q, y)?;
    let xv = tape.concat_cols(x, gathered_q)?;
    let vm = tape.matmul(xv, w5)?;
    let vm = tape.mask_rows(vm, visual_mask)?;
    Ok((vm, vn))
}
