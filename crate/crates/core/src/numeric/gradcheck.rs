//! Central finite-difference gradient verification.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{GmaError, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
    /// Coordinates differenced with a step below the requested one because
    /// the full step crossed a relu or max boundary.
    pub reduced_steps: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the taped gradient of the scalar `f(inputs)` with central
/// differences `(f(x+eps) − f(x−eps)) / 2eps`, coordinate by coordinate,
/// over every input tensor.
///
/// `f` receives a fresh tape and one `Var` per input and must return a
/// `1×1` node. It is called `2·(total coordinates) + 1` times.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check(f, inputs, eps, eps)
}

/// [`grad_check`] for piecewise-smooth objectives.
///
/// A coordinate whose `±eps` evaluations take a different relu or max
/// branch than the unperturbed point (see [`Tape::activation_pattern`]) is
/// differenced again with the step divided by 10, down to `min_eps`. Every
/// coordinate is still compared; the report counts the reduced ones.
///
/// Useful when the objective is large enough that `eps` must be coarse to
/// beat rounding, as with a full network loss.
pub fn grad_check_piecewise<F>(f: F, inputs: &[Tensor], eps: f64, min_eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(min_eps > 0.0 && min_eps <= eps) {
        return Err(GmaError::InvalidArgument(format!("min_eps {min_eps} must lie in (0, {eps}]")));
    }
    check(f, inputs, eps, min_eps)
}

fn check<F>(f: F, inputs: &[Tensor], eps: f64, min_eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GmaError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let piecewise = min_eps < eps;
    let eval = |values: &[Tensor], grads: bool| -> Result<(f64, Tape, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| if grads { tape.param(t) } else { tape.constant(t.clone()) })
            .collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.shape() != (1, 1) {
            return Err(GmaError::shape("grad_check", format!("objective has shape {:?}", v.shape())));
        }
        let val = v.data()[0];
        if !val.is_finite() {
            return Err(GmaError::NonFinite { op: "grad_check" });
        }
        if grads {
            tape.backward(out)?;
        }
        Ok((val, tape, vars))
    };

    let (_, tape, vars) = eval(inputs, true)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    let pattern = piecewise.then(|| tape.activation_pattern());
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
        reduced_steps: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (c, &a) in grads.iter().enumerate() {
            let orig = work[i].data()[c];
            let mut h = eps;
            let numeric = loop {
                work[i].data_mut()[c] = orig + h;
                let (plus, tp, _) = eval(&work, false)?;
                work[i].data_mut()[c] = orig - h;
                let (minus, tm, _) = eval(&work, false)?;
                let same_piece = pattern
                    .as_ref()
                    .is_none_or(|p| *p == tp.activation_pattern() && *p == tm.activation_pattern());
                if same_piece || h / 10.0 < min_eps {
                    break (plus - minus) / (2.0 * h);
                }
                h /= 10.0;
            };
            work[i].data_mut()[c] = orig;
            if !numeric.is_finite() || !a.is_finite() {
                return Err(GmaError::NonFinite { op: "grad_check" });
            }
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            report.reduced_steps += usize::from(h < eps);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((i, c));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
