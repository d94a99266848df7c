use rand::Rng;

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{GmaError, Result};

/// `x·W (+ b)` with `W` stored as `in × out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let weight = store.uniform(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = bias.then(|| {
            let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
            store.uniform_with_bound(format!("{name}.bias"), 1, out_dim, bound, rng)
        });
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let cols = tape.shape(x).1;
        if cols != self.in_dim {
            return Err(GmaError::shape("linear", format!("input has {cols} features, layer expects {}", self.in_dim)));
        }
        let y = tape.matmul(x, bound[self.weight])?;
        match self.bias {
            Some(b) => tape.add_row_broadcast(y, bound[b]),
            None => Ok(y),
        }
    }
}
