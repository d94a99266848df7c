//! Dual-stage graph encoder.
//!
//! The explicit stage propagates along the given edges through the
//! symmetric normalized adjacency `L = D^-1/2 · E · D^-1/2`:
//!
//! ```text
//! X' = relu((X + (L·X)·W2)·W1)
//! ```
//!
//! The implicit stage builds a dense adjacency from pairwise squared
//! distances between the explicit-stage features and adds a residual
//! propagation step:
//!
//! ```text
//! A_ij = softmax_j(∓‖x'_i − x'_j‖²)
//! X''  = X' + (A·X')·W3
//! ```
//!
//! Both modalities use the same `W1`, `W2` and `W3`.

use serde::{Deserialize, Serialize};

use crate::error::{GmaError, Result};
use crate::numeric::linear::Linear;
use crate::numeric::{count_valid, Bound, Mask, Tape, Tensor, Var};

/// Sign of the distance inside the implicit-adjacency softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// `softmax(−‖x_i − x_j‖²)`: nearby nodes get the most weight.
    #[default]
    Negated,
    /// `softmax(+‖x_i − x_j‖²)`: the distance used as a score directly.
    Literal,
}

impl std::str::FromStr for SimilarityMode {
    type Err = GmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negated" => Ok(SimilarityMode::Negated),
            "literal" => Ok(SimilarityMode::Literal),
            other => Err(GmaError::Config(format!("unknown similarity mode {other:?}"))),
        }
    }
}

/// Which encoder stages run. `Dual` is the full model; the other two exist
/// for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    #[default]
    Dual,
    Explicit,
    Implicit,
}

impl EncoderMode {
    pub fn explicit(self) -> bool {
        matches!(self, EncoderMode::Dual | EncoderMode::Explicit)
    }

    pub fn implicit(self) -> bool {
        matches!(self, EncoderMode::Dual | EncoderMode::Implicit)
    }
}

impl std::str::FromStr for EncoderMode {
    type Err = GmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(EncoderMode::Dual),
            "explicit" => Ok(EncoderMode::Explicit),
            "implicit" => Ok(EncoderMode::Implicit),
            other => Err(GmaError::Config(format!("unknown encoder mode {other:?}"))),
        }
    }
}

/// Affine node transform; padded rows are zeroed.
pub fn fc_transform(tape: &mut Tape, p: &Bound, fc: &Linear, nodes: Var, mask: &Mask) -> Result<Var> {
    let y = fc.forward(tape, p, nodes)?;
    tape.mask_rows(y, mask)
}

/// `E ∨ Eᵀ`.
pub fn symmetrize(edges: &Tensor) -> Tensor {
    let mut out = edges.clone();
    for i in 0..edges.rows() {
        for j in 0..edges.cols() {
            if edges.get(i, j) != 0.0 || edges.get(j, i) != 0.0 {
                out.set(i, j, 1.0);
            }
        }
    }
    out
}

/// `D^-1/2 · E · D^-1/2` over the valid block, with `D_ii = Σ_j e_ij`.
/// Rows and columns of padded nodes are zero.
pub fn normalized_laplacian(edges: &Tensor, mask: &Mask) -> Result<Tensor> {
    let k = edges.rows();
    if edges.cols() != k || mask.len() != k {
        return Err(GmaError::shape(
            "normalized_laplacian",
            format!("edges {:?} with mask of length {}", edges.shape(), mask.len()),
        ));
    }
    let valid = |i: usize| mask[i];
    for i in (0..k).filter(|&i| valid(i)) {
        for j in (0..k).filter(|&j| valid(j)) {
            if edges.get(i, j) != edges.get(j, i) {
                return Err(GmaError::InvalidArgument(format!(
                    "edge matrix is not symmetric at ({i}, {j}); symmetrize directed graphs first"
                )));
            }
        }
    }
    let mut degree = vec![0.0; k];
    for i in (0..k).filter(|&i| valid(i)) {
        degree[i] = (0..k).filter(|&j| valid(j)).map(|j| edges.get(i, j)).sum();
        if degree[i] <= 0.0 {
            return Err(GmaError::InvalidArgument(format!("node {i} has zero degree")));
        }
    }
    let mut l = Tensor::zeros(k, k);
    for i in (0..k).filter(|&i| valid(i)) {
        for j in (0..k).filter(|&j| valid(j)) {
            let e = edges.get(i, j);
            if e != 0.0 {
                l.set(i, j, e / (degree[i] * degree[j]).sqrt());
            }
        }
    }
    Ok(l)
}

/// `relu((X + (L·X)·W2)·W1)`.
pub fn gconv_explicit(tape: &mut Tape, x: Var, laplacian: Var, w1: Var, w2: Var) -> Result<Var> {
    let lx = tape.matmul(laplacian, x)?;
    let msg = tape.matmul(lx, w2)?;
    let sum = tape.add(x, msg)?;
    let pre = tape.matmul(sum, w1)?;
    tape.relu(pre)
}

/// Row-stochastic similarity adjacency over valid nodes. Rows of padded
/// nodes are zero and padded columns receive no weight.
pub fn implicit_adjacency(tape: &mut Tape, x: Var, mask: &Mask, mode: SimilarityMode) -> Result<Var> {
    if tape.shape(x).0 != mask.len() {
        return Err(GmaError::shape("implicit_adjacency", "mask length differs from node count"));
    }
    if count_valid(mask) == 0 {
        return Err(GmaError::EmptyMask {
            op: "implicit_adjacency",
            detail: "no valid nodes".into(),
        });
    }
    let dist = tape.squared_distances(x)?;
    let scores = match mode {
        SimilarityMode::Negated => tape.scale(dist, -1.0)?,
        SimilarityMode::Literal => dist,
    };
    tape.masked_softmax(scores, mask, mask)
}

/// `X' + (A·X')·W3`.
pub fn gconv_implicit(tape: &mut Tape, x: Var, adjacency: Var, w3: Var) -> Result<Var> {
    let ax = tape.matmul(adjacency, x)?;
    let msg = tape.matmul(ax, w3)?;
    tape.add(x, msg)
}
