//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Every operation appends a node holding its output value and the inputs
//! it consumed. [`Tape::backward`] walks the nodes in reverse order, so an
//! operation's adjoint is only computed after every consumer of its output
//! has contributed.
//!
//! ```
//! use gma::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(&Tensor::row(&[3.0]).with_requires_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

use rand::Rng;

use super::tensor::{matmul_a_bt, matmul_at_b, Mask, Tensor};
use crate::error::{GmaError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    MaxOverRows { x: Var, argmax: Vec<usize> },
    GatherRows { x: Var, index: Vec<Option<usize>> },
    SelectRows { a: Var, b: Var, take_a: Vec<bool> },
    Sum(Var),
    ScaleElements { x: Var, factors: Vec<f64> },
    SquaredDistances(Var),
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. It is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        let mut value = t.clone();
        value.zero_grad();
        self.push_unchecked(value, Op::Leaf, rg)
    }

    /// Adds a tensor that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = t.with_requires_grad(false);
        self.push_unchecked(t, Op::Leaf, false)
    }

    /// Adds a trainable tensor regardless of its `requires_grad` flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone().with_requires_grad(true);
        value.zero_grad();
        self.push_unchecked(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The branch each piecewise op took: the sign of every relu input and
    /// the row chosen by every max. Two evaluations with equal patterns lie
    /// on the same smooth piece of the recorded function.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).data().iter().map(|&v| usize::from(v > 0.0))),
                Op::MaxOverRows { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(GmaError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GmaError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push("transpose", out, Op::Transpose(a), rg)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.rows(), va.cols(), data).expect("shape checked by caller")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push("add", out, Op::Add(a, b), rg)
    }

    /// `a[m×n] + bias[1×n]` with the bias added to every row.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let sb = self.shape(bias);
        if sb != (1, n) {
            return Err(GmaError::shape("add_row_broadcast", format!("bias {sb:?} for {m}x{n}")));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(&[a, bias]);
        self.push("add_row_broadcast", out, Op::AddRowBroadcast(a, bias), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push("sub", out, Op::Sub(a, b), rg)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push("scale", out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push("relu", out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push("sigmoid", out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push("tanh", out, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push("exp", out, Op::Exp(a), rg)
    }

    /// Row-wise softmax. Entries where `mask` is false come out as exactly
    /// zero and do not take part in the normalization. A row with no
    /// unmasked entries is an error.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (m, n) = self.shape(x);
        let keep: Vec<bool> = match mask {
            Some(mk) => {
                if mk.shape() != (m, n) {
                    return Err(GmaError::shape("softmax_rows", format!("mask {:?} for {m}x{n}", mk.shape())));
                }
                mk.data().iter().map(|&v| v != 0.0).collect()
            }
            None => vec![true; m * n],
        };
        let out = softmax_rows_values(self.value(x), &keep, None)?;
        let rg = self.rg(&[x]);
        self.push("softmax_rows", out, Op::SoftmaxRows(x), rg)
    }

    /// Softmax over columns `j` with `col_mask[j]` for every row `i` with
    /// `row_mask[i]`. Rows with `row_mask[i] == false` come out all zero.
    pub fn masked_softmax(&mut self, x: Var, row_mask: &Mask, col_mask: &Mask) -> Result<Var> {
        let (m, n) = self.shape(x);
        if row_mask.len() != m || col_mask.len() != n {
            return Err(GmaError::shape(
                "masked_softmax",
                format!("masks of length {}/{} for {m}x{n}", row_mask.len(), col_mask.len()),
            ));
        }
        let keep: Vec<bool> = (0..m * n).map(|idx| col_mask[idx % n]).collect();
        let out = softmax_rows_values(self.value(x), &keep, Some(row_mask))?;
        let rg = self.rg(&[x]);
        self.push("masked_softmax", out, Op::SoftmaxRows(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ma, pa), (mb, qb)) = (self.shape(a), self.shape(b));
        if ma != mb {
            return Err(GmaError::shape("concat_cols", format!("{ma} rows vs {mb} rows")));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(ma * (pa + qb));
        for r in 0..ma {
            data.extend_from_slice(va.row_slice(r));
            data.extend_from_slice(vb.row_slice(r));
        }
        let out = Tensor::new(ma, pa + qb, data)?;
        let rg = self.rg(&[a, b]);
        self.push("concat_cols", out, Op::ConcatCols(a, b), rg)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.stack_rows(&[a, b])
    }

    /// Stacks any number of blocks with equal column counts vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(GmaError::InvalidArgument("stack_rows of zero blocks".into()));
        };
        let n = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != n {
                return Err(GmaError::shape("concat_rows", format!("{c} columns vs {n}")));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let out = Tensor::new(rows, n, data)?;
        let rg = self.rg(parts);
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Column-wise maximum over the rows selected by `row_mask` (all rows
    /// when `None`). Ties resolve to the lowest row index, which is also
    /// where the adjoint is routed.
    pub fn max_over_rows(&mut self, x: Var, row_mask: Option<&Mask>) -> Result<Var> {
        let (m, n) = self.shape(x);
        if let Some(mk) = row_mask {
            if mk.len() != m {
                return Err(GmaError::shape("max_over_rows", format!("mask of length {} for {m} rows", mk.len())));
            }
        }
        let valid = |r: usize| row_mask.is_none_or(|mk| mk[r]);
        let v = self.value(x);
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut argmax = vec![usize::MAX; n];
        for r in (0..m).filter(|&r| valid(r)) {
            for c in 0..n {
                let val = v.get(r, c);
                if argmax[c] == usize::MAX || val > best[c] {
                    best[c] = val;
                    argmax[c] = r;
                }
            }
        }
        if m == 0 || (n > 0 && argmax[0] == usize::MAX) || !(0..m).any(valid) {
            return Err(GmaError::EmptyMask {
                op: "max_over_rows",
                detail: "no valid rows".into(),
            });
        }
        let out = Tensor::new(1, n, best)?;
        let rg = self.rg(&[x]);
        self.push("max_over_rows", out, Op::MaxOverRows { x, argmax }, rg)
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push("sum", out, Op::Sum(x), rg)
    }

    /// Row `i` of the output is row `index[i]` of `x`, or zeros for `None`.
    /// Rows may repeat; their adjoints add up.
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>]) -> Result<Var> {
        let (m, n) = self.shape(x);
        if let Some(bad) = index.iter().flatten().find(|&&r| r >= m) {
            return Err(GmaError::shape("gather_rows", format!("row {bad} of a {m}-row input")));
        }
        let v = self.value(x);
        let mut data = Vec::with_capacity(index.len() * n);
        for r in index {
            match r {
                Some(r) => data.extend_from_slice(v.row_slice(*r)),
                None => data.resize(data.len() + n, 0.0),
            }
        }
        let out = Tensor::new(index.len(), n, data)?;
        let rg = self.rg(&[x]);
        self.push("gather_rows", out, Op::GatherRows { x, index: index.to_vec() }, rg)
    }

    /// Row `i` comes from `a` where `take_a[i]`, otherwise from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, take_a: &[bool]) -> Result<Var> {
        self.same_shape("select_rows", a, b)?;
        let (m, n) = self.shape(a);
        if take_a.len() != m {
            return Err(GmaError::shape("select_rows", format!("selector of length {} for {m} rows", take_a.len())));
        }
        let mut data = Vec::with_capacity(m * n);
        for (r, &from_a) in take_a.iter().enumerate() {
            let src = if from_a { self.value(a) } else { self.value(b) };
            data.extend_from_slice(src.row_slice(r));
        }
        let out = Tensor::new(m, n, data)?;
        let rg = self.rg(&[a, b]);
        self.push("select_rows", out, Op::SelectRows { a, b, take_a: take_a.to_vec() }, rg)
    }

    /// Multiplies each row by 1 or 0 according to `mask`.
    pub fn mask_rows(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let (m, n) = self.shape(x);
        if mask.len() != m {
            return Err(GmaError::shape("mask_rows", format!("mask of length {} for {m} rows", mask.len())));
        }
        let factors: Vec<f64> = (0..m * n)
            .map(|idx| if mask[idx / n.max(1)] { 1.0 } else { 0.0 })
            .collect();
        self.scale_elements("mask_rows", x, factors)
    }

    fn scale_elements(&mut self, name: &'static str, x: Var, factors: Vec<f64>) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().zip(&factors).map(|(a, f)| a * f).collect();
        let out = Tensor::new(v.rows(), v.cols(), data)?;
        let rg = self.rg(&[x]);
        self.push(name, out, Op::ScaleElements { x, factors }, rg)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity in
    /// evaluation mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(GmaError::InvalidArgument(format!("dropout probability {p} not in [0,1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let factors = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.scale_elements("dropout", x, factors)
    }

    /// `D[i][j] = ‖x_i − x_j‖²` over the rows of `x`.
    pub fn squared_distances(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let k = v.rows();
        let mut out = Tensor::zeros(k, k);
        for i in 0..k {
            for j in (i + 1)..k {
                let dist: f64 = v
                    .row_slice(i)
                    .iter()
                    .zip(v.row_slice(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                out.set(i, j, dist);
                out.set(j, i, dist);
            }
        }
        let rg = self.rg(&[x]);
        self.push("squared_distances", out, Op::SquaredDistances(x), rg)
    }

    /// Summed binary cross-entropy between `sigmoid(logits)` and soft
    /// `targets`, using `log σ(y) = −softplus(−y)` for stability.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        if v.len() != targets.len() {
            return Err(GmaError::shape(
                "bce_with_logits",
                format!("{} logits vs {} targets", v.len(), targets.len()),
            ));
        }
        if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(GmaError::InvalidArgument(format!("target {t} outside [0,1]")));
        }
        let loss: f64 = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&y, &t)| t * softplus(-y) + (1.0 - t) * softplus(y))
            .sum();
        let rg = self.rg(&[logits]);
        self.push(
            "bce_with_logits",
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Reverse sweep from a `1×1` output. Gradients of leaves that require
    /// them are added to the leaf's gradient slot, so repeated calls
    /// accumulate until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(GmaError::shape("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g)?;
                continue;
            }
            self.propagate(idx, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    send(*a, matmul_a_bt(g, vb.data(), m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    send(*b, matmul_at_b(va.data(), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = out.shape();
                let gt = Tensor::new(r, c, g.to_vec()).expect("adjoint shape").transpose();
                send(*a, gt.into_data());
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::AddRowBroadcast(a, bias) => {
                send(*a, g.to_vec());
                let n = out.cols();
                let mut db = vec![0.0; n];
                for row in g.chunks(n.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                send(*bias, db);
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                send(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                send(*a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Sigmoid(a) => {
                send(*a, g.iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect());
            }
            Op::Tanh(a) => {
                send(*a, g.iter().zip(out.data()).map(|(g, t)| g * (1.0 - t * t)).collect());
            }
            Op::Exp(a) => send(*a, g.iter().zip(out.data()).map(|(g, e)| g * e).collect()),
            Op::SoftmaxRows(a) => {
                let n = out.cols().max(1);
                let mut dx = vec![0.0; g.len()];
                for ((yr, gr), dr) in out.data().chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, y), g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (g - dot);
                    }
                }
                send(*a, dx);
            }
            Op::ConcatCols(a, b) => {
                let p = self.shape(*a).1;
                let q = self.shape(*b).1;
                let w = p + q;
                let mut da = Vec::with_capacity(out.rows() * p);
                let mut db = Vec::with_capacity(out.rows() * q);
                for row in g.chunks(w.max(1)) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    send(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::MaxOverRows { x, argmax } => {
                let (m, n) = self.shape(*x);
                let mut dx = vec![0.0; m * n];
                for (c, &r) in argmax.iter().enumerate() {
                    dx[r * n + c] += g[c];
                }
                send(*x, dx);
            }
            Op::GatherRows { x, index } => {
                let (m, n) = self.shape(*x);
                let mut dx = vec![0.0; m * n];
                for (row, r) in g.chunks(n.max(1)).zip(index) {
                    if let Some(r) = r {
                        dx[r * n..(r + 1) * n].iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
                send(*x, dx);
            }
            Op::SelectRows { a, b, take_a } => {
                let n = out.cols().max(1);
                let mut da = g.to_vec();
                let mut db = g.to_vec();
                for (r, &from_a) in take_a.iter().enumerate() {
                    let zeroed = if from_a { &mut db } else { &mut da };
                    zeroed[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = 0.0);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::ScaleElements { x, factors } => {
                send(*x, g.iter().zip(factors).map(|(g, f)| g * f).collect());
            }
            Op::SquaredDistances(a) => {
                let x = self.value(*a);
                let (k, d) = x.shape();
                let mut dx = vec![0.0; k * d];
                for i in 0..k {
                    for j in 0..k {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (g[i * k + j] + g[j * k + i]);
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            dx[i * d + c] += w * (x.get(i, c) - x.get(j, c));
                        }
                    }
                }
                send(*a, dx);
            }
            Op::BceWithLogits { logits, targets } => {
                let y = self.value(*logits).data();
                send(*logits, y.iter().zip(targets).map(|(&y, t)| g[0] * (sigmoid(y) - t)).collect());
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_rows_values(x: &Tensor, keep: &[bool], row_mask: Option<&Mask>) -> Result<Tensor> {
    let (m, n) = x.shape();
    let mut out = Tensor::zeros(m, n);
    for r in 0..m {
        if row_mask.is_some_and(|rm| !rm[r]) {
            continue;
        }
        let row = x.row_slice(r);
        let keep_row = &keep[r * n..(r + 1) * n];
        let max = row
            .iter()
            .zip(keep_row)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(GmaError::EmptyMask {
                op: "softmax_rows",
                detail: format!("row {r} has no unmasked entries"),
            });
        }
        let mut total = 0.0;
        for c in 0..n {
            if keep_row[c] {
                let e = (row[c] - max).exp();
                out.set(r, c, e);
                total += e;
            }
        }
        for c in 0..n {
            out.set(r, c, out.get(r, c) / total);
        }
    }
    Ok(out)
}
