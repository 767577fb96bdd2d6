//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in construction order. Each record
//! only refers to earlier records, so the tape is topologically sorted by
//! construction and [`Graph::backward`] is a single reverse sweep. Gradients
//! are accumulated in a fixed order, which makes repeated backward passes
//! bit-identical.

use crate::error::{Error, Result};

use super::tensor::{dot, Tensor};

/// Row norms below this are rejected by [`Graph::row_l2_normalize`].
pub const EPSILON_NORM: f64 = 1e-12;

/// Tolerance on row sums for the probability-consuming operations.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index_for_tests(i: usize) -> Var {
        Var(i)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    RowL2Normalize(Var),
    LogSoftmaxRows(Var),
    EntropyRows(Var),
    KlRows(Var, Var),
    PickPerRow(Var, Vec<usize>),
    Diag(Var),
    SliceRows(Var, usize),
    ConcatRows(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
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

    /// Gradient of a leaf after [`Graph::backward`]. Only leaves with
    /// `requires_grad` carry one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Copies `v` into a fresh constant leaf. Nothing flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::MatMulT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("shape checked")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|x| f(*x)).collect();
        Tensor::new(t.rows(), t.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    /// Adds a `1×n` bias row to every row of an `m×n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: xs,
                right: bs,
            });
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..xs.0 {
            for (v, bb) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bb;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, rg, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.map(a, |x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::exp);
        let rg = self.rg(&[a]);
        self.push(value, rg, Op::Exp(a))
    }

    /// Projects each row onto the unit sphere. Rows with norm below
    /// [`EPSILON_NORM`] are an error.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = dot(row, row).sqrt();
            if n.is_infinite() {
                return Err(Error::Numeric(format!("row_l2_normalize: row {r} has infinite norm")));
            }
            if n.is_nan() || n < EPSILON_NORM {
                return Err(Error::DegenerateInput {
                    op: "row_l2_normalize",
                    row: r,
                    norm: n,
                });
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::RowL2Normalize(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let input = self.value(a);
        if !input.all_finite() {
            return Err(Error::Numeric("log_softmax_rows: non-finite input".into()));
        }
        let mut value = input.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let lse = logsumexp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::LogSoftmaxRows(a)))
    }

    /// Row-wise softmax, composed as `exp(log_softmax(a))`.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ls = self.log_softmax_rows(a)?;
        Ok(self.exp(ls))
    }

    /// Shannon entropy of each probability row, returned as an `m×1` column.
    pub fn entropy_rows(&mut self, p: Var) -> Result<Var> {
        let pt = self.value(p);
        check_prob_rows("entropy_rows", pt)?;
        let data = pt.iter_rows().map(entropy).collect();
        let value = Tensor::new(pt.rows(), 1, data)?;
        let rg = self.rg(&[p]);
        Ok(self.push(value, rg, Op::EntropyRows(p)))
    }

    /// `KL(p_r ‖ q_r)` for each row pair, returned as an `m×1` column.
    pub fn kl_rows(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_shape("kl_rows", p, q)?;
        let (pt, qt) = (self.value(p), self.value(q));
        check_prob_rows("kl_rows", pt)?;
        check_prob_rows("kl_rows", qt)?;
        let mut data = Vec::with_capacity(pt.rows());
        for r in 0..pt.rows() {
            let mut acc = 0.0;
            for (c, (&pv, &qv)) in pt.row(r).iter().zip(qt.row(r)).enumerate() {
                if pv > 0.0 {
                    if qv <= 0.0 {
                        return Err(Error::DivergenceUndefined {
                            op: "kl_rows",
                            row: r,
                            col: c,
                        });
                    }
                    acc += pv * (pv / qv).ln();
                }
            }
            data.push(acc);
        }
        let value = Tensor::new(pt.rows(), 1, data)?;
        let rg = self.rg(&[p, q]);
        Ok(self.push(value, rg, Op::KlRows(p, q)))
    }

    /// Selects `a[r][cols[r]]` for every row, giving an `m×1` column.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if cols.len() != t.rows() {
            return Err(Error::Dimension {
                op: "pick_per_row",
                left: t.shape(),
                right: (cols.len(), 1),
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= t.cols()) {
            return Err(Error::Contract(format!(
                "pick_per_row: column {bad} out of range for {} columns",
                t.cols()
            )));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let value = Tensor::new(t.rows(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::PickPerRow(a, cols.to_vec())))
    }

    /// Main diagonal of a square matrix as an `m×1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != t.cols() {
            return Err(Error::Dimension {
                op: "diag",
                left: t.shape(),
                right: (t.cols(), t.rows()),
            });
        }
        let data = (0..t.rows()).map(|i| t.get(i, i)).collect();
        let value = Tensor::new(t.rows(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::Diag(a)))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.rows() {
            return Err(Error::Contract(format!(
                "slice_rows: range {start}..{end} invalid for {} rows",
                t.rows()
            )));
        }
        let cols = t.cols();
        let data = t.data()[start * cols..end * cols].to_vec();
        let value = Tensor::new(end - start, cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, rg, Op::SliceRows(a, start)))
    }

    /// Stacks `a` above `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let value = Tensor::new(ta.rows() + tb.rows(), ta.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::ConcatRows(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Mean(a))
    }

    /// Propagates `d loss / d node` back to every leaf with `requires_grad`.
    ///
    /// Leaf gradients are overwritten, not accumulated across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                let (r, c) = node.value.shape();
                self.nodes[idx].grad = Some(Tensor::new(r, c, g)?);
                continue;
            }
            for (input, local) in self.local_grads(idx, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&local).for_each(|(a, l)| *a += l),
                    slot @ None => *slot = Some(local),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let (rows, cols) = out.shape();
        let gt = || Tensor::new(rows, cols, g.to_vec());
        let rg = |v: Var| self.nodes[v.0].requires_grad;

        let res = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let gm = gt()?;
                let mut v = Vec::new();
                if rg(*a) {
                    v.push((*a, gm.matmul_t(tb)?.into_data()));
                }
                if rg(*b) {
                    v.push((*b, ta.transpose().matmul(&gm)?.into_data()));
                }
                v
            }
            Op::MatMulT(a, b) => {
                // out = a bᵀ ⇒ da = g b, db = gᵀ a
                let (ta, tb) = (self.value(*a), self.value(*b));
                let gm = gt()?;
                let mut v = Vec::new();
                if rg(*a) {
                    v.push((*a, gm.matmul(tb)?.into_data()));
                }
                if rg(*b) {
                    v.push((*b, gm.transpose().matmul(ta)?.into_data()));
                }
                v
            }
            Op::Transpose(a) => vec![(*a, gt()?.transpose().into_data())],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::AddRowBias(x, bias) => {
                let mut db = vec![0.0; cols];
                for row in g.chunks_exact(cols) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                vec![(*x, g.to_vec()), (*bias, db)]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|x| x * s).collect())],
            Op::Tanh(a) => {
                let d = g.iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                vec![(*a, d)]
            }
            Op::Exp(a) => {
                let d = g.iter().zip(out.data()).map(|(gv, y)| gv * y).collect();
                vec![(*a, d)]
            }
            Op::RowL2Normalize(a) => {
                let x = self.value(*a);
                let mut d = Vec::with_capacity(g.len());
                for r in 0..rows {
                    let y = out.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let n = dot(x.row(r), x.row(r)).sqrt();
                    let yg = dot(y, gr);
                    d.extend(gr.iter().zip(y).map(|(gv, yv)| (gv - yv * yg) / n));
                }
                vec![(*a, d)]
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = Vec::with_capacity(g.len());
                for r in 0..rows {
                    let y = out.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let gsum: f64 = gr.iter().sum();
                    d.extend(gr.iter().zip(y).map(|(gv, yv)| gv - yv.exp() * gsum));
                }
                vec![(*a, d)]
            }
            Op::EntropyRows(p) => {
                let pt = self.value(*p);
                let pc = pt.cols();
                let mut d = Vec::with_capacity(pt.len());
                for (r, &gr) in g.iter().enumerate().take(pt.rows()) {
                    d.extend(pt.row(r).iter().map(|&pv| {
                        if pv > 0.0 {
                            -(pv.ln() + 1.0) * gr
                        } else {
                            0.0
                        }
                    }));
                }
                debug_assert_eq!(d.len(), pt.rows() * pc);
                vec![(*p, d)]
            }
            Op::KlRows(p, q) => {
                let (pt, qt) = (self.value(*p), self.value(*q));
                let mut dp = Vec::with_capacity(pt.len());
                let mut dq = Vec::with_capacity(pt.len());
                for (r, &gr) in g.iter().enumerate().take(pt.rows()) {
                    for (&pv, &qv) in pt.row(r).iter().zip(qt.row(r)) {
                        if pv > 0.0 {
                            dp.push(((pv / qv).ln() + 1.0) * gr);
                            dq.push(-pv / qv * gr);
                        } else {
                            dp.push(0.0);
                            dq.push(0.0);
                        }
                    }
                }
                vec![(*p, dp), (*q, dq)]
            }
            Op::PickPerRow(a, picked) => {
                let ac = self.value(*a).cols();
                let mut d = vec![0.0; self.value(*a).len()];
                for (r, &c) in picked.iter().enumerate() {
                    d[r * ac + c] = g[r];
                }
                vec![(*a, d)]
            }
            Op::Diag(a) => {
                let n = self.value(*a).cols();
                let mut d = vec![0.0; n * n];
                for i in 0..n {
                    d[i * n + i] = g[i];
                }
                vec![(*a, d)]
            }
            Op::SliceRows(a, start) => {
                let mut d = vec![0.0; self.value(*a).len()];
                let off = start * cols;
                d[off..off + g.len()].copy_from_slice(g);
                vec![(*a, d)]
            }
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).len();
                vec![(*a, g[..split].to_vec()), (*b, g[split..].to_vec())]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Mean(a) => {
                let n = self.value(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
        };
        Ok(res)
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn check_prob_rows(op: &'static str, t: &Tensor) -> Result<()> {
    for (r, row) in t.iter_rows().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract(format!(
                "{op}: row {r} is not a nonnegative finite vector"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Contract(format!(
                "{op}: row {r} sums to {s}, not 1"
            )));
        }
    }
    Ok(())
}
