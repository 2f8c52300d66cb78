//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records operations as they execute (Wengert-tape style); node
//! creation order is a topological order, so the backward pass is a single
//! reverse sweep. Graphs are rebuilt per loss evaluation and dropped after
//! gradients are extracted — parameters live outside the graph and are leased
//! in as leaf nodes.

use crate::error::{Error, Result};
use crate::tensor::{matmul_a_bt_acc, matmul_at_b_acc, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `[m, n] + [1, n]` broadcast over rows.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Elementwise minimum; ties route gradient to the first argument.
    MinElem(Var, Var),
    /// `[1, 1] * [m, n]` broadcast.
    MulBroadcast(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Softplus(Var),
    /// Clamp with zero gradient outside `[lo, hi]`.
    Clamp(Var, f64, f64),
    Detach,
    ConcatCols(Vec<Var>),
    /// Columns `[start, end)`.
    SliceCols(Var, usize, usize),
    /// `[m, n] -> [m, 1]` row sums.
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-evaluation computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients extracted from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, zeros if no gradient flowed.
    pub fn get(&self, v: Var, graph: &Graph) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let val = graph.value(v);
                Tensor::zeros(val.rows(), val.cols())
            }
        }
    }

    pub fn get_opt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite values from {:?}", op);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf with no gradient tracking.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Leaf that participates in differentiation. The tensor is cloned in;
    /// the caller keeps ownership of the original parameter storage.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(xv.cols(), bv.cols(), "bias width mismatch");
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                out.data_mut()[i * n + j] = xv.data()[i * n + j] + bv.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(out, Op::AddBias(x, bias), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), f64::min);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MinElem(a, b), rg)
    }

    /// Broadcast-multiply a `[1, 1]` scalar node over a matrix node.
    pub fn mul_broadcast(&mut self, scalar: Var, x: Var) -> Var {
        let s = self.value(scalar).scalar_value();
        let value = self.value(x).map(|v| s * v);
        let rg = self.rg(scalar) || self.rg(x);
        self.push(value, Op::MulBroadcast(scalar, x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| -v);
        let rg = self.rg(x);
        self.push(value, Op::Neg(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| c * v);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(value, Op::AddScalar(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(value, Op::Exp(x), rg)
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        self.push(value, Op::Ln(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(value, Op::Square(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        // ln(1 + e^x), computed stably.
        let value = self.value(x).map(|v| {
            if v > 30.0 {
                v
            } else {
                (1.0 + v.exp()).ln()
            }
        });
        let rg = self.rg(x);
        self.push(value, Op::Softplus(x), rg)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(value, Op::Clamp(x, lo, hi), rg)
    }

    /// Value copy that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        let _ = x;
        self.push(value, Op::Detach, false)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(m, total);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), m, "concat_cols row mismatch");
            let w = t.cols();
            for i in 0..m {
                out.data_mut()[i * total + offset..i * total + offset + w]
                    .copy_from_slice(t.row_slice(i));
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let t = self.value(x);
        assert!(start <= end && end <= t.cols(), "slice out of range");
        let m = t.rows();
        let w = end - start;
        let mut out = Tensor::zeros(m, w);
        for i in 0..m {
            out.data_mut()[i * w..(i + 1) * w]
                .copy_from_slice(&t.row_slice(i)[start..end]);
        }
        let rg = self.rg(x);
        self.push(out, Op::SliceCols(x, start, end), rg)
    }

    /// Row-wise sum: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.rows();
        let mut out = Tensor::zeros(m, 1);
        for i in 0..m {
            out.data_mut()[i] = t.row_slice(i).iter().sum();
        }
        let rg = self.rg(x);
        self.push(out, Op::SumCols(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().sum();
        let n = t.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s / n), Op::MeanAll(x), rg)
    }

    /// Backward pass from a scalar loss node. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_t = self.value(loss);
        if !loss_t.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_t.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_op(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            None => grads[v.0] = Some(delta),
        }
    }

    fn backward_op(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    // dA = g @ B^T
                    let mut da = Tensor::zeros(m, k);
                    matmul_a_bt_acc(g.data(), bv.data(), da.data_mut(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    // dB = A^T @ g
                    let mut db = Tensor::zeros(k, n);
                    matmul_at_b_acc(av.data(), g.data(), db.data_mut(), m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.rg(*bias) {
                    let n = g.cols();
                    let mut db = Tensor::zeros(1, n);
                    for i in 0..g.rows() {
                        for j in 0..n {
                            db.data_mut()[j] += g.data()[i * n + j];
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |gi, bi| gi * bi));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |gi, ai| gi * ai));
                }
            }
            Op::MinElem(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let da = Tensor::new(
                        av.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&gi, (&x, &y))| if x <= y { gi } else { 0.0 })
                            .collect(),
                    );
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = Tensor::new(
                        bv.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(&gi, (&x, &y))| if y < x { gi } else { 0.0 })
                            .collect(),
                    );
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MulBroadcast(s, x) => {
                let sv = self.value(*s).scalar_value();
                if self.rg(*s) {
                    let ds: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&gi, &xi)| gi * xi)
                        .sum();
                    self.accumulate(grads, *s, Tensor::scalar(ds));
                }
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.map(|v| sv * v));
                }
            }
            Op::Neg(x) => self.accumulate(grads, *x, g.map(|v| -v)),
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| c * v));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    g.zip_map(xv, |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::Tanh(x) => {
                let yv = &self.nodes[idx].value;
                self.accumulate(grads, *x, g.zip_map(yv, |gi, yi| gi * (1.0 - yi * yi)));
            }
            Op::Exp(x) => {
                let yv = &self.nodes[idx].value;
                self.accumulate(grads, *x, g.zip_map(yv, |gi, yi| gi * yi));
            }
            Op::Ln(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, g.zip_map(xv, |gi, xi| gi / xi));
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, g.zip_map(xv, |gi, xi| 2.0 * gi * xi));
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    g.zip_map(xv, |gi, xi| gi / (1.0 + (-xi).exp())),
                );
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    g.zip_map(xv, |gi, xi| if xi >= lo && xi <= hi { gi } else { 0.0 }),
                );
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let total = g.cols();
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let m = g.rows();
                        let mut dp = Tensor::zeros(m, w);
                        for i in 0..m {
                            dp.data_mut()[i * w..(i + 1) * w]
                                .copy_from_slice(&g.row_slice(i)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += w;
                }
                debug_assert_eq!(offset, total);
            }
            Op::SliceCols(x, start, end) => {
                let xv = self.value(*x);
                let (m, n) = (xv.rows(), xv.cols());
                let w = end - start;
                let mut dx = Tensor::zeros(m, n);
                for i in 0..m {
                    dx.data_mut()[i * n + start..i * n + end]
                        .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SumCols(x) => {
                let xv = self.value(*x);
                let (m, n) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(m, n);
                for i in 0..m {
                    let gi = g.data()[i];
                    for j in 0..n {
                        dx.data_mut()[i * n + j] = gi;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                let gs = g.scalar_value();
                self.accumulate(grads, *x, Tensor::full(xv.rows(), xv.cols(), gs));
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                let gs = g.scalar_value() / xv.numel() as f64;
                self.accumulate(grads, *x, Tensor::full(xv.rows(), xv.cols(), gs));
            }
        }
    }
}
