//! Reverse-mode differentiation tape over [`Tensor`] values.
//!
//! Every operation is recorded and evaluated eagerly. `backward` walks the
//! recorded ops in reverse and *emits the adjoint computation as new tape
//! ops*, so the returned gradients are themselves differentiable nodes.
//! Calling `backward` on an expression built from earlier gradients
//! differentiates through them — this is what lets the pulling loss, which
//! contains the input gradient of the network, be optimized exactly.
//!
//! One tape is built per training step and dropped afterwards. Single
//! threaded by design; determinism falls out of the fixed op order.

use std::rc::Rc;

use crate::tensor::Tensor;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tx(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Tx, Tx),
    Transpose(Tx),
    Add(Tx, Tx),
    Sub(Tx, Tx),
    Mul(Tx, Tx),
    Div(Tx, Tx),
    Neg(Tx),
    Scale(Tx, f64),
    AddScalar(Tx),
    Square(Tx),
    Sqrt(Tx),
    /// `softplus(beta*x)/beta`, evaluated in overflow-safe form.
    Softplus(Tx, f64),
    /// `1/(1+exp(-beta*x))`.
    Sigmoid(Tx, f64),
    /// R×C + 1×C row vector.
    AddRow(Tx, Tx),
    /// R×C ⊙ R×1 column broadcast.
    MulCol(Tx, Tx),
    /// R×C / R×1 column broadcast.
    DivCol(Tx, Tx),
    SumAll(Tx),
    /// R×C → 1×C.
    SumRows(Tx),
    /// R×C → R×1.
    SumCols(Tx),
    /// 1×1 → R×C.
    BcastScalar(Tx),
    /// 1×C → R×C.
    BcastRows(Tx),
    /// R×1 → R×C.
    BcastCols(Tx),
    ConcatCols(Tx, Tx),
    /// columns [start, start+len) of the input.
    SliceCols(Tx, usize),
    /// place input at column offset `start` inside `total` zero columns.
    PadCols(Tx, usize),
    GatherRows(Tx, Rc<Vec<usize>>),
    /// rows of the input accumulated into output rows at `idx`.
    ScatterAddRows(Tx, Rc<Vec<usize>>),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// The tape. Build values with the op methods, then call [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, x: Tx) -> &Tensor {
        &self.nodes[x.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Tx {
        #[cfg(debug_assertions)]
        {
            if !value.all_finite() {
                panic!("non-finite tensor produced by {op:?}");
            }
        }
        self.nodes.push(Node { op, value });
        Tx(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Tx {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, v: f64) -> Tx {
        self.leaf(Tensor::scalar(v))
    }

    pub fn matmul(&mut self, a: Tx, b: Tx) -> Tx {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Tx) -> Tx {
        let v = self.value(a).transposed();
        self.push(Op::Transpose(a), v)
    }

    pub fn add(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "div shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x / y).collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(Op::Div(a, b), v)
    }

    pub fn neg(&mut self, a: Tx) -> Tx {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows(), ta.cols(), ta.data().iter().map(|x| -x).collect());
        self.push(Op::Neg(a), v)
    }

    pub fn scale(&mut self, a: Tx, k: f64) -> Tx {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows(), ta.cols(), ta.data().iter().map(|x| x * k).collect());
        self.push(Op::Scale(a, k), v)
    }

    pub fn add_scalar(&mut self, a: Tx, c: f64) -> Tx {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows(), ta.cols(), ta.data().iter().map(|x| x + c).collect());
        self.push(Op::AddScalar(a), v)
    }

    pub fn square(&mut self, a: Tx) -> Tx {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows(), ta.cols(), ta.data().iter().map(|x| x * x).collect());
        self.push(Op::Square(a), v)
    }

    pub fn sqrt(&mut self, a: Tx) -> Tx {
        let ta = self.value(a);
        let v = Tensor::from_vec(ta.rows(), ta.cols(), ta.data().iter().map(|x| x.sqrt()).collect());
        self.push(Op::Sqrt(a), v)
    }

    pub fn softplus(&mut self, a: Tx, beta: f64) -> Tx {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|&x| {
                let t = beta * x;
                (t.max(0.0) + (-t.abs()).exp().ln_1p()) / beta
            })
            .collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(Op::Softplus(a, beta), v)
    }

    pub fn sigmoid(&mut self, a: Tx, beta: f64) -> Tx {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|&x| {
                let t = beta * x;
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(Op::Sigmoid(a, beta), v)
    }

    pub fn add_row(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(tb.rows(), 1, "add_row rhs must be a row vector");
        assert_eq!(ta.cols(), tb.cols(), "add_row width mismatch");
        let mut v = ta.clone();
        for r in 0..v.rows() {
            for c in 0..v.cols() {
                let x = v.get(r, c) + tb.get(0, c);
                v.set(r, c, x);
            }
        }
        self.push(Op::AddRow(a, b), v)
    }

    pub fn mul_col(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(tb.cols(), 1, "mul_col rhs must be a column vector");
        assert_eq!(ta.rows(), tb.rows(), "mul_col height mismatch");
        let mut v = ta.clone();
        for r in 0..v.rows() {
            let k = tb.get(r, 0);
            for c in 0..v.cols() {
                let x = v.get(r, c) * k;
                v.set(r, c, x);
            }
        }
        self.push(Op::MulCol(a, b), v)
    }

    pub fn div_col(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(tb.cols(), 1, "div_col rhs must be a column vector");
        assert_eq!(ta.rows(), tb.rows(), "div_col height mismatch");
        let mut v = ta.clone();
        for r in 0..v.rows() {
            let k = tb.get(r, 0);
            for c in 0..v.cols() {
                let x = v.get(r, c) / k;
                v.set(r, c, x);
            }
        }
        self.push(Op::DivCol(a, b), v)
    }

    pub fn sum_all(&mut self, a: Tx) -> Tx {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, a: Tx) -> Tx {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_rows(&mut self, a: Tx) -> Tx {
        let ta = self.value(a);
        let mut v = Tensor::zeros(1, ta.cols());
        for r in 0..ta.rows() {
            for c in 0..ta.cols() {
                let x = v.get(0, c) + ta.get(r, c);
                v.set(0, c, x);
            }
        }
        self.push(Op::SumRows(a), v)
    }

    pub fn sum_cols(&mut self, a: Tx) -> Tx {
        let ta = self.value(a);
        let mut v = Tensor::zeros(ta.rows(), 1);
        for r in 0..ta.rows() {
            let mut s = 0.0;
            for c in 0..ta.cols() {
                s += ta.get(r, c);
            }
            v.set(r, 0, s);
        }
        self.push(Op::SumCols(a), v)
    }

    pub fn bcast_scalar(&mut self, a: Tx, rows: usize, cols: usize) -> Tx {
        let s = self.value(a).item();
        self.push(Op::BcastScalar(a), Tensor::filled(rows, cols, s))
    }

    pub fn bcast_rows(&mut self, a: Tx, rows: usize) -> Tx {
        let ta = self.value(a);
        assert_eq!(ta.rows(), 1, "bcast_rows input must be a row vector");
        let mut v = Tensor::zeros(rows, ta.cols());
        for r in 0..rows {
            for c in 0..ta.cols() {
                v.set(r, c, ta.get(0, c));
            }
        }
        self.push(Op::BcastRows(a), v)
    }

    pub fn bcast_cols(&mut self, a: Tx, cols: usize) -> Tx {
        let ta = self.value(a);
        assert_eq!(ta.cols(), 1, "bcast_cols input must be a column vector");
        let mut v = Tensor::zeros(ta.rows(), cols);
        for r in 0..ta.rows() {
            for c in 0..cols {
                v.set(r, c, ta.get(r, 0));
            }
        }
        self.push(Op::BcastCols(a), v)
    }

    pub fn concat_cols(&mut self, a: Tx, b: Tx) -> Tx {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows(), tb.rows(), "concat_cols height mismatch");
        let mut v = Tensor::zeros(ta.rows(), ta.cols() + tb.cols());
        for r in 0..ta.rows() {
            for c in 0..ta.cols() {
                v.set(r, c, ta.get(r, c));
            }
            for c in 0..tb.cols() {
                v.set(r, ta.cols() + c, tb.get(r, c));
            }
        }
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn slice_cols(&mut self, a: Tx, start: usize, len: usize) -> Tx {
        let ta = self.value(a);
        assert!(start + len <= ta.cols(), "slice_cols out of range");
        let mut v = Tensor::zeros(ta.rows(), len);
        for r in 0..ta.rows() {
            for c in 0..len {
                v.set(r, c, ta.get(r, start + c));
            }
        }
        self.push(Op::SliceCols(a, start), v)
    }

    pub fn pad_cols(&mut self, a: Tx, start: usize, total: usize) -> Tx {
        let ta = self.value(a);
        assert!(start + ta.cols() <= total, "pad_cols out of range");
        let mut v = Tensor::zeros(ta.rows(), total);
        for r in 0..ta.rows() {
            for c in 0..ta.cols() {
                v.set(r, start + c, ta.get(r, c));
            }
        }
        self.push(Op::PadCols(a, start), v)
    }

    pub fn gather_rows(&mut self, a: Tx, idx: Rc<Vec<usize>>) -> Tx {
        let ta = self.value(a);
        let mut v = Tensor::zeros(idx.len(), ta.cols());
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..ta.cols() {
                v.set(r, c, ta.get(i, c));
            }
        }
        self.push(Op::GatherRows(a, idx), v)
    }

    pub fn scatter_add_rows(&mut self, a: Tx, idx: Rc<Vec<usize>>, rows: usize) -> Tx {
        let ta = self.value(a);
        assert_eq!(ta.rows(), idx.len(), "scatter_add_rows index count mismatch");
        let mut v = Tensor::zeros(rows, ta.cols());
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..ta.cols() {
                let x = v.get(i, c) + ta.get(r, c);
                v.set(i, c, x);
            }
        }
        self.push(Op::ScatterAddRows(a, idx), v)
    }

    /// Reverse sweep from `y`, seeded with ones (the gradient of
    /// `sum(y)`; pass a scalar `y` for plain gradients).
    ///
    /// Returns one adjoint node per entry of `wrt` (`None` when `y` does
    /// not depend on it). The adjoints are ordinary tape nodes: build an
    /// expression from them and call `backward` again for second-order
    /// gradients.
    pub fn backward(&mut self, y: Tx, wrt: &[Tx]) -> Vec<Option<Tx>> {
        let n = self.nodes.len();
        // nodes whose subtree contains a wrt leaf; adjoints of anything
        // else are never requested, so skip building them
        let mut needed = vec![false; n];
        for &w in wrt {
            needed[w.0] = true;
        }
        for i in 0..n {
            let need = match &self.nodes[i].op {
                Op::Leaf => needed[i],
                Op::MatMul(a, b)
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b)
                | Op::Div(a, b)
                | Op::AddRow(a, b)
                | Op::MulCol(a, b)
                | Op::DivCol(a, b)
                | Op::ConcatCols(a, b) => needed[a.0] || needed[b.0],
                Op::Transpose(a)
                | Op::Neg(a)
                | Op::Scale(a, _)
                | Op::AddScalar(a)
                | Op::Square(a)
                | Op::Sqrt(a)
                | Op::Softplus(a, _)
                | Op::Sigmoid(a, _)
                | Op::SumAll(a)
                | Op::SumRows(a)
                | Op::SumCols(a)
                | Op::BcastScalar(a)
                | Op::BcastRows(a)
                | Op::BcastCols(a)
                | Op::SliceCols(a, _)
                | Op::PadCols(a, _)
                | Op::GatherRows(a, _)
                | Op::ScatterAddRows(a, _) => needed[a.0],
            };
            needed[i] = needed[i] || need;
        }

        let mut adj: Vec<Option<Tx>> = vec![None; n];
        let (yr, yc) = self.value(y).shape();
        let seed = self.leaf(Tensor::filled(yr, yc, 1.0));
        adj[y.0] = Some(seed);

        for i in (0..n).rev() {
            let go = match adj[i] {
                Some(g) => g,
                None => continue,
            };
            if !needed[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = Tx(i);
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if needed[a.0] {
                        let bt = self.transpose(b);
                        let da = self.matmul(go, bt);
                        self.accumulate(&mut adj, a, da);
                    }
                    if needed[b.0] {
                        let at = self.transpose(a);
                        let db = self.matmul(at, go);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::Transpose(a) => {
                    if needed[a.0] {
                        let da = self.transpose(go);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::Add(a, b) => {
                    if needed[a.0] {
                        self.accumulate(&mut adj, a, go);
                    }
                    if needed[b.0] {
                        self.accumulate(&mut adj, b, go);
                    }
                }
                Op::Sub(a, b) => {
                    if needed[a.0] {
                        self.accumulate(&mut adj, a, go);
                    }
                    if needed[b.0] {
                        let db = self.neg(go);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::Mul(a, b) => {
                    if needed[a.0] {
                        let da = self.mul(go, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if needed[b.0] {
                        let db = self.mul(go, a);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::Div(a, b) => {
                    if needed[a.0] {
                        let da = self.div(go, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if needed[b.0] {
                        let g_times_out = self.mul(go, out);
                        let q = self.div(g_times_out, b);
                        let db = self.neg(q);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::Neg(a) => {
                    if needed[a.0] {
                        let da = self.neg(go);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::Scale(a, k) => {
                    if needed[a.0] {
                        let da = self.scale(go, k);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::AddScalar(a) => {
                    if needed[a.0] {
                        self.accumulate(&mut adj, a, go);
                    }
                }
                Op::Square(a) => {
                    if needed[a.0] {
                        let ga = self.mul(go, a);
                        let da = self.scale(ga, 2.0);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::Sqrt(a) => {
                    if needed[a.0] {
                        let q = self.div(go, out);
                        let da = self.scale(q, 0.5);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::Softplus(a, beta) => {
                    if needed[a.0] {
                        let s = self.sigmoid(a, beta);
                        let da = self.mul(go, s);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::Sigmoid(a, beta) => {
                    if needed[a.0] {
                        // beta * s * (1 - s)
                        let neg_s = self.neg(out);
                        let one_minus = self.add_scalar(neg_s, 1.0);
                        let s1s = self.mul(out, one_minus);
                        let gs = self.mul(go, s1s);
                        let da = self.scale(gs, beta);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::AddRow(a, b) => {
                    if needed[a.0] {
                        self.accumulate(&mut adj, a, go);
                    }
                    if needed[b.0] {
                        let db = self.sum_rows(go);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::MulCol(a, b) => {
                    if needed[a.0] {
                        let da = self.mul_col(go, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if needed[b.0] {
                        let p = self.mul(go, a);
                        let db = self.sum_cols(p);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::DivCol(a, b) => {
                    if needed[a.0] {
                        let da = self.div_col(go, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if needed[b.0] {
                        let p = self.mul(go, out);
                        let sc = self.sum_cols(p);
                        let q = self.div(sc, b);
                        let db = self.neg(q);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::SumAll(a) => {
                    if needed[a.0] {
                        let (r, c) = self.value(a).shape();
                        let da = self.bcast_scalar(go, r, c);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::SumRows(a) => {
                    if needed[a.0] {
                        let r = self.value(a).rows();
                        let da = self.bcast_rows(go, r);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::SumCols(a) => {
                    if needed[a.0] {
                        let c = self.value(a).cols();
                        let da = self.bcast_cols(go, c);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::BcastScalar(a) => {
                    if needed[a.0] {
                        let da = self.sum_all(go);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::BcastRows(a) => {
                    if needed[a.0] {
                        let da = self.sum_rows(go);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::BcastCols(a) => {
                    if needed[a.0] {
                        let da = self.sum_cols(go);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(a).cols();
                    let cb = self.value(b).cols();
                    if needed[a.0] {
                        let da = self.slice_cols(go, 0, ca);
                        self.accumulate(&mut adj, a, da);
                    }
                    if needed[b.0] {
                        let db = self.slice_cols(go, ca, cb);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Op::SliceCols(a, start) => {
                    if needed[a.0] {
                        let total = self.value(a).cols();
                        let da = self.pad_cols(go, start, total);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::PadCols(a, start) => {
                    if needed[a.0] {
                        let len = self.value(a).cols();
                        let da = self.slice_cols(go, start, len);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::GatherRows(a, idx) => {
                    if needed[a.0] {
                        let rows = self.value(a).rows();
                        let da = self.scatter_add_rows(go, idx, rows);
                        self.accumulate(&mut adj, a, da);
                    }
                }
                Op::ScatterAddRows(a, idx) => {
                    if needed[a.0] {
                        let da = self.gather_rows(go, idx);
                        self.accumulate(&mut adj, a, da);
                    }
                }
            }
        }
        wrt.iter().map(|w| adj[w.0]).collect()
    }

    fn accumulate(&mut self, adj: &mut [Option<Tx>], target: Tx, grad: Tx) {
        adj[target.0] = Some(match adj[target.0] {
            Some(prev) => self.add(prev, grad),
            None => grad,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Central finite difference of `f` over the data of one leaf.
    fn fd_grad(
        build: &dyn Fn(&mut Graph, &Tensor) -> Tx,
        at: &Tensor,
        h: f64,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(at.len());
        for i in 0..at.len() {
            let mut plus = at.clone();
            plus.data_mut()[i] += h;
            let mut minus = at.clone();
            minus.data_mut()[i] -= h;
            let mut g1 = Graph::new();
            let y1 = build(&mut g1, &plus);
            let mut g2 = Graph::new();
            let y2 = build(&mut g2, &minus);
            out.push((g1.value(y1).item() - g2.value(y2).item()) / (2.0 * h));
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let scale = 1.0f64.max(x.abs()).max(y.abs());
            assert!(
                (x - y).abs() / scale < tol,
                "entry {i}: {x} vs {y}"
            );
        }
    }

    #[test]
    fn first_order_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x0 = Tensor::from_fn(3, 4, |_, _| rng.gen::<f64>() - 0.5);
        let build = |g: &mut Graph, x: &Tensor| -> Tx {
            let x = g.leaf(x.clone());
            let s = g.softplus(x, 2.0);
            let q = g.square(s);
            let t = g.sigmoid(x, 1.5);
            let m = g.mul(q, t);
            g.sum_all(m)
        };
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let s = g.softplus(x, 2.0);
        let q = g.square(s);
        let t = g.sigmoid(x, 1.5);
        let m = g.mul(q, t);
        let y = g.sum_all(m);
        let grad = g.backward(y, &[x])[0].unwrap();
        assert_close(g.value(grad).data(), &fd_grad(&build, &x0, 1e-6), 1e-7);
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let a0 = Tensor::from_fn(3, 5, |_, _| rng.gen::<f64>() - 0.5);
        let b0 = Tensor::from_fn(5, 2, |_, _| rng.gen::<f64>() - 0.5);
        let b0c = b0.clone();
        let build = move |g: &mut Graph, a: &Tensor| -> Tx {
            let a = g.leaf(a.clone());
            let b = g.leaf(b0c.clone());
            let c = g.matmul(a, b);
            let s = g.square(c);
            g.sum_all(s)
        };
        let mut g = Graph::new();
        let a = g.leaf(a0.clone());
        let b = g.leaf(b0.clone());
        let c = g.matmul(a, b);
        let s = g.square(c);
        let y = g.sum_all(s);
        let grads = g.backward(y, &[a, b]);
        let ga = grads[0].unwrap();
        assert_close(g.value(ga).data(), &fd_grad(&build, &a0, 1e-6), 1e-7);
    }

    #[test]
    fn second_order_through_gradient() {
        // y = sum(x^3); dy/dx = 3x^2; z = sum((dy/dx)^2) = sum(9 x^4)
        // dz/dx = 36 x^3
        let x0 = Tensor::from_vec(1, 3, vec![0.7, -1.2, 0.4]);
        let mut g = Graph::new();
        let x = g.leaf(x0.clone());
        let x2 = g.square(x);
        let x3 = g.mul(x2, x);
        let y = g.sum_all(x3);
        let dx = g.backward(y, &[x])[0].unwrap();
        let dx2 = g.square(dx);
        let z = g.sum_all(dx2);
        let ddx = g.backward(z, &[x])[0].unwrap();
        for i in 0..3 {
            let v = x0.data()[i];
            let expect = 36.0 * v * v * v;
            assert!((g.value(ddx).data()[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn second_order_with_matmul_and_activation() {
        // scalar pipeline with a weight matrix; checks d/dW of an
        // expression containing dy/dx, against finite differences
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let w0 = Tensor::from_fn(3, 3, |_, _| rng.gen::<f64>() - 0.5);
        let x0 = Tensor::from_fn(2, 3, |_, _| rng.gen::<f64>() - 0.5);
        let x0c = x0.clone();
        let build = move |g: &mut Graph, w: &Tensor| -> Tx {
            let w = g.leaf(w.clone());
            let x = g.leaf(x0c.clone());
            let h = g.matmul(x, w);
            let a = g.softplus(h, 1.0);
            let y = g.sum_all(a);
            let gx = g.backward(y, &[x])[0].unwrap();
            let gsq = g.square(gx);
            g.sum_all(gsq)
        };
        let mut g = Graph::new();
        let w = g.leaf(w0.clone());
        let x = g.leaf(x0.clone());
        let h = g.matmul(x, w);
        let a = g.softplus(h, 1.0);
        let y = g.sum_all(a);
        let gx = g.backward(y, &[x])[0].unwrap();
        let gsq = g.square(gx);
        let z = g.sum_all(gsq);
        let dw = g.backward(z, &[w])[0].unwrap();
        assert_close(g.value(dw).data(), &fd_grad(&build, &w0, 1e-6), 5e-6);
    }

    #[test]
    fn gather_scatter_round_trip_gradient() {
        let x0 = Tensor::from_vec(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let idx = Rc::new(vec![2usize, 0, 2]);
        let mut g = Graph::new();
        let x = g.leaf(x0);
        let picked = g.gather_rows(x, idx);
        let sq = g.square(picked);
        let y = g.sum_all(sq);
        let dx = g.backward(y, &[x])[0].unwrap();
        // row 2 picked twice -> grad 2*2*x, row 0 once, rows 1,3 zero
        assert_eq!(g.value(dx).data(), &[2.0, 4.0, 0.0, 0.0, 4.0 * 5.0, 4.0 * 6.0, 0.0, 0.0]);
    }

    #[test]
    fn unrelated_leaf_gets_none() {
        let mut g = Graph::new();
        let a = g.scalar(2.0);
        let b = g.scalar(3.0);
        let y = g.square(a);
        let grads = g.backward(y, &[a, b]);
        assert!(grads[0].is_some());
        assert!(grads[1].is_none());
    }
}
