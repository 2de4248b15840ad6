use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRow(Var),
    LogSoftmaxRow(Var),
    GatherRows(Var, Vec<usize>),
    PickPerRow(Var, Vec<usize>),
    Sum(Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records a computation for reverse-mode differentiation. Single-threaded; build
/// one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for x in row.iter_mut() {
        *x -= lse;
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf whose gradient is accumulated by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    /// Gradient of the last `backward` target with respect to `v`, if it has one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let t = &self.nodes[v.0].value;
        let data = self.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        Tensor::new(t.rows, t.cols, data)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows, ta.cols, tb.cols);
        let mut out = vec![0.0; m * n];
        matmul_into(&ta.data, &tb.data, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(m, n, out), Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.rows, ta.cols, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    /// Adds a `1 x n` row (typically a bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows != 1 || tr.cols != ta.cols {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut data = ta.data.clone();
        for chunk in data.chunks_mut(ta.cols.max(1)) {
            for (x, &b) in chunk.iter_mut().zip(&tr.data) {
                *x += b;
            }
        }
        let t = Tensor::new(ta.rows, ta.cols, data);
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Graph("concat of nothing".into()))?;
        let rows = self.value(*first).rows;
        for &p in parts {
            if self.value(p).rows != rows {
                return Err(shape_err("concat", self.value(*first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(rows, cols, data), Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start > end || end > ta.cols {
            return Err(shape_err("slice_cols", ta, &Tensor::zeros(start, end)));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(ta.rows * w);
        for r in 0..ta.rows {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let t = Tensor::new(ta.rows, w, data);
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceCols(a, start), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.rows, ta.cols, ta.data.iter().map(|&x| f(x)).collect());
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn softmax_row(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut data = ta.data.clone();
        for row in data.chunks_mut(ta.cols.max(1)) {
            log_softmax_in_place(row);
            row.iter_mut().for_each(|x| *x = x.exp());
        }
        let t = Tensor::new(ta.rows, ta.cols, data);
        let rg = self.rg(a);
        self.push(t, Op::SoftmaxRow(a), rg)
    }

    /// Numerically stable `log(softmax(a))`, row by row.
    pub fn log_softmax_row(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut data = ta.data.clone();
        for row in data.chunks_mut(ta.cols.max(1)) {
            log_softmax_in_place(row);
        }
        let t = Tensor::new(ta.rows, ta.cols, data);
        let rg = self.rg(a);
        self.push(t, Op::LogSoftmaxRow(a), rg)
    }

    /// Stacks `table[ids[i]]` into an `ids.len() x cols` matrix (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tt.rows) {
            return Err(Error::Graph(format!(
                "gather_rows: id {bad} out of range for {} rows",
                tt.rows
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * tt.cols);
        for &i in ids {
            data.extend_from_slice(tt.row(i));
        }
        let t = Tensor::new(ids.len(), tt.cols, data);
        let rg = self.rg(table);
        Ok(self.push(t, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Picks element `a[i, cols[i]]` from each row, giving a `rows x 1` column.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if cols.len() != ta.rows || cols.iter().any(|&c| c >= ta.cols) {
            return Err(shape_err("pick_per_row", ta, &Tensor::zeros(cols.len(), 1)));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| ta.at(r, c)).collect();
        let t = Tensor::new(ta.rows, 1, data);
        let rg = self.rg(a);
        Ok(self.push(t, Op::PickPerRow(a, cols.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Accumulates `d loss / d node` for every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph("backward already ran; call reset_grads first".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else { continue };
            self.propagate(idx, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // op is moved out while its inputs' gradients are updated
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).shape();
                let n = self.value(*b).cols;
                if self.rg(*a) {
                    let bv = self.value(*b).data.clone();
                    self.accumulate(*a, |ga| {
                        for i in 0..m {
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                let grow = &g[i * n..(i + 1) * n];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if self.rg(*b) {
                    let av = self.value(*a).data.clone();
                    self.accumulate(*b, |gb| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += x * y;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                self.accumulate(*b, |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o += x));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                self.accumulate(*b, |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Hadamard(a, b) => {
                let av = self.value(*a).data.clone();
                let bv = self.value(*b).data.clone();
                self.accumulate(*a, |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(&bv) {
                        *o += x * y;
                    }
                });
                self.accumulate(*b, |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(&av) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let cols = self.value(*a).cols.max(1);
                self.accumulate(*a, |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                self.accumulate(*row, |gr| {
                    for chunk in g.chunks(cols) {
                        gr.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
                    }
                });
            }
            Op::Concat(parts) => {
                let rows = self.value(parts[0]).rows;
                let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    self.accumulate(p, |gp| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(o, x)| *o += x);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.value(*a).shape();
                let w = self.value(Var(idx)).cols;
                self.accumulate(*a, |ga| {
                    for r in 0..rows {
                        let dst = &mut ga[r * cols + start..r * cols + start + w];
                        dst.iter_mut().zip(&g[r * w..(r + 1) * w]).for_each(|(o, x)| *o += x);
                    }
                });
            }
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Exp(a) => {
                let y = self.value(Var(idx)).data.clone();
                let local: fn(f64) -> f64 = match op {
                    Op::Sigmoid(_) => |y| y * (1.0 - y),
                    Op::Tanh(_) => |y| 1.0 - y * y,
                    _ => |y| y,
                };
                self.accumulate(*a, |ga| {
                    for ((o, x), &yv) in ga.iter_mut().zip(g).zip(&y) {
                        *o += x * local(yv);
                    }
                });
            }
            Op::Log(a) => {
                let xv = self.value(*a).data.clone();
                self.accumulate(*a, |ga| {
                    for ((o, x), &v) in ga.iter_mut().zip(g).zip(&xv) {
                        *o += x / v;
                    }
                });
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(*a, |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += k * x));
            }
            Op::SoftmaxRow(a) => {
                let y = self.value(Var(idx)).clone();
                self.accumulate(*a, |ga| {
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = &g[r * y.cols..(r + 1) * y.cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols {
                            ga[r * y.cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRow(a) => {
                let y = self.value(Var(idx)).clone();
                self.accumulate(*a, |ga| {
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = &g[r * y.cols..(r + 1) * y.cols];
                        let total: f64 = gr.iter().sum();
                        for c in 0..y.cols {
                            ga[r * y.cols + c] += gr[c] - yr[c].exp() * total;
                        }
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                let cols = self.value(*table).cols;
                self.accumulate(*table, |gt| {
                    for (r, &i) in ids.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        gt[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, x)| *o += x);
                    }
                });
            }
            Op::PickPerRow(a, cols) => {
                let width = self.value(*a).cols;
                self.accumulate(*a, |ga| {
                    for (r, &c) in cols.iter().enumerate() {
                        ga[r * width + c] += g[r];
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(*a, |ga| ga.iter_mut().for_each(|o| *o += g0));
            }
        }
        self.nodes[idx].op = op;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::row_vector(v.to_vec())
    }

    #[test]
    fn softmax_of_equal_logits() {
        let mut g = Graph::new();
        let x = g.constant(row(&[0.0, 0.0]));
        let s = g.softmax_row(x);
        assert_eq!(g.value(s).data, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(3));
        let x = g.constant(Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn log_prob_of_three_logits() {
        let z = [1.0, 2.0, 0.5];
        let mut g = Graph::new();
        let x = g.constant(row(&z));
        let s = g.softmax_row(x);
        let l = g.log(s);
        let p = g.pick_per_row(l, &[1]).unwrap();
        let hand = 2.0 - (1f64.exp() + 2f64.exp() + 0.5f64.exp()).ln();
        assert!((g.scalar_value(p) - hand).abs() < 1e-12);

        let ls = g.log_softmax_row(x);
        let p2 = g.pick_per_row(ls, &[1]).unwrap();
        assert!((g.scalar_value(p2) - hand).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(err.to_string(), "matmul: shape mismatch (2, 3) vs (2, 3)");
        let c = g.constant(Tensor::zeros(3, 2));
        assert!(g.add(a, c).unwrap_err().to_string().starts_with("add:"));
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.param(row(&[1.0, -2.0, 3.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(row(&[1.0, -2.0, 3.0]));
        let sq = g.hadamard(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rules() {
        let mut g = Graph::new();
        let x = g.param(row(&[1.0, 2.0]));
        assert!(g.backward(x).is_err(), "non-scalar loss");
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.backward(s).is_err(), "second backward without reset");
        g.reset_grads();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::new(2, 1, vec![1.0, 2.0]));
        let b = g.param(Tensor::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b]).unwrap();
        let w = g.constant(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let prod = g.hadamard(c, w).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();
        let upstream = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ga = g.grad(a).unwrap();
        let gb = g.grad(b).unwrap();
        assert_eq!(ga, &[1.0, 4.0]);
        assert_eq!(gb, &[2.0, 3.0, 5.0, 6.0]);
        let total: f64 = ga.iter().chain(gb).sum();
        assert_eq!(total, upstream.iter().sum::<f64>());
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::new();
        let c = g.constant(row(&[1.0, 2.0]));
        let x = g.param(row(&[3.0, 4.0]));
        let p = g.hadamard(c, x).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(2, 4, vec![100.0, -3.0, 0.2, 7.0, -50.0, -50.0, 1e-3, 2.0]));
        let s = g.softmax_row(x);
        for r in 0..2 {
            let row = g.value(s).row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }
}
