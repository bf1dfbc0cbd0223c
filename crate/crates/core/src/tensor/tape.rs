use std::borrow::Cow;

use super::kernels::{matmul_nt_acc, matmul_tn_acc};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { src: Var, start: usize },
    GatherRows { src: Var, index: Vec<usize> },
    SoftmaxRows(Var),
    LayerNormRows { src: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in creation order (which is a topological
/// order) so [`Tape::backward`] can replay them in reverse.
///
/// Leaves may borrow their values for the lifetime `'p`, which lets model
/// parameters be placed on a fresh tape without copying.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * A * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Re-arms [`Tape::backward`] after it has been run once.
    pub fn reset(&mut self) {
        self.consumed = false;
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Trainable leaf holding its own value.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.owned(value, Op::Leaf, true)
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.owned(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.owned(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        Ok(self.owned(out, Op::Transpose(a), rg))
    }

    /// Elementwise sum of two equally shaped matrices.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o += v;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.owned(out, Op::Add(a, b), rg))
    }

    /// Adds the `1×n` row `row` to every row of `a: m×n`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: (m, n),
                right: self.shape(row),
            });
        }
        let r = &self.value(row).data;
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, v) in out.data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += v;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.owned(out, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a: m×n` elementwise by the `1×n` row `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(row) != (1, n) {
            return Err(TensorError::ShapeMismatch {
                op: "mul_row",
                left: (m, n),
                right: self.shape(row),
            });
        }
        let r = &self.value(row).data;
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, v) in out.data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o *= v;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.owned(out, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.scale_in_place(s);
        let rg = self.rg(&[a]);
        Ok(self.owned(out, Op::Scale(a, s), rg))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or(TensorError::EmptyInput { op: "concat_rows" })?;
        let cols = self.shape(first).1;
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
            rows += self.shape(p).0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let rg = self.rg(parts);
        Ok(self.owned(
            Tensor { rows, cols, data },
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or(TensorError::EmptyInput { op: "concat_cols" })?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
            cols += self.shape(p).1;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for i in 0..rows {
                out.data[i * cols + offset..i * cols + offset + v.cols].copy_from_slice(v.row(i));
            }
            offset += v.cols;
        }
        let rg = self.rg(parts);
        Ok(self.owned(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start + len > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: n,
            });
        }
        let src = self.value(a);
        let mut out = Tensor::zeros(m, len);
        for i in 0..m {
            out.data[i * len..(i + 1) * len].copy_from_slice(&src.row(i)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.owned(out, Op::SliceCols { src: a, start }, rg))
    }

    /// Rows of `a` picked by `index` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(a);
        let src = self.value(a);
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            if i >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: m,
                });
            }
            data.extend_from_slice(src.row(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.owned(
            Tensor {
                rows: index.len(),
                cols: n,
                data,
            },
            Op::GatherRows {
                src: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        let n = out.cols;
        for i in 0..out.rows {
            softmax_in_place(&mut out.data[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        Ok(self.owned(out, Op::SoftmaxRows(a), rg))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layernorm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        let n = out.cols;
        let mut inv_std = Vec::with_capacity(out.rows);
        for i in 0..out.rows {
            let row = &mut out.data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(&[a]);
        Ok(self.owned(out, Op::LayerNormRows { src: a, inv_std }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for x in &mut out.data {
            *x = gelu_parts(*x).0;
        }
        let rg = self.rg(&[a]);
        Ok(self.owned(out, Op::Gelu(a), rg))
    }

    /// Mean of all entries, as a `1×1` tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(TensorError::EmptyInput { op: "mean" });
        }
        let m = v.data.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.owned(Tensor::scalar(m), Op::Mean(a), rg))
    }

    /// Mean over rows of `-log softmax(logits_row)[target_row]`.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(logits);
        if targets.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_with_logits",
                left: (m, n),
                right: (targets.len(), 1),
            });
        }
        if m == 0 {
            return Err(TensorError::EmptyInput {
                op: "cross_entropy_with_logits",
            });
        }
        let mut probs = self.value(logits).clone();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy_with_logits",
                    index: t,
                    len: n,
                });
            }
            let row = &mut probs.data[i * n..(i + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[t];
            for x in row.iter_mut() {
                *x = (*x - log_z).exp();
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.owned(
            Tensor::scalar(total / m as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a `1×1` loss. Returns gradients for every node that
    /// requires them; leaves are the interesting ones.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TensorError::NotScalar { rows: r, cols: c });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.shape();
                let n = bv.cols;
                if wants(*a) {
                    let mut ga = Tensor::zeros(m, k);
                    matmul_nt_acc(&g.data, &bv.data, &mut ga.data, m, n, k);
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(k, n);
                    matmul_tn_acc(&av.data, &g.data, &mut gb.data, m, k, n);
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.transpose());
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[row.0], gr);
                }
            }
            Op::MulRow(a, row) => {
                let av = self.value(*a);
                let rv = self.value(*row);
                if wants(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(&rv.data) {
                            *o *= v;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for ((o, gv), xv) in gr.data.iter_mut().zip(g.row(i)).zip(av.row(i)) {
                            *o += gv * xv;
                        }
                    }
                    accumulate(&mut grads[row.0], gr);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    let mut ga = g.clone();
                    ga.scale_in_place(*s);
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if wants(*p) {
                        let data = g.data[offset * c..(offset + r) * c].to_vec();
                        accumulate(&mut grads[p.0], Tensor { rows: r, cols: c, data });
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.shape(*p);
                    if wants(*p) {
                        let mut gp = Tensor::zeros(r, c);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        accumulate(&mut grads[p.0], gp);
                    }
                    offset += c;
                }
            }
            Op::SliceCols { src, start } => {
                if wants(*src) {
                    let (r, c) = self.shape(*src);
                    let mut gs = Tensor::zeros(r, c);
                    for i in 0..r {
                        gs.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads[src.0], gs);
                }
            }
            Op::GatherRows { src, index } => {
                if wants(*src) {
                    let (r, c) = self.shape(*src);
                    let mut gs = Tensor::zeros(r, c);
                    for (k, &i) in index.iter().enumerate() {
                        for (o, v) in gs.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[src.0], gs);
                }
            }
            Op::SoftmaxRows(a) => {
                if wants(*a) {
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let y = out.row(i);
                        let gy = g.row(i);
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in ga.row_mut(i).iter_mut().zip(y).zip(gy) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::LayerNormRows { src, inv_std } => {
                if wants(*src) {
                    let n = g.cols as f64;
                    let mut gs = Tensor::zeros(g.rows, g.cols);
                    for (i, inv) in inv_std.iter().enumerate() {
                        let y = out.row(i);
                        let gy = g.row(i);
                        let mean_g = gy.iter().sum::<f64>() / n;
                        let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, yv), gv) in gs.row_mut(i).iter_mut().zip(y).zip(gy) {
                            *o = inv * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    accumulate(&mut grads[src.0], gs);
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    for (o, xv) in ga.data.iter_mut().zip(&x.data) {
                        *o *= gelu_parts(*xv).1;
                    }
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let (r, c) = self.shape(*a);
                    let s = g.data[0] / (r * c) as f64;
                    accumulate(&mut grads[a.0], Tensor::filled(r, c, s));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if wants(*logits) {
                    let m = targets.len() as f64;
                    let s = g.data[0] / m;
                    let mut gl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gl.row_mut(i)[t] -= 1.0;
                    }
                    gl.scale_in_place(s);
                    accumulate(&mut grads[logits.0], gl);
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.matmul(x, x).unwrap();
        assert_eq!(tape.value(y).item(), Some(9.0));
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(6.0));
    }

    #[test]
    fn backward_twice_needs_reset() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.scale(x, 3.0).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), TensorError::BackwardTwice);
        tape.reset();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), Some(3.0));
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let mut tape = Tape::new();
        assert_eq!(
            tape.backward(Var(0)).unwrap_err(),
            TensorError::EmptyTape
        );
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NotScalar { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 2));
        let y = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_n() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(1, 7, 0.3));
        for t in 0..7 {
            let l = tape.cross_entropy_with_logits(x, &[t]).unwrap();
            assert!((tape.value(l).item().unwrap() - 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_are_not_recorded_for_grad() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1.0));
        let b = tape.scale(a, 2.0).unwrap();
        assert!(!tape.requires_grad(b));
        let w = tape.leaf(Tensor::scalar(1.0));
        let c = tape.add(b, w).unwrap();
        let g = tape.backward(c).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(w).unwrap().item(), Some(1.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 3));
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
        let r = tape.leaf(Tensor::zeros(1, 2));
        assert!(tape.add_row(a, r).is_err());
        assert!(tape.gather_rows(a, &[2]).is_err());
        assert!(tape.slice_cols(a, 2, 2).is_err());
        assert!(tape.cross_entropy_with_logits(a, &[0]).is_err());
    }
}
