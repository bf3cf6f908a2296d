//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records one expression as a flat list of nodes; calling
//! [`Tape::backward`] on a scalar node fills per-node gradient buffers in a
//! single reverse sweep. Tapes are rebuilt from scratch every training step
//! and confined to one thread while live.
//!
//! Shape mismatches and other contract violations panic with a message
//! naming the op. Gradients of every primitive are checked against central
//! finite differences in this module's tests.

use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

// Detach's input and AddConst's constant are carried for Debug output
// even though backward never touches them.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Detach(#[allow(dead_code)] usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// Broadcast multiply by a 1-element node.
    Scale { x: usize, s: usize },
    MulConst(usize, f64),
    AddConst(usize, #[allow(dead_code)] f64),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatRows(usize, usize),
    ConcatCols(usize, usize),
    SliceRows { x: usize, start: usize },
    MeanRows(usize),
    MaxRows { x: usize, argmax: Vec<usize> },
    SumAll(usize),
    MeanAll(usize),
    MaxAll { x: usize, argmax: usize },
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Square(usize),
    Abs(usize),
    Ln(usize),
    ClampMin(usize, f64),
    Gather { table: usize, ids: Vec<usize> },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
}

/// Recorded expression with forward values and, after [`Tape::backward`],
/// per-node gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
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

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node { rows, cols, data, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Forward value of a 1-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        assert_eq!(self.nodes[v.0].data.len(), 1, "scalar_value: node is not a scalar");
        self.nodes[v.0].data[0]
    }

    /// Gradient-tracked input node; its gradient is available after
    /// [`Tape::backward`] via [`Tape::grad`].
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data.clone(), Op::Leaf)
    }

    /// Untracked input node; receives no gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data.clone(), Op::Const)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(1, 1, vec![value], Op::Const)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Const)
    }

    /// Forward copy that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        self.push(r, c, self.nodes[x.0].data.clone(), Op::Detach(x.0))
    }

    fn binary_same_shape(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert_eq!((ra, ca), (rb, cb), "{name}: shape mismatch {ra}x{ca} vs {rb}x{cb}");
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(ra, ca, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    /// Multiply every entry of `x` by the 1-element node `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.nodes[s.0].data.len(), 1, "scale: scale factor must be a 1-element node");
        let sv = self.nodes[s.0].data[0];
        let (r, c) = self.dims(x);
        let data = self.nodes[x.0].data.iter().map(|&v| v * sv).collect();
        self.push(r, c, data, Op::Scale { x: x.0, s: s.0 })
    }

    pub fn mul_const(&mut self, x: Var, k: f64) -> Var {
        let (r, c) = self.dims(x);
        let data = self.nodes[x.0].data.iter().map(|&v| v * k).collect();
        self.push(r, c, data, Op::MulConst(x.0, k))
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        let (r, c) = self.dims(x);
        let data = self.nodes[x.0].data.iter().map(|&v| v + k).collect();
        self.push(r, c, data, Op::AddConst(x.0, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, ka) = self.dims(a);
        let (kb, n) = self.dims(b);
        assert_eq!(ka, kb, "matmul: inner dimensions {m}x{ka} vs {kb}x{n}");
        let data = tensor::matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, m, ka, n);
        self.push(m, n, data, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.nodes[x.0].data[i * c + j];
            }
        }
        self.push(c, r, data, Op::Transpose(x.0))
    }

    /// Stack `a` on top of `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert_eq!(ca, cb, "concat_rows: column mismatch {ca} vs {cb}");
        let mut data = self.nodes[a.0].data.clone();
        data.extend_from_slice(&self.nodes[b.0].data);
        self.push(ra + rb, ca, data, Op::ConcatRows(a.0, b.0))
    }

    /// Place `b`'s columns to the right of `a`'s.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        assert_eq!(ra, rb, "concat_cols: row mismatch {ra} vs {rb}");
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&self.nodes[a.0].data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&self.nodes[b.0].data[i * cb..(i + 1) * cb]);
        }
        self.push(ra, ca + cb, data, Op::ConcatCols(a.0, b.0))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (r, c) = self.dims(x);
        assert!(start < end && end <= r, "slice_rows: range {start}..{end} out of 0..{r}");
        let data = self.nodes[x.0].data[start * c..end * c].to_vec();
        self.push(end - start, c, data, Op::SliceRows { x: x.0, start })
    }

    /// Column-wise mean over rows, producing a `1 x cols` node.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        assert!(r > 0, "mean_rows: empty input");
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += self.nodes[x.0].data[i * c + j];
            }
        }
        for v in out.iter_mut() {
            *v /= r as f64;
        }
        self.push(1, c, out, Op::MeanRows(x.0))
    }

    /// Column-wise max over rows, producing a `1 x cols` node.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        assert!(r > 0, "max_rows: empty input");
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for i in 0..r {
            for j in 0..c {
                let v = self.nodes[x.0].data[i * c + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(1, c, out, Op::MaxRows { x: x.0, argmax })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(x.0))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].data.len();
        assert!(n > 0, "mean_all: empty input");
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push(1, 1, vec![s / n as f64], Op::MeanAll(x.0))
    }

    /// Global max; gradient routes to the first maximal entry.
    pub fn max_all(&mut self, x: Var) -> Var {
        let data = &self.nodes[x.0].data;
        assert!(!data.is_empty(), "max_all: empty input");
        let mut best = 0usize;
        for (i, &v) in data.iter().enumerate() {
            if v > data[best] {
                best = i;
            }
        }
        let v = data[best];
        self.push(1, 1, vec![v], Op::MaxAll { x: x.0, argmax: best })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(x);
        let data = self.nodes[x.0].data.iter().map(|&v| f(v)).collect();
        self.push(r, c, data, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, tensor::sigmoid, Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, tensor::softplus, Op::Softplus(x.0))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x.0))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x.0))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x.0))
    }

    pub fn clamp_min(&mut self, x: Var, min: f64) -> Var {
        self.unary(x, |v| v.max(min), Op::ClampMin(x.0, min))
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (r, c) = self.dims(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            assert!(id < r, "gather: id {id} out of range for table with {r} rows");
            data.extend_from_slice(&self.nodes[table.0].data[id * c..(id + 1) * c]);
        }
        self.push(ids.len(), c, data, Op::Gather { table: table.0, ids: ids.to_vec() })
    }

    /// Reverse sweep from a scalar loss. Fills gradients for every node;
    /// leaves untouched by the expression keep zero gradients.
    pub fn backward(&mut self, loss: Var) {
        let node = &self.nodes[loss.0];
        assert_eq!(node.data.len(), 1, "backward: loss must be a scalar, got {}x{}", node.rows, node.cols);
        self.grads = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        self.grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut self.grads[i]);
            match &self.nodes[i].op {
                Op::Leaf | Op::Const | Op::Detach(_) => {}
                Op::Add(a, b) => {
                    for (k, &gv) in g.iter().enumerate() {
                        self.grads[*a][k] += gv;
                        self.grads[*b][k] += gv;
                    }
                }
                Op::Sub(a, b) => {
                    for (k, &gv) in g.iter().enumerate() {
                        self.grads[*a][k] += gv;
                        self.grads[*b][k] -= gv;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for (k, &gv) in g.iter().enumerate() {
                        let av = self.nodes[a].data[k];
                        let bv = self.nodes[b].data[k];
                        self.grads[a][k] += gv * bv;
                        self.grads[b][k] += gv * av;
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    for (k, &gv) in g.iter().enumerate() {
                        let av = self.nodes[a].data[k];
                        let bv = self.nodes[b].data[k];
                        self.grads[a][k] += gv / bv;
                        self.grads[b][k] -= gv * av / (bv * bv);
                    }
                }
                Op::Scale { x, s } => {
                    let (x, s) = (*x, *s);
                    let sv = self.nodes[s].data[0];
                    let mut ds = 0.0;
                    for (k, &gv) in g.iter().enumerate() {
                        self.grads[x][k] += gv * sv;
                        ds += gv * self.nodes[x].data[k];
                    }
                    self.grads[s][0] += ds;
                }
                Op::MulConst(x, k) => {
                    let (x, kc) = (*x, *k);
                    for (idx, &gv) in g.iter().enumerate() {
                        self.grads[x][idx] += gv * kc;
                    }
                }
                Op::AddConst(x, _) => {
                    let x = *x;
                    for (idx, &gv) in g.iter().enumerate() {
                        self.grads[x][idx] += gv;
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let m = self.nodes[a].rows;
                    let k = self.nodes[a].cols;
                    let n = self.nodes[b].cols;
                    // dA += dC · Bᵀ ; dB += Aᵀ · dC
                    for i2 in 0..m {
                        for j in 0..n {
                            let gv = g[i2 * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                self.grads[a][i2 * k + p] += gv * self.nodes[b].data[p * n + j];
                                self.grads[b][p * n + j] += gv * self.nodes[a].data[i2 * k + p];
                            }
                        }
                    }
                }
                Op::Transpose(x) => {
                    let x = *x;
                    let (r, c) = (self.nodes[i].rows, self.nodes[i].cols);
                    // node is c_x rows transposed: r = cols(x), c = rows(x)
                    for i2 in 0..r {
                        for j in 0..c {
                            self.grads[x][j * r + i2] += g[i2 * c + j];
                        }
                    }
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let na = self.nodes[a].data.len();
                    for (k, &gv) in g.iter().enumerate() {
                        if k < na {
                            self.grads[a][k] += gv;
                        } else {
                            self.grads[b][k - na] += gv;
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.nodes[a].cols;
                    let cb = self.nodes[b].cols;
                    let rows = self.nodes[a].rows;
                    for i2 in 0..rows {
                        for j in 0..ca {
                            self.grads[a][i2 * ca + j] += g[i2 * (ca + cb) + j];
                        }
                        for j in 0..cb {
                            self.grads[b][i2 * cb + j] += g[i2 * (ca + cb) + ca + j];
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let (x, start) = (*x, *start);
                    let c = self.nodes[x].cols;
                    for (k, &gv) in g.iter().enumerate() {
                        self.grads[x][start * c + k] += gv;
                    }
                }
                Op::MeanRows(x) => {
                    let x = *x;
                    let r = self.nodes[x].rows;
                    let c = self.nodes[x].cols;
                    for i2 in 0..r {
                        for j in 0..c {
                            self.grads[x][i2 * c + j] += g[j] / r as f64;
                        }
                    }
                }
                Op::MaxRows { x, argmax } => {
                    let x = *x;
                    let c = self.nodes[x].cols;
                    for (j, &row) in argmax.iter().enumerate() {
                        self.grads[x][row * c + j] += g[j];
                    }
                }
                Op::SumAll(x) => {
                    let x = *x;
                    for gv in self.grads[x].iter_mut() {
                        *gv += g[0];
                    }
                }
                Op::MeanAll(x) => {
                    let x = *x;
                    let n = self.nodes[x].data.len() as f64;
                    for gv in self.grads[x].iter_mut() {
                        *gv += g[0] / n;
                    }
                }
                Op::MaxAll { x, argmax } => {
                    self.grads[*x][*argmax] += g[0];
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    for (k, &gv) in g.iter().enumerate() {
                        let y = self.nodes[i].data[k];
                        self.grads[x][k] += gv * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    let x = *x;
                    for (k, &gv) in g.iter().enumerate() {
                        let y = self.nodes[i].data[k];
                        self.grads[x][k] += gv * (1.0 - y * y);
                    }
                }
                Op::Softplus(x) => {
                    let x = *x;
                    for (k, &gv) in g.iter().enumerate() {
                        self.grads[x][k] += gv * tensor::sigmoid(self.nodes[x].data[k]);
                    }
                }
                Op::Square(x) => {
                    let x = *x;
                    for (k, &gv) in g.iter().enumerate() {
                        self.grads[x][k] += gv * 2.0 * self.nodes[x].data[k];
                    }
                }
                Op::Abs(x) => {
                    let x = *x;
                    for (k, &gv) in g.iter().enumerate() {
                        let v = self.nodes[x].data[k];
                        self.grads[x][k] += gv * if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
                    }
                }
                Op::Ln(x) => {
                    let x = *x;
                    for (k, &gv) in g.iter().enumerate() {
                        self.grads[x][k] += gv / self.nodes[x].data[k];
                    }
                }
                Op::ClampMin(x, min) => {
                    let (x, min) = (*x, *min);
                    for (k, &gv) in g.iter().enumerate() {
                        if self.nodes[x].data[k] >= min {
                            self.grads[x][k] += gv;
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    let table = *table;
                    let c = self.nodes[table].cols;
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            self.grads[table][id * c + j] += g[row * c + j];
                        }
                    }
                }
            }
            self.grads[i] = g;
        }
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        assert!(!self.grads.is_empty(), "grad: call backward first");
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.grads[v.0].clone())
    }
}

/// Loss value and per-parameter gradients of a recorded expression.
///
/// `build` receives leaf handles aligned with `params`; parameters the
/// expression never touches map to zero gradients.
pub fn gradients<F>(params: &[Tensor], build: F) -> (f64, Vec<Tensor>)
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = build(&mut tape, &leaves);
    tape.backward(loss);
    let value = tape.scalar_value(loss);
    (value, leaves.iter().map(|&v| tape.grad(v)).collect())
}

/// Max relative disagreement between analytic gradients and central finite
/// differences with step `h`, over every element of every parameter:
/// `|analytic − central| / max(1, |analytic|)`.
///
/// The builder must be deterministic; seed any randomness outside it.
pub fn finite_diff_check<F>(params: &[Tensor], h: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    assert!(h > 0.0, "finite_diff_check: h must be positive");
    let (_, analytic) = gradients(params, &build);

    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        let loss = build(&mut tape, &leaves);
        tape.scalar_value(loss)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        for k in 0..params[p].numel() {
            let orig = work[p].data[k];
            work[p].data[k] = orig + h;
            let up = eval(&work);
            work[p].data[k] = orig - h;
            let down = eval(&work);
            work[p].data[k] = orig;
            let central = (up - down) / (2.0 * h);
            let a = analytic[p].data[k];
            let err = (a - central).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_gradient_at_three() {
        // loss = x·x at x = 3 → d/dx = 6
        let x = Tensor::scalar(3.0);
        let (value, grads) = gradients(&[x], |t, l| {
            let sq = t.mul(l[0], l[0]);
            t.sum_all(sq)
        });
        assert!((value - 9.0).abs() < 1e-12);
        assert!((grads[0].data[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let x = Tensor::scalar(0.0);
        let (value, grads) = gradients(&[x], |t, l| {
            let s = t.sigmoid(l[0]);
            t.sum_all(s)
        });
        assert!((value - 0.5).abs() < 1e-15);
        assert!((grads[0].data[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let x = Tensor::scalar(2.0);
        let unused = Tensor::matrix(2, 2, vec![1.0; 4]);
        let (_, grads) = gradients(&[x, unused], |t, l| {
            let sq = t.square(l[0]);
            t.sum_all(sq)
        });
        assert!(grads[1].data.iter().all(|&g| g == 0.0));
        assert_eq!(grads[1].shape, vec![2, 2]);
    }

    #[test]
    #[should_panic(expected = "loss must be a scalar")]
    fn non_scalar_loss_panics() {
        let x = Tensor::matrix(2, 2, vec![1.0; 4]);
        gradients(&[x], |t, l| t.square(l[0]));
    }

    #[test]
    #[should_panic(expected = "matmul: inner dimensions")]
    fn matmul_shape_mismatch_names_op() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]);
        let b = Tensor::matrix(2, 2, vec![0.0; 4]);
        let mut t = Tape::new();
        let va = t.leaf(&a);
        let vb = t.leaf(&b);
        t.matmul(va, vb);
    }

    #[test]
    fn linear_function_is_exact_under_finite_differences() {
        // a·x is linear, so central differences are exact up to rounding.
        let x = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]);
        let err = finite_diff_check(&[x], 1e-5, |t, l| {
            let a = Tensor::matrix(1, 3, vec![3.0, -2.0, 0.25]);
            let ca = t.constant(&a);
            let prod = t.mul(ca, l[0]);
            t.sum_all(prod)
        });
        assert!(err <= 1e-10, "linear finite-diff error {err}");
    }

    /// Every primitive op against central finite differences on random
    /// inputs in [-2, 2], 100 seeded trials spread across the op set.
    #[test]
    fn primitive_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let r = 2 + (trial % 3);
            let c = 2 + (trial % 2);
            let rand_mat = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
                Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
            };
            let a = rand_mat(&mut rng, r, c);
            let b = rand_mat(&mut rng, r, c);
            let m = rand_mat(&mut rng, c, r);
            let s = Tensor::scalar(rng.gen_range(0.5..2.0));
            // Keep divisors and log inputs away from zero.
            let pos = Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(0.5..2.0)).collect());
            let params = vec![a, b, m, s, pos];
            let which = trial % 14;
            let err = finite_diff_check(&params, 1e-5, |t, l| {
                let (a, b, m, s, pos) = (l[0], l[1], l[2], l[3], l[4]);
                let expr = match which {
                    0 => t.add(a, b),
                    1 => t.sub(a, b),
                    2 => t.mul(a, b),
                    3 => t.div(a, pos),
                    4 => t.matmul(a, m),
                    5 => t.sigmoid(a),
                    6 => t.tanh(a),
                    7 => t.softplus(a),
                    8 => t.square(a),
                    9 => t.scale(a, s),
                    10 => t.concat_rows(a, b),
                    11 => {
                        let at = t.transpose(a);
                        t.concat_cols(at, at)
                    }
                    12 => t.ln(pos),
                    13 => {
                        let g = t.gather(a, &[1, 0, 1]);
                        t.mul_const(g, 1.5)
                    }
                    _ => unreachable!(),
                };
                let sq = t.square(expr);
                t.mean_all(sq)
            });
            assert!(err <= 1e-5, "op {which} trial {trial}: finite-diff error {err}");
        }
    }

    #[test]
    fn reductions_and_slices_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let err = finite_diff_check(&[x], 1e-5, |t, l| {
                let sl = t.slice_rows(l[0], 1, 4);
                let mr = t.mean_rows(sl);
                let mx = t.max_rows(sl);
                let cat = t.concat_cols(mr, mx);
                let sq = t.square(cat);
                t.sum_all(sq)
            });
            assert!(err <= 1e-5, "trial {trial}: error {err}");
        }
    }

    #[test]
    fn two_layer_perceptron_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::matrix(1, 4, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w1 = Tensor::uniform_init(4, 5, &mut rng);
        let b1 = Tensor::matrix(1, 5, (0..5).map(|_| rng.gen_range(-0.1..0.1)).collect());
        let w2 = Tensor::uniform_init(5, 1, &mut rng);
        let b2 = Tensor::matrix(1, 1, vec![rng.gen_range(-0.1..0.1)]);
        let params = vec![x, w1, b1, w2, b2];
        let err = finite_diff_check(&params, 1e-5, |t, l| {
            let h = t.matmul(l[0], l[1]);
            let h = t.add(h, l[2]);
            let h = t.tanh(h);
            let o = t.matmul(h, l[3]);
            let o = t.add(o, l[4]);
            let o = t.sigmoid(o);
            t.sum_all(o)
        });
        assert!(err <= 1e-5, "perceptron finite-diff error {err}");
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        // grad(a·f + b·g) = a·grad(f) + b·grad(g)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::matrix(2, 2, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (a, b) = (1.75, -0.5);
        let f = |t: &mut Tape, l: &[Var]| {
            let s = t.square(l[0]);
            t.sum_all(s)
        };
        let g = |t: &mut Tape, l: &[Var]| {
            let s = t.sigmoid(l[0]);
            t.mean_all(s)
        };
        let (_, gf) = gradients(std::slice::from_ref(&x), f);
        let (_, gg) = gradients(std::slice::from_ref(&x), g);
        let (_, combined) = gradients(std::slice::from_ref(&x), |t, l| {
            let lf = f(t, l);
            let lg = g(t, l);
            let lf = t.mul_const(lf, a);
            let lg = t.mul_const(lg, b);
            t.add(lf, lg)
        });
        for k in 0..4 {
            let expect = a * gf[0].data[k] + b * gg[0].data[k];
            assert!((combined[0].data[k] - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let x = Tensor::scalar(2.0);
        let (value, grads) = gradients(&[x], |t, l| {
            let frozen = t.detach(l[0]);
            let live = t.square(l[0]);
            let prod = t.mul(frozen, live);
            t.sum_all(prod)
        });
        // loss = c·x² with c frozen at 2 → d/dx = 2·c·x = 8, not 3x² = 12.
        assert!((value - 8.0).abs() < 1e-12);
        assert!((grads[0].data[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn max_all_routes_gradient_to_argmax() {
        let x = Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]);
        let (value, grads) = gradients(&[x], |t, l| t.max_all(l[0]));
        assert_eq!(value, 5.0);
        assert_eq!(grads[0].data, vec![0.0, 1.0, 0.0, 0.0]);
    }
}
