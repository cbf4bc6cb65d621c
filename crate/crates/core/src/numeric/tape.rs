//! Reverse-mode automatic differentiation over whole matrices.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the inputs needed by its backward rule. [`Tape::backward`]
//! walks the nodes once in reverse insertion order, which is a valid reverse
//! topological order because a node can only reference earlier nodes.
//!
//! ```
//! use casa_core::numeric::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap());
//! let sq = tape.hadamard(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).data(), &[2.0, -4.0]);
//! ```

use super::matrix::{dot, elu_plus_one, Matrix};
use super::NumericError;

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
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Transpose(Var),
    AddRowBroadcast(Var, Var),
    DivColBroadcast(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    EluPlusOne(Var),
    RowSoftmax(Var, f64),
    RowLogSoftmax(Var, f64),
    L2NormRows(Var),
    PairwiseDistances(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn try_get(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Hadamard(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    /// Adds the 1 x n row `bias` to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(NumericError::ShapeMismatch {
                op: "add_row_broadcast",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRowBroadcast(a, bias), &[a, bias]))
    }

    /// Divides row `i` of `a` by entry `i` of the column `denom`.
    pub fn div_col_broadcast(&mut self, a: Var, denom: Var) -> Result<Var, NumericError> {
        let (av, dv) = (self.value(a), self.value(denom));
        if dv.cols() != 1 || dv.rows() != av.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "div_col_broadcast",
                left: av.shape(),
                right: dv.shape(),
            });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let d = dv[(r, 0)];
            for v in value.row_mut(r) {
                *v /= d;
            }
        }
        Ok(self.push(value, Op::DivColBroadcast(a, denom), &[a, denom]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn elu_plus_one(&mut self, a: Var) -> Var {
        let value = self.value(a).map(elu_plus_one);
        self.push(value, Op::EluPlusOne(a), &[a])
    }

    pub fn row_softmax(&mut self, a: Var, temperature: f64) -> Var {
        let value = self.value(a).row_softmax(temperature);
        self.push(value, Op::RowSoftmax(a, temperature), &[a])
    }

    /// Row-wise log-softmax of `a / temperature`.
    pub fn row_log_softmax(&mut self, a: Var, temperature: f64) -> Var {
        let mut value = self.value(a).scale(1.0 / temperature);
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        self.push(value, Op::RowLogSoftmax(a, temperature), &[a])
    }

    pub fn l2_norm_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).l2_norm_rows();
        self.push(value, Op::L2NormRows(a), &[a])
    }

    /// `out[j][i] = ‖a_j − b_i‖₂` for rows of `a` (n x d) and `b` (m x d).
    ///
    /// The backward rule uses a zero subgradient where a distance is exactly 0.
    pub fn pairwise_distances(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(NumericError::ShapeMismatch {
                op: "pairwise_distances",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let value = pairwise_distance_matrix(av, bv);
        Ok(self.push(value, Op::PairwiseDistances(a, b), &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).mean());
        self.push(value, Op::Mean(a), &[a])
    }

    /// Column sums as a 1 x n row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_rows();
        self.push(value, Op::SumRows(a), &[a])
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericError> {
        let av = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.rows()) {
            return Err(NumericError::IndexOutOfRange { index: bad, len: av.rows() });
        }
        let value = av.select_rows(indices);
        Ok(self.push(value, Op::SelectRows(a, indices.to_vec()), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericError> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(NumericError::IndexOutOfRange { index: end, len: av.cols() });
        }
        let value = av.slice_cols(start, end);
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(NumericError::ShapeMismatch {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Propagates d(loss)/d(node) to every node that feeds `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumericError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.matmul_t(self.value(*b)).expect("matmul grad"));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, self.value(*a).t_matmul(g).expect("matmul grad"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate_if(grads, *a, || g.clone());
                self.accumulate_if(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate_if(grads, *a, || g.clone());
                self.accumulate_if(grads, *b, || g.scale(-1.0));
            }
            Op::Hadamard(a, b) => {
                self.accumulate_if(grads, *a, || g.hadamard(self.value(*b)).expect("shape"));
                self.accumulate_if(grads, *b, || g.hadamard(self.value(*a)).expect("shape"));
            }
            Op::Transpose(a) => self.accumulate_if(grads, *a, || g.transpose()),
            Op::AddRowBroadcast(a, bias) => {
                self.accumulate_if(grads, *a, || g.clone());
                self.accumulate_if(grads, *bias, || g.sum_rows());
            }
            Op::DivColBroadcast(a, denom) => {
                let av = self.value(*a);
                let dv = self.value(*denom);
                self.accumulate_if(grads, *a, || {
                    Matrix::from_fn(g.rows(), g.cols(), |r, c| g[(r, c)] / dv[(r, 0)])
                });
                self.accumulate_if(grads, *denom, || {
                    Matrix::from_fn(dv.rows(), 1, |r, _| {
                        let d = dv[(r, 0)];
                        -dot(g.row(r), av.row(r)) / (d * d)
                    })
                });
            }
            Op::Scale(a, factor) => self.accumulate_if(grads, *a, || g.scale(*factor)),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accumulate_if(grads, *a, || {
                    Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                        if av[(r, c)] > 0.0 {
                            g[(r, c)]
                        } else {
                            0.0
                        }
                    })
                });
            }
            Op::EluPlusOne(a) => {
                let av = self.value(*a);
                let out = &node.value;
                self.accumulate_if(grads, *a, || {
                    Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                        let slope = if av[(r, c)] > 0.0 { 1.0 } else { out[(r, c)] };
                        g[(r, c)] * slope
                    })
                });
            }
            Op::RowSoftmax(a, t) => {
                let y = &node.value;
                self.accumulate_if(grads, *a, || {
                    let mut out = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let inner = dot(g.row(r), y.row(r));
                        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                            *o = y[(r, c)] * (g[(r, c)] - inner) / t;
                        }
                    }
                    out
                });
            }
            Op::RowLogSoftmax(a, t) => {
                let y = &node.value;
                self.accumulate_if(grads, *a, || {
                    let mut out = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                            *o = (g[(r, c)] - y[(r, c)].exp() * total) / t;
                        }
                    }
                    out
                });
            }
            Op::L2NormRows(a) => {
                let av = self.value(*a);
                let n = &node.value;
                self.accumulate_if(grads, *a, || {
                    Matrix::from_fn(av.rows(), av.cols(), |r, c| {
                        let len = n[(r, 0)];
                        if len > 0.0 {
                            g[(r, 0)] * av[(r, c)] / len
                        } else {
                            0.0
                        }
                    })
                });
            }
            Op::PairwiseDistances(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let dist = &node.value;
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                for j in 0..av.rows() {
                    for i in 0..bv.rows() {
                        let d = dist[(j, i)];
                        if d <= 0.0 {
                            continue;
                        }
                        let w = g[(j, i)] / d;
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..av.cols() {
                            let diff = w * (av[(j, c)] - bv[(i, c)]);
                            ga[(j, c)] += diff;
                            gb[(i, c)] -= diff;
                        }
                    }
                }
                if self.needs(*a) {
                    accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::Sum(a) => {
                let s = g[(0, 0)];
                let (r, c) = self.value(*a).shape();
                self.accumulate_if(grads, *a, || Matrix::filled(r, c, s));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let s = g[(0, 0)] / (r * c).max(1) as f64;
                self.accumulate_if(grads, *a, || Matrix::filled(r, c, s));
            }
            Op::SumRows(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate_if(grads, *a, || Matrix::from_fn(r, c, |_, col| g[(0, col)]));
            }
            Op::SelectRows(a, indices) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate_if(grads, *a, || {
                    let mut out = Matrix::zeros(r, c);
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    out
                });
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let start = *start;
                self.accumulate_if(grads, *a, || {
                    let mut out = Matrix::zeros(r, c);
                    for row in 0..r {
                        out.row_mut(row)[start..start + g.cols()].copy_from_slice(g.row(row));
                    }
                    out
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    self.accumulate_if(grads, p, || g.slice_cols(offset, offset + width));
                    offset += width;
                }
            }
        }
    }

    fn accumulate_if(&self, grads: &mut [Option<Matrix>], v: Var, grad: impl FnOnce() -> Matrix) {
        if self.needs(v) {
            accumulate(grads, v, grad());
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, grad: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&grad).expect("gradient shape"),
        slot @ None => *slot = Some(grad),
    }
}

pub(crate) fn pairwise_distance_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |j, i| {
        a.row(j).iter().zip(b.row(i)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{check_gradients, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let xm = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]).unwrap();
        let x = tape.param(xm.clone());
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x), xm.scale(2.0));
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::filled(2, 3, 1.0));
        let c = tape.constant(Matrix::scalar(4.0));
        let loss = tape.scale(c, 2.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x), Matrix::zeros(2, 3));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(NumericError::NonScalarLoss { shape: (2, 2) })));
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(x) + sum(3x) → grad 4 everywhere
        let mut tape = Tape::new();
        let x = tape.param(Matrix::filled(2, 2, 0.7));
        let y = tape.scale(x, 3.0);
        let s = tape.add(x, y).unwrap();
        let loss = tape.sum(s);
        assert_eq!(tape.backward(loss).unwrap().get(x), Matrix::filled(2, 2, 4.0));
    }

    // Each closure builds a scalar from the given leaves; gradients are
    // compared against central differences.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        type Build = fn(&mut Tape, &[Var]) -> Var;
        let cases: Vec<(&str, Vec<(usize, usize)>, Build)> = vec![
            ("matmul", vec![(3, 4), (4, 2)], |t, v| {
                let m = t.matmul(v[0], v[1]).unwrap();
                let h = t.hadamard(m, m).unwrap();
                t.sum(h)
            }),
            ("add_sub", vec![(3, 2), (3, 2)], |t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let s = t.sub(a, v[1]).unwrap();
                let s = t.sub(s, v[1]).unwrap();
                let h = t.hadamard(s, a).unwrap();
                t.mean(h)
            }),
            ("transpose", vec![(2, 3), (2, 3)], |t, v| {
                let tr = t.transpose(v[0]);
                let m = t.matmul(v[1], tr).unwrap();
                let e = t.elu_plus_one(m);
                t.sum(e)
            }),
            ("broadcasts", vec![(4, 3), (1, 3), (4, 3)], |t, v| {
                let a = t.add_row_broadcast(v[0], v[1]).unwrap();
                let phi = t.elu_plus_one(v[2]);
                let n = t.sum_rows(phi);
                let nt = t.transpose(n);
                let den = t.matmul(phi, nt).unwrap();
                let out = t.div_col_broadcast(a, den).unwrap();
                let h = t.hadamard(out, out).unwrap();
                t.sum(h)
            }),
            ("relu_softmax", vec![(3, 5)], |t, v| {
                let r = t.relu(v[0]);
                let s = t.row_softmax(v[0], 0.7);
                let h = t.hadamard(r, s).unwrap();
                t.sum(h)
            }),
            ("log_softmax_select", vec![(4, 4)], |t, v| {
                let l = t.row_log_softmax(v[0], 0.3);
                let sel = t.select_rows(l, &[2, 0, 2]).unwrap();
                let sl = t.slice_cols(sel, 1, 3).unwrap();
                t.sum(sl)
            }),
            ("distances_norms", vec![(3, 4), (5, 4)], |t, v| {
                let d = t.pairwise_distances(v[0], v[1]).unwrap();
                let n = t.l2_norm_rows(v[0]);
                let sd = t.sum(d);
                let sn = t.sum(n);
                let tot = t.add(sd, sn).unwrap();
                t.scale(tot, 0.5)
            }),
            ("concat", vec![(3, 2), (3, 1)], |t, v| {
                let c = t.concat_cols(&[v[0], v[1], v[0]]).unwrap();
                let s = t.row_softmax(c, 1.0);
                let w = t.constant(Matrix::from_fn(3, 5, |r, c| (r * 5 + c) as f64));
                let h = t.hadamard(s, w).unwrap();
                t.sum(h)
            }),
        ];
        for (name, shapes, build) in cases {
            let inputs: Vec<Matrix> =
                shapes.iter().map(|&(r, c)| random_matrix(&mut rng, r, c, 1.0)).collect();
            let report = check_gradients(&inputs, 1e-5, |t, v| build(t, v));
            assert!(report.max_rel_error < 1e-6, "{name}: {report:?}");
        }
    }
}
