//! Minimal reverse-mode differentiation over 2-D matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse and accumulates adjoints for
//! every node that transitively depends on a parameter leaf. Each forward
//! pass builds a fresh tape; tapes are cheap and never shared across threads.

use crate::error::{Error, Result};
use crate::numerics::ops::log_sum_exp;
use crate::numerics::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// `x + 1×c row` broadcast over rows.
    AddRow(Var, Var),
    /// `x ⊙ 1×c row` broadcast over rows.
    MulRow(Var, Var),
    /// `1×1 scalar · x`.
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    /// Row-wise standardisation; stores `1/σ` per row.
    Standardize(Var, Vec<f64>),
    /// Row-wise unit-length normalisation; stores the row norms (0 for zero rows).
    NormalizeRows(Var, Vec<f64>),
    ColumnBlock(Var, usize),
    ConcatCols(Vec<Var>),
    SumRows(Var),
    MeanRows(Var),
    /// Rows where the flag is set are replaced by the `1×c` row.
    ReplaceRows(Var, Var, Vec<bool>),
    /// `Σ w · (logsumexp(row) − row[label])` over `(row, label, w)` targets.
    CrossEntropy(Var, Vec<(usize, usize, f64)>),
    /// `Σ x ⊙ weights` with constant weights.
    Dot(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

const STANDARDIZE_EPS: f64 = 1e-5;

fn gelu(x: f64) -> (f64, f64) {
    // tanh approximation; returns value and derivative
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * A * x * x);
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (value, deriv)
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no adjoint is propagated into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    fn row_operand(&self, row: Var, cols: usize, op: &'static str) -> Result<()> {
        let r = self.value(row);
        if r.rows() != 1 || r.cols() != cols {
            return Err(Error::shape(
                op,
                format!("expected a 1x{cols} row, got {}x{}", r.rows(), r.cols()),
            ));
        }
        Ok(())
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_operand(row, self.value(x).cols(), "add_row")?;
        let v = self
            .value(x)
            .add_row_broadcast(self.value(row).as_slice())?;
        Ok(self.push(v, Op::AddRow(x, row), &[x, row]))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_operand(row, self.value(x).cols(), "mul_row")?;
        let r = self.value(row).as_slice().to_vec();
        let mut v = self.value(x).clone();
        for i in 0..v.rows() {
            for (a, b) in v.row_mut(i).iter_mut().zip(&r) {
                *a *= b;
            }
        }
        Ok(self.push(v, Op::MulRow(x, row), &[x, row]))
    }

    pub fn scale_by(&mut self, scalar: Var, x: Var) -> Result<Var> {
        if self.value(scalar).shape() != (1, 1) {
            return Err(Error::shape("scale_by", "scalar operand must be 1x1"));
        }
        let s = self.value(scalar)[(0, 0)];
        let v = self.value(x).scale(s);
        Ok(self.push(v, Op::ScaleBy(scalar, x), &[scalar, x]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| gelu(a).0);
        self.push(v, Op::Gelu(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for a in row.iter_mut() {
                *a = (*a - max).exp();
                total += *a;
            }
            for a in row.iter_mut() {
                *a /= total;
            }
        }
        self.push(v, Op::SoftmaxRows(x), &[x])
    }

    /// `(x − mean) / sqrt(var + 1e-5)` per row (the affine part of layer norm is separate).
    pub fn standardize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let cols = v.cols() as f64;
        let mut inv_std = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + STANDARDIZE_EPS).sqrt();
            for a in row.iter_mut() {
                *a = (*a - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(v, Op::Standardize(x, inv_std), &[x])
    }

    /// Scales each row to unit length; all-zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let mut norms = Vec::with_capacity(v.rows());
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.0 {
                for a in row.iter_mut() {
                    *a /= n;
                }
            }
            norms.push(n);
        }
        self.push(v, Op::NormalizeRows(x, norms), &[x])
    }

    pub fn column_block(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let m = self.value(x);
        if start + width > m.cols() {
            return Err(Error::shape(
                "column_block",
                format!("columns {start}..{} of {}", start + width, m.cols()),
            ));
        }
        let v = m.column_block(start, width);
        Ok(self.push(v, Op::ColumnBlock(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            if m.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("{} rows vs {rows}", m.rows()),
                ));
            }
            for r in 0..rows {
                v.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = Matrix::row_vector(&self.value(x).column_sums());
        self.push(v, Op::SumRows(x), &[x])
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = Matrix::row_vector(&self.value(x).column_means());
        self.push(v, Op::MeanRows(x), &[x])
    }

    pub fn replace_rows(&mut self, x: Var, row: Var, flags: &[bool]) -> Result<Var> {
        let m = self.value(x);
        if flags.len() != m.rows() {
            return Err(Error::shape(
                "replace_rows",
                format!("{} flags for {} rows", flags.len(), m.rows()),
            ));
        }
        self.row_operand(row, m.cols(), "replace_rows")?;
        let mut v = m.clone();
        let r = self.value(row).as_slice().to_vec();
        for (i, _) in flags.iter().enumerate().filter(|f| *f.1) {
            v.row_mut(i).copy_from_slice(&r);
        }
        Ok(self.push(v, Op::ReplaceRows(x, row, flags.to_vec()), &[x, row]))
    }

    /// Weighted sum of per-row softmax cross-entropies; yields a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize, f64)]) -> Result<Var> {
        let m = self.value(logits);
        let mut total = 0.0;
        for &(r, label, w) in targets {
            if r >= m.rows() || label >= m.cols() {
                return Err(Error::invalid(format!(
                    "cross-entropy target ({r}, {label}) outside {}x{} logits",
                    m.rows(),
                    m.cols()
                )));
            }
            let row = m.row(r);
            total += w * (log_sum_exp(row) - row[label]);
        }
        Ok(self.push(
            Matrix::scalar(total),
            Op::CrossEntropy(logits, targets.to_vec()),
            &[logits],
        ))
    }

    /// `Σ x ⊙ weights`, a 1×1 node.
    pub fn dot(&mut self, x: Var, weights: Matrix) -> Result<Var> {
        let s: f64 = self.value(x).hadamard(&weights)?.as_slice().iter().sum();
        Ok(self.push(Matrix::scalar(s), Op::Dot(x, weights), &[x]))
    }

    /// Reverse pass from the 1×1 node `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::shape("backward", "output must be a 1x1 node"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::MatMulT(a, b) => {
                // y = a bᵀ: ∂a = g b, ∂b = gᵀ a
                if self.wants(*a) {
                    let ga = g.matmul(self.value(*b))?;
                    self.accumulate(grads, *a, ga)?;
                }
                if self.wants(*b) {
                    let gb = g.t_matmul(self.value(*a))?;
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone())?;
                if self.wants(*row) {
                    self.accumulate(grads, *row, Matrix::row_vector(&g.column_sums()))?;
                }
            }
            Op::MulRow(x, row) => {
                let r = self.value(*row);
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for i in 0..gx.rows() {
                        for (a, b) in gx.row_mut(i).iter_mut().zip(r.as_slice()) {
                            *a *= b;
                        }
                    }
                    self.accumulate(grads, *x, gx)?;
                }
                if self.wants(*row) {
                    let gr = g.hadamard(self.value(*x))?.column_sums();
                    self.accumulate(grads, *row, Matrix::row_vector(&gr))?;
                }
            }
            Op::ScaleBy(s, x) => {
                let sv = self.value(*s)[(0, 0)];
                if self.wants(*s) {
                    let d: f64 = g.hadamard(self.value(*x))?.as_slice().iter().sum();
                    self.accumulate(grads, *s, Matrix::scalar(d))?;
                }
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.scale(sv))?;
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.scale(*s))?,
            Op::Relu(x) => {
                let gx = g.zip_map(
                    self.value(*x),
                    "relu",
                    |gv, xv| if xv > 0.0 { gv } else { 0.0 },
                )?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(self.value(*x), "gelu", |gv, xv| gv * gelu(xv).1)?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::SoftmaxRows(x) => {
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (gv, yv) in gx.row_mut(r).iter_mut().zip(yr) {
                        *gv = yv * (*gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::Standardize(x, inv_std) => {
                let cols = y.cols() as f64;
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let mean_g = gr.iter().sum::<f64>() / cols;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::NormalizeRows(x, norms) => {
                let mut gx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    if norms[r] == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in gx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = (gv - yv * dot) / norms[r];
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::ColumnBlock(x, start) => {
                let src = self.value(*x);
                let mut gx = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, g.column_block(offset, w))?;
                    }
                    offset += w;
                }
            }
            Op::SumRows(x) => {
                let rows = self.value(*x).rows();
                let mut gx = Matrix::zeros(rows, g.cols());
                for r in 0..rows {
                    gx.row_mut(r).copy_from_slice(g.as_slice());
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::MeanRows(x) => {
                let rows = self.value(*x).rows();
                let scaled = g.scale(1.0 / rows.max(1) as f64);
                let mut gx = Matrix::zeros(rows, g.cols());
                for r in 0..rows {
                    gx.row_mut(r).copy_from_slice(scaled.as_slice());
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::ReplaceRows(x, row, flags) => {
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for (i, _) in flags.iter().enumerate().filter(|f| *f.1) {
                        gx.row_mut(i).fill(0.0);
                    }
                    self.accumulate(grads, *x, gx)?;
                }
                if self.wants(*row) {
                    let mut gr = vec![0.0; g.cols()];
                    for (i, _) in flags.iter().enumerate().filter(|f| *f.1) {
                        for (a, b) in gr.iter_mut().zip(g.row(i)) {
                            *a += b;
                        }
                    }
                    self.accumulate(grads, *row, Matrix::row_vector(&gr))?;
                }
            }
            Op::CrossEntropy(logits, targets) => {
                let m = self.value(*logits);
                let scale = g[(0, 0)];
                let mut gx = Matrix::zeros(m.rows(), m.cols());
                for &(r, label, w) in targets {
                    let row = m.row(r);
                    let lse = log_sum_exp(row);
                    for (o, v) in gx.row_mut(r).iter_mut().zip(row) {
                        *o += scale * w * (v - lse).exp();
                    }
                    gx[(r, label)] -= scale * w;
                }
                self.accumulate(grads, *logits, gx)?;
            }
            Op::Dot(x, weights) => {
                self.accumulate(grads, *x, weights.scale(g[(0, 0)]))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, FnDifferentiable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Grad-checks a graph `build(tape, [param vars]) -> output var` reduced by a random projection.
    fn check<F>(shapes: &[(usize, usize)], seed: u64, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init: Vec<Matrix> = shapes
            .iter()
            .map(|&(r, c)| random(&mut rng, r, c))
            .collect();
        let flat: Vec<f64> = init.iter().flat_map(|m| m.as_slice().to_vec()).collect();
        let unflatten = |x: &[f64]| -> Vec<Matrix> {
            let mut off = 0;
            shapes
                .iter()
                .map(|&(r, c)| {
                    let m = Matrix::from_vec(r, c, x[off..off + r * c].to_vec()).unwrap();
                    off += r * c;
                    m
                })
                .collect()
        };
        // fix the projection from a probe forward pass
        let probe = {
            let mut t = Tape::new();
            let vars: Vec<Var> = init.iter().map(|m| t.param(m.clone())).collect();
            let out = build(&mut t, &vars).unwrap();
            t.value(out).shape()
        };
        let proj = random(&mut rng, probe.0, probe.1);
        let run = |x: &[f64], want_grad: bool| -> Result<(f64, Vec<f64>)> {
            let mut t = Tape::new();
            let vars: Vec<Var> = unflatten(x).into_iter().map(|m| t.param(m)).collect();
            let out = build(&mut t, &vars)?;
            let loss = t.dot(out, proj.clone())?;
            let value = t.value(loss)[(0, 0)];
            if !want_grad {
                return Ok((value, vec![]));
            }
            let g = t.backward(loss)?;
            Ok((
                value,
                vars.iter().flat_map(|v| g.get(*v).into_vec()).collect(),
            ))
        };
        let op = FnDifferentiable {
            n: flat.len(),
            value: |x: &[f64]| Ok(run(x, false)?.0),
            value_and_grad: |x: &[f64]| run(x, true),
        };
        let report = grad_check(&op, &flat, 1e-4);
        assert!(report.passed, "{:?}", report.diagnostics);
    }

    #[test]
    fn matmul_family() {
        check(&[(3, 4), (4, 2)], 1, |t, v| t.matmul(v[0], v[1]));
        check(&[(3, 4), (5, 4)], 2, |t, v| t.matmul_t(v[0], v[1]));
    }

    #[test]
    fn elementwise_and_broadcast() {
        check(&[(3, 4), (3, 4)], 3, |t, v| {
            let s = t.add(v[0], v[1])?;
            t.mul(s, v[1])
        });
        check(&[(3, 4), (1, 4)], 4, |t, v| t.add_row(v[0], v[1]));
        check(&[(3, 4), (1, 4)], 5, |t, v| t.mul_row(v[0], v[1]));
        check(&[(1, 1), (3, 4)], 6, |t, v| t.scale_by(v[0], v[1]));
        check(&[(3, 4)], 7, |t, v| Ok(t.scale(v[0], -2.5)));
    }

    #[test]
    fn activations() {
        check(&[(4, 5)], 8, |t, v| Ok(t.relu(v[0])));
        check(&[(4, 5)], 9, |t, v| Ok(t.gelu(v[0])));
        check(&[(4, 5)], 10, |t, v| Ok(t.softmax_rows(v[0])));
    }

    #[test]
    fn normalisations() {
        check(&[(4, 6)], 11, |t, v| Ok(t.standardize_rows(v[0])));
        check(&[(4, 6)], 12, |t, v| Ok(t.normalize_rows(v[0])));
    }

    #[test]
    fn structural_ops() {
        check(&[(3, 6)], 13, |t, v| {
            let a = t.column_block(v[0], 1, 3)?;
            let b = t.column_block(v[0], 4, 2)?;
            t.concat_cols(&[b, a])
        });
        check(&[(5, 3)], 14, |t, v| Ok(t.sum_rows(v[0])));
        check(&[(5, 3)], 15, |t, v| Ok(t.mean_rows(v[0])));
        check(&[(5, 3), (1, 3)], 16, |t, v| {
            t.replace_rows(v[0], v[1], &[true, false, false, true, false])
        });
    }

    #[test]
    fn cross_entropy_node() {
        check(&[(4, 5)], 17, |t, v| {
            t.cross_entropy(v[0], &[(0, 2, 0.5), (3, 4, 0.25), (0, 1, 1.0)])
        });
    }

    #[test]
    fn normalize_keeps_zero_rows_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap());
        let y = t.normalize_rows(x);
        assert_eq!(t.value(y).row(0), &[0.0, 0.0]);
        assert_eq!(t.value(y).row(1), &[0.6, 0.8]);
        let loss = t.dot(y, Matrix::filled(2, 2, 1.0)).unwrap();
        let g = t.backward(loss).unwrap().get(x);
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let p = t.param(Matrix::identity(2));
        let y = t.matmul(c, p).unwrap();
        let loss = t.dot(y, Matrix::filled(2, 2, 1.0)).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(c), Matrix::zeros(2, 2));
        assert_eq!(g.get(p), Matrix::filled(2, 2, 2.0));
    }
}
