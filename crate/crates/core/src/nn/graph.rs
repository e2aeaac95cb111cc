//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Parameters are borrowed from a [`ParamStore`] and never copied onto the
//! tape; [`Graph::backward`] walks the tape in reverse and returns the
//! gradients of a scalar loss with respect to every parameter and every
//! leaf created with `requires_grad`.

use std::collections::HashMap;
use std::sync::Arc;

use super::matrix::{gemm_into, Matrix};
use super::params::{ParamId, ParamStore};
use super::real::Real;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gather(Var, Arc<[u32]>),
    Concat(Vec<Var>),
    MaxGroups { x: Var, argmax: Vec<u32> },
    SoftmaxGroups { x: Var, width: usize },
    SumGroups { x: Var, width: usize },
    Interp { x: Var, idx: Arc<[u32]>, weights: Arc<[T]>, k: usize },
    LayerNorm { x: Var, inv_std: Vec<T> },
    CrossEntropy { logits: Var, probs: Matrix<T>, labels: Arc<[u8]>, weights: Option<Arc<[T]>>, norm: T },
    SumAll(Var),
    MeanAll(Var),
}

struct Node<T> {
    /// `None` for parameters, whose value lives in the store.
    value: Option<Matrix<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: Vec<Option<Matrix<T>>>,
    leaves: HashMap<Var, Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a parameter; `None` when the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf created with `requires_grad`.
    pub fn wrt(&self, var: Var) -> Option<&Matrix<T>> {
        self.leaves.get(&var)
    }

    pub(crate) fn into_params(self) -> Vec<Option<Matrix<T>>> {
        self.params
    }
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err<T>(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<T> {
    Err(Error::InvalidArgument(format!("{what}: incompatible shapes {a:?} and {b:?}")))
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input.
    pub fn constant(&mut self, m: Matrix<T>) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, m: Matrix<T>) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return shape_err("matmul", sa, sb);
        }
        let mut out = Matrix::zeros(sa.0, sb.1);
        gemm_into(self.value(a), false, self.value(b), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 × C` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb != (1, sx.1) {
            return shape_err("add_bias", sx, sb);
        }
        let mut out = self.value(x).clone();
        let b = &self.value(bias).data;
        for row in out.data.chunks_mut(sx.1.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Matrix<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(name, sa, sb);
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Matrix { rows: sa.0, cols: sa.1, data })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let mut out = self.value(x).clone();
        out.scale_assign(s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        let out = Matrix { rows: v.rows, cols: v.cols, data };
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Row gather: output row `i` is row `idx[i]` of `x`.
    pub fn gather(&mut self, x: Var, idx: Arc<[u32]>) -> Result<Var> {
        let v = self.value(x);
        let cols = v.cols;
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= v.rows) {
            return Err(Error::InvalidArgument(format!("gather index {bad} out of {} rows", v.rows)));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            data.extend_from_slice(v.row(i as usize));
        }
        let out = Matrix { rows: idx.len(), cols, data };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gather(x, idx), rg))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return shape_err("concat", (rows, cols), s);
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Matrix { rows, cols, data }, Op::Concat(parts.to_vec()), rg))
    }

    fn check_groups(&self, x: Var, width: usize) -> Result<(usize, usize)> {
        let (rows, cols) = self.shape(x);
        if width == 0 || rows % width != 0 {
            return Err(Error::InvalidArgument(format!("{rows} rows do not split into groups of {width}")));
        }
        Ok((rows / width, cols))
    }

    /// Column-wise maximum over consecutive groups of `width` rows; ties
    /// resolve to the first row of the group.
    pub fn max_groups(&mut self, x: Var, width: usize) -> Result<Var> {
        let (groups, cols) = self.check_groups(x, width)?;
        let v = self.value(x);
        let mut out = Matrix::zeros(groups, cols);
        let mut argmax = vec![0u32; groups * cols];
        for g in 0..groups {
            let base = g * width;
            let orow = out.row_mut(g);
            orow.copy_from_slice(v.row(base));
            let arow = &mut argmax[g * cols..(g + 1) * cols];
            arow.iter_mut().for_each(|a| *a = base as u32);
            for r in base + 1..base + width {
                for (c, &val) in v.row(r).iter().enumerate() {
                    if val > orow[c] {
                        orow[c] = val;
                        arow[c] = r as u32;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxGroups { x, argmax }, rg))
    }

    /// Softmax taken per column over each group of `width` rows.
    pub fn softmax_groups(&mut self, x: Var, width: usize) -> Result<Var> {
        let (groups, cols) = self.check_groups(x, width)?;
        let mut out = self.value(x).clone();
        let mut max = vec![T::zero(); cols];
        let mut sum = vec![T::zero(); cols];
        for g in 0..groups {
            let block = &mut out.data[g * width * cols..(g + 1) * width * cols];
            max.copy_from_slice(&block[..cols]);
            for row in block.chunks(cols).skip(1) {
                for (m, &v) in max.iter_mut().zip(row) {
                    *m = m.max(v);
                }
            }
            sum.iter_mut().for_each(|s| *s = T::zero());
            for row in block.chunks_mut(cols) {
                for ((v, &m), s) in row.iter_mut().zip(&max).zip(sum.iter_mut()) {
                    *v = (*v - m).exp();
                    *s = *s + *v;
                }
            }
            for row in block.chunks_mut(cols) {
                for (v, &s) in row.iter_mut().zip(&sum) {
                    *v = *v / s;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxGroups { x, width }, rg))
    }

    /// Column-wise sum over consecutive groups of `width` rows.
    pub fn sum_groups(&mut self, x: Var, width: usize) -> Result<Var> {
        let (groups, cols) = self.check_groups(x, width)?;
        let v = self.value(x);
        let mut out = Matrix::zeros(groups, cols);
        for g in 0..groups {
            let orow = &mut out.data[g * cols..(g + 1) * cols];
            for r in g * width..(g + 1) * width {
                for (o, &val) in orow.iter_mut().zip(v.row(r)) {
                    *o = *o + val;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SumGroups { x, width }, rg))
    }

    /// Weighted row mixing with constant indices and weights: output row
    /// `i` is `Σ_j weights[i·k+j] · x[idx[i·k+j]]`.
    pub fn interpolate(&mut self, x: Var, idx: Arc<[u32]>, weights: Arc<[T]>, k: usize) -> Result<Var> {
        if k == 0 || idx.len() % k != 0 || weights.len() != idx.len() {
            return Err(Error::InvalidArgument("interpolation tables have inconsistent sizes".into()));
        }
        let v = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= v.rows) {
            return Err(Error::InvalidArgument(format!("interpolation index {bad} out of {} rows", v.rows)));
        }
        let rows = idx.len() / k;
        let mut out = Matrix::zeros(rows, v.cols);
        for i in 0..rows {
            let orow = &mut out.data[i * v.cols..(i + 1) * v.cols];
            for j in i * k..(i + 1) * k {
                let w = weights[j];
                for (o, &val) in orow.iter_mut().zip(v.row(idx[j] as usize)) {
                    *o = *o + w * val;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Interp { x, idx, weights, k }, rg))
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let cols = v.cols;
        let mut out = v.clone();
        let mut inv_std = Vec::with_capacity(v.rows);
        let n = T::from_usize(cols.max(1)).expect("small");
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        for row in out.data.chunks_mut(cols.max(1)) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for a in row.iter_mut() {
                *a = (*a - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(x);
        self.push(out, Op::LayerNorm { x, inv_std }, rg)
    }

    /// Mean softmax cross-entropy over rows. With class weights, each row
    /// contributes `weights[label]` times its loss; the sum is still divided
    /// by the row count.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[u8]>, weights: Option<Arc<[T]>>) -> Result<Var> {
        let (rows, cols) = self.shape(logits);
        if labels.len() != rows {
            return Err(Error::InvalidArgument(format!("{} labels for {rows} logit rows", labels.len())));
        }
        if rows == 0 {
            return Err(Error::InvalidArgument("cross-entropy over zero rows".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= cols) {
            return Err(Error::InvalidArgument(format!("label {bad} out of {cols} classes")));
        }
        if let Some(w) = &weights {
            if w.len() != cols {
                return Err(Error::InvalidArgument(format!("{} class weights for {cols} classes", w.len())));
            }
        }
        let mut probs = self.value(logits).clone();
        let mut total = T::zero();
        for (r, row) in probs.data.chunks_mut(cols).enumerate() {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
            let y = labels[r] as usize;
            // log-sum-exp form keeps large margins exact
            let nll = s.ln() + m - self.nodes_value_at(logits, r, y);
            let w = weights.as_ref().map_or(T::one(), |w| w[y]);
            total = total + w * nll;
        }
        let norm = T::one() / T::from_usize(rows).expect("small");
        let out = Matrix::scalar(total * norm);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::CrossEntropy { logits, probs, labels, weights, norm }, rg))
    }

    fn nodes_value_at(&self, v: Var, r: usize, c: usize) -> T {
        self.value(v).get(r, c)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Matrix::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_usize(v.data.len().max(1)).expect("small");
        let s = v.data.iter().copied().sum::<T>() / n;
        let rg = self.rg(x);
        self.push(Matrix::scalar(s), Op::MeanAll(x), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::InvalidArgument(format!("backward needs a scalar loss, got shape {shape:?}")));
        }
        let mut out = Gradients { params: vec![None; self.params.len()], leaves: HashMap::new() };
        if !self.rg(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => {
                    out.params[id.index()] = Some(g);
                }
                op => self.propagate(op, Var(i), &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op<T>, this: Var, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let acc = |grads: &mut [Option<Matrix<T>>], v: Var, f: &dyn Fn(&mut Matrix<T>, bool)| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(m) => f(m, true),
                slot @ None => {
                    let (r, c) = self.shape(v);
                    let mut m = Matrix::zeros(r, c);
                    f(&mut m, false);
                    *slot = Some(m);
                }
            }
        };
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(grads, *a, &|m, add| gemm_into(g, false, vb, true, m, add));
                acc(grads, *b, &|m, add| gemm_into(va, true, g, false, m, add));
            }
            Op::AddBias(x, b) => {
                acc(grads, *x, &|m, _| m.add_assign(g));
                acc(grads, *b, &|m, _| {
                    for row in g.data.chunks(g.cols.max(1)) {
                        for (o, &v) in m.data.iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(grads, *a, &|m, _| m.add_assign(g));
                acc(grads, *b, &|m, _| m.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &|m, _| m.add_assign(g));
                acc(grads, *b, &|m, _| {
                    for (o, &v) in m.data.iter_mut().zip(&g.data) {
                        *o = *o - v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(grads, *a, &|m, _| {
                    for ((o, &gv), &y) in m.data.iter_mut().zip(&g.data).zip(&vb.data) {
                        *o = *o + gv * y;
                    }
                });
                acc(grads, *b, &|m, _| {
                    for ((o, &gv), &x) in m.data.iter_mut().zip(&g.data).zip(&va.data) {
                        *o = *o + gv * x;
                    }
                });
            }
            Op::Scale(x, s) => {
                acc(grads, *x, &|m, _| {
                    for (o, &gv) in m.data.iter_mut().zip(&g.data) {
                        *o = *o + gv * *s;
                    }
                });
            }
            Op::Relu(x) => {
                let y = self.value(this);
                acc(grads, *x, &|m, _| {
                    for ((o, &gv), &yv) in m.data.iter_mut().zip(&g.data).zip(&y.data) {
                        if yv > T::zero() {
                            *o = *o + gv;
                        }
                    }
                });
            }
            Op::Gather(x, idx) => {
                acc(grads, *x, &|m, _| {
                    let cols = m.cols;
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &g.data[r * cols..(r + 1) * cols];
                        for (o, &gv) in m.row_mut(i as usize).iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = self.shape(p).1;
                    acc(grads, p, &|m, _| {
                        for r in 0..m.rows {
                            let src = &g.row(r)[offset..offset + width];
                            for (o, &gv) in m.row_mut(r).iter_mut().zip(src) {
                                *o = *o + gv;
                            }
                        }
                    });
                    offset += width;
                }
            }
            Op::MaxGroups { x, argmax } => {
                acc(grads, *x, &|m, _| {
                    let cols = m.cols;
                    for (j, (&r, &gv)) in argmax.iter().zip(&g.data).enumerate() {
                        let c = j % cols;
                        let o = &mut m.data[r as usize * cols + c];
                        *o = *o + gv;
                    }
                });
            }
            Op::SoftmaxGroups { x, width } => {
                let y = self.value(this);
                let width = *width;
                acc(grads, *x, &|m, _| {
                    let cols = m.cols;
                    let mut dot = vec![T::zero(); cols];
                    for gi in 0..m.rows / width {
                        let span = gi * width * cols..(gi + 1) * width * cols;
                        dot.iter_mut().for_each(|d| *d = T::zero());
                        for (yr, gr) in y.data[span.clone()].chunks(cols).zip(g.data[span.clone()].chunks(cols)) {
                            for ((d, &yv), &gv) in dot.iter_mut().zip(yr).zip(gr) {
                                *d = *d + yv * gv;
                            }
                        }
                        let ys = &y.data[span.clone()];
                        let gs = &g.data[span.clone()];
                        for (k, o) in m.data[span].iter_mut().enumerate() {
                            *o = *o + ys[k] * (gs[k] - dot[k % cols]);
                        }
                    }
                });
            }
            Op::SumGroups { x, width } => {
                let width = *width;
                acc(grads, *x, &|m, _| {
                    let cols = m.cols;
                    for r in 0..m.rows {
                        let src = g.row(r / width);
                        for (o, &gv) in m.data[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                });
            }
            Op::Interp { x, idx, weights, k } => {
                acc(grads, *x, &|m, _| {
                    let cols = m.cols;
                    for (j, (&i, &w)) in idx.iter().zip(weights.iter()).enumerate() {
                        let src = g.row(j / k);
                        for (o, &gv) in m.data[i as usize * cols..(i as usize + 1) * cols].iter_mut().zip(src) {
                            *o = *o + w * gv;
                        }
                    }
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.value(this);
                acc(grads, *x, &|m, _| {
                    let cols = m.cols;
                    let n = T::from_usize(cols.max(1)).expect("small");
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let yr = &y.data[r * cols..(r + 1) * cols];
                        let gr = &g.data[r * cols..(r + 1) * cols];
                        let mean_g = gr.iter().copied().sum::<T>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for ((o, &gv), &yv) in m.data[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(yr) {
                            *o = *o + inv * (gv - mean_g - yv * mean_gy);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, probs, labels, weights, norm } => {
                let scale = g.data[0] * *norm;
                acc(grads, *logits, &|m, _| {
                    let cols = m.cols;
                    for (r, &y) in labels.iter().enumerate() {
                        let w = weights.as_ref().map_or(T::one(), |w| w[y as usize]) * scale;
                        let pr = probs.row(r);
                        for (c, o) in m.data[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                            let target = if c == y as usize { T::one() } else { T::zero() };
                            *o = *o + w * (pr[c] - target);
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let gv = g.data[0];
                acc(grads, *x, &|m, _| m.data.iter_mut().for_each(|o| *o = *o + gv));
            }
            Op::MeanAll(x) => {
                let n = T::from_usize(self.value(*x).data.len().max(1)).expect("small");
                let gv = g.data[0] / n;
                acc(grads, *x, &|m, _| m.data.iter_mut().for_each(|o| *o = *o + gv));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn linear_loss_gradient_is_the_input() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", m(1, 3, &[0.5, -1.0, 2.0]));
        let mut g = Graph::new(&ps);
        let x = g.constant(m(1, 3, &[3.0, 4.0, -5.0]));
        let wv = g.param(w);
        let p = g.mul(wv, x).unwrap();
        let loss = g.sum_all(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap().data, vec![3.0, 4.0, -5.0]);
    }

    #[test]
    fn quadratic_loss_gradient_is_twice_the_weight() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", m(1, 2, &[1.0, 2.0]));
        let mut g = Graph::new(&ps);
        let wv = g.param(w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum_all(sq);
        assert_eq!(g.value(loss).data, vec![5.0]);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap().data, vec![2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_losses() {
        let ps = ParamStore::<f64>::new();
        let mut g = Graph::new(&ps);
        let x = g.input(m(2, 1, &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", m(3, 2, &[0.1, -0.4, 0.7, 0.2, -0.3, 0.9]));
        let mut g = Graph::new(&ps);
        let x = g.constant(m(4, 3, &[1., 2., 3., -1., 0.5, 2., 0., 1., -2., 3., 3., 1.]));
        let wv = g.param(w);
        let y = g.matmul(x, wv).unwrap();
        let y = g.layer_norm(y);
        let loss = g.cross_entropy(y, vec![0u8, 1, 1, 0].into(), None).unwrap();
        let a = g.backward(loss).unwrap();
        let b = g.backward(loss).unwrap();
        assert_eq!(a.param(w), b.param(w));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_classes() {
        let ps = ParamStore::<f64>::new();
        let mut g = Graph::new(&ps);
        let z = g.input(Matrix::zeros(5, 4));
        let loss = g.cross_entropy(z, vec![0u8, 1, 2, 3, 0].into(), None).unwrap();
        assert!((g.value(loss).data[0] - 4f64.ln()).abs() < 1e-12);
        let big = g.input(m(2, 2, &[50.0, -50.0, -50.0, 50.0]));
        let loss = g.cross_entropy(big, vec![0u8, 1].into(), None).unwrap();
        assert!(g.value(loss).data[0] < 1e-40);
    }

    #[test]
    fn max_groups_ties_go_to_first_row() {
        let ps = ParamStore::<f64>::new();
        let mut g = Graph::new(&ps);
        let x = g.input(m(4, 1, &[2.0, 2.0, 1.0, 1.0]));
        let y = g.max_groups(x, 2).unwrap();
        let loss = g.sum_all(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data, vec![1.0, 0.0, 1.0, 0.0]);
    }
}
