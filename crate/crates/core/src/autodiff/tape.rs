//! Reverse-mode tape.
//!
//! Every op evaluates eagerly and appends a node holding its value and the
//! handles of its parents. Nodes are only ever appended after their parents,
//! so index order is a topological order and the backward sweep simply walks
//! the node list from the end.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{ensure, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    MeanRows(Var),
    RowNormalize { x: Var, norms: Vec<f64> },
    SoftmaxRows { x: Var, temperature: f64 },
    LogSoftmaxRows { x: Var, temperature: f64 },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    GatherRows { x: Var, index: Arc<[usize]> },
    ScatterAddRows { x: Var, index: Arc<[usize]> },
    SegmentSoftmax { x: Var, segment: Arc<[usize]>, segments: usize },
    Frobenius(Var, Var),
    Index(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single owner for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when it did not reach `var`.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = ((v - max) / temperature).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row
        .iter()
        .map(|&v| ((v - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max) / temperature - lse;
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

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Scalar value of a one-element var.
    pub fn item(&self, var: Var) -> Result<f64> {
        self.value(var).item()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            Contract,
            "{what}: shapes {:?} and {:?} differ",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn finite_input(&self, x: Var, what: &str) -> Result<()> {
        if !self.value(x).is_finite() {
            return Err(Error::Numeric(format!("{what} of a non-finite input")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let value = self.value(a).zip(self.value(b), |x, y| x / y);
        Ok(self.push(value, Op::Div(a, b), &[a, b]))
    }

    /// `[m, n] + [n]`, broadcasting the vector over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        ensure!(
            self.shape(row) == [n],
            Contract,
            "add_row: row shape {:?} does not match {} columns",
            self.shape(row),
            n
        );
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..m {
            for (v, &b) in value.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    /// `[m, n] * [m]`, scaling row `i` by `s[i]`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        ensure!(
            self.shape(s) == [m],
            Contract,
            "mul_col: scale shape {:?} does not match {} rows",
            self.shape(s),
            m
        );
        let sv = self.value(s).data().to_vec();
        let mut value = self.value(a).clone();
        for (i, &f) in sv.iter().enumerate() {
            for v in &mut value.data_mut()[i * n..(i + 1) * n] {
                *v *= f;
            }
        }
        Ok(self.push(value, Op::MulCol(a, s), &[a, s]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        Ok(self.push(value, Op::Scale(a, factor), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        Ok(self.push(value, Op::AddScalar(a), &[a]))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        Ok(self.push(value, Op::Exp(a), &[a]))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.finite_input(a, "log")?;
        ensure!(
            self.value(a).data().iter().all(|&v| v > 0.0),
            Numeric,
            "log of a non-positive value"
        );
        let value = self.value(a).map(f64::ln);
        Ok(self.push(value, Op::Log(a), &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        Ok(self.push(value, Op::Tanh(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        Ok(self.push(value, Op::Relu(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        Ok(self.push(value, Op::Sigmoid(a), &[a]))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        Ok(self.push(value, Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        ensure!(!t.is_empty(), Contract, "mean of an empty tensor");
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.push(value, Op::Mean(a), &[a]))
    }

    /// `[m, n] -> [m]`, summing each row.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        t.dims2()?;
        let value = Tensor::vector(t.rows().map(|r| r.iter().sum()).collect());
        Ok(self.push(value, Op::SumCols(a), &[a]))
    }

    /// `[m, n] -> [n]`, the column means.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        ensure!(m > 0, Contract, "mean over zero rows");
        let t = self.value(a);
        let mut out = vec![0.0; n];
        for row in t.rows() {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push(Tensor::vector(out), Op::MeanRows(a), &[a]))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        self.finite_input(a, "row_normalize")?;
        let t = self.value(a);
        let norms: Vec<f64> = t
            .rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        if let Some(i) = norms.iter().position(|&nrm| nrm == 0.0) {
            return Err(Error::Numeric(format!(
                "row {i} has zero norm; cosine similarity undefined"
            )));
        }
        let mut value = t.clone();
        for (i, &nrm) in norms.iter().enumerate() {
            for v in &mut value.data_mut()[i * n..(i + 1) * n] {
                *v /= nrm;
            }
        }
        Ok(self.push(value, Op::RowNormalize { x: a, norms }, &[a]))
    }

    /// Row-wise `softmax(x / temperature)` with max subtraction.
    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        ensure!(temperature > 0.0, Contract, "temperature must be positive");
        self.finite_input(a, "softmax")?;
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(n.max(1)) {
            let src = row.to_vec();
            softmax_row(&src, temperature, row);
        }
        Ok(self.push(value, Op::SoftmaxRows { x: a, temperature }, &[a]))
    }

    /// Row-wise `log_softmax(x / temperature)`.
    pub fn log_softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        let (_, n) = self.value(a).dims2()?;
        ensure!(temperature > 0.0, Contract, "temperature must be positive");
        self.finite_input(a, "log_softmax")?;
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(n.max(1)) {
            let src = row.to_vec();
            log_softmax_row(&src, temperature, row);
        }
        Ok(self.push(value, Op::LogSoftmaxRows { x: a, temperature }, &[a]))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Contract, "concat of nothing");
        let m = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            ensure!(pm == m, Contract, "concat_cols: row counts {pm} and {m} differ");
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Contract, "concat of nothing");
        let n = self.value(parts[0]).dims2()?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            ensure!(pn == n, Contract, "concat_rows: column counts {pn} and {n} differ");
            rows += pm;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Picks rows of `x` by index: `out[k] = x[index[k]]`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        ensure!(
            index.iter().all(|&i| i < m),
            Contract,
            "gather_rows: index out of range for {m} rows"
        );
        let src = self.value(x);
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            data.extend_from_slice(&src.data()[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![index.len(), n], data)?;
        Ok(self.push(value, Op::GatherRows { x, index }, &[x]))
    }

    /// Sums rows of `x` into `rows` buckets: `out[index[k]] += x[k]`.
    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        ensure!(
            index.len() == m,
            Contract,
            "scatter_add_rows: {} indices for {m} rows",
            index.len()
        );
        ensure!(
            index.iter().all(|&i| i < rows),
            Contract,
            "scatter_add_rows: index out of range for {rows} rows"
        );
        let src = self.value(x);
        let mut out = Tensor::zeros(&[rows, n]);
        for (k, &i) in index.iter().enumerate() {
            let dst = &mut out.data_mut()[i * n..(i + 1) * n];
            for (d, &v) in dst.iter_mut().zip(&src.data()[k * n..(k + 1) * n]) {
                *d += v;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows { x, index }, &[x]))
    }

    /// Softmax of a vector taken separately within each segment.
    pub fn segment_softmax(
        &mut self,
        x: Var,
        segment: Arc<[usize]>,
        segments: usize,
    ) -> Result<Var> {
        let xs = self.value(x);
        ensure!(
            xs.rank() == 1 && xs.len() == segment.len(),
            Contract,
            "segment_softmax: logits {:?} vs {} segment ids",
            xs.shape(),
            segment.len()
        );
        ensure!(
            segment.iter().all(|&s| s < segments),
            Contract,
            "segment id out of range"
        );
        self.finite_input(x, "segment_softmax")?;
        let xs = self.value(x).data();
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (&v, &s) in xs.iter().zip(segment.iter()) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<f64> = xs
            .iter()
            .zip(segment.iter())
            .map(|(&v, &s)| (v - max[s]).exp())
            .collect();
        let mut total = vec![0.0; segments];
        for (&e, &s) in out.iter().zip(segment.iter()) {
            total[s] += e;
        }
        for (e, &s) in out.iter_mut().zip(segment.iter()) {
            *e /= total[s];
        }
        let value = Tensor::vector(out);
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                x,
                segment,
                segments,
            },
            &[x],
        ))
    }

    /// `<A, B>_F = sum_ij A_ij B_ij`, as a scalar.
    pub fn frobenius_inner(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "frobenius_inner")?;
        let v: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(v), Op::Frobenius(a, b), &[a, b]))
    }

    /// Flat-indexed element as a scalar.
    pub fn index(&mut self, a: Var, flat: usize) -> Result<Var> {
        let t = self.value(a);
        ensure!(
            flat < t.len(),
            Contract,
            "index {flat} out of range for {} elements",
            t.len()
        );
        let value = Tensor::scalar(t.data()[flat]);
        Ok(self.push(value, Op::Index(a, flat), &[a]))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        ensure!(
            lv.len() == 1,
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            lv.shape()
        );
        ensure!(lv.is_finite(), Numeric, "loss is not finite ({})", lv.data()[0]);

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let ga = g.matmul(&bv.transpose()?)?;
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = av.transpose()?.matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => {
                let ga = g.transpose()?;
                self.accumulate(grads, *a, ga);
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
                let av = self.value(*a);
                let bv = self.value(*b);
                self.accumulate(grads, *a, g.zip(bv, |gi, bi| gi * bi));
                self.accumulate(grads, *b, g.zip(av, |gi, ai| gi * ai));
            }
            Op::Div(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                self.accumulate(grads, *a, g.zip(bv, |gi, bi| gi / bi));
                let mut gb = g.zip(av, |gi, ai| gi * ai);
                for (v, &bi) in gb.data_mut().iter_mut().zip(bv.data()) {
                    *v = -*v / (bi * bi);
                }
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let (_, n) = g.dims2()?;
                let mut gr = vec![0.0; n];
                for r in g.rows() {
                    for (o, &v) in gr.iter_mut().zip(r) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *row, Tensor::vector(gr));
            }
            Op::MulCol(a, s) => {
                let av = self.value(*a);
                let sv = self.value(*s);
                let (_, n) = av.dims2()?;
                let mut ga = g.clone();
                for (i, &f) in sv.data().iter().enumerate() {
                    for v in &mut ga.data_mut()[i * n..(i + 1) * n] {
                        *v *= f;
                    }
                }
                self.accumulate(grads, *a, ga);
                let gs: Vec<f64> = g
                    .rows()
                    .zip(av.rows())
                    .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                    .collect();
                self.accumulate(grads, *s, Tensor::vector(gs));
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * f)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => self.accumulate(grads, *a, g.zip(y, |gi, yi| gi * yi)),
            Op::Log(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, g.zip(av, |gi, ai| gi / ai));
            }
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip(y, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    g.zip(av, |gi, ai| if ai > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip(y, |gi, yi| gi * yi * (1.0 - yi)));
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::filled(&shape, gv));
            }
            Op::Mean(a) => {
                let shape = self.shape(*a).to_vec();
                let n = self.value(*a).len() as f64;
                self.accumulate(grads, *a, Tensor::filled(&shape, g.data()[0] / n));
            }
            Op::SumCols(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut ga = Tensor::zeros(&[m, n]);
                for (i, &gi) in g.data().iter().enumerate() {
                    ga.data_mut()[i * n..(i + 1) * n].fill(gi);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut ga = Tensor::zeros(&[m, n]);
                for row in ga.data_mut().chunks_mut(n.max(1)) {
                    for (o, &gv) in row.iter_mut().zip(g.data()) {
                        *o = gv / m as f64;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowNormalize { x, norms } => {
                let (_, n) = y.dims2()?;
                let mut gx = g.clone();
                for (i, &nrm) in norms.iter().enumerate() {
                    let yr = y.row(i);
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in gx.data_mut()[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(gr)
                        .zip(yr)
                    {
                        *o = (gi - yi * dot) / nrm;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows { x, temperature } => {
                let (_, n) = y.dims2()?;
                let mut gx = g.clone();
                for (i, row) in gx.data_mut().chunks_mut(n.max(1)).enumerate() {
                    let yr = y.row(i);
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gi), &yi) in row.iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot) / temperature;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmaxRows { x, temperature } => {
                let (_, n) = y.dims2()?;
                let mut gx = g.clone();
                for (i, row) in gx.data_mut().chunks_mut(n.max(1)).enumerate() {
                    let yr = y.row(i);
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let total: f64 = gr.iter().sum();
                    for ((o, &gi), &yi) in row.iter_mut().zip(gr).zip(yr) {
                        *o = (gi - yi.exp() * total) / temperature;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2()?.1;
                    let mut gp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        gp.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                    }
                    self.accumulate(grads, p, Tensor::new(vec![m, w], gp)?);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let shape = self.shape(p).to_vec();
                    let gp = Tensor::new(shape, g.data()[offset..offset + len].to_vec())?;
                    self.accumulate(grads, p, gp);
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(shape)?);
            }
            Op::GatherRows { x, index } => {
                let (m, n) = self.value(*x).dims2()?;
                let mut gx = Tensor::zeros(&[m, n]);
                for (k, &i) in index.iter().enumerate() {
                    let dst = &mut gx.data_mut()[i * n..(i + 1) * n];
                    for (d, &v) in dst.iter_mut().zip(&g.data()[k * n..(k + 1) * n]) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ScatterAddRows { x, index } => {
                let (_, n) = g.dims2()?;
                let mut data = Vec::with_capacity(index.len() * n);
                for &i in index.iter() {
                    data.extend_from_slice(&g.data()[i * n..(i + 1) * n]);
                }
                self.accumulate(grads, *x, Tensor::new(vec![index.len(), n], data)?);
            }
            Op::SegmentSoftmax {
                x,
                segment,
                segments,
            } => {
                let mut dot = vec![0.0; *segments];
                for ((&gi, &yi), &s) in g.data().iter().zip(y.data()).zip(segment.iter()) {
                    dot[s] += gi * yi;
                }
                let gx: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(segment.iter())
                    .map(|((&gi, &yi), &s)| yi * (gi - dot[s]))
                    .collect();
                self.accumulate(grads, *x, Tensor::vector(gx));
            }
            Op::Frobenius(a, b) => {
                let gv = g.data()[0];
                let av = self.value(*a);
                let bv = self.value(*b);
                self.accumulate(grads, *a, bv.map(|v| v * gv));
                self.accumulate(grads, *b, av.map(|v| v * gv));
            }
            Op::Index(a, flat) => {
                let shape = self.shape(*a).to_vec();
                let mut ga = Tensor::zeros(&shape);
                ga.data_mut()[*flat] = g.data()[0];
                self.accumulate(grads, *a, ga);
            }
        }
        Ok(())
    }
}
