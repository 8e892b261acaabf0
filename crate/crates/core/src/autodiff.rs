//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every primitive applied during the forward pass.
//! Parameters are read straight from a borrowed [`ParamStore`]; the backward
//! pass returns a [`Gradients`] value that the store accumulates afterwards,
//! so the store is never borrowed mutably while a graph is alive.
//!
//! Only the primitives the relation extractor needs are supported. There is
//! no broadcasting: every binary op requires identical shapes.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather {
        table: ParamId,
        indices: Vec<usize>,
        frozen_row: Option<usize>,
    },
    ConcatCols(Vec<Var>),
    Conv1d {
        input: Var,
        filters: Var,
        bias: Var,
        window: usize,
    },
    PiecewiseMax {
        input: Var,
        // Flat index into the input for every pooled output; `None` for empty
        // segments.
        argmax: Vec<Option<usize>>,
    },
    Tanh(Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Affine {
        weight: Var,
        input: Var,
        bias: Var,
    },
    Transition {
        column: Var,
        logits: Var,
    },
    LogSumExp {
        input: Var,
        softmax: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        softmax: Vec<f64>,
    },
    Pick {
        input: Var,
        index: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    SumAll(Vec<Var>),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    // Empty for parameter leaves; their value lives in the store.
    value: Vec<f64>,
    op: Op,
}

/// Gradient contribution for one parameter.
#[derive(Debug, Clone)]
pub enum GradUpdate {
    Dense(Vec<f64>),
    /// Row-sparse update produced by an embedding lookup.
    Rows {
        indices: Vec<usize>,
        cols: usize,
        values: Vec<f64>,
        frozen_row: Option<usize>,
    },
}

/// Result of a backward pass, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, GradUpdate)>,
}

impl Gradients {
    pub fn entries(&self) -> &[(ParamId, GradUpdate)] {
        &self.entries
    }

    /// Dense gradient for `id` of the given length, summing all updates.
    pub fn dense(&self, id: ParamId, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (pid, update) in &self.entries {
            if *pid != id {
                continue;
            }
            match update {
                GradUpdate::Dense(g) => {
                    for (a, b) in out.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                GradUpdate::Rows {
                    indices,
                    cols,
                    values,
                    frozen_row,
                } => {
                    for (k, &row) in indices.iter().enumerate() {
                        if Some(row) == *frozen_row {
                            continue;
                        }
                        for c in 0..*cols {
                            out[row * cols + c] += values[k * cols + c];
                        }
                    }
                }
            }
        }
        out
    }
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    live_dropout: bool,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            live_dropout: false,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// True once a dropout mask has been sampled inside this graph.
    pub fn has_live_dropout(&self) -> bool {
        self.live_dropout
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.value(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Constant)
    }

    /// Leaf node for a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let shape = self.store.value(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id));
        self.param_nodes.insert(id, v);
        v
    }

    /// Looks up rows of an embedding table. `frozen_row` receives no gradient.
    pub fn gather(
        &mut self,
        table: ParamId,
        indices: &[usize],
        frozen_row: Option<usize>,
    ) -> Result<Var> {
        let t = self.store.value(table);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather",
                left: t.shape().to_vec(),
                right: vec![indices.len()],
            });
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        if indices.is_empty() {
            return Err(Error::Degenerate("gather with no indices".into()));
        }
        let mut value = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::ShapeMismatch {
                    op: "gather",
                    left: t.shape().to_vec(),
                    right: vec![i],
                });
            }
            value.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            vec![indices.len(), cols],
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
                frozen_row,
            },
        ))
    }

    /// Concatenates rank-2 inputs with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Degenerate("concat of nothing".into()))?;
        let rows = self.rank2(first, "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rank2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(vec![rows, total], value, Op::ConcatCols(parts.to_vec())))
    }

    /// Valid 1-D convolution of `input` (`n × d`) with `filters`
    /// (`m × window·d`) plus `bias` (`m`); output is `m × (n − window + 1)`.
    pub fn conv1d(&mut self, input: Var, filters: Var, bias: Var, window: usize) -> Result<Var> {
        let (n, d) = self.rank2(input, "conv1d")?;
        let (m, fw) = self.rank2(filters, "conv1d")?;
        if window == 0 || fw != window * d || n < window {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: self.shape(input).to_vec(),
                right: self.shape(filters).to_vec(),
            });
        }
        if self.shape(bias) != [m] {
            return Err(Error::ShapeMismatch {
                op: "conv1d bias",
                left: self.shape(filters).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let value = kernels::conv1d(
            self.value(input),
            d,
            self.value(filters),
            self.value(bias),
            window,
        );
        let out = n - window + 1;
        Ok(self.push(
            vec![m, out],
            value,
            Op::Conv1d {
                input,
                filters,
                bias,
                window,
            },
        ))
    }

    /// Max over three segments of every row of `input` (`m × n`), cut after
    /// positions `b1 ≤ b2`. Output has length `3m`.
    pub fn piecewise_max(&mut self, input: Var, b1: usize, b2: usize) -> Result<Var> {
        let (m, n) = self.rank2(input, "piecewise_max")?;
        let (value, argmax) = kernels::piecewise_max(self.value(input), m, n, b1, b2);
        Ok(self.push(vec![3 * m], value, Op::PiecewiseMax { input, argmax }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::Tanh(x))
    }

    /// Inverted dropout with a freshly sampled mask.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {rate} not in [0,1)"
            )));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.live_dropout = true;
        self.apply_mask(x, mask)
    }

    /// Dropout with a caller-provided (already scaled) mask. Deterministic,
    /// so usable under gradient checking.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        self.apply_mask(x, mask)
    }

    fn apply_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                left: self.shape(x).to_vec(),
                right: vec![mask.len()],
            });
        }
        let value = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(a, b)| a * b)
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, Op::Dropout { input: x, mask }))
    }

    /// `weight · input + bias` for `weight` of shape `k × n`.
    pub fn affine(&mut self, weight: Var, input: Var, bias: Var) -> Result<Var> {
        let (k, n) = self.rank2(weight, "affine")?;
        if self.shape(input) != [n] || self.shape(bias) != [k] {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: self.shape(weight).to_vec(),
                right: self.shape(input).to_vec(),
            });
        }
        let w = self.value(weight);
        let x = self.value(input);
        let b = self.value(bias);
        let value = (0..k)
            .map(|r| kernels::dot(&w[r * n..(r + 1) * n], x) + b[r])
            .collect();
        Ok(self.push(
            vec![k],
            value,
            Op::Affine {
                weight,
                input,
                bias,
            },
        ))
    }

    /// Structured logit transition: `out[0] = col[0]·h[0]`,
    /// `out[k] = col[k]·h[0] + h[k]` for `k ≥ 1`.
    pub fn transition(&mut self, column: Var, logits: Var) -> Result<Var> {
        if self.shape(column).len() != 1 || self.shape(column) != self.shape(logits) {
            return Err(Error::ShapeMismatch {
                op: "transition",
                left: self.shape(column).to_vec(),
                right: self.shape(logits).to_vec(),
            });
        }
        let value = kernels::transition(self.value(column), self.value(logits));
        let shape = self.shape(logits).to_vec();
        Ok(self.push(shape, value, Op::Transition { column, logits }))
    }

    pub fn log_sum_exp(&mut self, x: Var) -> Var {
        let (lse, softmax) = kernels::log_sum_exp_softmax(self.value(x));
        self.push(vec![1], vec![lse], Op::LogSumExp { input: x, softmax })
    }

    /// `log_sum_exp(logits) − logits[target]`, i.e. the negative log-softmax
    /// of the target class.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let len = self.value(logits).len();
        if target >= len {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![target],
            });
        }
        let (lse, softmax) = kernels::log_sum_exp_softmax(self.value(logits));
        let value = lse - self.value(logits)[target];
        Ok(self.push(
            vec![1],
            vec![value],
            Op::CrossEntropy {
                logits,
                target,
                softmax,
            },
        ))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x);
        if index >= v.len() {
            return Err(Error::ShapeMismatch {
                op: "pick",
                left: self.shape(x).to_vec(),
                right: vec![index],
            });
        }
        let value = vec![v[index]];
        Ok(self.push(vec![1], value, Op::Pick { input: x, index }))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: name,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        let op = match name {
            "add" => Op::Add(a, b),
            "sub" => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        Ok(self.push(shape, value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    /// Sum of several scalar nodes, in the given order.
    pub fn sum_all(&mut self, xs: &[Var]) -> Result<Var> {
        let mut s = 0.0;
        for &x in xs {
            if self.shape(x) != [1] {
                return Err(Error::ShapeMismatch {
                    op: "sum_all",
                    left: vec![1],
                    right: self.shape(x).to_vec(),
                });
            }
            s += self.value(x)[0];
        }
        Ok(self.push(vec![1], vec![s], Op::SumAll(xs.to_vec())))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::Scale(x, c))
    }

    fn rank2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref other => Err(Error::ShapeMismatch {
                op,
                left: vec![0, 0],
                right: other.to_vec(),
            }),
        }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1] {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: vec![1],
                right: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.entries.push((*id, GradUpdate::Dense(g))),
                Op::Gather {
                    table,
                    indices,
                    frozen_row,
                } => out.entries.push((
                    *table,
                    GradUpdate::Rows {
                        indices: indices.clone(),
                        cols: node.shape[1],
                        values: g,
                        frozen_row: *frozen_row,
                    },
                )),
                Op::ConcatCols(parts) => {
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        let dst = self.grad_buf(&mut grads, p);
                        for r in 0..rows {
                            for c in 0..w {
                                dst[r * w + c] += g[r * total + offset + c];
                            }
                        }
                        offset += w;
                    }
                }
                Op::Conv1d {
                    input,
                    filters,
                    bias,
                    window,
                } => {
                    let d = self.shape(*input)[1];
                    let (m, out_len) = (node.shape[0], node.shape[1]);
                    let span = window * d;
                    {
                        let x = self.value(*input);
                        let df = self.grad_buf(&mut grads, *filters);
                        for t in 0..m {
                            let row = &mut df[t * span..(t + 1) * span];
                            for i in 0..out_len {
                                let gi = g[t * out_len + i];
                                if gi != 0.0 {
                                    kernels::axpy(gi, &x[i * d..i * d + span], row);
                                }
                            }
                        }
                    }
                    {
                        let u = self.value(*filters);
                        let dx = self.grad_buf(&mut grads, *input);
                        for t in 0..m {
                            let filt = &u[t * span..(t + 1) * span];
                            for i in 0..out_len {
                                let gi = g[t * out_len + i];
                                if gi != 0.0 {
                                    kernels::axpy(gi, filt, &mut dx[i * d..i * d + span]);
                                }
                            }
                        }
                    }
                    let db = self.grad_buf(&mut grads, *bias);
                    for t in 0..m {
                        db[t] += g[t * out_len..(t + 1) * out_len].iter().sum::<f64>();
                    }
                }
                Op::PiecewiseMax { input, argmax } => {
                    let dx = self.grad_buf(&mut grads, *input);
                    for (o, a) in argmax.iter().enumerate() {
                        if let Some(i) = a {
                            dx[*i] += g[o];
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let dx = self.grad_buf(&mut grads, *x);
                    for i in 0..y.len() {
                        dx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Dropout { input, mask } => {
                    let dx = self.grad_buf(&mut grads, *input);
                    for i in 0..mask.len() {
                        dx[i] += g[i] * mask[i];
                    }
                }
                Op::Affine {
                    weight,
                    input,
                    bias,
                } => {
                    let n = self.shape(*input)[0];
                    let k = node.shape[0];
                    {
                        let x = self.value(*input);
                        let dw = self.grad_buf(&mut grads, *weight);
                        for r in 0..k {
                            kernels::axpy(g[r], x, &mut dw[r * n..(r + 1) * n]);
                        }
                    }
                    {
                        let w = self.value(*weight);
                        let dx = self.grad_buf(&mut grads, *input);
                        for r in 0..k {
                            kernels::axpy(g[r], &w[r * n..(r + 1) * n], dx);
                        }
                    }
                    let db = self.grad_buf(&mut grads, *bias);
                    for r in 0..k {
                        db[r] += g[r];
                    }
                }
                Op::Transition { column, logits } => {
                    let h0 = self.value(*logits)[0];
                    let dcol: Vec<f64> = g.iter().map(|gk| gk * h0).collect();
                    let dh0: f64 = g
                        .iter()
                        .zip(self.value(*column))
                        .map(|(gk, wk)| gk * wk)
                        .sum();
                    let dc = self.grad_buf(&mut grads, *column);
                    for (a, b) in dc.iter_mut().zip(&dcol) {
                        *a += b;
                    }
                    let dh = self.grad_buf(&mut grads, *logits);
                    dh[0] += dh0;
                    for k in 1..g.len() {
                        dh[k] += g[k];
                    }
                }
                Op::LogSumExp { input, softmax } => {
                    let dx = self.grad_buf(&mut grads, *input);
                    for (a, p) in dx.iter_mut().zip(softmax) {
                        *a += g[0] * p;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    softmax,
                } => {
                    let dx = self.grad_buf(&mut grads, *logits);
                    for (a, p) in dx.iter_mut().zip(softmax) {
                        *a += g[0] * p;
                    }
                    dx[*target] -= g[0];
                }
                Op::Pick { input, index } => {
                    self.grad_buf(&mut grads, *input)[*index] += g[0];
                }
                Op::Add(a, b) => {
                    add_into(self.grad_buf(&mut grads, *a), &g, 1.0);
                    add_into(self.grad_buf(&mut grads, *b), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(self.grad_buf(&mut grads, *a), &g, 1.0);
                    add_into(self.grad_buf(&mut grads, *b), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    add_into(self.grad_buf(&mut grads, *a), &da, 1.0);
                    add_into(self.grad_buf(&mut grads, *b), &db, 1.0);
                }
                Op::Sum(x) => {
                    for v in self.grad_buf(&mut grads, *x) {
                        *v += g[0];
                    }
                }
                Op::SumAll(xs) => {
                    for &x in xs {
                        self.grad_buf(&mut grads, x)[0] += g[0];
                    }
                }
                Op::Scale(x, c) => add_into(self.grad_buf(&mut grads, *x), &g, *c),
            }
        }
        Ok(out)
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Vec<f64>], v: Var) -> &'g mut Vec<f64> {
        let buf = &mut grads[v.0];
        if buf.is_empty() {
            let n: usize = self.nodes[v.0].shape.iter().product();
            *buf = vec![0.0; n];
        }
        buf
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += scale * b;
    }
}

/// Builds a graph, runs the backward pass and accumulates the gradients into
/// `store`. Returns the loss value.
pub fn forward_backward<F>(store: &mut ParamStore, build: F) -> Result<f64>
where
    F: FnOnce(&mut Graph) -> Result<Var>,
{
    let (loss, grads) = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        (value, g.backward(loss)?)
    };
    store.accumulate(&grads);
    Ok(loss)
}
