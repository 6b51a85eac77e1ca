//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Parameters live in a
//! [`ParamStore`] and enter the tape through [`Tape::param`], so a single
//! backward pass yields one gradient per registered parameter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter arrays in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces a tensor; the new value may have a different shape.
    pub fn replace(&mut self, id: ParamId, value: Tensor) {
        self.tensors[id.0] = value;
    }
}

/// Storage precision for recorded values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    /// Every recorded value is rounded through `f32`.
    Single,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    ClampMin(Var, f64),
    Softmax {
        x: Var,
        valid: usize,
    },
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Tensor),
    Pick(Var, usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation for one backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::Double)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        if self.precision == Precision::Single {
            for v in value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// Registers a value that lives outside any store under a caller-chosen
    /// id. The id must not collide with ids already bound on this tape.
    pub fn extra_param(&mut self, value: Tensor, id: ParamId) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va.matmul(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Shape(format!(
                "matmul_bt {:?} x {:?}T",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va.matmul_bt(vb);
        Ok(self.push(out, Op::MatMulBT(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what} {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let vb = self.value(b);
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(vb.data()) {
            *o -= y;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                va.shape(),
                vr.shape()
            )));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let vb = self.value(b);
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(vb.data()) {
            *o *= y;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        if self.value(a).shape() != mask.shape() {
            return Err(Error::Shape("mul_const".into()));
        }
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(mask.data()) {
            *o *= y;
        }
        Ok(self.push(out, Op::MulConst(a, mask)))
    }

    /// Multiplies every entry of `a` by the `1 × 1` node `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::Shape("mul_scalar_var expects a 1x1 scale".into()));
        }
        let k = self.scalar(s);
        let out = self.value(a).map(|v| v * k);
        Ok(self.push(out, Op::MulScalarVar(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v + k);
        self.push(out, Op::AddScalar(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / v);
        self.push(out, Op::Recip(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    /// `max(a, floor)`; the adjoint is passed only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|v| v.max(floor));
        self.push(out, Op::ClampMin(a, floor))
    }

    /// Row softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let valid = self.value(a).cols();
        self.softmax_rows_prefix(a, valid)
    }

    /// Row softmax restricted to the first `valid` columns; the rest get
    /// probability zero.
    pub fn softmax_rows_prefix(&mut self, a: Var, valid: usize) -> Var {
        let va = self.value(a);
        let valid = valid.min(va.cols());
        let mut out = Tensor::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            softmax_into(&va.row(r)[..valid], &mut out.row_mut(r)[..valid]);
        }
        self.push(out, Op::Softmax { x: a, valid })
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = vx.shape();
        if self.value(gamma).shape() != (1, cols) || self.value(beta).shape() != (1, cols) {
            return Err(Error::Shape("layer_norm affine shape".into()));
        }
        let mut xhat = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for r in 0..rows {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * g[c] + b[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let mut out = Tensor::zeros(indices.len(), vt.cols());
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= vt.rows() {
                return Err(Error::Shape(format!(
                    "row {idx} out of range for table with {} rows",
                    vt.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(vt.row(idx));
        }
        Ok(self.push(out, Op::GatherRows(table, indices.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if start + len > vx.cols() {
            return Err(Error::Shape("slice_cols out of range".into()));
        }
        let mut out = Tensor::zeros(vx.rows(), len);
        for r in 0..vx.rows() {
            out.row_mut(r)
                .copy_from_slice(&vx.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Scales every row to unit L2 norm. Zero rows are rejected.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let mut out = vx.clone();
        let mut norms = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let n = dot(vx.row(r), vx.row(r)).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Numeric(format!("row {r} has norm {n}")));
            }
            norms.push(n);
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        Ok(self.push(out, Op::NormalizeRows { x, norms }))
    }

    /// Cosine similarity matrix between the rows of `a` and the rows of `b`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a)?;
        let nb = if a == b { na } else { self.normalize_rows(b)? };
        self.matmul_bt(na, nb)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.data().iter().sum::<f64>() / va.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// `Σ a ⊙ w` for a constant weight array `w`.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Result<Var> {
        if self.value(a).shape() != weights.shape() {
            return Err(Error::Shape("weighted_sum".into()));
        }
        let s = dot(self.value(a).data(), weights.data());
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights)))
    }

    /// A single entry as a `1 × 1` node.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let va = self.value(a);
        if r >= va.rows() || c >= va.cols() {
            return Err(Error::Shape(format!(
                "pick ({r},{c}) from {:?}",
                va.shape()
            )));
        }
        let v = va.get(r, c);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, r, c)))
    }

    /// Sums a list of `1 × 1` nodes left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse pass from a `1 × 1` loss node.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut params: BTreeMap<ParamId, Tensor> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match params.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        params.insert(*id, g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    accumulate(&mut adj, *a, g.matmul_bt(vb));
                    accumulate(&mut adj, *b, va.matmul_at(&g));
                }
                Op::MatMulBT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    accumulate(&mut adj, *a, g.matmul(vb));
                    accumulate(&mut adj, *b, g.matmul_at(va));
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *row, gr);
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    accumulate(&mut adj, *a, zip_map(&g, vb, |x, y| x * y));
                    accumulate(&mut adj, *b, zip_map(&g, va, |x, y| x * y));
                }
                Op::MulConst(a, mask) => {
                    accumulate(&mut adj, *a, zip_map(&g, mask, |x, y| x * y));
                }
                Op::MulScalarVar(a, s) => {
                    let k = self.scalar(*s);
                    let ds = dot(g.data(), self.value(*a).data());
                    accumulate(&mut adj, *a, g.map(|v| v * k));
                    accumulate(&mut adj, *s, Tensor::scalar(ds));
                }
                Op::Scale(a, k) => accumulate(&mut adj, *a, g.map(|v| v * k)),
                Op::AddScalar(a) => accumulate(&mut adj, *a, g),
                Op::Recip(a) => {
                    let y = &node.value;
                    accumulate(&mut adj, *a, zip_map(&g, y, |dy, y| -dy * y * y));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    accumulate(&mut adj, *a, zip_map(&g, x, |dy, x| dy * gelu_grad(x)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    accumulate(&mut adj, *a, zip_map(&g, y, |dy, y| dy * (1.0 - y * y)));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    accumulate(&mut adj, *a, zip_map(&g, y, |dy, y| dy * y * (1.0 - y)));
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    accumulate(&mut adj, *a, zip_map(&g, x, |dy, x| dy / x));
                }
                Op::ClampMin(a, floor) => {
                    let x = self.value(*a);
                    let f = *floor;
                    accumulate(
                        &mut adj,
                        *a,
                        zip_map(&g, x, |dy, x| if x > f { dy } else { 0.0 }),
                    );
                }
                Op::Softmax { x, valid } => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = &y.row(r)[..*valid];
                        let gr = &g.row(r)[..*valid];
                        let s = dot(yr, gr);
                        for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - s);
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let gs: f64 = g.row(r).iter().sum();
                        for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r))
                        {
                            *o = gv - yv.exp() * gs;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gam = self.value(*gamma).data();
                    let (rows, cols) = xhat.shape();
                    let mut dgamma = Tensor::zeros(1, cols);
                    let mut dbeta = Tensor::zeros(1, cols);
                    let mut dx = Tensor::zeros(rows, cols);
                    let n = cols as f64;
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        for c in 0..cols {
                            dgamma.data_mut()[c] += gr[c] * xr[c];
                            dbeta.data_mut()[c] += gr[c];
                            dxhat[c] = gr[c] * gam[c];
                        }
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dot(&dxhat, xr);
                        let s = rstd[r] / n;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = s * (n * dxhat[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(&mut adj, *gamma, dgamma);
                    accumulate(&mut adj, *beta, dbeta);
                    accumulate(&mut adj, *x, dx);
                }
                Op::GatherRows(table, indices) => {
                    let vt = self.value(*table);
                    let mut dt = Tensor::zeros(vt.rows(), vt.cols());
                    for (i, &idx) in indices.iter().enumerate() {
                        for (o, &v) in dt.row_mut(idx).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *table, dt);
                }
                Op::SliceCols { x, start } => {
                    let vx = self.value(*x);
                    let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                    let len = g.cols();
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + len].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut dp = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        accumulate(&mut adj, p, dp);
                    }
                }
                Op::NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s = dot(yr, gr);
                        for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gv - yv * s) / norms[r];
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let v = g.item() / (r * c) as f64;
                    accumulate(&mut adj, *a, Tensor::filled(r, c, v));
                }
                Op::WeightedSum(a, w) => {
                    let k = g.item();
                    accumulate(&mut adj, *a, w.map(|v| v * k));
                }
                Op::Pick(a, r, c) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Tensor::zeros(rows, cols);
                    d.set(*r, *c, g.item());
                    accumulate(&mut adj, *a, d);
                }
            }
        }
        Ok(Gradients { params })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of `src` written into `dst`.
pub fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

/// Parameter gradients from one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a parameter; `None` if the parameter never reached the loss.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// One gradient per parameter of `store`, zero-filled where the loss does
    /// not depend on the parameter.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| match self.params.get(&id) {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = store.get(id).shape();
                    Tensor::zeros(r, c)
                }
            })
            .collect()
    }

    pub fn into_map(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }
}
