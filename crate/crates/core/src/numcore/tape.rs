//! Reverse-mode differentiation over a linear record of primitives.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably, records every primitive
//! applied during a forward pass, and replays the adjoints in reverse when
//! [`Tape::backward`] is called. Parameters are read in place; the tape only
//! owns intermediates, so dropping or clearing it frees them.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    EmbedRow(Var, usize),
    EmbedRows(Var, Vec<usize>),
    MatVec(Var, Var),
    Affine(Var, Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Pick(Var, usize),
    IndexSum(Var, Vec<usize>),
    LogSumExpAt(Var, Vec<usize>),
    LogAddExp(Var, Var),
    ClampMin(Var, f64),
    WeightedSum(Var, Var),
    AttnScores(Var, Var, Var),
    Outer(Var, Var),
    OuterSum(Var, Var),
    GridCols(Var, Var),
    GridRows(Var, Var),
}

/// Primitive kinds, exposed for diagnostics and tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveKind {
    Input,
    Param,
    EmbeddingLookup,
    MatVec,
    Affine,
    MatMulTransposed,
    Add,
    Sub,
    Mul,
    Scale,
    Concat,
    Stack,
    Reshape,
    Tanh,
    Sigmoid,
    LogSigmoid,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    Sum,
    Pick,
    IndexSum,
    LogSumExpAt,
    LogAddExp,
    ClampMin,
    WeightedSum,
    AttentionScores,
    OuterProduct,
    OuterSum,
    GridContract,
}

impl Op {
    fn kind(&self) -> PrimitiveKind {
        use PrimitiveKind as K;
        match self {
            Op::Input => K::Input,
            Op::Param(_) => K::Param,
            Op::EmbedRow(..) | Op::EmbedRows(..) => K::EmbeddingLookup,
            Op::MatVec(..) => K::MatVec,
            Op::Affine(..) => K::Affine,
            Op::MatMulT(..) => K::MatMulTransposed,
            Op::Add(..) => K::Add,
            Op::Sub(..) => K::Sub,
            Op::Mul(..) => K::Mul,
            Op::Scale(..) => K::Scale,
            Op::Concat(..) => K::Concat,
            Op::Stack(..) => K::Stack,
            Op::Reshape(..) => K::Reshape,
            Op::Tanh(..) => K::Tanh,
            Op::Sigmoid(..) => K::Sigmoid,
            Op::LogSigmoid(..) => K::LogSigmoid,
            Op::Exp(..) => K::Exp,
            Op::Log(..) => K::Log,
            Op::Softmax(..) => K::Softmax,
            Op::LogSoftmax(..) => K::LogSoftmax,
            Op::Sum(..) => K::Sum,
            Op::Pick(..) => K::Pick,
            Op::IndexSum(..) => K::IndexSum,
            Op::LogSumExpAt(..) => K::LogSumExpAt,
            Op::LogAddExp(..) => K::LogAddExp,
            Op::ClampMin(..) => K::ClampMin,
            Op::WeightedSum(..) => K::WeightedSum,
            Op::AttnScores(..) => K::AttentionScores,
            Op::Outer(..) => K::OuterProduct,
            Op::OuterSum(..) => K::OuterSum,
            Op::GridCols(..) | Op::GridRows(..) => K::GridContract,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameters, which are read from the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// The computation record for one forward pass.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Number of recorded primitives, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded intermediate. Previously issued [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
    }

    pub fn kind(&self, v: Var) -> PrimitiveKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(value),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.input(Tensor::zeros(shape))
    }

    /// Leaf node reading parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: self.params.get(id).requires_grad(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn embed_row(&mut self, table: Var, id: usize) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                left: t.shape().to_vec(),
                right: vec![id],
            });
        }
        if id >= t.shape()[0] {
            return Err(Error::OutOfRange {
                what: "embedding table",
                index: id,
                size: t.shape()[0],
            });
        }
        let row = Tensor::vector(t.row(id).to_vec());
        Ok(self.push(Op::EmbedRow(table, id), row, &[table]))
    }

    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyInput { op: "embedding_lookup" });
        }
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                left: t.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        let (v, e) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfRange {
                    what: "embedding table",
                    index: id,
                    size: v,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), e], data);
        Ok(self.push(Op::EmbedRows(table, ids.to_vec()), out, &[table]))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let out = self.matvec_value("matvec", w, x, None)?;
        Ok(self.push(Op::MatVec(w, x), out, &[w, x]))
    }

    /// `w · x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let out = self.matvec_value("affine", w, x, Some(b))?;
        Ok(self.push(Op::Affine(w, x, b), out, &[w, x, b]))
    }

    fn matvec_value(&self, op: &'static str, w: Var, x: Var, b: Option<Var>) -> Result<Tensor> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.shape().len() != 2 || xt.len() != wt.shape()[1] || xt.shape().len() > 1 {
            return Err(mismatch(op, wt, xt));
        }
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        let wd = wt.data();
        let xd = xt.data();
        let mut out = match b {
            Some(b) => {
                let bt = self.value(b);
                if bt.len() != m {
                    return Err(mismatch(op, wt, bt));
                }
                bt.data().to_vec()
            }
            None => vec![0.0; m],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wd[i * n..(i + 1) * n];
            *o += row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(Tensor::from_parts(vec![m], out))
    }

    /// `a · wᵀ` for `a: [k, n]`, `w: [m, n]`, giving `[k, m]`.
    pub fn matmul_t(&mut self, a: Var, w: Var) -> Result<Var> {
        let (at, wt) = (self.value(a), self.value(w));
        if at.shape().len() != 2 || wt.shape().len() != 2 || at.shape()[1] != wt.shape()[1] {
            return Err(mismatch("matmul_t", at, wt));
        }
        let (k, n, m) = (at.shape()[0], at.shape()[1], wt.shape()[0]);
        let (ad, wd) = (at.data(), wt.data());
        let mut out = vec![0.0; k * m];
        for r in 0..k {
            let arow = &ad[r * n..(r + 1) * n];
            for c in 0..m {
                let wrow = &wd[c * n..(c + 1) * n];
                out[r * m + c] = arow.iter().zip(wrow).map(|(x, y)| x * y).sum();
            }
        }
        let out = Tensor::from_parts(vec![k, m], out);
        Ok(self.push(Op::MatMulT(a, w), out, &[a, w]))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(mismatch(name, at, bt));
        }
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::from_parts(at.shape().to_vec(), data);
        Ok(self.push(op, out, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::from_parts(xt.shape().to_vec(), data);
        self.push(op, out, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, log_sigmoid, Op::LogSigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    /// Elementwise `max(x, floor)`; the gradient is zero where clamped.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor), Op::ClampMin(x, floor))
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput { op: "concat" });
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::vector(data);
        Ok(self.push(Op::Concat(parts.to_vec()), out, parts))
    }

    /// Stacks equal-length vectors into a `[k, n]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::EmptyInput { op: "stack" });
        };
        let n = self.value(first).len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let t = self.value(r);
            if t.len() != n {
                return Err(mismatch("stack", self.value(first), t));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![rows.len(), n], data);
        Ok(self.push(Op::Stack(rows.to_vec()), out, rows))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let out = Tensor::new(shape.to_vec(), xt.data().to_vec()).map_err(|_| Error::ShapeMismatch {
            op: "reshape",
            left: xt.shape().to_vec(),
            right: shape.to_vec(),
        })?;
        Ok(self.push(Op::Reshape(x), out, &[x]))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.is_empty() {
            return Err(Error::EmptyInput { op: "softmax" });
        }
        let out = Tensor::from_parts(xt.shape().to_vec(), softmax(xt.data()));
        Ok(self.push(Op::Softmax(x), out, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.is_empty() {
            return Err(Error::EmptyInput { op: "log_softmax" });
        }
        let out = Tensor::from_parts(xt.shape().to_vec(), log_softmax(xt.data()));
        Ok(self.push(Op::LogSoftmax(x), out, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s), &[x])
    }

    /// Adds a list of scalars.
    pub fn sum_all(&mut self, xs: &[Var]) -> Result<Var> {
        let c = self.concat(xs)?;
        Ok(self.sum(c))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xt = self.value(x);
        if index >= xt.len() {
            return Err(Error::OutOfRange {
                what: "pick",
                index,
                size: xt.len(),
            });
        }
        let v = xt.data()[index];
        Ok(self.push(Op::Pick(x, index), Tensor::scalar(v), &[x]))
    }

    pub fn index_sum(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let mut s = 0.0;
        for &i in indices {
            s += *xt.data().get(i).ok_or(Error::OutOfRange {
                what: "index_sum",
                index: i,
                size: xt.len(),
            })?;
        }
        Ok(self.push(Op::IndexSum(x, indices.to_vec()), Tensor::scalar(s), &[x]))
    }

    /// `log Σ_{k ∈ indices} exp(x_k)`; `-inf` for an empty index set.
    pub fn log_sum_exp_at(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let mut picked = Vec::with_capacity(indices.len());
        for &i in indices {
            picked.push(*xt.data().get(i).ok_or(Error::OutOfRange {
                what: "log_sum_exp_at",
                index: i,
                size: xt.len(),
            })?);
        }
        let v = log_sum_exp(&picked);
        Ok(self.push(Op::LogSumExpAt(x, indices.to_vec()), Tensor::scalar(v), &[x]))
    }

    /// `log(exp(a) + exp(b))` for scalars.
    pub fn log_add_exp(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if !at.is_scalar() || !bt.is_scalar() {
            return Err(mismatch("log_add_exp", at, bt));
        }
        let v = log_sum_exp(&[at.item(), bt.item()]);
        Ok(self.push(Op::LogAddExp(a, b), Tensor::scalar(v), &[a, b]))
    }

    /// `Σ_k p_k · m[k, :]` for `p: [k]`, `m: [k, n]`.
    pub fn weighted_sum(&mut self, p: Var, m: Var) -> Result<Var> {
        let (pt, mt) = (self.value(p), self.value(m));
        if mt.shape().len() != 2 || pt.len() != mt.shape()[0] {
            return Err(mismatch("weighted_sum", pt, mt));
        }
        let n = mt.shape()[1];
        let mut out = vec![0.0; n];
        for (k, &w) in pt.data().iter().enumerate() {
            for (o, x) in out.iter_mut().zip(mt.row(k)) {
                *o += w * x;
            }
        }
        let out = Tensor::from_parts(vec![n], out);
        Ok(self.push(Op::WeightedSum(p, m), out, &[p, m]))
    }

    /// Additive attention scores `s_k = Σ_a v_a tanh(keys[k, a] + query[a])`.
    pub fn attention_scores(&mut self, keys: Var, query: Var, v: Var) -> Result<Var> {
        let (kt, qt, vt) = (self.value(keys), self.value(query), self.value(v));
        if kt.shape().len() != 2 || kt.shape()[1] != qt.len() || qt.len() != vt.len() {
            return Err(mismatch("attention_scores", kt, qt));
        }
        let (k, a) = (kt.shape()[0], kt.shape()[1]);
        let (qd, vd) = (qt.data(), vt.data());
        let out: Vec<f64> = (0..k)
            .map(|r| {
                kt.row(r)
                    .iter()
                    .zip(qd)
                    .zip(vd)
                    .map(|((x, q), w)| w * (x + q).tanh())
                    .sum()
            })
            .collect();
        debug_assert_eq!(out.len(), k);
        let _ = a;
        let out = Tensor::from_parts(vec![k], out);
        Ok(self.push(Op::AttnScores(keys, query, v), out, &[keys, query, v]))
    }

    /// `p ⊗ q` as an `[r, c]` matrix.
    pub fn outer(&mut self, p: Var, q: Var) -> Result<Var> {
        let (pt, qt) = (self.value(p), self.value(q));
        if pt.shape().len() != 1 || qt.shape().len() != 1 {
            return Err(mismatch("outer_product", pt, qt));
        }
        let mut out = Vec::with_capacity(pt.len() * qt.len());
        for x in pt.data() {
            out.extend(qt.data().iter().map(|y| x * y));
        }
        let out = Tensor::from_parts(vec![pt.len(), qt.len()], out);
        Ok(self.push(Op::Outer(p, q), out, &[p, q]))
    }

    /// `a_i + b_j` as an `[r, c]` matrix; the log-domain outer product.
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape().len() != 1 || bt.shape().len() != 1 {
            return Err(mismatch("outer_sum", at, bt));
        }
        let mut out = Vec::with_capacity(at.len() * bt.len());
        for x in at.data() {
            out.extend(bt.data().iter().map(|y| x + y));
        }
        let out = Tensor::from_parts(vec![at.len(), bt.len()], out);
        Ok(self.push(Op::OuterSum(a, b), out, &[a, b]))
    }

    fn grid_dims(&self, op: &'static str, grid: Var, p: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let (gt, pt) = (self.value(grid), self.value(p));
        if gt.shape().len() != 3 || pt.shape().len() != 1 || pt.len() != gt.shape()[axis] {
            return Err(mismatch(op, gt, pt));
        }
        Ok((gt.shape()[0], gt.shape()[1], gt.shape()[2]))
    }

    /// For `grid: [R, C, D]` and `p: [C]`, returns `[R, D]` with rows `Σ_c p_c grid[r, c]`.
    pub fn grid_mix_columns(&mut self, grid: Var, p: Var) -> Result<Var> {
        let (r, c, d) = self.grid_dims("grid_mix_columns", grid, p, 1)?;
        let (gd, pd) = (self.value(grid).data(), self.value(p).data());
        let mut out = vec![0.0; r * d];
        for ri in 0..r {
            for (ci, w) in pd.iter().enumerate() {
                let cell = &gd[(ri * c + ci) * d..(ri * c + ci + 1) * d];
                for (o, x) in out[ri * d..(ri + 1) * d].iter_mut().zip(cell) {
                    *o += w * x;
                }
            }
        }
        let out = Tensor::from_parts(vec![r, d], out);
        Ok(self.push(Op::GridCols(grid, p), out, &[grid, p]))
    }

    /// For `grid: [R, C, D]` and `p: [R]`, returns `[C, D]` with rows `Σ_r p_r grid[r, c]`.
    pub fn grid_mix_rows(&mut self, grid: Var, p: Var) -> Result<Var> {
        let (r, c, d) = self.grid_dims("grid_mix_rows", grid, p, 0)?;
        let (gd, pd) = (self.value(grid).data(), self.value(p).data());
        let mut out = vec![0.0; c * d];
        for (ri, w) in pd.iter().enumerate().take(r) {
            for ci in 0..c {
                let cell = &gd[(ri * c + ci) * d..(ri * c + ci + 1) * d];
                for (o, x) in out[ci * d..(ci + 1) * d].iter_mut().zip(cell) {
                    *o += w * x;
                }
            }
        }
        let out = Tensor::from_parts(vec![c, d], out);
        Ok(self.push(Op::GridRows(grid, p), out, &[grid, p]))
    }

    /// Computes d(loss)/d(parameter) for every trainable parameter reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut out = Gradients::default();
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop(&node.op, Var(i), &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop(&self, op: &Op, this: Var, g: &[f64], grads: &mut [Option<Vec<f64>>], out: &mut Gradients) {
        let y = self.value(this).data();
        match op {
            Op::Input => {}
            Op::Param(id) => {
                let acc = out.by_param.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::EmbedRow(table, id) => {
                let e = g.len();
                if let Some(dt) = self.slot(grads, *table) {
                    for (a, b) in dt[id * e..(id + 1) * e].iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            Op::EmbedRows(table, ids) => {
                let e = g.len() / ids.len();
                if let Some(dt) = self.slot(grads, *table) {
                    for (k, id) in ids.iter().enumerate() {
                        for (a, b) in dt[id * e..(id + 1) * e].iter_mut().zip(&g[k * e..(k + 1) * e]) {
                            *a += b;
                        }
                    }
                }
            }
            Op::MatVec(w, x) | Op::Affine(w, x, _) => {
                let wt = self.value(*w);
                let n = wt.shape()[1];
                let xd = self.value(*x).data();
                if let Some(dw) = self.slot(grads, *w) {
                    for (i, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (a, xj) in dw[i * n..(i + 1) * n].iter_mut().zip(xd) {
                            *a += gi * xj;
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let wd = wt.data();
                    for (i, gi) in g.iter().enumerate() {
                        for (a, wij) in dx.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                            *a += gi * wij;
                        }
                    }
                }
                if let Op::Affine(_, _, b) = op {
                    if let Some(db) = self.slot(grads, *b) {
                        db.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::MatMulT(a, w) => {
                let (at, wt) = (self.value(*a), self.value(*w));
                let (k, n, m) = (at.shape()[0], at.shape()[1], wt.shape()[0]);
                let (ad, wd) = (at.data(), wt.data());
                if let Some(da) = self.slot(grads, *a) {
                    for r in 0..k {
                        for c in 0..m {
                            let gv = g[r * m + c];
                            for (x, wv) in da[r * n..(r + 1) * n].iter_mut().zip(&wd[c * n..(c + 1) * n]) {
                                *x += gv * wv;
                            }
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    for r in 0..k {
                        for c in 0..m {
                            let gv = g[r * m + c];
                            for (x, av) in dw[c * n..(c + 1) * n].iter_mut().zip(&ad[r * n..(r + 1) * n]) {
                                *x += gv * av;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for ((x, gi), bi) in da.iter_mut().zip(g).zip(bd) {
                        *x += gi * bi;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((x, gi), ai) in db.iter_mut().zip(g).zip(ad) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(dp) = self.slot(grads, *p) {
                        dp.iter_mut().zip(&g[offset..offset + n]).for_each(|(a, b)| *a += b);
                    }
                    offset += n;
                }
            }
            Op::Stack(rows) => {
                let n = g.len() / rows.len();
                for (k, r) in rows.iter().enumerate() {
                    if let Some(dr) = self.slot(grads, *r) {
                        dr.iter_mut().zip(&g[k * n..(k + 1) * n]).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((a, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *a += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((a, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *a += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::LogSigmoid(x) => {
                let xd = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((a, gi), xi) in dx.iter_mut().zip(g).zip(xd) {
                        *a += gi * sigmoid(-xi);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((a, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *a += gi * yi;
                    }
                }
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((a, gi), xi) in dx.iter_mut().zip(g).zip(xd) {
                        *a += gi / xi;
                    }
                }
            }
            Op::ClampMin(x, floor) => {
                let xd = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((a, gi), xi) in dx.iter_mut().zip(g).zip(xd) {
                        if *xi >= *floor {
                            *a += gi;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for ((a, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *a += yi * (gi - dot);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let total: f64 = g.iter().sum();
                    for ((a, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *a += gi - yi.exp() * total;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Pick(x, i) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx[*i] += g[0];
                }
            }
            Op::IndexSum(x, idx) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for &i in idx {
                        dx[i] += g[0];
                    }
                }
            }
            Op::LogSumExpAt(x, idx) => {
                let lse = y[0];
                if lse == f64::NEG_INFINITY {
                    return;
                }
                let xd = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for &i in idx {
                        dx[i] += g[0] * (xd[i] - lse).exp();
                    }
                }
            }
            Op::LogAddExp(a, b) => {
                let lse = y[0];
                if lse == f64::NEG_INFINITY {
                    return;
                }
                let (av, bv) = (self.value(*a).item(), self.value(*b).item());
                if let Some(da) = self.slot(grads, *a) {
                    da[0] += g[0] * (av - lse).exp();
                }
                if let Some(db) = self.slot(grads, *b) {
                    db[0] += g[0] * (bv - lse).exp();
                }
            }
            Op::WeightedSum(p, m) => {
                let (pt, mt) = (self.value(*p), self.value(*m));
                let n = mt.shape()[1];
                if let Some(dp) = self.slot(grads, *p) {
                    for (k, a) in dp.iter_mut().enumerate() {
                        *a += mt.row(k).iter().zip(g).map(|(x, gi)| x * gi).sum::<f64>();
                    }
                }
                if let Some(dm) = self.slot(grads, *m) {
                    for (k, w) in pt.data().iter().enumerate() {
                        for (a, gi) in dm[k * n..(k + 1) * n].iter_mut().zip(g) {
                            *a += w * gi;
                        }
                    }
                }
            }
            Op::AttnScores(keys, query, v) => {
                let (kt, qt, vt) = (self.value(*keys), self.value(*query), self.value(*v));
                let (k, a) = (kt.shape()[0], kt.shape()[1]);
                let (qd, vd) = (qt.data(), vt.data());
                let mut t = vec![0.0; k * a];
                for r in 0..k {
                    for (c, (x, q)) in kt.row(r).iter().zip(qd).enumerate() {
                        t[r * a + c] = (x + q).tanh();
                    }
                }
                if let Some(dv) = self.slot(grads, *v) {
                    for r in 0..k {
                        for c in 0..a {
                            dv[c] += g[r] * t[r * a + c];
                        }
                    }
                }
                let mut pre = vec![0.0; k * a];
                for r in 0..k {
                    for c in 0..a {
                        let tv = t[r * a + c];
                        pre[r * a + c] = g[r] * vd[c] * (1.0 - tv * tv);
                    }
                }
                if let Some(dk) = self.slot(grads, *keys) {
                    dk.iter_mut().zip(&pre).for_each(|(x, y)| *x += y);
                }
                if let Some(dq) = self.slot(grads, *query) {
                    for r in 0..k {
                        for c in 0..a {
                            dq[c] += pre[r * a + c];
                        }
                    }
                }
            }
            Op::Outer(p, q) => {
                let (pd, qd) = (self.value(*p).data(), self.value(*q).data());
                let c = qd.len();
                if let Some(dp) = self.slot(grads, *p) {
                    for (i, a) in dp.iter_mut().enumerate() {
                        *a += g[i * c..(i + 1) * c].iter().zip(qd).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                if let Some(dq) = self.slot(grads, *q) {
                    for (i, pi) in pd.iter().enumerate() {
                        for (a, gi) in dq.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                            *a += gi * pi;
                        }
                    }
                }
            }
            Op::OuterSum(a, b) => {
                let c = self.value(*b).len();
                if let Some(da) = self.slot(grads, *a) {
                    for (i, x) in da.iter_mut().enumerate() {
                        *x += g[i * c..(i + 1) * c].iter().sum::<f64>();
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::GridCols(grid, p) => {
                let gt = self.value(*grid);
                let (r, c, d) = (gt.shape()[0], gt.shape()[1], gt.shape()[2]);
                let (gd, pd) = (gt.data(), self.value(*p).data());
                if let Some(dp) = self.slot(grads, *p) {
                    for ri in 0..r {
                        for (ci, a) in dp.iter_mut().enumerate() {
                            let cell = &gd[(ri * c + ci) * d..(ri * c + ci + 1) * d];
                            *a += cell.iter().zip(&g[ri * d..(ri + 1) * d]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(dg) = self.slot(grads, *grid) {
                    for ri in 0..r {
                        for (ci, w) in pd.iter().enumerate() {
                            let at = (ri * c + ci) * d;
                            for (a, gi) in dg[at..at + d].iter_mut().zip(&g[ri * d..(ri + 1) * d]) {
                                *a += w * gi;
                            }
                        }
                    }
                }
            }
            Op::GridRows(grid, p) => {
                let gt = self.value(*grid);
                let (r, c, d) = (gt.shape()[0], gt.shape()[1], gt.shape()[2]);
                let (gd, pd) = (gt.data(), self.value(*p).data());
                if let Some(dp) = self.slot(grads, *p) {
                    for (ri, a) in dp.iter_mut().enumerate().take(r) {
                        for ci in 0..c {
                            let cell = &gd[(ri * c + ci) * d..(ri * c + ci + 1) * d];
                            *a += cell.iter().zip(&g[ci * d..(ci + 1) * d]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(dg) = self.slot(grads, *grid) {
                    for (ri, w) in pd.iter().enumerate() {
                        for ci in 0..c {
                            let at = (ri * c + ci) * d;
                            for (a, gi) in dg[at..at + d].iter_mut().zip(&g[ci * d..(ci + 1) * d]) {
                                *a += w * gi;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, t)| s.add(*n, t.clone()).unwrap()).collect();
        (s, ids)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.input(Tensor::vector(vec![0.0, 0.0]));
        let p = t.softmax(x).unwrap();
        assert_eq!(t.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.input(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.scalar(y), 0.5);
    }

    #[test]
    fn saturating_functions_stay_finite() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.input(Tensor::vector(vec![-1e4, -800.0, 0.0, 800.0, 1e4]));
        for v in [t.sigmoid(x), t.tanh(x), t.log_sigmoid(x), t.softmax(x).unwrap(), t.log_softmax(x).unwrap()] {
            assert!(t.value(v).all_finite(), "{:?}", t.value(v));
        }
        let p = t.softmax(x).unwrap();
        let total: f64 = t.value(p).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outer_product_of_simplex_vectors() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let p = t.input(Tensor::vector(vec![0.3, 0.7]));
        let q = t.input(Tensor::vector(vec![0.5, 0.5]));
        let o = t.outer(p, q).unwrap();
        assert_eq!(t.shape(o), &[2, 2]);
        let expect = [0.15, 0.15, 0.35, 0.35];
        for (a, b) in t.value(o).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let total: f64 = t.value(o).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let w = t.input(Tensor::zeros(&[2, 3]));
        let x = t.input(Tensor::zeros(&[2]));
        match t.matvec(w, x) {
            Err(Error::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "matvec");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = t.outer(w, x).unwrap_err().to_string();
        assert!(msg.contains("outer_product"), "{msg}");
    }

    #[test]
    fn empty_sets_are_rejected() {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        assert!(matches!(t.stack(&[]), Err(Error::EmptyInput { .. })));
        assert!(matches!(t.concat(&[]), Err(Error::EmptyInput { .. })));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let (s, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut t = Tape::new(&s);
        let w = t.param(ids[0]);
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(ids[0]).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_paths_give_no_gradient() {
        let (s, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut t = Tape::new(&s);
        let _w = t.param(ids[0]);
        let zero = t.input(Tensor::scalar(0.0));
        let c = t.input(Tensor::scalar(3.0));
        let sg = t.sigmoid(zero);
        let loss = t.mul(sg, c).unwrap();
        assert_eq!(t.scalar(loss), 1.5);
        let g = t.backward(loss).unwrap();
        assert!(g.get(ids[0]).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (s, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut t = Tape::new(&s);
        let w = t.param(ids[0]);
        assert!(matches!(t.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn gradients_accumulate_until_reset() {
        let (mut s, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        for _ in 0..2 {
            let g = {
                let mut t = Tape::new(&s);
                let w = t.param(ids[0]);
                let sq = t.mul(w, w).unwrap();
                let loss = t.sum(sq);
                t.backward(loss).unwrap()
            };
            s.accumulate(&g);
        }
        assert_eq!(s.get(ids[0]).grad().data(), &[4.0, 8.0]);
        s.zero_grad();
        assert_eq!(s.get(ids[0]).grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_parameters_record_no_gradient_work() {
        let (mut s, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        s.freeze();
        let mut t = Tape::new(&s);
        let w = t.param(ids[0]);
        let loss = t.sum(w);
        assert!(!t.requires_grad(loss));
        assert!(t.backward(loss).unwrap().get(ids[0]).is_none());
    }

    #[test]
    fn clear_frees_intermediates() {
        let (s, ids) = store_with(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut t = Tape::new(&s);
        let w = t.param(ids[0]);
        let _ = t.tanh(w);
        assert_eq!(t.len(), 2);
        t.clear();
        assert!(t.is_empty());
        let w = t.param(ids[0]);
        assert_eq!(t.value(w).data(), &[1.0, 2.0]);
    }

    #[test]
    fn log_domain_helpers() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-1000.0) + 1000.0).abs() < 1e-9);
        assert!(log_sigmoid(1000.0).abs() < 1e-300);
    }
}
