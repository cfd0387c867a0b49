//! Dense 64-bit tensors with a define-by-run reverse-mode tape.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] walks the recording in reverse exactly
//! once and accumulates gradients into the parameters held by a
//! [`ParamStore`]. Trainable arrays never live on the tape itself; the tape
//! copies their values in when they are bound with [`Tape::param`], which
//! keeps the store free to be updated by the optimizer between passes.
//!
//! Only the operations needed by the forecasting model are provided. The
//! KAN layer registers itself through [`CustomOp`].

use crate::error::{Error, Result};

/// Row-major array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    /// Number of rows when viewed as `[leading... , last]`.
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.last_dim();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Index of a trainable array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of named trainable tensors.
///
/// Registration order is the canonical order used by the optimizer,
/// checkpoints and parameter counting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of stored trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Global L2 norm over every gradient buffer.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm measured before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for p in &mut self.params {
                if let Some(g) = p.tensor.grad.as_mut() {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, `None` where `needs[i]` is false.
    fn backward(
        &self,
        grad_out: &[f64],
        inputs: &[&Tensor],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    AvgPool(Var, usize),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    RowAffine {
        x: Var,
        scale: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Define-by-run operation recorder.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    /// Records a leaf whose gradient is reported through [`Gradients`].
    pub fn leaf(&mut self, mut t: Tensor, requires_grad: bool) -> Var {
        t.grad = None;
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Binds a stored parameter; its gradient accumulates into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let src = store.get(id);
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.clone(),
            grad: None,
        };
        self.push(t, Op::Param(id), true)
    }

    /// `[m×k]·[k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::shape("matmul", &ta.shape, &tb.shape));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, &ta.data, &tb.data, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa == sb || (sb.len() < sa.len() && sa.ends_with(sb)) {
            Ok(())
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    /// Elementwise sum. `b` may match the trailing dims of `a`, in which
    /// case it is repeated over the leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("add", a, b)?;
        let tb = &self.value(b).data;
        let mut out = self.value(a).clone();
        for chunk in out.data.chunks_mut(tb.len()) {
            chunk.iter_mut().zip(tb).for_each(|(o, v)| *o += v);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("sub", a, b)?;
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::shape("sub", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = self.value(a).clone();
        out.data
            .iter_mut()
            .zip(&self.value(b).data)
            .for_each(|(o, v)| *o -= v);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::shape("mul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = self.value(a).clone();
        out.data
            .iter_mut()
            .zip(&self.value(b).data)
            .for_each(|(o, v)| *o *= v);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = silu(*v));
        let rg = self.rg(&[a]);
        self.push(out, Op::Silu(a), rg)
    }

    /// Non-overlapping mean pooling along the last axis with stride `k`.
    /// A trailing remainder shorter than `k` is dropped.
    pub fn avg_pool1d(&mut self, a: Var, k: usize) -> Result<Var> {
        let t = self.value(a);
        let len = t.last_dim();
        if k == 0 {
            return Err(Error::config("pool kernel must be at least 1"));
        }
        if len < k {
            return Err(Error::config(format!(
                "pool kernel {k} exceeds sequence length {len}"
            )));
        }
        let out_len = len / k;
        let rows = t.rows();
        let inv = 1.0 / k as f64;
        let mut out = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = t.row(r);
            for j in 0..out_len {
                out.push(row[j * k..(j + 1) * k].iter().sum::<f64>() * inv);
            }
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = out_len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AvgPool(a, k), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `out[r, :] = x[r, :] * scale[r] + shift[r]` with constant per-row
    /// coefficients.
    pub fn row_affine(&mut self, x: Var, scale: Vec<f64>, shift: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        let rows = t.rows();
        if scale.len() != rows || shift.len() != rows {
            return Err(Error::shape("row_affine", &t.shape, &[scale.len(), shift.len()]));
        }
        let c = t.last_dim();
        let mut out = t.clone();
        for (r, chunk) in out.data.chunks_mut(c).enumerate() {
            chunk.iter_mut().for_each(|v| *v = *v * scale[r] + shift[r]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::RowAffine { x, scale }, rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.numel() {
            return Err(Error::shape("mse_loss", &p.shape, &target.shape));
        }
        let n = p.numel() as f64;
        let loss = p
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data.clone(),
            },
            rg,
        ))
    }

    /// Records the result of an externally computed operation.
    pub fn custom(&mut self, inputs: Vec<Var>, output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(&inputs);
        self.push(output, Op::Custom(op, inputs), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Parameter gradients are added onto whatever the store already holds,
    /// so two calls without zeroing double them.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        self.sweep(loss, Some(store))
    }

    /// Reverse sweep that only reports node gradients; parameter nodes are
    /// treated as constants and no store is touched.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        self.sweep(loss, None)
    }

    fn sweep(&self, loss: Var, mut store: Option<&mut ParamStore>) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                Op::Param(pid) => {
                    if let (Some(g), Some(store)) = (grads[id].as_ref(), store.as_deref_mut()) {
                        let dst = store.get_mut(*pid).grad_mut();
                        dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                    }
                    continue;
                }
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if self.needs(*a) {
                    let bt = transpose(&tb.data, k, n);
                    let da = slot(grads, *a, m * k);
                    gemm_nn(m, n, k, g, &bt, da);
                }
                if self.needs(*b) {
                    let db = slot(grads, *b, k * n);
                    gemm_tn(m, k, n, &ta.data, g, db);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    let da = slot(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if self.needs(*b) {
                    let n = self.value(*b).numel();
                    let db = slot(grads, *b, n);
                    for chunk in g.chunks(n) {
                        db.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    let da = slot(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if self.needs(*b) {
                    let db = slot(grads, *b, g.len());
                    db.iter_mut().zip(g).for_each(|(d, v)| *d -= v);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let tb = &self.value(*b).data;
                    let da = slot(grads, *a, g.len());
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(tb) {
                        *d += gv * bv;
                    }
                }
                if self.needs(*b) {
                    let ta = &self.value(*a).data;
                    let db = slot(grads, *b, g.len());
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(ta) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale(a, s) => {
                let da = slot(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, v)| *d += v * s);
            }
            Op::Silu(a) => {
                let x = &self.value(*a).data;
                let da = slot(grads, *a, g.len());
                for ((d, gv), xv) in da.iter_mut().zip(g).zip(x) {
                    *d += gv * silu_grad(*xv);
                }
            }
            Op::AvgPool(a, k) => {
                let ta = self.value(*a);
                let len = ta.last_dim();
                let out_len = len / k;
                let inv = 1.0 / *k as f64;
                let da = slot(grads, *a, ta.numel());
                for (r, grow) in g.chunks(out_len).enumerate() {
                    let drow = &mut da[r * len..(r + 1) * len];
                    for (j, gv) in grow.iter().enumerate() {
                        drow[j * k..(j + 1) * k].iter_mut().for_each(|d| *d += gv * inv);
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                slot(grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let s = g[0] / n as f64;
                slot(grads, *a, n).iter_mut().for_each(|d| *d += s);
            }
            Op::Reshape(a) => {
                let da = slot(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            Op::RowAffine { x, scale, .. } => {
                let c = self.value(*x).last_dim();
                let dx = slot(grads, *x, g.len());
                for (r, (drow, grow)) in dx.chunks_mut(c).zip(g.chunks(c)).enumerate() {
                    drow.iter_mut().zip(grow).for_each(|(d, v)| *d += v * scale[r]);
                }
            }
            Op::Mse { pred, target } => {
                let p = &self.value(*pred).data;
                let s = 2.0 * g[0] / p.len() as f64;
                let dp = slot(grads, *pred, p.len());
                for ((d, pv), tv) in dp.iter_mut().zip(p).zip(target) {
                    *d += s * (pv - tv);
                }
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.needs(*v)).collect();
                let local = op.backward(g, &vals, &needs);
                for ((v, lg), need) in inputs.iter().zip(local).zip(&needs) {
                    if let (Some(lg), true) = (lg, *need) {
                        let d = slot(grads, *v, lg.len());
                        d.iter_mut().zip(&lg).for_each(|(d, x)| *d += x);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

/// `c[m×n] += a[m×k] · b[k×n]`.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(cv, bv)| *cv += av * bv);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(cv, bv)| *cv += av * bv);
        }
    }
}

/// Transposes a row-major `rows×cols` matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Largest coordinate-wise relative error between the tape gradient of a
/// scalar function and central finite differences with step `h`.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point.clone(), false);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).data[0])
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    let grads = tape.gradients(out)?;
    let zeros = vec![0.0; x.numel()];
    let analytic = grads.get(v).unwrap_or(&zeros).to_vec();

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = eval(&probe)?;
        probe.data[i] = orig - h;
        let down = eval(&probe)?;
        probe.data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check`] over every scalar of every parameter in `store`.
pub fn grad_check_params<F>(store: &ParamStore, f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    let mut grads_store = work.clone();
    tape.backward(out, &mut grads_store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).data[0])
    };

    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let analytic = grads_store
            .get(id)
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
        for i in 0..store.get(id).numel() {
            let orig = work.get(id).data[i];
            work.get_mut(id).data[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
