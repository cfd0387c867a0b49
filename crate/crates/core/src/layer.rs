//! Trainable units: the KAN edge layer and its affine (MLP) counterpart.
//!
//! A KAN layer computes, for every output `o`,
//!
//! ```text
//! y_o = Σ_i  base[o,i]·silu(x_i) + Σ_j spline[o,i,j]·φ_j(x_i)
//! ```
//!
//! where `φ` is the configured basis family. The forward pass is recorded as
//! one fused tape node; its backward rule reuses the basis values cached
//! during the forward pass and evaluates basis derivatives only when the
//! input itself needs a gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_tn, silu, silu_grad, transpose, CustomOp, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Kan,
    Mlp,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Kan => "kan",
            LayerKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kan" => Ok(LayerKind::Kan),
            "mlp" => Ok(LayerKind::Mlp),
            other => Err(Error::config(format!("layer kind must be kan|mlp, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub spec: BasisSpec,
    /// `out_dim × in_dim`
    pub base_weight: ParamId,
    /// `out_dim × in_dim × num_functions`
    pub spline_weight: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`
    pub weight: ParamId,
    /// `out_dim`
    pub bias: ParamId,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Kan(KanLayer),
    Mlp(MlpLayer),
}

fn check_dims(in_dim: usize, out_dim: usize) -> Result<()> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::config(format!(
            "layer dims must be positive, got {in_dim}→{out_dim}"
        )));
    }
    Ok(())
}

impl KanLayer {
    /// Base weights ~ U(±1/√in); spline weights ~ N(0, 0.1/√num_functions).
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        spec: BasisSpec,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(in_dim, out_dim)?;
        let nf = spec.num_functions();
        let bound = 1.0 / (in_dim as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let base: Vec<f64> = (0..out_dim * in_dim).map(|_| uni.sample(rng)).collect();
        let normal = Normal::new(0.0, 0.1 / (nf as f64).sqrt()).expect("positive std");
        let spline: Vec<f64> = (0..out_dim * in_dim * nf).map(|_| normal.sample(rng)).collect();
        let base_weight = store.add(format!("{name}.base"), Tensor::new(vec![out_dim, in_dim], base)?);
        let spline_weight = store.add(
            format!("{name}.spline"),
            Tensor::new(vec![out_dim, in_dim, nf], spline)?,
        );
        Ok(Self {
            in_dim,
            out_dim,
            spec,
            base_weight,
            spline_weight,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.out_dim * self.in_dim * (1 + self.spec.num_functions())
    }

    pub fn macs(&self) -> usize {
        self.in_dim * self.out_dim * (1 + self.spec.num_functions()) + self.in_dim * self.spec.eval_cost()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let base = tape.param(store, self.base_weight);
        let spline = tape.param(store, self.spline_weight);
        kan_forward(tape, x, base, spline, &self.spec)
    }
}

/// Records one KAN layer application with explicit weight nodes.
///
/// `x` is `batch × in`, `base` is `out × in` and `spline` is
/// `out × in × num_functions`.
pub fn kan_forward(tape: &mut Tape, x: Var, base: Var, spline: Var, spec: &BasisSpec) -> Result<Var> {
    let xt = tape.value(x);
    let bt = tape.value(base);
    let st = tape.value(spline);
    let nf = spec.num_functions();
    if xt.shape().len() != 2 {
        return Err(Error::shape("kan_forward", xt.shape(), bt.shape()));
    }
    let (batch, in_dim) = (xt.shape()[0], xt.shape()[1]);
    let out_dim = bt.shape()[0];
    if bt.shape() != [out_dim, in_dim] {
        return Err(Error::shape("kan_forward", xt.shape(), bt.shape()));
    }
    if st.shape() != [out_dim, in_dim, nf] {
        return Err(Error::shape("kan_forward", bt.shape(), st.shape()));
    }

    let xs = xt.data();
    let act: Vec<f64> = xs.iter().map(|&v| silu(v)).collect();
    let mut phi = vec![0.0; batch * in_dim * nf];
    for (v, chunk) in xs.iter().zip(phi.chunks_mut(nf)) {
        spec.eval_into(*v, chunk);
    }

    let mut y = vec![0.0; batch * out_dim];
    let base_t = transpose(bt.data(), out_dim, in_dim);
    gemm_nn(batch, in_dim, out_dim, &act, &base_t, &mut y);
    let spline_t = transpose(st.data(), out_dim, in_dim * nf);
    gemm_nn(batch, in_dim * nf, out_dim, &phi, &spline_t, &mut y);

    let out = Tensor::new(vec![batch, out_dim], y)?;
    let op = KanOp {
        spec: spec.clone(),
        batch,
        in_dim,
        out_dim,
        act,
        phi,
    };
    Ok(tape.custom(vec![x, base, spline], out, Box::new(op)))
}

struct KanOp {
    spec: BasisSpec,
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    act: Vec<f64>,
    phi: Vec<f64>,
}

impl CustomOp for KanOp {
    fn name(&self) -> &'static str {
        "kan"
    }

    fn backward(&self, g: &[f64], inputs: &[&Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (b, i, o) = (self.batch, self.in_dim, self.out_dim);
        let nf = self.spec.num_functions();
        let mut out = vec![None, None, None];

        if needs[1] {
            let mut d = vec![0.0; o * i];
            gemm_tn(b, o, i, g, &self.act, &mut d);
            out[1] = Some(d);
        }
        if needs[2] {
            let mut d = vec![0.0; o * i * nf];
            gemm_tn(b, o, i * nf, g, &self.phi, &mut d);
            out[2] = Some(d);
        }
        if needs[0] {
            let x = inputs[0].data();
            let mut gb = vec![0.0; b * i];
            gemm_nn(b, o, i, g, inputs[1].data(), &mut gb);
            let mut gs = vec![0.0; b * i * nf];
            gemm_nn(b, o, i * nf, g, inputs[2].data(), &mut gs);
            let mut dphi = vec![0.0; nf];
            let mut dx = vec![0.0; b * i];
            for (k, d) in dx.iter_mut().enumerate() {
                self.spec.derivative_into(x[k], &mut dphi);
                let spline_part: f64 = gs[k * nf..(k + 1) * nf]
                    .iter()
                    .zip(&dphi)
                    .map(|(a, c)| a * c)
                    .sum();
                *d = gb[k] * silu_grad(x[k]) + spline_part;
            }
            out[0] = Some(dx);
        }
        out
    }
}

impl MlpLayer {
    /// Weight and bias ~ U(±1/√in).
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(in_dim, out_dim)?;
        let bound = 1.0 / (in_dim as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w: Vec<f64> = (0..out_dim * in_dim).map(|_| uni.sample(rng)).collect();
        let b: Vec<f64> = (0..out_dim).map(|_| uni.sample(rng)).collect();
        let weight = store.add(format!("{name}.weight"), Tensor::new(vec![out_dim, in_dim], w)?);
        let bias = store.add(format!("{name}.bias"), Tensor::new(vec![out_dim], b)?);
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }

    pub fn macs(&self) -> usize {
        self.in_dim * self.out_dim
    }

    /// `act(x·Wᵀ + b)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let xt = tape.value(x);
        if xt.shape().len() != 2 || xt.shape()[1] != self.in_dim {
            return Err(Error::shape("mlp_forward", xt.shape(), &[self.out_dim, self.in_dim]));
        }
        let w = tape.param(store, self.weight);
        let wt = transpose_var(tape, w, self.out_dim, self.in_dim)?;
        let y = tape.matmul(x, wt)?;
        let b = tape.param(store, self.bias);
        let y = tape.add(y, b)?;
        Ok(match self.activation {
            Activation::Identity => y,
            Activation::Silu => tape.silu(y),
        })
    }
}

/// Differentiable 2-D transpose of a `rows × cols` node.
pub fn transpose_var(tape: &mut Tape, x: Var, rows: usize, cols: usize) -> Result<Var> {
    let t = tape.value(x);
    if t.shape() != [rows, cols] {
        return Err(Error::shape("transpose", t.shape(), &[rows, cols]));
    }
    let out = Tensor::new(vec![cols, rows], transpose(t.data(), rows, cols))?;
    Ok(tape.custom(vec![x], out, Box::new(TransposeOp { rows, cols })))
}

struct TransposeOp {
    rows: usize,
    cols: usize,
}

impl CustomOp for TransposeOp {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, g: &[f64], _inputs: &[&Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| transpose(g, self.cols, self.rows))]
    }
}

impl Layer {
    /// Builds a layer of the requested kind. `activation` applies to the
    /// MLP form only; KAN layers carry their nonlinearity on the edges.
    pub fn init<R: Rng>(
        kind: LayerKind,
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        spec: &BasisSpec,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            LayerKind::Kan => Layer::Kan(KanLayer::init(store, name, in_dim, out_dim, spec.clone(), rng)?),
            LayerKind::Mlp => Layer::Mlp(MlpLayer::init(store, name, in_dim, out_dim, activation, rng)?),
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Kan(_) => LayerKind::Kan,
            Layer::Mlp(_) => LayerKind::Mlp,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Kan(l) => l.in_dim,
            Layer::Mlp(l) => l.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Kan(l) => l.out_dim,
            Layer::Mlp(l) => l.out_dim,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Kan(l) => l.parameter_count(),
            Layer::Mlp(l) => l.parameter_count(),
        }
    }

    pub fn macs(&self) -> usize {
        match self {
            Layer::Kan(l) => l.macs(),
            Layer::Mlp(l) => l.macs(),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        match self {
            Layer::Kan(l) => [l.base_weight, l.spline_weight],
            Layer::Mlp(l) => [l.weight, l.bias],
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let xt = tape.value(x);
        if xt.shape().len() != 2 || xt.shape()[1] != self.in_dim() {
            return Err(Error::shape("layer input", xt.shape(), &[self.in_dim()]));
        }
        match self {
            Layer::Kan(l) => l.forward(tape, store, x),
            Layer::Mlp(l) => l.forward(tape, store, x),
        }
    }
}
