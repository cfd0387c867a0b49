//! The multi-scale KAN mixing forecaster.
//!
//! Data flow for a batch `b × d × L`:
//!
//! 1. fold channels into rows, `(b·d) × L` (one shared model per variable);
//! 2. optional reversible per-window normalisation;
//! 3. optional structural prior, splitting the series into two components
//!    that each get their own trunk;
//! 4. per trunk: average-pool pyramid, per-scale embedding `Lᵢ → d_model`,
//!    `N` fine-to-coarse mixing blocks, one head per scale `d_model → P`;
//! 5. sum of every head output, then denormalisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::layer::{Activation, Layer, LayerKind};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const MA_KERNEL: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    None,
    Dft,
    Ma,
    NoMultiscale,
}

impl Prior {
    pub fn as_str(self) -> &'static str {
        match self {
            Prior::None => "none",
            Prior::Dft => "dft",
            Prior::Ma => "ma",
            Prior::NoMultiscale => "no_ms",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Prior::None),
            "dft" => Ok(Prior::Dft),
            "ma" => Ok(Prior::Ma),
            "no_ms" | "no_multiscale" => Ok(Prior::NoMultiscale),
            other => Err(Error::config(format!(
                "prior must be none|dft|ma|no_ms, got `{other}`"
            ))),
        }
    }

    fn trunks(self) -> usize {
        match self {
            Prior::Dft | Prior::Ma => 2,
            Prior::None | Prior::NoMultiscale => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Embed,
    Down,
    Ffn,
    Head,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Embed, Component::Down, Component::Ffn, Component::Head];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Embed => "embed",
            Component::Down => "down",
            Component::Ffn => "ffn",
            Component::Head => "head",
        }
    }

    /// Activation used when this component is an MLP layer.
    fn mlp_activation(self) -> Activation {
        match self {
            Component::Embed | Component::Head => Activation::Identity,
            Component::Down | Component::Ffn => Activation::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_scales: usize,
    pub pool_k: usize,
    pub basis: BasisSpec,
    pub embed: LayerKind,
    pub down: LayerKind,
    pub ffn: LayerKind,
    pub head: LayerKind,
    pub prior: Prior,
    pub instance_norm: bool,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            d_model: 16,
            n_blocks: 3,
            n_scales: 3,
            pool_k: 2,
            basis: BasisSpec::bspline(),
            embed: LayerKind::Kan,
            down: LayerKind::Kan,
            ffn: LayerKind::Kan,
            head: LayerKind::Kan,
            prior: Prior::None,
            instance_norm: true,
        }
    }
}

impl MixerConfig {
    pub fn kind(&self, c: Component) -> LayerKind {
        match c {
            Component::Embed => self.embed,
            Component::Down => self.down,
            Component::Ffn => self.ffn,
            Component::Head => self.head,
        }
    }

    pub fn set_all_kinds(&mut self, kind: LayerKind) {
        self.embed = kind;
        self.down = kind;
        self.ffn = kind;
        self.head = kind;
    }

    /// Number of scales actually built; the no-multiscale prior forces one.
    pub fn effective_scales(&self) -> usize {
        match self.prior {
            Prior::NoMultiscale => 1,
            _ => self.n_scales,
        }
    }

    pub fn scale_lengths(&self) -> Vec<usize> {
        let mut len = self.lookback;
        (0..self.effective_scales())
            .map(|i| {
                if i > 0 {
                    len /= self.pool_k;
                }
                len
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("d_model", self.d_model),
            ("n_blocks", self.n_blocks),
            ("n_scales", self.n_scales),
            ("pool_k", self.pool_k),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.instance_norm && self.lookback < 2 {
            return Err(Error::config("instance normalisation needs lookback >= 2"));
        }
        let coarsest = self.scale_lengths().last().copied().unwrap_or(0);
        if coarsest < 4 {
            return Err(Error::config(format!(
                "coarsest scale has {coarsest} points (lookback {} / {}^{}); need at least 4",
                self.lookback,
                self.pool_k,
                self.effective_scales() - 1
            )));
        }
        if self.prior == Prior::Ma && self.lookback < MA_KERNEL {
            return Err(Error::config(format!(
                "moving-average prior needs lookback >= {MA_KERNEL}"
            )));
        }
        Ok(())
    }
}

/// Per-window mean and standard deviation kept for denormalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn scale(&self) -> Vec<f64> {
        self.std.iter().map(|s| s + NORM_EPS).collect()
    }

    /// Inverse of [`instance_norm`] applied row-wise.
    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.mean.len() {
            return Err(Error::shape("denormalize", x.shape(), &[self.mean.len()]));
        }
        let c = x.last_dim();
        let mut out = x.clone();
        for (r, row) in out.data_mut().chunks_mut(c).enumerate() {
            let s = self.std[r] + NORM_EPS;
            row.iter_mut().for_each(|v| *v = *v * s + self.mean[r]);
        }
        Ok(out)
    }
}

/// Subtracts each row's mean and divides by its (population) std + 1e-5.
pub fn instance_norm(x: &Tensor) -> Result<(Tensor, NormStats)> {
    let len = x.last_dim();
    if len < 2 {
        return Err(Error::config("instance normalisation needs at least 2 points"));
    }
    let rows = x.rows();
    let mut mean = Vec::with_capacity(rows);
    let mut std = Vec::with_capacity(rows);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(len) {
        let m = row.iter().sum::<f64>() / len as f64;
        let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / len as f64;
        let s = var.sqrt();
        row.iter_mut().for_each(|v| *v = (*v - m) / (s + NORM_EPS));
        mean.push(m);
        std.push(s);
    }
    Ok((out, NormStats { mean, std }))
}

/// Scale 0 is `x` itself; scale `i` pools scale `i-1` with kernel `k`.
pub fn build_pyramid(tape: &mut Tape, x: Var, k: usize, scales: usize) -> Result<Vec<Var>> {
    let mut out = vec![x];
    for _ in 1..scales {
        let prev = *out.last().unwrap();
        out.push(tape.avg_pool1d(prev, k)?);
    }
    Ok(out)
}

/// Splits every row of `x` into two additive components.
///
/// * moving average: `(trend, x - trend)` with a centred window of 25 and
///   edge replication;
/// * DFT: `(low, high)` where `low` keeps the frequency bins below `⌊L/8⌋`.
pub fn apply_prior(x: &Tensor, prior: Prior) -> Result<(Tensor, Tensor)> {
    match prior {
        Prior::Ma => moving_average_split(x, MA_KERNEL),
        Prior::Dft => dft_split(x, x.last_dim() / 8),
        other => Err(Error::config(format!(
            "prior `{}` does not decompose the input",
            other.as_str()
        ))),
    }
}

pub fn moving_average_split(x: &Tensor, kernel: usize) -> Result<(Tensor, Tensor)> {
    let len = x.last_dim();
    if kernel == 0 || len < kernel {
        return Err(Error::config(format!(
            "moving-average kernel {kernel} exceeds series length {len}"
        )));
    }
    let front = (kernel - 1) / 2;
    let back = kernel - 1 - front;
    let mut trend = x.clone();
    let mut resid = x.clone();
    let mut padded = Vec::with_capacity(len + kernel);
    for r in 0..x.rows() {
        let row = x.row(r);
        padded.clear();
        padded.extend(std::iter::repeat_n(row[0], front));
        padded.extend_from_slice(row);
        padded.extend(std::iter::repeat_n(row[len - 1], back));
        let t = &mut trend.data_mut()[r * len..(r + 1) * len];
        for (j, tv) in t.iter_mut().enumerate() {
            *tv = padded[j..j + kernel].iter().sum::<f64>() / kernel as f64;
        }
        // Recomputing the trend from the rounded residual makes
        // `trend + resid == x` bit-exact wherever |x| >= |trend|.
        let (td, rd) = (trend.data_mut(), resid.data_mut());
        for j in r * len..(r + 1) * len {
            rd[j] = x.data()[j] - td[j];
            td[j] = x.data()[j] - rd[j];
        }
    }
    Ok((trend, resid))
}

/// Low/high frequency split of each row at bin `cutoff`, where bin `k` and
/// its mirror `L-k` share the frequency `min(k, L-k)`.
pub fn dft_split(x: &Tensor, cutoff: usize) -> Result<(Tensor, Tensor)> {
    let len = x.last_dim();
    let (cos, sin) = twiddles(len);
    let mut low = x.clone();
    let mut high = x.clone();
    let mut re = vec![0.0; len];
    let mut im = vec![0.0; len];
    for r in 0..x.rows() {
        let row = x.row(r);
        for k in 0..len {
            let (mut a, mut b) = (0.0, 0.0);
            for (n, v) in row.iter().enumerate() {
                let idx = (k * n) % len;
                a += v * cos[idx];
                b -= v * sin[idx];
            }
            re[k] = a;
            im[k] = b;
        }
        let is_low = |k: usize| k.min(len - k) < cutoff;
        for n in 0..len {
            let (mut lo, mut hi) = (0.0, 0.0);
            for k in 0..len {
                let idx = (k * n) % len;
                let term = re[k] * cos[idx] - im[k] * sin[idx];
                if is_low(k) {
                    lo += term;
                } else {
                    hi += term;
                }
            }
            low.data_mut()[r * len + n] = lo / len as f64;
            high.data_mut()[r * len + n] = hi / len as f64;
        }
    }
    Ok((low, high))
}

fn twiddles(len: usize) -> (Vec<f64>, Vec<f64>) {
    (0..len)
        .map(|j| {
            let a = 2.0 * std::f64::consts::PI * j as f64 / len as f64;
            (a.cos(), a.sin())
        })
        .unzip()
}

/// One fine-to-coarse fusion step followed by per-scale refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingBlock {
    /// `down[i-1]` maps scale `i-1` into scale `i`, for `i = 1..M`.
    pub down: Vec<Layer>,
    /// One feed-forward layer per scale.
    pub ffn: Vec<Layer>,
}

impl MixingBlock {
    /// `Hⁱ = Zⁱ + down(Zⁱ⁻¹)` (with `H⁰ = Z⁰`), then `Zⁱ' = Hⁱ + ffn(Hⁱ)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: &[Var]) -> Result<Vec<Var>> {
        if z.len() != self.ffn.len() {
            return Err(Error::shape("mixing_block scales", &[z.len()], &[self.ffn.len()]));
        }
        let mut h = Vec::with_capacity(z.len());
        h.push(z[0]);
        for i in 1..z.len() {
            let moved = self.down[i - 1].forward(tape, store, z[i - 1])?;
            h.push(tape.add(z[i], moved)?);
        }
        h.iter()
            .zip(&self.ffn)
            .map(|(&hi, ffn)| {
                let refined = ffn.forward(tape, store, hi)?;
                tape.add(hi, refined)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub embed: Vec<Layer>,
    pub blocks: Vec<MixingBlock>,
    pub heads: Vec<Layer>,
}

impl Trunk {
    fn build(
        config: &MixerConfig,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = config.d_model;
        let lens = config.scale_lengths();
        let m = lens.len();
        let mut layer = |c: Component, name: String, i: usize, o: usize, store: &mut ParamStore| {
            Layer::init(config.kind(c), store, &name, i, o, &config.basis, c.mlp_activation(), rng)
        };
        let embed = lens
            .iter()
            .enumerate()
            .map(|(i, &len)| layer(Component::Embed, format!("{prefix}.embed.{i}"), len, d, store))
            .collect::<Result<Vec<_>>>()?;
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for l in 0..config.n_blocks {
            let down = (1..m)
                .map(|i| layer(Component::Down, format!("{prefix}.block.{l}.down.{i}"), d, d, store))
                .collect::<Result<Vec<_>>>()?;
            let ffn = (0..m)
                .map(|i| layer(Component::Ffn, format!("{prefix}.block.{l}.ffn.{i}"), d, d, store))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(MixingBlock { down, ffn });
        }
        let heads = (0..m)
            .map(|i| layer(Component::Head, format!("{prefix}.head.{i}"), d, config.horizon, store))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { embed, blocks, heads })
    }

    fn forward(
        &self,
        config: &MixerConfig,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<Vec<Var>> {
        let pyramid = build_pyramid(tape, x, config.pool_k, self.embed.len())?;
        let mut z = pyramid
            .iter()
            .zip(&self.embed)
            .map(|(&s, e)| e.forward(tape, store, s))
            .collect::<Result<Vec<_>>>()?;
        for block in &self.blocks {
            z = block.forward(tape, store, &z)?;
        }
        z.iter()
            .zip(&self.heads)
            .map(|(&zi, head)| head.forward(tape, store, zi))
            .collect()
    }

    pub fn layers(&self) -> impl Iterator<Item = (Component, &Layer)> {
        self.embed
            .iter()
            .map(|l| (Component::Embed, l))
            .chain(self.blocks.iter().flat_map(|b| {
                b.down
                    .iter()
                    .map(|l| (Component::Down, l))
                    .chain(b.ffn.iter().map(|l| (Component::Ffn, l)))
            }))
            .chain(self.heads.iter().map(|l| (Component::Head, l)))
    }
}

/// Nodes of one forward pass, exposed for inspection.
pub struct ForwardParts {
    /// Per-scale head outputs, trunk-major, each `rows × P`.
    pub heads: Vec<Var>,
    /// Sum of `heads` before denormalisation.
    pub combined: Var,
    /// Final `rows × P` forecast.
    pub output: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerModel {
    config: MixerConfig,
    store: ParamStore,
    trunks: Vec<Trunk>,
}

impl MixerModel {
    /// Builds and initialises the variant described by `config`.
    pub fn new(config: MixerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunks = (0..config.prior.trunks())
            .map(|t| Trunk::build(&config, &format!("t{t}"), &mut store, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, store, trunks })
    }

    pub fn config(&self) -> &MixerConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn trunks(&self) -> &[Trunk] {
        &self.trunks
    }

    pub fn layers(&self) -> impl Iterator<Item = (Component, &Layer)> {
        self.trunks.iter().flat_map(Trunk::layers)
    }

    /// Sets every parameter whose name contains `pattern` to zero.
    pub fn zero_params(&mut self, pattern: &str) {
        for p in self.store.iter_mut() {
            if p.name.contains(pattern) {
                p.tensor.data_mut().fill(0.0);
            }
        }
    }

    /// Records the forward pass for `x` (`b × d × L` or `rows × L`).
    pub fn forward_parts(&self, tape: &mut Tape, x: &Tensor) -> Result<ForwardParts> {
        let len = self.config.lookback;
        if x.last_dim() != len {
            return Err(Error::Shape {
                op: "forward lookback",
                lhs: vec![len],
                rhs: vec![x.last_dim()],
            });
        }
        let flat = x.clone().reshape(&[x.rows(), len])?;
        let (normed, stats) = if self.config.instance_norm {
            let (n, s) = instance_norm(&flat)?;
            (n, Some(s))
        } else {
            (flat, None)
        };
        let inputs = match self.config.prior {
            Prior::Dft | Prior::Ma => {
                let (a, b) = apply_prior(&normed, self.config.prior)?;
                vec![a, b]
            }
            _ => vec![normed],
        };

        let mut heads = Vec::new();
        for (trunk, input) in self.trunks.iter().zip(inputs) {
            let xv = tape.constant(input);
            heads.extend(trunk.forward(&self.config, tape, &self.store, xv)?);
        }
        let mut combined = heads[0];
        for &h in &heads[1..] {
            combined = tape.add(combined, h)?;
        }
        let output = match stats {
            Some(s) => tape.row_affine(combined, s.scale(), s.mean)?,
            None => combined,
        };
        Ok(ForwardParts {
            heads,
            combined,
            output,
        })
    }

    /// Forecast node of shape `rows × P`.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        Ok(self.forward_parts(tape, x)?.output)
    }

    /// Forecast for `b × d × L` as `b × d × P` (or `rows × P` for 2-D input).
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x)?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.config.horizon;
        tape.value(out).clone().reshape(&shape)
    }
}
