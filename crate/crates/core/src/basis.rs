//! Univariate basis families used on KAN edges, with exact derivatives.
//!
//! Every family writes into a caller-provided slice of length
//! [`BasisSpec::num_functions`] so the layer can evaluate a whole batch
//! without allocating per element.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Uniform knot grid for a degree-`p` B-spline basis on `[lo, hi]`.
///
/// The knot vector extends `p` intervals beyond each end of the domain, so
/// there are `grid_size + 2p + 1` knots and `grid_size + p` basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BSplineGrid {
    pub degree: usize,
    pub grid_size: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for BSplineGrid {
    fn default() -> Self {
        Self {
            degree: 3,
            grid_size: 5,
            lo: -1.0,
            hi: 1.0,
        }
    }
}

impl BSplineGrid {
    pub fn new(degree: usize, grid_size: usize, lo: f64, hi: f64) -> Result<Self> {
        if grid_size == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(format!(
                "invalid B-spline grid: G={grid_size}, domain [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            degree,
            grid_size,
            lo,
            hi,
        })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.grid_size as f64
    }

    pub fn knot(&self, j: usize) -> f64 {
        self.lo + (j as f64 - self.degree as f64) * self.spacing()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.grid_size + 2 * self.degree + 1)
            .map(|j| self.knot(j))
            .collect()
    }

    pub fn num_functions(&self) -> usize {
        self.grid_size + self.degree
    }

    /// Knot span index `s` with `t_s <= x < t_{s+1}`, restricted to the
    /// domain intervals `p ..= p + G - 1`.
    fn span(&self, x: f64) -> usize {
        let rel = ((x - self.lo) / self.spacing()).floor();
        let interval = if rel < 0.0 {
            0
        } else {
            (rel as usize).min(self.grid_size - 1)
        };
        interval + self.degree
    }

    /// The `q + 1` degree-`q` functions that can be nonzero on span `s`,
    /// i.e. `B_{s-q}, …, B_s`, by the triangular Cox–de Boor scheme.
    fn local(&self, x: f64, s: usize, q: usize, out: &mut [f64]) {
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        out[0] = 1.0;
        for j in 1..=q {
            left[j] = x - self.knot(s + 1 - j);
            right[j] = self.knot(s + j) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_functions());
        assert!(self.degree < 16, "B-spline degree above 15 is unsupported");
        out.fill(0.0);
        let x = self.clamp(x);
        let s = self.span(x);
        let mut local = [0.0f64; 16];
        self.local(x, s, self.degree, &mut local);
        let first = s - self.degree;
        out[first..=s].copy_from_slice(&local[..=self.degree]);
    }

    /// `B'_{i,p} = (B_{i,p-1} - B_{i+1,p-1}) / h` on a uniform grid.
    /// Zero outside the domain, where the input is clamped.
    pub fn derivative_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_functions());
        out.fill(0.0);
        let p = self.degree;
        if p == 0 || x < self.lo || x > self.hi {
            return;
        }
        let s = self.span(x);
        let mut lower = [0.0f64; 16];
        // lower[r] = B_{s-p+1+r, p-1}, r in 0..p
        self.local(x, s, p - 1, &mut lower);
        let inv_h = 1.0 / self.spacing();
        for i in (s - p)..=s {
            let a = if i >= s - p + 1 { lower[i - (s - p + 1)] } else { 0.0 };
            let b = if i < s { lower[i + 1 - (s - p + 1)] } else { 0.0 };
            out[i] = (a - b) * inv_h;
        }
    }
}

/// Selects one of the four edge-function families.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisSpec {
    BSpline(BSplineGrid),
    /// `T_0 … T_D` of `tanh(x)`.
    Chebyshev { degree: usize },
    /// `1, sin(kx), cos(kx)` for `k = 1..=K`.
    Fourier { frequencies: usize },
    /// Mexican-hat wavelets at every (scale, translation) pair.
    Wavelet {
        scales: Vec<f64>,
        translations: Vec<f64>,
    },
}

pub const DEFAULT_CHEBYSHEV_DEGREE: usize = 7;
pub const DEFAULT_FOURIER_FREQUENCIES: usize = 4;

/// `2 / (√3 · π^{1/4})`, the Mexican-hat normalisation.
pub fn mexican_hat_norm() -> f64 {
    2.0 / (3f64.sqrt() * PI.powf(0.25))
}

impl BasisSpec {
    pub fn bspline() -> Self {
        BasisSpec::BSpline(BSplineGrid::default())
    }

    pub fn chebyshev() -> Self {
        BasisSpec::Chebyshev {
            degree: DEFAULT_CHEBYSHEV_DEGREE,
        }
    }

    pub fn fourier() -> Self {
        BasisSpec::Fourier {
            frequencies: DEFAULT_FOURIER_FREQUENCIES,
        }
    }

    /// Scales {0.5, 1, 2} × five translations evenly spaced on [-1, 1].
    pub fn wavelet() -> Self {
        BasisSpec::Wavelet {
            scales: vec![0.5, 1.0, 2.0],
            translations: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        }
    }

    pub fn wavelet_with(scales: Vec<f64>, translations: Vec<f64>) -> Result<Self> {
        if let Some(s) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::config(format!("wavelet scale must be positive, got {s}")));
        }
        if scales.is_empty() || translations.is_empty() {
            return Err(Error::config("wavelet needs at least one scale and translation"));
        }
        Ok(BasisSpec::Wavelet {
            scales,
            translations,
        })
    }

    /// Short lowercase name, as used in config files.
    pub fn kind(&self) -> &'static str {
        match self {
            BasisSpec::BSpline(_) => "bspline",
            BasisSpec::Chebyshev { .. } => "chebyshev",
            BasisSpec::Fourier { .. } => "fourier",
            BasisSpec::Wavelet { .. } => "wavelet",
        }
    }

    /// Default spec for a family name.
    pub fn from_kind(name: &str) -> Result<Self> {
        match name {
            "bspline" => Ok(Self::bspline()),
            "chebyshev" => Ok(Self::chebyshev()),
            "fourier" => Ok(Self::fourier()),
            "wavelet" => Ok(Self::wavelet()),
            other => Err(Error::config(format!(
                "unknown basis `{other}` (expected bspline|chebyshev|fourier|wavelet)"
            ))),
        }
    }

    pub fn num_functions(&self) -> usize {
        match self {
            BasisSpec::BSpline(g) => g.num_functions(),
            BasisSpec::Chebyshev { degree } => degree + 1,
            BasisSpec::Fourier { frequencies } => 2 * frequencies + 1,
            BasisSpec::Wavelet {
                scales,
                translations,
            } => scales.len() * translations.len(),
        }
    }

    /// Multiply-accumulates spent evaluating the basis at one input.
    pub fn eval_cost(&self) -> usize {
        match self {
            BasisSpec::BSpline(g) => g.degree * (g.degree + 1),
            BasisSpec::Chebyshev { degree } => *degree,
            BasisSpec::Fourier { frequencies } => 2 * frequencies,
            BasisSpec::Wavelet {
                scales,
                translations,
            } => 4 * scales.len() * translations.len(),
        }
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        match self {
            BasisSpec::BSpline(g) => g.eval_into(x, out),
            BasisSpec::Chebyshev { degree } => chebyshev_into(x.tanh(), *degree, out),
            BasisSpec::Fourier { frequencies } => {
                out[0] = 1.0;
                for k in 1..=*frequencies {
                    let (s, c) = (k as f64 * x).sin_cos();
                    out[2 * k - 1] = s;
                    out[2 * k] = c;
                }
            }
            BasisSpec::Wavelet {
                scales,
                translations,
            } => {
                let c = mexican_hat_norm();
                let mut idx = 0;
                for &s in scales {
                    let amp = c / s.sqrt();
                    for &t in translations {
                        let u = (x - t) / s;
                        let u2 = u * u;
                        out[idx] = amp * (1.0 - u2) * (-0.5 * u2).exp();
                        idx += 1;
                    }
                }
            }
        }
    }

    pub fn derivative_into(&self, x: f64, out: &mut [f64]) {
        match self {
            BasisSpec::BSpline(g) => g.derivative_into(x, out),
            BasisSpec::Chebyshev { degree } => {
                let u = x.tanh();
                let du = 1.0 - u * u;
                chebyshev_derivative_into(u, *degree, out);
                out.iter_mut().for_each(|v| *v *= du);
            }
            BasisSpec::Fourier { frequencies } => {
                out[0] = 0.0;
                for k in 1..=*frequencies {
                    let kf = k as f64;
                    let (s, c) = (kf * x).sin_cos();
                    out[2 * k - 1] = kf * c;
                    out[2 * k] = -kf * s;
                }
            }
            BasisSpec::Wavelet {
                scales,
                translations,
            } => {
                let c = mexican_hat_norm();
                let mut idx = 0;
                for &s in scales {
                    let amp = c / (s * s.sqrt());
                    for &t in translations {
                        let u = (x - t) / s;
                        let u2 = u * u;
                        out[idx] = amp * u * (u2 - 3.0) * (-0.5 * u2).exp();
                        idx += 1;
                    }
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_functions()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn derivative(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.num_functions()];
        self.derivative_into(x, &mut out);
        out
    }
}

/// All degree-`p` B-spline values at `x` (clamped to the grid domain).
pub fn bspline_basis(x: f64, grid: &BSplineGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.num_functions()];
    grid.eval_into(x, &mut out);
    out
}

/// `[T_0(u), …, T_D(u)]` for `u = tanh(x)`.
pub fn chebyshev_basis(x: f64, degree: usize) -> Vec<f64> {
    let mut out = vec![0.0; degree + 1];
    chebyshev_into(x.tanh(), degree, &mut out);
    out
}

pub fn fourier_basis(x: f64, frequencies: usize) -> Vec<f64> {
    BasisSpec::Fourier { frequencies }.eval(x)
}

pub fn wavelet_basis(x: f64, scales: &[f64], translations: &[f64]) -> Result<Vec<f64>> {
    Ok(BasisSpec::wavelet_with(scales.to_vec(), translations.to_vec())?.eval(x))
}

/// Chebyshev polynomials of the first kind at an already squashed `u`.
pub fn chebyshev_into(u: f64, degree: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if degree >= 1 {
        out[1] = u;
    }
    for n in 1..degree {
        out[n + 1] = 2.0 * u * out[n] - out[n - 1];
    }
}

/// `dT_n/du` via `T'_{n+1} = 2T_n + 2uT'_n - T'_{n-1}`.
fn chebyshev_derivative_into(u: f64, degree: usize, out: &mut [f64]) {
    let mut t = vec![0.0; degree + 1];
    chebyshev_into(u, degree, &mut t);
    out[0] = 0.0;
    if degree >= 1 {
        out[1] = 1.0;
    }
    for n in 1..degree {
        out[n + 1] = 2.0 * t[n] + 2.0 * u * out[n] - out[n - 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook recursive Cox–de Boor on half-open intervals; the last
    /// domain interval is closed so `x = hi` is covered.
    fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64, hi: f64) -> f64 {
        if p == 0 {
            let closed_end = x == hi && t[i + 1] == hi;
            return if (t[i] <= x && x < t[i + 1]) || closed_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = t[i + p] - t[i];
        if d1 != 0.0 {
            v += (x - t[i]) / d1 * cox_de_boor(t, i, p - 1, x, hi);
        }
        let d2 = t[i + p + 1] - t[i + 1];
        if d2 != 0.0 {
            v += (t[i + p + 1] - x) / d2 * cox_de_boor(t, i + 1, p - 1, x, hi);
        }
        v
    }

    fn fd(spec: &BasisSpec, x: f64, h: f64) -> Vec<f64> {
        let up = spec.eval(x + h);
        let down = spec.eval(x - h);
        up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    #[test]
    fn knots_are_uniform_and_extended() {
        let g = BSplineGrid::default();
        let k = g.knots();
        assert_eq!(k.len(), 5 + 6 + 1);
        assert!((k[0] + 1.0 + 3.0 * 0.4).abs() < 1e-12);
        for w in k.windows(2) {
            assert!((w[1] - w[0] - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn degree_zero_is_an_indicator() {
        let g = BSplineGrid::new(0, 4, 0.0, 1.0).unwrap();
        assert_eq!(bspline_basis(0.3, &g), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(bspline_basis(1.0, &g), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cubic_at_interior_knot_matches_recursion() {
        let g = BSplineGrid::default();
        let x = g.knot(5); // interior knot -0.2
        let b = bspline_basis(x, &g);
        let nz: Vec<f64> = b.iter().copied().filter(|v| v.abs() > 1e-15).collect();
        assert_eq!(nz.len(), 3);
        let expect = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        for (a, e) in nz.iter().zip(expect) {
            assert!((a - e).abs() < 1e-14, "{nz:?}");
        }
        let t = g.knots();
        for (i, v) in b.iter().enumerate() {
            assert!((v - cox_de_boor(&t, i, 3, x, g.hi)).abs() < 1e-14);
        }
    }

    #[test]
    fn clamped_inputs_use_boundary_values_and_zero_slope() {
        let g = BSplineGrid::default();
        assert_eq!(bspline_basis(5.0, &g), bspline_basis(1.0, &g));
        assert_eq!(bspline_basis(-5.0, &g), bspline_basis(-1.0, &g));
        assert!(g.knots().len() == 12);
        let spec = BasisSpec::BSpline(g);
        assert!(spec.derivative(1.5).iter().all(|v| *v == 0.0));
        assert!(spec.derivative(-1.5).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chebyshev_values() {
        let mut out = [0.0; 3];
        chebyshev_into(0.5, 2, &mut out);
        assert_eq!(out, [1.0, 0.5, -0.5]);
        let at_zero = chebyshev_basis(0.0, 6);
        assert_eq!(at_zero, vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0]);
        let d = BasisSpec::Chebyshev { degree: 3 }.derivative(0.0);
        assert_eq!(d[1], 1.0);
    }

    #[test]
    fn fourier_values() {
        assert_eq!(fourier_basis(0.0, 2), vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        let v = fourier_basis(PI, 1);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn wavelet_values() {
        let v = wavelet_basis(0.3, &[1.0], &[0.3]).unwrap();
        // 2/(√3·π^¼) evaluated independently.
        assert!((v[0] - 0.867_325_070_584_077_6).abs() < 1e-14, "{}", v[0]);
        let v = wavelet_basis(1.5, &[0.5, 2.0], &[1.0, -0.5]).unwrap();
        assert!(v[0].abs() < 1e-15 && v[3].abs() < 1e-15);
        let far = wavelet_basis(8.0, &[1.0], &[0.0]).unwrap();
        assert!(far[0].abs() < 1e-8);
        assert!(wavelet_basis(0.0, &[0.0], &[0.0]).is_err());
        assert!(wavelet_basis(0.0, &[-1.0], &[0.0]).is_err());
    }

    #[test]
    fn num_functions_per_family() {
        assert_eq!(BasisSpec::bspline().num_functions(), 8);
        assert_eq!(BasisSpec::Chebyshev { degree: 4 }.num_functions(), 5);
        assert_eq!(BasisSpec::Fourier { frequencies: 4 }.num_functions(), 9);
        assert_eq!(BasisSpec::wavelet().num_functions(), 15);
    }

    #[test]
    fn derivatives_match_finite_differences_at_fixed_points() {
        let specs = [
            BasisSpec::bspline(),
            BasisSpec::chebyshev(),
            BasisSpec::fourier(),
            BasisSpec::wavelet(),
        ];
        // Deterministic off-knot points (knots are multiples of 0.4 - 1).
        let xs: Vec<f64> = (0..20).map(|i| -0.93 + 0.0917 * i as f64).collect();
        for spec in &specs {
            for &x in &xs {
                let a = spec.derivative(x);
                let n = fd(spec, x, 1e-7);
                for (av, nv) in a.iter().zip(&n) {
                    let rel = (av - nv).abs() / av.abs().max(1.0);
                    assert!(rel < 1e-6, "{} x={x}: {av} vs {nv}", spec.kind());
                }
            }
        }
    }

    #[test]
    fn continuity_across_a_knot() {
        for p in 1..=4 {
            let g = BSplineGrid::new(p, 5, -1.0, 1.0).unwrap();
            let k = g.knot(p + 2);
            let a = bspline_basis(k - 1e-9, &g);
            let b = bspline_basis(k + 1e-9, &g);
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-6, "p={p} diff={diff}");
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_local_support(x in -1.0f64..=1.0, p in 0usize..5, grid in 1usize..12) {
            let g = BSplineGrid::new(p, grid, -1.0, 1.0).unwrap();
            let b = bspline_basis(x, &g);
            prop_assert_eq!(b.len(), grid + p);
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(b.iter().filter(|v| **v != 0.0).count() <= p + 1);
            prop_assert!(b.iter().all(|v| (0.0..=1.0 + 1e-15).contains(v)));
        }

        #[test]
        fn bspline_derivative_sums_to_zero(x in -0.999f64..0.999, p in 1usize..5) {
            let g = BSplineGrid::new(p, 5, -1.0, 1.0).unwrap();
            let d = BasisSpec::BSpline(g).derivative(x);
            prop_assert!(d.iter().sum::<f64>().abs() < 1e-10);
        }

        #[test]
        fn chebyshev_bounded(u in -1.0f64..=1.0) {
            let mut out = [0.0; 12];
            chebyshev_into(u, 11, &mut out);
            prop_assert!(out.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }

        #[test]
        fn fourier_pythagoras(x in -50.0f64..50.0) {
            let v = fourier_basis(x, 6);
            for k in 1..=6 {
                prop_assert!((v[2*k-1].powi(2) + v[2*k].powi(2) - 1.0).abs() < 1e-12);
            }
        }
    }
}
