//! Analytic cost accounting and the ablation-grid runner.
//!
//! MAC counts are closed-form: a dense layer costs `in·out`, a KAN layer
//! `in·out·(1 + num_functions) + in·basis_cost`. Activation evaluations
//! (SiLU, tanh, sin/cos, exp) and residual additions are not counted.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layer::LayerKind;
use crate::model::{Component, MixerConfig, MixerModel, Prior};
use crate::basis::BasisSpec;
use crate::train::{fit, RunReport, TrainConfig};

pub const MAC_CONVENTION: &str =
    "MACs are analytic multiply-accumulates per univariate window; activation evaluations and additions excluded";

/// Trainable scalars of every layer in the model.
pub fn count_params(model: &MixerModel) -> usize {
    model.layers().map(|(_, l)| l.parameter_count()).sum()
}

/// Multiply-accumulates for one forward pass of one univariate window.
pub fn count_macs(model: &MixerModel) -> usize {
    model.layers().map(|(_, l)| l.macs()).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub component: String,
    pub params: usize,
    pub macs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub macs_per_window: usize,
    pub param_count: usize,
    pub breakdown: Vec<ComponentCost>,
}

impl CostReport {
    pub fn of(model: &MixerModel) -> Self {
        let breakdown: Vec<ComponentCost> = Component::ALL
            .iter()
            .map(|&c| {
                let (params, macs) = model
                    .layers()
                    .filter(|(k, _)| *k == c)
                    .fold((0, 0), |(p, m), (_, l)| (p + l.parameter_count(), m + l.macs()));
                ComponentCost {
                    component: c.as_str().to_string(),
                    params,
                    macs,
                }
            })
            .collect();
        Self {
            macs_per_window: breakdown.iter().map(|b| b.macs).sum(),
            param_count: breakdown.iter().map(|b| b.params).sum(),
            breakdown,
        }
    }
}

/// One named model configuration inside a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: MixerConfig,
    /// Variant the Δ-MSE column is measured against.
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub name: String,
    pub variants: Vec<Variant>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

pub const GRID_NAMES: [&str; 4] = ["depth", "components", "priors", "basis"];

fn variant(name: &str, config: MixerConfig, baseline: Option<&str>) -> Variant {
    Variant {
        name: name.to_string(),
        config,
        baseline: baseline.map(str::to_string),
    }
}

fn with_kind(base: &MixerConfig, kind: LayerKind, width: usize) -> MixerConfig {
    let mut c = base.clone();
    c.set_all_kinds(kind);
    c.d_model = width;
    c
}

impl AblationGrid {
    /// Built-in grids around `base`. KAN variants use `kan_width`, all-MLP
    /// variants `mlp_width`.
    pub fn builtin(
        name: &str,
        base: &MixerConfig,
        kan_width: usize,
        mlp_width: usize,
        horizons: Vec<usize>,
        seeds: Vec<u64>,
        train: TrainConfig,
    ) -> Result<Self> {
        let kan = with_kind(base, LayerKind::Kan, kan_width);
        let mlp = with_kind(base, LayerKind::Mlp, mlp_width);
        let variants = match name {
            "depth" => {
                let mut v = Vec::new();
                for (label, cfg) in [("KAN", &kan), ("MLP", &mlp)] {
                    let baseline = format!("{label}-3L");
                    for n in [2, 3, 4] {
                        let c = MixerConfig {
                            n_blocks: n,
                            ..cfg.clone()
                        };
                        v.push(variant(&format!("{label}-{n}L"), c, Some(&baseline)));
                    }
                }
                v
            }
            "components" => {
                let b = Some("KANMixer");
                vec![
                    variant("KANMixer", kan.clone(), b),
                    variant(
                        "w/o KAN-FFN",
                        MixerConfig {
                            ffn: LayerKind::Mlp,
                            ..kan.clone()
                        },
                        b,
                    ),
                    variant(
                        "w/o KAN-Mixing",
                        MixerConfig {
                            down: LayerKind::Mlp,
                            ..kan.clone()
                        },
                        b,
                    ),
                    variant(
                        "w/o KAN-Prediction",
                        MixerConfig {
                            head: LayerKind::Mlp,
                            ..kan.clone()
                        },
                        b,
                    ),
                ]
            }
            "priors" => {
                let mut v = Vec::new();
                for (label, cfg) in [("MLP", &mlp), ("KAN", &kan)] {
                    for (suffix, prior) in [
                        ("", Prior::None),
                        ("_DFT", Prior::Dft),
                        ("_MA", Prior::Ma),
                        ("_NoMS", Prior::NoMultiscale),
                    ] {
                        let c = MixerConfig {
                            prior,
                            ..cfg.clone()
                        };
                        v.push(variant(&format!("{label}{suffix}"), c, Some(label)));
                    }
                }
                v
            }
            "basis" => {
                let b = Some("MLP");
                let mut v: Vec<Variant> = [
                    ("B-spline", BasisSpec::bspline()),
                    ("Chebyshev", BasisSpec::chebyshev()),
                    ("Fourier", BasisSpec::fourier()),
                    ("Wavelet", BasisSpec::wavelet()),
                ]
                .into_iter()
                .map(|(n, spec)| {
                    variant(
                        n,
                        MixerConfig {
                            basis: spec,
                            ..kan.clone()
                        },
                        b,
                    )
                })
                .collect();
                v.push(variant("MLP", mlp.clone(), b));
                v
            }
            other => {
                return Err(Error::config(format!(
                    "unknown grid `{other}`; valid grids: {}",
                    GRID_NAMES.join(", ")
                )))
            }
        };
        let grid = Self {
            name: name.to_string(),
            variants,
            horizons,
            seeds,
            train,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.horizons.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("grid needs variants, horizons and seeds"));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("variant names must be unique"));
        }
        let l = self.variants[0].config.lookback;
        if self.variants.iter().any(|v| v.config.lookback != l) {
            return Err(Error::config("all variants must share the lookback"));
        }
        for v in &self.variants {
            if let Some(b) = &v.baseline {
                if !self.variants.iter().any(|o| &o.name == b) {
                    return Err(Error::config(format!("baseline `{b}` is not a variant")));
                }
            }
            for &h in &self.horizons {
                MixerConfig {
                    horizon: h,
                    ..v.config.clone()
                }
                .validate()?;
            }
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub horizon: usize,
    pub mean_mse: f64,
    pub mean_mae: f64,
    pub delta_mse: Option<f64>,
    pub baseline: Option<String>,
    pub param_count: usize,
    pub macs_per_window: usize,
    pub diverged: usize,
    pub runs: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub grid: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str, horizon: usize) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant && r.horizon == horizon)
    }

    /// Comma-separated table with a `#` comment line stating the MAC
    /// convention. Positive Δ means worse than the baseline.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# grid={} ; {MAC_CONVENTION}\n", self.grid);
        s.push_str("variant,horizon,mean_mse,mean_mae,delta_mse,baseline,params,macs,seeds,diverged\n");
        for r in &self.rows {
            let delta = r.delta_mse.map(|d| format!("{d:+.4}")).unwrap_or_else(|| "N/A".into());
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{},{},{},{},{},{}",
                r.variant,
                r.horizon,
                r.mean_mse,
                r.mean_mae,
                delta,
                r.baseline.as_deref().unwrap_or(""),
                r.param_count,
                r.macs_per_window,
                r.runs.len(),
                r.diverged
            );
        }
        s
    }

    /// Plot-ready `horizon,variant,mse,mae` series, horizon-major.
    pub fn horizon_series_csv(&self) -> String {
        let mut horizons: Vec<usize> = self.rows.iter().map(|r| r.horizon).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let mut s = String::from("horizon,variant,mse,mae\n");
        for h in horizons {
            for r in self.rows.iter().filter(|r| r.horizon == h) {
                let _ = writeln!(s, "{},{},{:.6},{:.6}", h, r.variant, r.mean_mse, r.mean_mae);
            }
        }
        s
    }
}

struct Job<'g> {
    variant: &'g Variant,
    horizon: usize,
    seed: u64,
}

fn run_job(job: &Job<'_>, data: &Dataset, train: &TrainConfig) -> Result<(RunReport, bool)> {
    let config = MixerConfig {
        horizon: job.horizon,
        ..job.variant.config.clone()
    };
    let mut model = MixerModel::new(config, job.seed)?;
    let cfg = TrainConfig {
        seed: job.seed,
        ..train.clone()
    };
    match fit(&mut model, data, &cfg) {
        Ok(r) => Ok((r, false)),
        Err(Error::Diverged { report, .. }) => Ok((*report, true)),
        Err(e) => Err(e),
    }
}

/// Trains every (variant, horizon, seed) in grid order and merges the
/// results. `workers > 1` trains variants concurrently; the merge order and
/// every per-run result are unaffected.
pub fn run_ablation(grid: &AblationGrid, data: &Dataset, workers: usize) -> Result<AblationTable> {
    grid.validate()?;
    let jobs: Vec<Job<'_>> = grid
        .variants
        .iter()
        .flat_map(|v| {
            grid.horizons.iter().flat_map(move |&h| {
                grid.seeds.iter().map(move |&s| Job {
                    variant: v,
                    horizon: h,
                    seed: s,
                })
            })
        })
        .collect();

    let results: Vec<Result<(RunReport, bool)>> = if workers <= 1 {
        jobs.iter().map(|j| run_job(j, data, &grid.train)).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(|j| run_job(j, data, &grid.train)).collect())
    };

    let mut rows = Vec::new();
    let mut it = results.into_iter();
    for v in &grid.variants {
        for &h in &grid.horizons {
            let mut runs = Vec::new();
            let mut diverged = 0;
            for &seed in &grid.seeds {
                let (report, div) = it.next().expect("one result per job")?;
                diverged += usize::from(div);
                runs.push(SeedResult { seed, report });
            }
            let finished: Vec<&RunReport> = runs.iter().map(|r| &r.report).filter(|r| r.test.is_some()).collect();
            let n = finished.len().max(1) as f64;
            let (mean_mse, mean_mae) = if finished.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (
                    finished.iter().map(|r| r.test_mse()).sum::<f64>() / n,
                    finished.iter().map(|r| r.test_mae()).sum::<f64>() / n,
                )
            };
            let probe = MixerModel::new(
                MixerConfig {
                    horizon: h,
                    ..v.config.clone()
                },
                0,
            )?;
            rows.push(AblationRow {
                variant: v.name.clone(),
                horizon: h,
                mean_mse,
                mean_mae,
                delta_mse: None,
                baseline: v.baseline.clone(),
                param_count: count_params(&probe),
                macs_per_window: count_macs(&probe),
                diverged,
                runs,
            });
        }
    }
    for i in 0..rows.len() {
        let Some(b) = rows[i].baseline.clone() else { continue };
        if b == rows[i].variant {
            continue;
        }
        let h = rows[i].horizon;
        if let Some(base) = rows.iter().find(|r| r.variant == b && r.horizon == h) {
            rows[i].delta_mse = Some(rows[i].mean_mse - base.mean_mse);
        }
    }
    Ok(AblationTable {
        grid: grid.name.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{KanLayer, MlpLayer, Activation};
    use crate::tensor::ParamStore;
    use rand::SeedableRng;

    #[test]
    fn single_layer_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = MlpLayer::init(&mut store, "m", 3, 2, Activation::Identity, &mut rng).unwrap();
        assert_eq!(mlp.parameter_count(), 8);
        assert_eq!(mlp.macs(), 6);
        let kan = KanLayer::init(&mut store, "k", 2, 3, BasisSpec::bspline(), &mut rng).unwrap();
        assert_eq!(kan.parameter_count(), 54);
        assert_eq!(kan.macs(), 78);
        assert_eq!(store.scalar_count(), 8 + 54);
    }

    #[test]
    fn grids_have_expected_rows() {
        let base = MixerConfig::default();
        let t = TrainConfig::default();
        let names = |g: &str| -> Vec<String> {
            AblationGrid::builtin(g, &base, 16, 64, vec![96], vec![1], t.clone())
                .unwrap()
                .variants
                .into_iter()
                .map(|v| v.name)
                .collect()
        };
        assert_eq!(names("depth"), ["KAN-2L", "KAN-3L", "KAN-4L", "MLP-2L", "MLP-3L", "MLP-4L"]);
        assert_eq!(
            names("components"),
            ["KANMixer", "w/o KAN-FFN", "w/o KAN-Mixing", "w/o KAN-Prediction"]
        );
        assert_eq!(
            names("priors"),
            ["MLP", "MLP_DFT", "MLP_MA", "MLP_NoMS", "KAN", "KAN_DFT", "KAN_MA", "KAN_NoMS"]
        );
        assert_eq!(names("basis"), ["B-spline", "Chebyshev", "Fourier", "Wavelet", "MLP"]);
        let err = AblationGrid::builtin("widths", &base, 16, 64, vec![96], vec![1], t).unwrap_err();
        assert!(err.to_string().contains("depth, components, priors, basis"));
    }

    #[test]
    fn cost_report_totals_match_breakdown() {
        let m = MixerModel::new(MixerConfig::default(), 0).unwrap();
        let r = CostReport::of(&m);
        assert_eq!(r.param_count, count_params(&m));
        assert_eq!(r.macs_per_window, count_macs(&m));
        assert_eq!(r.param_count, m.store().scalar_count());
    }
}
