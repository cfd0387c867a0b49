//! Command implementations behind the `kanmixer` binary.
//!
//! Each command writes its human-readable output to `out` so it can be
//! exercised without spawning a process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bench::{run_ablation, AblationGrid, CostReport, GRID_NAMES, MAC_CONVENTION};
use crate::checkpoint;
use crate::config::{RunConfig, KAN_WIDTH, MLP_WIDTH};
use crate::data::{load_csv, Dataset, Segment, SplitSpec};
use crate::error::{Error, Result};
use crate::layer::LayerKind;
use crate::model::MixerModel;
use crate::train::{evaluate, fit, RunReport, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const EPOCH_LOG_FILE: &str = "epochs.log";
pub const HARDWARE_DISCLAIMER: &str =
    "memory and timing are measured on local hardware and are not comparable to published GPU figures";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(io_err(Path::new("<stdout>")))
}

/// Loads the config, applies the seed override and validates.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .dataset
        .path
        .as_ref()
        .ok_or_else(|| Error::config("dataset.path is not set"))?;
    let raw = load_csv(path)?;
    Dataset::prepare(&raw, &SplitSpec::for_family(&cfg.dataset.family)?)
}

/// Trains, then writes the checkpoint, `report.json` and `epochs.log`
/// into `out_dir`. On divergence the report is still written.
pub fn cmd_train(config: &Path, out_dir: &Path, seed: Option<u64>, out: &mut dyn Write) -> Result<RunReport> {
    let cfg = load_config(config, seed)?;
    let data = load_dataset(&cfg)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut model = MixerModel::new(cfg.model.clone(), cfg.train.seed)?;
    let (l, p) = (cfg.model.lookback, cfg.model.horizon);
    say(
        out,
        format_args!(
            "dataset {} rows={} channels={} windows train={} val={} test={}",
            data.table.name,
            data.table.rows(),
            data.table.dims(),
            data.windows(Segment::Train, l, p)?.len(),
            data.windows(Segment::Val, l, p)?.len(),
            data.windows(Segment::Test, l, p)?.len(),
        ),
    )?;
    let result = fit(&mut model, &data, &cfg.train);
    let report = match result {
        Ok(r) => r,
        Err(Error::Diverged { epoch, report }) => {
            write_report(out_dir, &report)?;
            return Err(Error::Diverged { epoch, report });
        }
        Err(e) => return Err(e),
    };
    let report = RunReport {
        config: cfg.echo_line(),
        ..report
    };
    checkpoint::save(out_dir.join(CHECKPOINT_FILE), &model, &cfg)?;
    write_report(out_dir, &report)?;
    say(out, format_args!("params={} macs/window={}", report.param_count, report.macs_per_window))?;
    for e in &report.epochs {
        say(
            out,
            format_args!(
                "epoch {:>2}  train_loss={:.4}  val_mse={:.4}  val_mae={:.4}",
                e.epoch, e.train_loss, e.val_mse, e.val_mae
            ),
        )?;
    }
    say(
        out,
        format_args!(
            "test mse={:.4} mae={:.4} (best epoch {}, {:.1}s)",
            report.test_mse(),
            report.test_mae(),
            report.best_epoch,
            report.wall_seconds
        ),
    )?;
    say(out, format_args!("checkpoint written to {}", out_dir.join(CHECKPOINT_FILE).display()))?;
    Ok(report)
}

fn write_report(out_dir: &Path, report: &RunReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Contract(e.to_string()))?;
    write_file(&out_dir.join(REPORT_FILE), &(json + "\n"))?;
    write_file(&out_dir.join(EPOCH_LOG_FILE), &report.epoch_lines())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

/// Evaluates a checkpoint on the validation or test split.
pub fn cmd_eval(
    checkpoint_path: &Path,
    config: &Path,
    split: &str,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<EvalResult> {
    let segment = match Segment::parse(split)? {
        Segment::Train => return Err(Error::config("split must be val|test, got `train`")),
        s => s,
    };
    let cfg = load_config(config, seed)?;
    let ck = checkpoint::read(checkpoint_path)?;
    ck.check_model_config(&cfg)?;
    let mut model = MixerModel::new(cfg.model.clone(), cfg.train.seed)?;
    ck.load_into(&mut model)?;
    let data = load_dataset(&cfg)?;
    let windows = data.windows(segment, cfg.model.lookback, cfg.model.horizon)?;
    let m = evaluate(&model, &windows)?;
    say(out, format_args!("split={split} windows={} mse={:.4} mae={:.4}", m.windows, m.mse, m.mae))?;
    Ok(EvalResult {
        mse: m.mse,
        mae: m.mae,
        windows: m.windows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateOptions {
    pub workers: usize,
    /// Empty means the config's horizon.
    pub horizons: Vec<usize>,
    pub seeds: usize,
    pub seed: Option<u64>,
}

impl Default for AblateOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            horizons: Vec::new(),
            seeds: 3,
            seed: None,
        }
    }
}

pub fn grid_for(name: &str, cfg: &RunConfig, opts: &AblateOptions) -> Result<AblationGrid> {
    if !GRID_NAMES.contains(&name) {
        return Err(Error::config(format!(
            "unknown grid `{name}`; valid grids: {}",
            GRID_NAMES.join(", ")
        )));
    }
    if opts.seeds == 0 {
        return Err(Error::config("--seeds must be at least 1"));
    }
    let m = &cfg.model;
    let all_mlp = [m.embed, m.down, m.ffn, m.head].iter().all(|k| *k == LayerKind::Mlp);
    let kan_width = if all_mlp { KAN_WIDTH } else { m.d_model };
    let mlp_width = if all_mlp { m.d_model } else { MLP_WIDTH };
    let horizons = if opts.horizons.is_empty() {
        vec![m.horizon]
    } else {
        opts.horizons.clone()
    };
    let base_seed = opts.seed.unwrap_or(cfg.train.seed);
    let seeds = (0..opts.seeds as u64).map(|i| base_seed + i).collect();
    AblationGrid::builtin(name, m, kan_width, mlp_width, horizons, seeds, cfg.train.clone())
}

/// Runs a built-in grid and writes `ablation_<grid>.csv` and `.json`; the
/// basis grid also writes `basis_series.csv`. Returns the table path.
pub fn cmd_ablate(grid: &str, config: &Path, out_dir: &Path, opts: &AblateOptions, out: &mut dyn Write) -> Result<PathBuf> {
    let cfg = load_config(config, opts.seed)?;
    let grid = grid_for(grid, &cfg, opts)?;
    let data = load_dataset(&cfg)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let table = run_ablation(&grid, &data, opts.workers)?;
    let csv = table.to_csv();
    let table_path = out_dir.join(format!("ablation_{}.csv", grid.name));
    write_file(&table_path, &csv)?;
    let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Contract(e.to_string()))?;
    write_file(&out_dir.join(format!("ablation_{}.json", grid.name)), &(json + "\n"))?;
    if grid.name == "basis" {
        write_file(&out_dir.join("basis_series.csv"), &table.horizon_series_csv())?;
    }
    out.write_all(csv.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(table_path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub cost: CostReport,
    pub epoch_seconds: Option<f64>,
    pub peak_rss_kib: Option<u64>,
}

/// Peak resident set size from `/proc/self/status`, where available.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

/// Prints analytic costs and, when the config names a dataset, the wall
/// time and peak memory of one warmup training epoch.
pub fn cmd_profile(config: &Path, seed: Option<u64>, out: &mut dyn Write) -> Result<Profile> {
    let cfg = load_config(config, seed)?;
    let mut model = MixerModel::new(cfg.model.clone(), cfg.train.seed)?;
    let cost = CostReport::of(&model);
    say(out, format_args!("params={}", cost.param_count))?;
    say(out, format_args!("macs_per_window={}", cost.macs_per_window))?;
    for c in &cost.breakdown {
        say(out, format_args!("  {:<6} params={:<8} macs={}", c.component, c.params, c.macs))?;
    }
    say(out, format_args!("note: {MAC_CONVENTION}"))?;

    let mut epoch_seconds = None;
    if cfg.dataset.path.is_some() {
        let data = load_dataset(&cfg)?;
        let windows = data.windows(Segment::Train, cfg.model.lookback, cfg.model.horizon)?;
        let started = Instant::now();
        let mut trainer = Trainer::new(&mut model, &cfg.train);
        for batch in windows.batches(cfg.train.batch_size) {
            trainer.step(&batch?)?;
        }
        epoch_seconds = Some(started.elapsed().as_secs_f64());
    }
    let peak = peak_rss_kib();
    match epoch_seconds {
        Some(s) => say(out, format_args!("warmup_epoch_seconds={s:.2}"))?,
        None => say(out, format_args!("warmup_epoch_seconds=n/a (dataset.path not set)"))?,
    }
    match peak {
        Some(k) => say(out, format_args!("peak_rss_mib={:.1}", k as f64 / 1024.0))?,
        None => say(out, format_args!("peak_rss_mib=n/a"))?,
    }
    say(out, format_args!("note: {HARDWARE_DISCLAIMER}"))?;
    Ok(Profile {
        cost,
        epoch_seconds,
        peak_rss_kib: peak,
    })
}
