//! Flat `key=value` run configuration.
//!
//! One pair per line, `#` starts a comment line, unknown or repeated keys
//! are rejected. Relative dataset paths are resolved against the directory
//! of the config file.

use std::path::{Path, PathBuf};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::layer::LayerKind;
use crate::model::{MixerConfig, Prior};
use crate::train::TrainConfig;

pub const KEYS: [&str; 21] = [
    "dataset.path",
    "dataset.family",
    "model.lookback",
    "model.horizon",
    "model.d_model",
    "model.n_blocks",
    "model.n_scales",
    "model.pool_k",
    "model.basis",
    "model.embed",
    "model.down",
    "model.ffn",
    "model.head",
    "model.prior",
    "model.instance_norm",
    "train.lr",
    "train.batch",
    "train.epochs",
    "train.patience",
    "train.seed",
    "train.clip",
];

pub const KAN_WIDTH: usize = 16;
pub const MLP_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub family: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            family: "ett".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: MixerConfig,
    pub train: TrainConfig,
    /// Whether `model.d_model` was set explicitly.
    pub explicit_width: bool,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("`{key}` must be true|false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_pairs(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(dir)) = (cfg.dataset.path.as_ref(), path.parent()) {
            if p.is_relative() {
                cfg.dataset.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    fn parse_pairs<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut width: Option<usize> = None;
        for (lineno, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {lineno}: expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(Error::config(format!("line {lineno}: unknown key `{key}`")));
            };
            if seen.contains(&known) {
                return Err(Error::config(format!("line {lineno}: duplicate key `{key}`")));
            }
            seen.push(known);
            let m = &mut cfg.model;
            let t = &mut cfg.train;
            match known {
                "dataset.path" => cfg.dataset.path = (!value.is_empty()).then(|| PathBuf::from(value)),
                "dataset.family" => {
                    crate::data::SplitSpec::for_family(value)?;
                    cfg.dataset.family = value.to_string();
                }
                "model.lookback" => m.lookback = parse_num(key, value)?,
                "model.horizon" => m.horizon = parse_num(key, value)?,
                "model.d_model" => width = Some(parse_num(key, value)?),
                "model.n_blocks" => m.n_blocks = parse_num(key, value)?,
                "model.n_scales" => m.n_scales = parse_num(key, value)?,
                "model.pool_k" => m.pool_k = parse_num(key, value)?,
                "model.basis" => m.basis = BasisSpec::from_kind(value)?,
                "model.embed" => m.embed = LayerKind::parse(value)?,
                "model.down" => m.down = LayerKind::parse(value)?,
                "model.ffn" => m.ffn = LayerKind::parse(value)?,
                "model.head" => m.head = LayerKind::parse(value)?,
                "model.prior" => m.prior = Prior::parse(value)?,
                "model.instance_norm" => m.instance_norm = parse_bool(key, value)?,
                "train.lr" => t.lr = parse_num(key, value)?,
                "train.batch" => t.batch_size = parse_num(key, value)?,
                "train.epochs" => t.max_epochs = parse_num(key, value)?,
                "train.patience" => t.patience = parse_num(key, value)?,
                "train.seed" => t.seed = parse_num(key, value)?,
                "train.clip" => t.clip = parse_num(key, value)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.explicit_width = width.is_some();
        cfg.model.d_model = width.unwrap_or_else(|| default_width(&cfg.model));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// `(key, value)` for every key in canonical order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        let path = self
            .dataset
            .path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        vec![
            ("dataset.path", path),
            ("dataset.family", self.dataset.family.clone()),
            ("model.lookback", m.lookback.to_string()),
            ("model.horizon", m.horizon.to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.n_blocks", m.n_blocks.to_string()),
            ("model.n_scales", m.n_scales.to_string()),
            ("model.pool_k", m.pool_k.to_string()),
            ("model.basis", m.basis.kind().to_string()),
            ("model.embed", m.embed.as_str().to_string()),
            ("model.down", m.down.as_str().to_string()),
            ("model.ffn", m.ffn.as_str().to_string()),
            ("model.head", m.head.as_str().to_string()),
            ("model.prior", m.prior.as_str().to_string()),
            ("model.instance_norm", m.instance_norm.to_string()),
            ("train.lr", format!("{:?}", t.lr)),
            ("train.batch", t.batch_size.to_string()),
            ("train.epochs", t.max_epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.clip", format!("{:?}", t.clip)),
        ]
    }

    /// Full config file text, one key per line.
    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Single-line form, pairs separated by `"; "`.
    pub fn echo_line(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn from_echo(line: &str) -> Result<Self> {
        Self::parse_pairs(line.split(';').map(|p| (1, p)))
    }

    /// The `model.*` pairs, which determine parameter layout.
    pub fn model_pairs(&self) -> Vec<(&'static str, String)> {
        self.pairs().into_iter().filter(|(k, _)| k.starts_with("model.")).collect()
    }
}

fn default_width(m: &MixerConfig) -> usize {
    let all_mlp = [m.embed, m.down, m.ffn, m.head].iter().all(|k| *k == LayerKind::Mlp);
    if all_mlp {
        MLP_WIDTH
    } else {
        KAN_WIDTH
    }
}

/// Echo of a model/training pair with dataset keys at their defaults.
pub fn echo_model_train(model: &MixerConfig, train: &TrainConfig) -> String {
    RunConfig {
        model: model.clone(),
        train: train.clone(),
        ..RunConfig::default()
    }
    .echo_line()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse("# comment\nmodel.horizon = 192\n\ntrain.seed=7\n").unwrap();
        assert_eq!(cfg.model.horizon, 192);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.model.d_model, 16);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.dataset.family, "ett");
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        let err = RunConfig::parse("model.dmodel=8\n").unwrap_err().to_string();
        assert!(err.contains("model.dmodel"), "{err}");
        assert!(RunConfig::parse("train.lr=0.1\ntrain.lr=0.2\n").is_err());
        assert!(RunConfig::parse("model.basis=spline\n").is_err());
        assert!(RunConfig::parse("model.instance_norm=yes\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
    }

    #[test]
    fn mlp_width_default() {
        let text = "model.embed=mlp\nmodel.down=mlp\nmodel.ffn=mlp\nmodel.head=mlp\n";
        assert_eq!(RunConfig::parse(text).unwrap().model.d_model, 64);
        let text = "model.head=mlp\n";
        assert_eq!(RunConfig::parse(text).unwrap().model.d_model, 16);
    }

    #[test]
    fn echo_parses_back() {
        let text = "dataset.path=data/x.csv\nmodel.basis=wavelet\nmodel.prior=no_ms\ntrain.clip=2.5\n";
        let cfg = RunConfig::parse(text).unwrap();
        let back = RunConfig::from_echo(&cfg.echo_line()).unwrap();
        assert_eq!(back.echo_line(), cfg.echo_line());
        assert_eq!(back.model, cfg.model);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap().echo_line(), cfg.echo_line());
    }
}
