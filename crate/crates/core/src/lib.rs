//! KANMixer: a multi-scale mixing network built from Kolmogorov-Arnold
//! layers for long-term time-series forecasting.
//!
//! Everything runs on a small reverse-mode autodiff tape over `f64`
//! tensors ([`tensor`]). Learnable univariate bases live in [`basis`], the
//! KAN and dense layers in [`layer`] and the forecaster in [`model`].

pub mod basis;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod layer;
pub mod model;
pub mod tensor;
pub mod train;

pub use basis::{BSplineGrid, BasisSpec};
pub use config::RunConfig;
pub use data::{Dataset, SeriesTable, SplitSpec};
pub use error::{Error, Result};
pub use layer::{KanLayer, Layer, LayerKind, MlpLayer};
pub use model::{MixerConfig, MixerModel, Prior};
pub use tensor::{ParamStore, Tape, Tensor, Var};
pub use train::{fit, RunReport, TrainConfig};
