//! Deterministic training and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Segment, WindowBatch, Windows};
use crate::error::{Error, Result};
use crate::model::MixerModel;
use crate::tensor::{ParamStore, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 10,
            patience: 3,
            seed: 2021,
            clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        Ok(())
    }
}

/// One Adam update with bias correction on a single array.
///
/// `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state for every array in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// Applies the stored gradients. Parameters without a gradient buffer
    /// are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.t += 1;
        for (k, p) in store.iter_mut().enumerate() {
            let n = p.tensor.numel();
            let grad = p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            adam_step(
                p.tensor.data_mut(),
                &grad,
                &mut self.m[k],
                &mut self.v[k],
                self.t,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            );
        }
        Ok(())
    }
}

/// Mean squared and mean absolute error, reduced window by window in order.
pub fn mse_mae(pred: &Tensor, truth: &Tensor) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape("mse_mae", pred.shape(), truth.shape()));
    }
    let mut acc = MetricSums::default();
    acc.add(pred.data(), truth.data());
    Ok(acc.finish())
}

/// Running sums for [`mse_mae`] across batches.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricSums {
    sq: f64,
    abs: f64,
    count: usize,
}

impl MetricSums {
    pub fn add(&mut self, pred: &[f64], truth: &[f64]) {
        for (p, t) in pred.iter().zip(truth) {
            let e = p - t;
            self.sq += e * e;
            self.abs += e.abs();
        }
        self.count += pred.len();
    }

    pub fn finish(&self) -> (f64, f64) {
        let n = self.count.max(1) as f64;
        (self.sq / n, self.abs / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub windows: usize,
}

pub const EVAL_BATCH: usize = 256;

/// Forecast metrics over every window of a segment.
pub fn evaluate(model: &MixerModel, windows: &Windows<'_>) -> Result<Metrics> {
    let mut acc = MetricSums::default();
    for batch in windows.batches(EVAL_BATCH) {
        let batch = batch?;
        let pred = model.predict(&batch.inputs)?;
        acc.add(pred.data(), batch.targets.data());
    }
    let (mse, mae) = acc.finish();
    Ok(Metrics {
        mse,
        mae,
        windows: windows.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Single-model optimisation loop state.
pub struct Trainer<'m> {
    model: &'m mut MixerModel,
    adam: Adam,
    clip: f64,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut MixerModel, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(model.store(), cfg);
        Self {
            model,
            adam,
            clip: cfg.clip,
        }
    }

    pub fn model(&self) -> &MixerModel {
        self.model
    }

    /// Forward, MSE loss, backward, clip, Adam update.
    pub fn step(&mut self, batch: &WindowBatch) -> Result<StepStats> {
        let mut tape = Tape::new();
        let out = self.model.forward(&mut tape, &batch.inputs)?;
        let loss = tape.mse_loss(out, &batch.targets)?;
        let loss_value = tape.value(loss).data()[0];
        let store = self.model.store_mut();
        store.zero_grad();
        tape.backward(loss, store)?;
        let grad_norm = if self.clip > 0.0 {
            store.clip_grad_norm(self.clip)
        } else {
            store.grad_norm()
        };
        if loss_value.is_finite() {
            self.adam.step(store)?;
        }
        Ok(StepStats {
            loss: loss_value,
            grad_norm,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    /// Largest pre-clip gradient norm seen during the epoch.
    pub max_grad_norm: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub test: Option<Metrics>,
    pub param_count: usize,
    pub macs_per_window: usize,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config: String,
    pub diverged: Option<String>,
}

impl RunReport {
    pub fn test_mse(&self) -> f64 {
        self.test.map_or(f64::NAN, |m| m.mse)
    }

    pub fn test_mae(&self) -> f64 {
        self.test.map_or(f64::NAN, |m| m.mae)
    }

    /// One line per epoch, `key=value` separated by spaces.
    pub fn epoch_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| {
                format!(
                    "epoch={} steps={} train_loss={:.17e} val_mse={:.17e} val_mae={:.17e} max_grad_norm={:.17e}\n",
                    e.epoch, e.steps, e.train_loss, e.val_mse, e.val_mae, e.max_grad_norm
                )
            })
            .collect()
    }
}

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;

/// Trains `model` on the training segment with early stopping on the
/// validation MSE, restores the best-validation parameters and evaluates
/// the test segment once.
pub fn fit(model: &mut MixerModel, data: &Dataset, cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let (l, p) = (model.config().lookback, model.config().horizon);
    let train_w = data.windows(Segment::Train, l, p)?;
    let val_w = data.windows(Segment::Val, l, p)?;
    let test_w = data.windows(Segment::Test, l, p)?;

    let mut report = RunReport {
        epochs: Vec::new(),
        best_epoch: 0,
        test: None,
        param_count: crate::bench::count_params(model),
        macs_per_window: crate::bench::count_macs(model),
        wall_seconds: 0.0,
        seed: cfg.seed,
        config: crate::config::echo_model_train(model.config(), cfg),
        diverged: None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train_w.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0usize;
    let mut trainer = Trainer::new(model, cfg);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut max_norm: f64 = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_w.batch(chunk)?;
            let stats = match trainer.step(&batch) {
                Ok(s) => s,
                Err(Error::NonFiniteGradient(name)) => {
                    report.diverged = Some(format!("non-finite gradient in `{name}`"));
                    report.wall_seconds = started.elapsed().as_secs_f64();
                    return Err(Error::Diverged {
                        epoch,
                        report: Box::new(report),
                    });
                }
                Err(e) => return Err(e),
            };
            if !stats.loss.is_finite() {
                report.diverged = Some(format!("train loss {} at step {}", stats.loss, steps + 1));
                report.wall_seconds = started.elapsed().as_secs_f64();
                return Err(Error::Diverged {
                    epoch,
                    report: Box::new(report),
                });
            }
            loss_sum += stats.loss;
            max_norm = max_norm.max(stats.grad_norm);
            steps += 1;
        }
        let val = evaluate(trainer.model(), &val_w)?;
        report.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_mse: val.mse,
            val_mae: val.mae,
            max_grad_norm: max_norm,
            steps,
        });
        if !val.mse.is_finite() {
            report.diverged = Some(format!("validation MSE {}", val.mse));
            report.wall_seconds = started.elapsed().as_secs_f64();
            return Err(Error::Diverged {
                epoch,
                report: Box::new(report),
            });
        }
        if best.as_ref().is_none_or(|(b, _)| val.mse < *b) {
            best = Some((val.mse, trainer.model().store().clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }

    if let Some((_, store)) = best {
        *model.store_mut() = store;
    }
    model.store_mut().zero_grad();
    report.test = Some(evaluate(model, &test_w)?);
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_by_hand() {
        let (mut th, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_step(&mut th, &[1.0], &mut m, &mut v, 1, 0.01, 0.9, 0.999, 1e-8);
        assert!((th[0] - (1.0 - 0.01 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((th[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let (mut th, mut m, mut v) = ([0.3, -2.0], [0.0; 2], [0.0; 2]);
        for t in 1..5 {
            adam_step(&mut th, &[0.0, 0.0], &mut m, &mut v, t, 0.01, 0.9, 0.999, 1e-8);
        }
        assert_eq!(th, [0.3, -2.0]);
    }

    #[test]
    fn adam_rejects_nan_gradient_by_name() {
        let mut store = ParamStore::new();
        let id = store.add("head.0.base", Tensor::zeros(&[2]));
        store.get_mut(id).grad_mut()[1] = f64::NAN;
        let mut adam = Adam::new(&store, &TrainConfig::default());
        match adam.step(&mut store) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "head.0.base"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn metric_examples() {
        let p = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let t = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(mse_mae(&p, &t).unwrap(), (0.5, 0.5));
        assert_eq!(mse_mae(&t, &t).unwrap(), (0.0, 0.0));
        let shifted = Tensor::new(vec![1, 1, 2], vec![-0.5, 0.5]).unwrap();
        let (mse, mae) = mse_mae(&shifted, &t).unwrap();
        assert!((mse - 2.25).abs() < 1e-15 && (mae - 1.5).abs() < 1e-15);
        assert!(mse_mae(&p, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 11,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
