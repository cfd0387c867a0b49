use kanmixer::data::{synthetic_table, Dataset, SplitSpec};
use kanmixer::tensor::{ParamStore, Tensor};
use kanmixer::train::{adam_step, fit, Adam, TrainConfig};
use kanmixer::{Error, MixerConfig, MixerModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model() -> MixerConfig {
    MixerConfig {
        lookback: 24,
        horizon: 8,
        d_model: 6,
        n_blocks: 2,
        n_scales: 2,
        ..MixerConfig::default()
    }
}

fn data() -> Dataset {
    Dataset::prepare(&synthetic_table(400, 2, 12.0, 0.005), &SplitSpec::ett()).unwrap()
}

fn quick(epochs: usize, patience: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn patience_zero_runs_one_epoch() {
    let mut model = MixerModel::new(small_model(), 1).unwrap();
    let report = fit(&mut model, &data(), &quick(5, 0, 1)).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(report.best_epoch, 1);
}

#[test]
fn same_seed_gives_identical_reports() {
    let run = || {
        let mut model = MixerModel::new(small_model(), 4).unwrap();
        let mut r = fit(&mut model, &data(), &quick(3, 3, 4)).unwrap();
        r.wall_seconds = 0.0;
        (r, model.store().clone())
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let mut model = MixerModel::new(small_model(), 5).unwrap();
    let c = fit(&mut model, &data(), &quick(3, 3, 5)).unwrap();
    assert_ne!(a.epochs[0].train_loss, c.epochs[0].train_loss);
}

#[test]
fn restored_parameters_are_the_best_validation_epoch() {
    let data = data();
    let mut model = MixerModel::new(small_model(), 2).unwrap();
    let report = fit(&mut model, &data, &quick(6, 6, 2)).unwrap();
    let best = report.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
    assert_eq!(report.epochs[report.best_epoch - 1].val_mse, best);
    let val = data.windows(kanmixer::data::Segment::Val, 24, 8).unwrap();
    let again = kanmixer::train::evaluate(&model, &val).unwrap();
    assert_eq!(again.mse, best);
    assert!(report.test.is_some());
    assert!(report.epochs.iter().all(|e| e.train_loss.is_finite() && e.max_grad_norm >= 0.0));
}

#[test]
fn divergence_returns_the_partial_report() {
    let mut model = MixerModel::new(small_model(), 3).unwrap();
    let cfg = TrainConfig {
        lr: 1e300,
        clip: 0.0,
        ..quick(2, 2, 3)
    };
    match fit(&mut model, &data(), &cfg) {
        Err(Error::Diverged { epoch, report }) => {
            assert_eq!(epoch, 1);
            assert!(report.diverged.is_some());
            assert!(report.test.is_none());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

/// Plain per-scalar Adam written out longhand.
fn reference_adam(theta: &mut [f64], grads: &[Vec<f64>], lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for k in 0..theta.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / (1.0 - b1.powi(t));
            let vh = v[k] / (1.0 - b2.powi(t));
            theta[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn adam_matches_reference_over_100_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let init: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let mut expected = init.clone();
    reference_adam(&mut expected, &grads, 0.01);

    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(vec![2, 3], init.clone()).unwrap());
    let mut adam = Adam::new(&store, &TrainConfig::default());
    for g in &grads {
        store.zero_grad();
        store.get_mut(id).grad_mut().copy_from_slice(g);
        adam.step(&mut store).unwrap();
    }
    let mut free = init;
    let (mut m, mut v) = (vec![0.0; 6], vec![0.0; 6]);
    for (t, g) in grads.iter().enumerate() {
        adam_step(&mut free, g, &mut m, &mut v, t as u32 + 1, 0.01, 0.9, 0.999, 1e-8);
    }
    for k in 0..6 {
        assert!((store.get(id).data()[k] - expected[k]).abs() < 1e-12);
        assert!((free[k] - expected[k]).abs() < 1e-12);
    }
    assert_eq!(adam.steps(), 100);
}
