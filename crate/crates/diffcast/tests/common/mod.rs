//! Shared helpers for the integration suites: the central-difference
//! oracle and small experiment builders.

use diffcast::data::{synth_drift, Dataset, DriftKind, DriftSpec};
use diffcast::denoiser::{DenoiserConfig, DenoiserModel};
use diffcast::train::{fit, NormMode, TrainConfig};

/// Central finite differences of a scalar function (the independent
/// oracle every gradient check compares against).
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Max-norm relative error between an analytic and a numeric gradient.
pub fn gradient_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Linear-trend drift dataset at the acceptance geometry
/// (T=5000, M=2, L=96, H=24).
pub fn trend_dataset(slope: f64, seed: u64) -> Dataset {
    synth_drift(
        DriftSpec {
            kind: DriftKind::Trend { slope },
            amplitude: 1.0,
            period: 12.0,
            noise_std: 0.3,
            seed,
        },
        5000,
        2,
        [3500, 750, 750],
        96,
        24,
        "trend-drift",
    )
    .expect("valid synth params")
}

/// Desk-scale experiment model (small but real transformer).
pub fn desk_model(channels: usize, seed: u64) -> DenoiserModel {
    DenoiserModel::new(desk_config(), channels, seed).expect("valid config")
}

pub fn desk_config() -> DenoiserConfig {
    DenoiserConfig {
        patch_len: 8,
        stride: 4,
        d_model: 64,
        n_heads: 2,
        n_layers: 2,
        ffn_mult: 2,
        dropout: 0.0,
        lookback: 96,
        horizon: 24,
    }
}

/// Short desk-scale training budget shared by the experiment criteria.
pub fn desk_train_config(seed: u64, norm_mode: NormMode) -> TrainConfig {
    TrainConfig {
        max_epochs: 4,
        patience: 4,
        batch_size: 16,
        seed,
        norm_mode,
        ..TrainConfig::default()
    }
}

/// Train a fresh desk model on the dataset (window strides chosen for
/// runtime), returning the fitted model.
pub fn train_desk_model(ds: &Dataset, seed: u64, norm_mode: NormMode) -> DenoiserModel {
    let mut model = desk_model(ds.n_channels(), seed);
    let cfg = desk_train_config(seed, norm_mode);
    let sched = cfg.schedule.build().expect("schedule");
    let train_w = ds
        .windows(diffcast::data::Split::Train, 4)
        .expect("train windows");
    let mut val_w = ds
        .windows(diffcast::data::Split::Val, 16)
        .expect("val windows");
    val_w.truncate(24);
    fit(&mut model, &train_w, &val_w, &sched, &cfg).expect("training succeeds");
    model
}
