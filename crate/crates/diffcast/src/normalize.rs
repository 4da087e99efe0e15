//! Per-window, per-channel normalization with independent statistics for
//! past and future blocks.
//!
//! The past block is instance-normalized and rescaled by a learnable
//! affine `(gamma, beta)`. Future targets are normalized with their *own*
//! statistics, and only during training. At inference, predictions are
//! de-normalized using past statistics and the learned affine — the
//! inference path never sees future values. A shared-statistics baseline
//! (both blocks z-scored by the past) is provided for ablations.
//!
//! Population variance with an `eps = 1e-5` floor; gamma is stored as
//! `exp(log_gamma)` by the model so de-normalization never divides by
//! zero.

use crate::nn::Tensor;

/// Floor applied to per-channel standard deviations.
pub const SIGMA_EPS: f64 = 1e-5;

/// Per-channel statistics of one window plus the affine parameters in
/// effect when the past block was normalized.
#[derive(Debug, Clone)]
pub struct NormState {
    pub mu_x: Vec<f64>,
    pub sigma_x: Vec<f64>,
    /// Future-block statistics; populated only on the training path.
    pub mu_y: Option<Vec<f64>>,
    pub sigma_y: Option<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Per-channel mean and floored standard deviation over the time axis.
/// Emits a warning for constant channels, whose sigma is floored.
pub fn channel_stats(block: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (block.rows(), block.cols());
    let mut mu = vec![0.0; cols];
    let mut sigma = vec![0.0; cols];
    for c in 0..cols {
        let mut sum = 0.0;
        for r in 0..rows {
            sum += block.at(r, c);
        }
        let mean = sum / rows as f64;
        let mut var = 0.0;
        for r in 0..rows {
            var += (block.at(r, c) - mean).powi(2);
        }
        var /= rows as f64;
        let sd = var.sqrt();
        if sd < SIGMA_EPS {
            log::warn!("channel {c} is (near-)constant; sigma floored at {SIGMA_EPS}");
        }
        mu[c] = mean;
        sigma[c] = sd.max(SIGMA_EPS);
    }
    (mu, sigma)
}

fn zscore(block: &Tensor, mu: &[f64], sigma: &[f64]) -> Tensor {
    let (rows, cols) = (block.rows(), block.cols());
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        for c in 0..cols {
            out.set(r, c, (block.at(r, c) - mu[c]) / sigma[c]);
        }
    }
    out
}

/// Instance-normalize the past block and apply the learnable affine:
/// `x_norm = gamma * (x - mu_x) / sigma_x + beta` per channel.
pub fn normalize_past(past: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, NormState) {
    let (mu, sigma) = channel_stats(past);
    let mut out = zscore(past, &mu, &sigma);
    let cols = past.cols();
    for r in 0..past.rows() {
        for c in 0..cols {
            let v = out.at(r, c);
            out.set(r, c, gamma[c] * v + beta[c]);
        }
    }
    let state = NormState {
        mu_x: mu,
        sigma_x: sigma,
        mu_y: None,
        sigma_y: None,
        gamma: gamma.to_vec(),
        beta: beta.to_vec(),
    };
    (out, state)
}

/// Training-only target normalization by the future block's own
/// statistics (no affine): `y_norm = (y - mu_y) / sigma_y` per channel.
pub fn normalize_future_train(future: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (mu, sigma) = channel_stats(future);
    (zscore(future, &mu, &sigma), mu, sigma)
}

/// Invert the normalized prediction using only past statistics and the
/// affine: `y = sigma_x * (y_norm - beta) / gamma + mu_x` per channel.
pub fn denormalize_pred(pred_norm: &Tensor, state: &NormState) -> Tensor {
    let (rows, cols) = (pred_norm.rows(), pred_norm.cols());
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        for c in 0..cols {
            let v = (pred_norm.at(r, c) - state.beta[c]) / state.gamma[c];
            out.set(r, c, state.sigma_x[c] * v + state.mu_x[c]);
        }
    }
    out
}

/// Ablation baseline: both blocks z-scored by the past statistics, with
/// no affine. Under a mean shift `delta` between the blocks, the
/// normalized future carries the bias `delta / sigma_x`.
pub fn shared_stats_baseline(past: &Tensor, future: &Tensor) -> (Tensor, Tensor, NormState) {
    let (mu, sigma) = channel_stats(past);
    let x_norm = zscore(past, &mu, &sigma);
    let y_norm = zscore(future, &mu, &sigma);
    let cols = past.cols();
    let state = NormState {
        mu_x: mu,
        sigma_x: sigma,
        mu_y: None,
        sigma_y: None,
        gamma: vec![1.0; cols],
        beta: vec![0.0; cols],
    };
    (x_norm, y_norm, state)
}
