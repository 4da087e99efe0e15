//! Training loop: weighted-MAE denoising objective, uniform diffusion-step
//! sampling, Adam, early stopping on a fast deterministic validation
//! forecast.
//!
//! Per sample: the past window is z-scored and (in independent mode) the
//! learnable affine is applied inside the graph so `(gamma, beta)` train
//! jointly with the transformer; the future target is normalized by its
//! own statistics, corrupted at a uniformly drawn step, and the model
//! predicts the clean target under a weighted MAE. In shared-statistics
//! mode (the ablation twin) the target is z-scored by past statistics and
//! the affine stays frozen at identity.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SeriesWindow;
use crate::denoiser::{patchify, DenoiserError, DenoiserModel};
use crate::diffusion::{forward_corrupt, ReverseSamplerConfig, SampleError, SkipKind};
use crate::forecast::Forecaster;
use crate::metrics;
use crate::nn::graph::Graph;
use crate::nn::{AdamError, AdamState, Tensor, TensorError};
use crate::normalize::channel_stats;
use crate::rng;
use crate::schedule::{NoiseSchedule, ScheduleSpec};

const STEP_TAG: u64 = 0x737465;
const EPOCH_TAG: u64 = 0x65706f;
const DROP_TAG: u64 = 0x64726f;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error("graph failure (non-finite loss aborts the epoch): {0}")]
    Graph(#[from] TensorError),
    #[error(transparent)]
    Optimizer(#[from] AdamError),
    #[error("sampling failure: {0}")]
    Sampling(#[from] SampleError),
    #[error("training needs a nonempty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid train config: {0}")]
    Config(String),
}

/// Which normalization path the trainer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// Targets normalized by their own statistics; affine trains jointly.
    Independent,
    /// Targets z-scored by past statistics; affine frozen at identity.
    SharedPast,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    /// Floor on the loss-weight denominator `sqrt(1 - alpha_bar_k)`.
    pub loss_eps: f64,
    /// Flips the weight exponent: `false` divides by
    /// `sqrt(1 - alpha_bar_k)` (up-weighting low-noise steps), `true`
    /// multiplies by it instead.
    pub flip_loss_weight: bool,
    pub norm_mode: NormMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 100,
            patience: 10,
            batch_size: 16,
            schedule: ScheduleSpec::default(),
            seed: 0,
            loss_eps: 1e-3,
            flip_loss_weight: false,
            norm_mode: NormMode::Independent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 {
            return Err(TrainError::Config(format!("lr {} must be > 0", self.lr)));
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return Err(TrainError::Config(format!(
                "need 1 <= patience <= max_epochs, got {} / {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.schedule.steps == 0 {
            return Err(TrainError::Config("diffusion steps must be >= 1".into()));
        }
        if self.loss_eps <= 0.0 {
            return Err(TrainError::Config("loss_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-step loss weight `1 / max(sqrt(1 - alpha_bar_k), eps)` (or its
/// reciprocal form when flipped).
pub fn loss_weight(sched: &NoiseSchedule, k: usize, loss_eps: f64, flip: bool) -> f64 {
    let denom = (1.0 - sched.alpha_bar(k)).sqrt().max(loss_eps);
    if flip {
        denom
    } else {
        1.0 / denom
    }
}

/// Scalar weighted MAE between a prediction and the normalized target at
/// diffusion step `k`: `mean(|target - pred|) * weight(k)`.
pub fn weighted_mae(
    pred: &Tensor,
    target: &Tensor,
    k: usize,
    sched: &NoiseSchedule,
    loss_eps: f64,
    flip: bool,
) -> Result<f64, TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_mae",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let mae: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mae * loss_weight(sched, k, loss_eps, flip))
}

/// Uniform diffusion-step draw for one (step, sample) site.
pub fn draw_step(seed: u64, tags: &[u64], k_max: usize) -> usize {
    use rand::Rng;
    let mut r = rng::stream(seed, tags);
    r.random_range(1..=k_max)
}

fn column(t: &Tensor, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|r| t.at(r, c)).collect()
}

/// Batch loss and per-parameter gradients (canonical parameter order)
/// without an optimizer step. Deterministic given `(cfg.seed, step_tag)`:
/// the same diffusion steps and corruption noise are drawn every call.
pub fn loss_and_gradients(
    model: &DenoiserModel,
    batch: &[&SeriesWindow],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    step_tag: u64,
) -> Result<(f64, Vec<Option<Tensor>>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptySplit("batch"));
    }
    let mcfg = *model.config();
    let channels = model.channels();
    let k_max = sched.len();
    let independent = cfg.norm_mode == NormMode::Independent;

    let mut g = Graph::new();
    let gp = model.insert_params(&mut g, true);
    let mut sample_losses = Vec::with_capacity(batch.len() * channels);
    let mut dropout_rng = rng::stream(cfg.seed, &[DROP_TAG, step_tag]);

    for (wi, window) in batch.iter().enumerate() {
        let (mu_x, sigma_x) = channel_stats(&window.past);
        // target normalization: own statistics vs past statistics
        let (target_mu, target_sigma) = if independent {
            channel_stats(&window.future)
        } else {
            (mu_x.clone(), sigma_x.clone())
        };
        let k = draw_step(cfg.seed, &[STEP_TAG, step_tag, wi as u64], k_max);
        let weight = loss_weight(sched, k, cfg.loss_eps, cfg.flip_loss_weight);

        for ch in 0..channels {
            let x_z: Vec<f64> = column(&window.past, ch)
                .iter()
                .map(|v| (v - mu_x[ch]) / sigma_x[ch])
                .collect();
            let y_norm: Vec<f64> = column(&window.future, ch)
                .iter()
                .map(|v| (v - target_mu[ch]) / target_sigma[ch])
                .collect();
            let y_norm = Tensor::col(&y_norm);

            let mut noise_rng =
                rng::stream(cfg.seed, &[STEP_TAG, step_tag, wi as u64, ch as u64, 1]);
            let eps = Tensor::new(
                vec![y_norm.rows(), 1],
                rng::normal_vec(&mut noise_rng, y_norm.rows()),
            )
            .expect("noise shape");
            let y_k = forward_corrupt(&y_norm, k, &eps, sched)?;

            let (x_tok, _) = patchify(&x_z, mcfg.patch_len, mcfg.stride)?;
            let (y_tok, y_off) = patchify(&column(&y_k, 0), mcfg.patch_len, mcfg.stride)?;
            let mut x_node = g.constant(x_tok);
            if independent {
                // affine on the past tokens, inside the graph so
                // gamma/beta receive gradients
                let log_g = g.slice(gp.log_gamma, 0, 1, ch, ch + 1)?;
                let gamma = g.exp(log_g)?;
                let beta = g.slice(gp.beta, 0, 1, ch, ch + 1)?;
                x_node = g.mul(x_node, gamma)?;
                x_node = g.add(x_node, beta)?;
            }
            let y_node = g.constant(y_tok);
            let pred = model.build_forward(
                &mut g,
                &gp,
                x_node,
                y_node,
                &y_off,
                k as f64 / k_max as f64,
                if mcfg.dropout > 0.0 {
                    Some(&mut dropout_rng)
                } else {
                    None
                },
            )?;
            let target = g.constant(y_norm);
            let err = g.sub(target, pred)?;
            let absolute = g.abs(err)?;
            let mean_err = g.mean(absolute)?;
            let weighted = g.scale(mean_err, weight)?;
            sample_losses.push(weighted);
        }
    }

    let stacked = g.concat_rows(&sample_losses)?;
    let loss = g.mean(stacked)?;
    let loss_value = g.value(loss).item();

    let grads = g.backward(loss)?;
    let nodes = DenoiserModel::param_nodes(&gp);
    let grad_tensors: Vec<Option<Tensor>> =
        nodes.iter().map(|&n| grads.get(n).cloned()).collect();
    Ok((loss_value, grad_tensors))
}

/// One optimization step over a batch of windows. Returns the batch loss.
pub fn train_step(
    model: &mut DenoiserModel,
    adam: &mut AdamState,
    batch: &[&SeriesWindow],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    step_tag: u64,
) -> Result<f64, TrainError> {
    let (loss_value, grad_tensors) = loss_and_gradients(model, batch, sched, cfg, step_tag)?;
    adam.apply(&mut model.params_mut(), &grad_tensors)?;
    Ok(loss_value)
}

/// Strict-improvement early stopping.
#[derive(Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record an epoch's validation value. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val: f64) -> (bool, bool) {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

/// One row of the training history CSV.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    pub best_val: f64,
    pub best_epoch: usize,
}

/// Validation metric: MSE of a single deterministic strided draw per
/// window, in data space.
pub fn validation_mse(
    model: &DenoiserModel,
    windows: &[SeriesWindow],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64, TrainError> {
    let sampler = ReverseSamplerConfig {
        steps: 3.min(sched.len()),
        skip_kind: SkipKind::TimeUniform,
        stochastic: false,
        rng_seed: seed,
    };
    let forecaster = Forecaster::new(model, sched, sampler);
    let mut total = 0.0;
    for w in windows {
        let point =
            forecaster.point_deterministic(&w.past, rng::mix(seed, &[w.origin as u64]))?;
        total += metrics::mse(&point, &w.future).expect("shapes align");
    }
    Ok(total / windows.len() as f64)
}

/// Train up to `max_epochs` with early stopping on validation MSE;
/// restores the best-validation parameters before returning.
pub fn fit(
    model: &mut DenoiserModel,
    train_windows: &[SeriesWindow],
    val_windows: &[SeriesWindow],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<FitResult, TrainError> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_windows.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    use rand::seq::SliceRandom;

    let mut adam = AdamState::new(cfg.lr, &model.param_shapes());
    let mut stopper = EarlyStopper::new(cfg.patience.max(1));
    let mut history = Vec::new();
    let mut best_params: Option<Vec<Tensor>> = None;
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, &[EPOCH_TAG, epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&SeriesWindow> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let step_tag = rng::mix(epoch as u64, &[bi as u64]);
            epoch_loss += train_step(model, &mut adam, &batch, sched, cfg, step_tag)?;
            batches += 1;
        }
        epoch_loss /= batches as f64;

        let val_mse = validation_mse(model, val_windows, sched, cfg.seed)?;
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_mse,
            lr: cfg.lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {epoch_loss:.5}, val {val_mse:.5}");

        let (improved, stop) = stopper.observe(epoch, val_mse);
        if improved {
            best_params = Some(model.named_params().iter().map(|(_, t)| (*t).clone()).collect());
        }
        if stop {
            break;
        }
    }

    if let Some(best) = best_params {
        for (slot, tensor) in model.params_mut().into_iter().zip(best) {
            *slot = tensor;
        }
    }
    Ok(FitResult {
        history,
        best_val: stopper.best(),
        best_epoch: stopper.best_epoch,
    })
}

/// `epoch,train_loss,val_mse,lr,wall_seconds` CSV.
pub fn write_history_csv(history: &[EpochRecord], path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_loss,val_mse,lr,wall_seconds")?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_mse, r.lr, r.wall_seconds
        )?;
    }
    Ok(())
}
