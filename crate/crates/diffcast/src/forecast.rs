//! End-to-end forecasting: normalize the past window, run the reverse
//! sampler conditioned on it, de-normalize the draws with past
//! statistics, and score windows into an evaluation report.

use crate::denoiser::DenoiserModel;
use crate::diffusion::{
    sample_batch, ForecastSamples, ReverseSamplerConfig, SampleError, SkipKind,
};
use crate::ensemble::{mean_ensemble, mom_grid, single_draw, MoMConfig};
use crate::metrics::{self, EvalReport, WindowScores};
use crate::nn::Tensor;
use crate::normalize::{denormalize_pred, normalize_past};
use crate::rng;
use crate::schedule::NoiseSchedule;

const EVAL_TAG: u64 = 0x6576616c;
const VAL_TAG: u64 = 0x76616c;

/// Anything that can produce forecast draws for a past window. The
/// diffusion pipeline implements it; tests plug in oracles.
pub trait WindowForecaster: Sync {
    fn draws(&self, past: &Tensor, n_draws: usize, seed: u64)
        -> Result<ForecastSamples, SampleError>;
}

/// The trained-model pipeline: past-statistics normalization with the
/// model's learned affine, reverse sampling in normalized space, and
/// de-normalization of every draw.
pub struct Forecaster<'a> {
    pub model: &'a DenoiserModel,
    pub sched: &'a NoiseSchedule,
    pub sampler: ReverseSamplerConfig,
}

impl<'a> Forecaster<'a> {
    pub fn new(
        model: &'a DenoiserModel,
        sched: &'a NoiseSchedule,
        sampler: ReverseSamplerConfig,
    ) -> Self {
        Self {
            model,
            sched,
            sampler,
        }
    }

    /// One deterministic draw (posterior-mean steps), used as the fast
    /// validation forecast.
    pub fn point_deterministic(&self, past: &Tensor, seed: u64) -> Result<Tensor, SampleError> {
        let cfg = ReverseSamplerConfig {
            steps: self.sampler.steps.min(3),
            skip_kind: SkipKind::TimeUniform,
            stochastic: false,
            rng_seed: rng::mix(seed, &[VAL_TAG]),
        };
        let draws = self.draws_with(past, 1, cfg)?;
        Ok(draws.draw(0))
    }

    fn draws_with(
        &self,
        past: &Tensor,
        n_draws: usize,
        cfg: ReverseSamplerConfig,
    ) -> Result<ForecastSamples, SampleError> {
        let (x_norm, state) = normalize_past(past, &self.model.gamma(), &self.model.beta_shift());
        let h = self.model.config().horizon;
        let m = past.cols();
        let k_total = self.sched.len();
        let model = self.model;
        let predictor = move |noisy: &Tensor, k: usize| -> Result<Tensor, SampleError> {
            model
                .predict(&x_norm, noisy, k, k_total)
                .map_err(|e| SampleError::Predictor {
                    step: k,
                    message: e.to_string(),
                })
        };
        let normalized = sample_batch(&predictor, &[h, m], n_draws, &cfg, self.sched)?;
        let draws: Vec<Tensor> = (0..n_draws)
            .map(|i| denormalize_pred(&normalized.draw(i), &state))
            .collect();
        Ok(ForecastSamples::from_draws(&draws))
    }
}

impl WindowForecaster for Forecaster<'_> {
    fn draws(
        &self,
        past: &Tensor,
        n_draws: usize,
        seed: u64,
    ) -> Result<ForecastSamples, SampleError> {
        let cfg = ReverseSamplerConfig {
            rng_seed: seed,
            ..self.sampler
        };
        self.draws_with(past, n_draws, cfg)
    }
}

/// Score a forecaster over evaluation windows: `n_draws` draws per
/// window, MoM/mean/single-draw points, CRPS and CRPS-sum, per-cell
/// sample variance. Window seeds derive from the window origin so
/// subsetting windows never changes per-window results.
pub fn evaluate_windows(
    forecaster: &dyn WindowForecaster,
    windows: &[crate::data::SeriesWindow],
    n_draws: usize,
    mom_cfg: &MoMConfig,
    seed: u64,
) -> Result<EvalReport, SampleError> {
    let mut scores = Vec::with_capacity(windows.len());
    for w in windows {
        let window_seed = rng::mix(seed, &[EVAL_TAG, w.origin as u64]);
        let draws = forecaster.draws(&w.past, n_draws, window_seed)?;
        let cell_mom = MoMConfig {
            rng_seed: rng::mix(window_seed, &[0x6d6f6d]),
            ..*mom_cfg
        };
        let mom_point = mom_grid(&draws, &cell_mom).map_err(|e| SampleError::Predictor {
            step: 0,
            message: e.to_string(),
        })?;
        let mean_point = mean_ensemble(&draws);
        let single = single_draw(&draws, 0).expect("draw 0 exists");
        let score = |p: &Tensor| metrics::mse(p, &w.future).expect("shapes align");
        scores.push(WindowScores {
            origin: w.origin,
            mse_single: score(&single),
            mse_mom: score(&mom_point),
            mse_mean: score(&mean_point),
            mae: metrics::mae(&mom_point, &w.future).expect("shapes align"),
            crps: metrics::crps_grid(&draws, &w.future).expect("shapes align"),
            crps_sum: metrics::crps_sum(&draws, &w.future).expect("shapes align"),
            variance: metrics::mean_sample_variance(&draws),
        });
    }
    Ok(EvalReport::from_windows(scores))
}
