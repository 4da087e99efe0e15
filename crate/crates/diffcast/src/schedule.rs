//! Diffusion noise schedules and their derived coefficient tables.
//!
//! A schedule over `K` steps carries `beta_k`, `alpha_k = 1 - beta_k`, the
//! cumulative products `alpha_bar_k` (with `alpha_bar_0 = 1` by
//! convention) and the posterior standard deviations `sigma_k`. Betas are
//! clipped to `(0, 0.999]`; after clipping, `alpha_bar` is recomputed from
//! the clipped betas so the table stays self-consistent.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BETA_MAX: f64 = 0.999;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule needs at least one step")]
    EmptySchedule,
    #[error("cosine offset must be >= 0, got {0}")]
    NegativeOffset(f64),
    #[error("beta range must satisfy 0 < beta_min <= beta_max <= {BETA_MAX}, got [{min}, {max}]")]
    BadBetaRange { min: f64, max: f64 },
    #[error("step {k} out of range 1..={max}")]
    StepOutOfRange { k: usize, max: usize },
    #[error("schedule dump: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
    Quadratic,
}

/// Serializable recipe for a schedule (config files, checkpoints).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Diffusion step count K.
    pub steps: usize,
    /// Cosine offset s (ignored by the beta-range schedules).
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
}

fn default_offset() -> f64 {
    5.0
}

fn default_beta_min() -> f64 {
    1e-4
}

fn default_beta_max() -> f64 {
    0.5
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            steps: 100,
            offset: default_offset(),
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule, ScheduleError> {
        match self.kind {
            ScheduleKind::Cosine => NoiseSchedule::cosine(self.steps, self.offset),
            ScheduleKind::Linear => NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max),
            ScheduleKind::Quadratic => {
                NoiseSchedule::quadratic(self.steps, self.beta_min, self.beta_max)
            }
        }
    }
}

/// Per-step coefficients of the reverse-posterior mean and variance.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorCoeffs {
    /// Weight of the predicted clean target.
    pub c_clean: f64,
    /// Weight of the current noisy state.
    pub c_noisy: f64,
    /// Posterior standard deviation.
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    /// Cosine offset; 0 for the beta-range schedules.
    offset: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule with offset `s`:
    /// `f(k) = cos^2(((k/K + s) / (1 + s)) * pi/2)`,
    /// `alpha_bar_k = f(k)/f(0)`, `beta_k = min(1 - alpha_bar_k /
    /// alpha_bar_{k-1}, 0.999)`.
    pub fn cosine(steps: usize, offset: f64) -> Result<Self, ScheduleError> {
        if steps == 0 {
            return Err(ScheduleError::EmptySchedule);
        }
        if offset < 0.0 {
            return Err(ScheduleError::NegativeOffset(offset));
        }
        let f = |k: f64| {
            let x = (k / steps as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut betas = Vec::with_capacity(steps);
        let mut prev_bar = 1.0;
        for k in 1..=steps {
            let bar = f(k as f64) / f0;
            let beta = (1.0 - bar / prev_bar).min(BETA_MAX);
            betas.push(beta);
            prev_bar = bar;
        }
        Ok(Self::from_betas(ScheduleKind::Cosine, offset, betas))
    }

    /// Betas evenly spaced between `beta_min` and `beta_max`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, ScheduleError> {
        let betas = ramp(steps, beta_min, beta_max, |b| b, |b| b)?;
        Ok(Self::from_betas(ScheduleKind::Linear, 0.0, betas))
    }

    /// `sqrt(beta)` evenly spaced between `sqrt(beta_min)` and
    /// `sqrt(beta_max)`.
    pub fn quadratic(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, ScheduleError> {
        let betas = ramp(steps, beta_min, beta_max, f64::sqrt, |b| b * b)?;
        Ok(Self::from_betas(ScheduleKind::Quadratic, 0.0, betas))
    }

    fn from_betas(kind: ScheduleKind, offset: f64, betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut sched = Self {
            kind,
            offset,
            betas,
            alphas,
            alpha_bars,
            sigmas: Vec::new(),
        };
        sched.sigmas = (1..=sched.len())
            .map(|k| sched.posterior_variance(k).sqrt())
            .collect();
        sched
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Number of diffusion steps `K`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    /// `alpha_bar_k`, with the `k = 0` convention returning 1.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigmas[k - 1]
    }

    fn posterior_variance(&self, k: usize) -> f64 {
        (1.0 - self.alpha_bar(k - 1)) / (1.0 - self.alpha_bar(k)) * self.beta(k)
    }

    fn check_step(&self, k: usize) -> Result<(), ScheduleError> {
        if k == 0 || k > self.len() {
            Err(ScheduleError::StepOutOfRange { k, max: self.len() })
        } else {
            Ok(())
        }
    }

    /// Reverse-posterior coefficients at step `k`:
    /// `c_clean = sqrt(alpha_bar_{k-1}) beta_k / (1 - alpha_bar_k)`,
    /// `c_noisy = sqrt(alpha_k) (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k)`,
    /// `sigma_k^2 = (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k) * beta_k`.
    pub fn posterior_coeffs(&self, k: usize) -> Result<PosteriorCoeffs, ScheduleError> {
        self.check_step(k)?;
        let bar_prev = self.alpha_bar(k - 1);
        let bar = self.alpha_bar(k);
        let denom = 1.0 - bar;
        Ok(PosteriorCoeffs {
            c_clean: bar_prev.sqrt() * self.beta(k) / denom,
            c_noisy: self.alpha(k).sqrt() * (1.0 - bar_prev) / denom,
            sigma: self.sigma(k),
        })
    }

    /// Coefficients for one effective reverse step from retained step
    /// `k` straight to retained step `k_prev < k`, treating the span as a
    /// single step with `alpha_eff = alpha_bar_k / alpha_bar_{k_prev}`.
    /// With `k_prev = k - 1` this reduces to [`Self::posterior_coeffs`].
    pub fn skip_coeffs(&self, k: usize, k_prev: usize) -> Result<PosteriorCoeffs, ScheduleError> {
        self.check_step(k)?;
        if k_prev >= k {
            return Err(ScheduleError::StepOutOfRange {
                k: k_prev,
                max: k - 1,
            });
        }
        let bar = self.alpha_bar(k);
        let bar_prev = self.alpha_bar(k_prev);
        let alpha_eff = bar / bar_prev;
        let beta_eff = 1.0 - alpha_eff;
        let denom = 1.0 - bar;
        Ok(PosteriorCoeffs {
            c_clean: bar_prev.sqrt() * beta_eff / denom,
            c_noisy: alpha_eff.sqrt() * (1.0 - bar_prev) / denom,
            sigma: ((1.0 - bar_prev) / denom * beta_eff).sqrt(),
        })
    }

    /// CSV table `k,beta,alpha_bar,sigma` for inspection/plotting.
    pub fn write_csv(&self, path: &Path) -> Result<(), ScheduleError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "k,beta,alpha_bar,sigma")?;
        for k in 1..=self.len() {
            writeln!(w, "{},{},{},{}", k, self.beta(k), self.alpha_bar(k), self.sigma(k))?;
        }
        Ok(())
    }
}

fn ramp(
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    fwd: impl Fn(f64) -> f64,
    inv: impl Fn(f64) -> f64,
) -> Result<Vec<f64>, ScheduleError> {
    if steps == 0 {
        return Err(ScheduleError::EmptySchedule);
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max <= BETA_MAX) {
        return Err(ScheduleError::BadBetaRange {
            min: beta_min,
            max: beta_max,
        });
    }
    let lo = fwd(beta_min);
    let hi = fwd(beta_max);
    Ok((0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                inv(lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            }
        })
        .collect())
}
