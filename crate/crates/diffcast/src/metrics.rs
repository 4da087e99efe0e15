//! Point and probabilistic forecast scores: MSE, MAE, sample-based CRPS
//! and CRPS-sum.
//!
//! CRPS uses the energy-form estimator
//! `(1/N) Σ|x_i - y| - (1/(2N²)) ΣΣ|x_i - x_j|`.
//! CRPS-sum scores the cross-channel sum per horizon step and is
//! normalized by the absolute target sum, `Σ_t |Σ_m y_{t,m}|`; the
//! aggregate CRPS reported in [`EvalReport`] is normalized the same way
//! over all grid cells.

use std::fmt;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::diffusion::ForecastSamples;
use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: needs at least one sample")]
    Empty { op: &'static str },
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
}

fn check_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error over all cells.
pub fn mse(pred: &Tensor, truth: &Tensor) -> Result<f64, MetricError> {
    check_shapes("mse", pred, truth)?;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Mean absolute error over all cells.
pub fn mae(pred: &Tensor, truth: &Tensor) -> Result<f64, MetricError> {
    check_shapes("mae", pred, truth)?;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Energy-form CRPS of a sample set against one realized value.
pub fn crps(samples: &[f64], truth: f64) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty { op: "crps" });
    }
    let n = samples.len() as f64;
    let dist: f64 = samples.iter().map(|x| (x - truth).abs()).sum::<f64>() / n;
    let mut spread = 0.0;
    for (i, a) in samples.iter().enumerate() {
        // off-diagonal pairs, counted once and doubled
        for b in &samples[i + 1..] {
            spread += (a - b).abs();
        }
    }
    spread = 2.0 * spread / (n * n);
    Ok(dist - 0.5 * spread)
}

/// Sum channels per (draw, t), score each horizon step with [`crps`], sum
/// over t, and normalize by `Σ_t |Σ_m truth|`.
pub fn crps_sum(samples: &ForecastSamples, truth: &Tensor) -> Result<f64, MetricError> {
    if samples.n_draws() == 0 {
        return Err(MetricError::Empty { op: "crps_sum" });
    }
    if truth.shape() != [samples.horizon(), samples.channels()] {
        return Err(MetricError::ShapeMismatch {
            op: "crps_sum",
            lhs: vec![samples.horizon(), samples.channels()],
            rhs: truth.shape().to_vec(),
        });
    }
    let (h, m, n) = (samples.horizon(), samples.channels(), samples.n_draws());
    let mut total = 0.0;
    let mut norm = 0.0;
    for t in 0..h {
        let truth_sum: f64 = (0..m).map(|c| truth.at(t, c)).sum();
        let draw_sums: Vec<f64> = (0..n)
            .map(|d| (0..m).map(|c| samples.value(d, t, c)).sum())
            .collect();
        total += crps(&draw_sums, truth_sum)?;
        norm += truth_sum.abs();
    }
    Ok(total / norm.max(f64::MIN_POSITIVE))
}

/// Per-cell CRPS summed over the grid, normalized by `Σ|truth|`.
pub fn crps_grid(samples: &ForecastSamples, truth: &Tensor) -> Result<f64, MetricError> {
    let (h, m) = (samples.horizon(), samples.channels());
    let mut total = 0.0;
    let mut norm = 0.0;
    for t in 0..h {
        for c in 0..m {
            total += crps(&samples.cell(t, c), truth.at(t, c))?;
            norm += truth.at(t, c).abs();
        }
    }
    Ok(total / norm.max(f64::MIN_POSITIVE))
}

/// Mean per-cell variance across draws (the sample-diversity measure).
pub fn mean_sample_variance(samples: &ForecastSamples) -> f64 {
    let (h, m, n) = (samples.horizon(), samples.channels(), samples.n_draws());
    let mut total = 0.0;
    for t in 0..h {
        for c in 0..m {
            let vals = samples.cell(t, c);
            let mean = vals.iter().sum::<f64>() / n as f64;
            total += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        }
    }
    total / (h * m) as f64
}

/// Scores for one evaluation window.
#[derive(Debug, Clone)]
pub struct WindowScores {
    pub origin: usize,
    /// Single-draw MSE.
    pub mse_single: f64,
    /// Median-of-means ensemble MSE.
    pub mse_mom: f64,
    /// Plain-average ensemble MSE.
    pub mse_mean: f64,
    /// MAE of the MoM point forecast.
    pub mae: f64,
    pub crps: f64,
    pub crps_sum: f64,
    pub variance: f64,
}

/// Aggregate over all test windows plus the per-window breakdown.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub mse_single: f64,
    pub mse_mom: f64,
    pub mse_mean: f64,
    pub mae: f64,
    pub crps: f64,
    pub crps_sum: f64,
    pub variance: f64,
    pub windows: Vec<WindowScores>,
}

impl EvalReport {
    pub fn from_windows(windows: Vec<WindowScores>) -> Self {
        let n = windows.len().max(1) as f64;
        let avg = |f: fn(&WindowScores) -> f64| windows.iter().map(f).sum::<f64>() / n;
        Self {
            mse_single: avg(|w| w.mse_single),
            mse_mom: avg(|w| w.mse_mom),
            mse_mean: avg(|w| w.mse_mean),
            mae: avg(|w| w.mae),
            crps: avg(|w| w.crps),
            crps_sum: avg(|w| w.crps_sum),
            variance: avg(|w| w.variance),
            windows,
        }
    }

    /// Aggregate row: `mse,mse_e,mse_avg,mae,crps,crps_sum,var`.
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "mse,mse_e,mse_avg,mae,crps,crps_sum,var")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.mse_single,
            self.mse_mom,
            self.mse_mean,
            self.mae,
            self.crps,
            self.crps_sum,
            self.variance
        )?;
        Ok(())
    }

    /// Per-window breakdown table.
    pub fn write_windows_csv(&self, path: &Path) -> Result<(), MetricError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "origin,mse,mse_e,mse_avg,mae,crps,crps_sum,var")?;
        for s in &self.windows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.origin, s.mse_single, s.mse_mom, s.mse_mean, s.mae, s.crps, s.crps_sum, s.variance
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "evaluation over {} windows", self.windows.len())?;
        writeln!(f, "  MSE (single draw)   {:.6}", self.mse_single)?;
        writeln!(f, "  MSE (MoM ensemble)  {:.6}", self.mse_mom)?;
        writeln!(f, "  MSE (mean ensemble) {:.6}", self.mse_mean)?;
        writeln!(f, "  MAE (MoM)           {:.6}", self.mae)?;
        writeln!(f, "  CRPS                {:.6}", self.crps)?;
        writeln!(f, "  CRPS-sum            {:.6}", self.crps_sum)?;
        write!(f, "  sample variance     {:.6}", self.variance)
    }
}
