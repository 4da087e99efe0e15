//! Aggregating probabilistic draws into a point forecast.
//!
//! The primary estimator is median-of-means: shuffle the draws, split
//! them into `G` groups, average within groups, take the median of the
//! group means, and average that median over `R` shuffled repeats. Plain
//! averaging and single-draw baselines are provided for comparison, along
//! with a Monte-Carlo check of the estimator's concentration bound
//! `P(|mom - mu| > eps) <= exp(-2G (1/2 - G sigma^2/(n eps^2))^2)`.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::diffusion::ForecastSamples;
use crate::nn::Tensor;
use crate::rng;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("{n} samples cannot fill {groups} groups")]
    TooFewSamples { n: usize, groups: usize },
    #[error("repeats must be >= 1")]
    NoRepeats,
    #[error("draw index {index} out of range for {n} draws")]
    DrawOutOfRange { index: usize, n: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct MoMConfig {
    /// Number of groups the draws are partitioned into.
    pub n_groups: usize,
    /// Number of shuffled repeats averaged into the final estimate.
    pub n_repeats: usize,
    pub rng_seed: u64,
}

impl Default for MoMConfig {
    fn default() -> Self {
        Self {
            n_groups: 5,
            n_repeats: 10,
            rng_seed: 0,
        }
    }
}

fn median_sorted(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Group boundaries for `n` samples in `g` groups: the first `n % g`
/// groups take one extra element.
fn group_sizes(n: usize, g: usize) -> Vec<usize> {
    let base = n / g;
    let extra = n % g;
    (0..g).map(|i| base + usize::from(i < extra)).collect()
}

/// Median of group means for one explicit ordering of the samples.
fn median_of_means_ordered(samples: &[f64], perm: &[usize], groups: usize) -> f64 {
    let sizes = group_sizes(samples.len(), groups);
    let mut means = Vec::with_capacity(groups);
    let mut start = 0;
    for size in sizes {
        let sum: f64 = perm[start..start + size]
            .iter()
            .map(|&i| samples[i])
            .sum();
        means.push(sum / size as f64);
        start += size;
    }
    median_sorted(means)
}

/// Median-of-means with caller-supplied permutations, one per repeat.
/// Exposed so tests and grid aggregation can pin the shuffles.
pub fn mom_with_permutations(
    samples: &[f64],
    groups: usize,
    perms: &[Vec<usize>],
) -> Result<f64, EnsembleError> {
    if samples.len() < groups || groups == 0 {
        return Err(EnsembleError::TooFewSamples {
            n: samples.len(),
            groups,
        });
    }
    if perms.is_empty() {
        return Err(EnsembleError::NoRepeats);
    }
    let medians: Vec<f64> = perms
        .iter()
        .map(|p| median_of_means_ordered(samples, p, groups))
        .collect();
    // identical medians (e.g. a single draw) average to themselves
    // without picking up summation rounding
    if medians.iter().all(|&m| m == medians[0]) {
        return Ok(medians[0]);
    }
    Ok(medians.iter().sum::<f64>() / medians.len() as f64)
}

fn make_permutations(n: usize, cfg: &MoMConfig) -> Vec<Vec<usize>> {
    (0..cfg.n_repeats)
        .map(|r| {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = rng::stream(cfg.rng_seed, &[0x6d6f6d, r as u64]);
            perm.shuffle(&mut rng);
            perm
        })
        .collect()
}

/// Median-of-means estimate of a scalar sample set.
pub fn mom(samples: &[f64], cfg: &MoMConfig) -> Result<f64, EnsembleError> {
    if cfg.n_repeats == 0 {
        return Err(EnsembleError::NoRepeats);
    }
    if samples.len() < cfg.n_groups || cfg.n_groups == 0 {
        return Err(EnsembleError::TooFewSamples {
            n: samples.len(),
            groups: cfg.n_groups,
        });
    }
    let perms = make_permutations(samples.len(), cfg);
    mom_with_permutations(samples, cfg.n_groups, &perms)
}

/// Median-of-means applied independently at every `(t, channel)` cell.
/// One shared permutation per repeat is used across all cells, so whole
/// draws move between groups together.
pub fn mom_grid(samples: &ForecastSamples, cfg: &MoMConfig) -> Result<Tensor, EnsembleError> {
    if cfg.n_repeats == 0 {
        return Err(EnsembleError::NoRepeats);
    }
    if samples.n_draws() < cfg.n_groups || cfg.n_groups == 0 {
        return Err(EnsembleError::TooFewSamples {
            n: samples.n_draws(),
            groups: cfg.n_groups,
        });
    }
    let perms = make_permutations(samples.n_draws(), cfg);
    let (h, m) = (samples.horizon(), samples.channels());
    let mut out = Tensor::zeros(&[h, m]);
    for t in 0..h {
        for c in 0..m {
            let cell = samples.cell(t, c);
            out.set(t, c, mom_with_permutations(&cell, cfg.n_groups, &perms)?);
        }
    }
    Ok(out)
}

/// Elementwise mean over draws.
pub fn mean_ensemble(samples: &ForecastSamples) -> Tensor {
    let (h, m, n) = (samples.horizon(), samples.channels(), samples.n_draws());
    let mut out = Tensor::zeros(&[h, m]);
    for t in 0..h {
        for c in 0..m {
            let sum: f64 = (0..n).map(|d| samples.value(d, t, c)).sum();
            out.set(t, c, sum / n as f64);
        }
    }
    out
}

/// One indexed draw as the point forecast.
pub fn single_draw(samples: &ForecastSamples, index: usize) -> Result<Tensor, EnsembleError> {
    if index >= samples.n_draws() {
        return Err(EnsembleError::DrawOutOfRange {
            index,
            n: samples.n_draws(),
        });
    }
    Ok(samples.draw(index))
}

/// Result of a Monte-Carlo check of the concentration bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    /// Empirical `P(|mom - true_mean| > eps)` over the trials.
    pub empirical: f64,
    /// `exp(-2G (1/2 - G sigma^2/(n eps^2))^2)`.
    pub bound: f64,
    /// Binomial standard error of the empirical estimate.
    pub std_error: f64,
    /// True when `G sigma^2 / (n eps^2) >= 1/2` and the bound says
    /// nothing.
    pub vacuous: bool,
}

/// Estimate the exceedance probability of the single-median estimator
/// (`R = 1`, matching the bound's derivation) over freshly sampled data
/// sets of size `n`, and report it next to the theoretical bound.
pub fn check_concentration_bound(
    sampler: &mut dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> f64,
    true_mean: f64,
    sigma_sq: f64,
    n: usize,
    groups: usize,
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundCheck, EnsembleError> {
    if n < groups || groups == 0 {
        return Err(EnsembleError::TooFewSamples { n, groups });
    }
    let ratio = groups as f64 * sigma_sq / (n as f64 * eps * eps);
    let vacuous = ratio >= 0.5;
    let bound = if vacuous {
        log::warn!(
            "concentration bound is vacuous: G*sigma^2/(n*eps^2) = {ratio:.3} >= 1/2"
        );
        1.0
    } else {
        (-2.0 * groups as f64 * (0.5 - ratio).powi(2)).exp()
    };

    let mut exceed = 0usize;
    for trial in 0..trials {
        let mut rng = rng::stream(seed, &[0x626e64, trial as u64]);
        let data: Vec<f64> = (0..n).map(|_| sampler(&mut rng)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let est = median_of_means_ordered(&data, &perm, groups);
        if (est - true_mean).abs() > eps {
            exceed += 1;
        }
    }
    let empirical = exceed as f64 / trials as f64;
    let std_error = (empirical * (1.0 - empirical) / trials as f64)
        .sqrt()
        .max((trials as f64).recip());
    Ok(BoundCheck {
        empirical,
        bound,
        std_error,
        vacuous,
    })
}
