//! TOML run configuration: dataset source, model geometry, training
//! hyperparameters, sampler, and ensemble settings. Unknown keys are
//! rejected. The output directory and seed may be overridden by the
//! `DIFFCAST_OUT` / `DIFFCAST_SEED` environment variables (and by CLI
//! flags, which win over both).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, Dataset, DriftKind, DriftSpec};
use crate::denoiser::DenoiserConfig;
use crate::diffusion::{ReverseSamplerConfig, SkipKind};
use crate::ensemble::MoMConfig;
use crate::schedule::ScheduleSpec;
use crate::train::{NormMode, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dataset: {0}")]
    Dataset(#[from] data::DataError),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub denoiser: DenoiserSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub bench: BenchSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_dataset_name")]
    pub name: String,
    /// CSV source; ignored when a synth generator is configured.
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub lookback: usize,
    pub horizon: usize,
    /// (train, val, test) point counts. When omitted, fractions apply.
    #[serde(default)]
    pub split_counts: Option<[usize; 3]>,
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
    /// Window-origin stride for evaluation windows.
    #[serde(default = "default_one")]
    pub eval_stride: usize,
    /// Cap on evaluation windows (0 = all).
    #[serde(default)]
    pub eval_max_windows: usize,
    #[serde(default)]
    pub synth: Option<SynthSection>,
}

fn default_dataset_name() -> String {
    "dataset".into()
}

fn default_split_fractions() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub kind: SynthKind,
    pub t_len: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
}

fn default_channels() -> usize {
    2
}

fn default_factor() -> f64 {
    1.0
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_period() -> f64 {
    12.0
}

fn default_noise_std() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Trend,
    LevelShift,
    ScaleShift,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSection {
    #[serde(default = "default_patch_len")]
    pub patch_len: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default = "default_n_layers")]
    pub n_layers: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn default_patch_len() -> usize {
    8
}
fn default_stride() -> usize {
    4
}
fn default_d_model() -> usize {
    128
}
fn default_n_heads() -> usize {
    4
}
fn default_n_layers() -> usize {
    3
}
fn default_ffn_mult() -> usize {
    2
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            patch_len: default_patch_len(),
            stride: default_stride(),
            d_model: default_d_model(),
            n_heads: default_n_heads(),
            n_layers: default_n_layers(),
            ffn_mult: default_ffn_mult(),
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default = "default_loss_eps")]
    pub loss_eps: f64,
    #[serde(default)]
    pub flip_loss_weight: bool,
    #[serde(default = "default_norm_mode")]
    pub norm_mode: NormMode,
    /// Window-origin stride for training windows.
    #[serde(default = "default_one")]
    pub train_stride: usize,
    #[serde(default = "default_one")]
    pub val_stride: usize,
    /// Cap on validation windows (0 = all).
    #[serde(default)]
    pub val_max_windows: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    10
}
fn default_batch_size() -> usize {
    16
}
fn default_loss_eps() -> f64 {
    1e-3
}
fn default_norm_mode() -> NormMode {
    NormMode::Independent
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            batch_size: default_batch_size(),
            schedule: ScheduleSpec::default(),
            loss_eps: default_loss_eps(),
            flip_loss_weight: false,
            norm_mode: default_norm_mode(),
            train_stride: 1,
            val_stride: 1,
            val_max_windows: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_sampler_steps")]
    pub steps: usize,
    #[serde(default = "default_skip")]
    pub skip: SkipKind,
    #[serde(default)]
    pub stochastic: bool,
}

fn default_sampler_steps() -> usize {
    3
}
fn default_skip() -> SkipKind {
    SkipKind::TimeUniform
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: default_sampler_steps(),
            skip: default_skip(),
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_draws() -> usize {
    100
}
fn default_groups() -> usize {
    5
}
fn default_repeats() -> usize {
    10
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            groups: default_groups(),
            repeats: default_repeats(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_bench_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_bench_repeats")]
    pub repeats: usize,
}

fn default_bench_horizons() -> Vec<usize> {
    vec![24, 48, 96]
}

fn default_bench_repeats() -> usize {
    3
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            horizons: default_bench_horizons(),
            repeats: default_bench_repeats(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply the documented environment overrides (`DIFFCAST_OUT`,
    /// `DIFFCAST_SEED`), then explicit CLI overrides on top.
    pub fn with_overrides(
        mut self,
        out: Option<PathBuf>,
        seed: Option<u64>,
    ) -> Result<Self, ConfigError> {
        if let Ok(dir) = std::env::var("DIFFCAST_OUT") {
            self.out_dir = PathBuf::from(dir);
        }
        if let Ok(seed) = std::env::var("DIFFCAST_SEED") {
            self.seed = seed
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("DIFFCAST_SEED={seed} is not a u64")))?;
        }
        if let Some(dir) = out {
            self.out_dir = dir;
        }
        if let Some(seed) = seed {
            self.seed = seed;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.denoiser_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.sampler.steps == 0 || self.sampler.steps > self.train.schedule.steps {
            return Err(ConfigError::Invalid(format!(
                "sampler steps {} must be in 1..={}",
                self.sampler.steps, self.train.schedule.steps
            )));
        }
        if self.ensemble.draws == 0 || self.ensemble.groups == 0 || self.ensemble.repeats == 0 {
            return Err(ConfigError::Invalid(
                "ensemble draws, groups and repeats must be >= 1".into(),
            ));
        }
        let f = self.dataset.split_fractions;
        if self.dataset.split_counts.is_none() {
            let sum: f64 = f.iter().sum();
            if f.iter().any(|&x| x < 0.0) || !(0.999..=1.001).contains(&sum) {
                return Err(ConfigError::Invalid(format!(
                    "split_fractions {f:?} must be nonnegative and sum to 1"
                )));
            }
        }
        if self.dataset.synth.is_none() && self.dataset.path.is_none() {
            return Err(ConfigError::Invalid(
                "dataset needs either a path or a [dataset.synth] generator".into(),
            ));
        }
        Ok(())
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            patch_len: self.denoiser.patch_len,
            stride: self.denoiser.stride,
            d_model: self.denoiser.d_model,
            n_heads: self.denoiser.n_heads,
            n_layers: self.denoiser.n_layers,
            ffn_mult: self.denoiser.ffn_mult,
            dropout: self.denoiser.dropout,
            lookback: self.dataset.lookback,
            horizon: self.dataset.horizon,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            batch_size: self.train.batch_size,
            schedule: self.train.schedule,
            seed: self.seed,
            loss_eps: self.train.loss_eps,
            flip_loss_weight: self.train.flip_loss_weight,
            norm_mode: self.train.norm_mode,
        }
    }

    pub fn sampler_config(&self) -> ReverseSamplerConfig {
        ReverseSamplerConfig {
            steps: self.sampler.steps,
            skip_kind: self.sampler.skip,
            stochastic: self.sampler.stochastic,
            rng_seed: self.seed,
        }
    }

    /// Ensemble config with the group count clamped to the draw count so
    /// degenerate runs (e.g. a single draw) stay valid.
    pub fn mom_config(&self) -> MoMConfig {
        MoMConfig {
            n_groups: self.ensemble.groups.min(self.ensemble.draws),
            n_repeats: self.ensemble.repeats,
            rng_seed: self.seed,
        }
    }

    fn split_counts_for(&self, total: usize) -> [usize; 3] {
        match self.dataset.split_counts {
            Some(c) => c,
            None => {
                let f = self.dataset.split_fractions;
                let train = (total as f64 * f[0]).floor() as usize;
                let val = (total as f64 * f[1]).floor() as usize;
                let test = total - train - val;
                [train, val, test]
            }
        }
    }

    /// Materialize the dataset: generate the configured synthetic series,
    /// or load the CSV.
    pub fn load_dataset(&self) -> Result<Dataset, ConfigError> {
        let ds = &self.dataset;
        if let Some(synth) = &ds.synth {
            let kind = match synth.kind {
                SynthKind::Trend => DriftKind::Trend { slope: synth.slope },
                SynthKind::LevelShift => DriftKind::LevelShift { delta: synth.delta },
                SynthKind::ScaleShift => DriftKind::ScaleShift {
                    factor: synth.factor,
                },
            };
            let spec = DriftSpec {
                kind,
                amplitude: synth.amplitude,
                period: synth.period,
                noise_std: synth.noise_std,
                seed: self.seed,
            };
            let splits = self.split_counts_for(synth.t_len);
            return Ok(data::synth_drift(
                spec,
                synth.t_len,
                synth.channels,
                splits,
                ds.lookback,
                ds.horizon,
                &ds.name,
            )?);
        }
        let path = ds.path.as_ref().expect("validated");
        let probe = data::load_csv(path, &ds.name, [0, 0, 0], ds.lookback, ds.horizon)?;
        let splits = self.split_counts_for(probe.n_points());
        data::load_csv(path, &ds.name, splits, ds.lookback, ds.horizon).map_err(Into::into)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
out_dir = "runs/x"

[dataset]
name = "toy"
lookback = 24
horizon = 12

[dataset.synth]
kind = "trend"
t_len = 600
channels = 2
slope = 0.01
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.denoiser.d_model, 128);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.schedule.steps, 100);
        assert_eq!(cfg.train.schedule.offset, 5.0);
        assert_eq!(cfg.ensemble.draws, 100);
        assert_eq!(cfg.ensemble.groups, 5);
        assert_eq!(cfg.ensemble.repeats, 10);
        assert_eq!(cfg.sampler.steps, 3);
        let ds = cfg.load_dataset().unwrap();
        assert_eq!(ds.n_points(), 600);
        assert_eq!(ds.n_channels(), 2);
        assert_eq!(ds.split_sizes, [420, 90, 90]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nnot_a_key = 3\n");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
        let bad_nested = MINIMAL.replace("[dataset]", "[dataset]\nmystery = 1");
        assert!(toml::from_str::<RunConfig>(&bad_nested).is_err());
    }

    #[test]
    fn missing_dataset_source_is_invalid() {
        let cfg: RunConfig = toml::from_str(
            r#"
[dataset]
lookback = 24
horizon = 12
"#,
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn component_invariants_propagate() {
        let bad = MINIMAL.replace(
            "[dataset.synth]",
            "[denoiser]\nd_model = 10\n\n[dataset.synth]",
        );
        let cfg: RunConfig = toml::from_str(&bad).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mom_groups_clamp_to_draw_count() {
        let one_draw = MINIMAL.replace(
            "[dataset.synth]",
            "[ensemble]\ndraws = 1\n\n[dataset.synth]",
        );
        let cfg: RunConfig = toml::from_str(&one_draw).unwrap();
        assert_eq!(cfg.mom_config().n_groups, 1);
    }

    #[test]
    fn cli_overrides_beat_environment() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        let cfg = cfg
            .with_overrides(Some(PathBuf::from("elsewhere")), Some(99))
            .unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.seed, 99);
    }
}
