//! Diffusion-based probabilistic forecaster for multivariate time series.
//!
//! The pipeline: instance-normalize the past window (learnable affine),
//! normalize future targets by their own statistics during training,
//! corrupt them with a diffusion noise schedule, and train a single
//! patch/RoPE transformer to predict the clean target directly. At
//! inference the reverse chain runs from Gaussian noise (optionally over a
//! reduced step subsequence), draws are de-normalized with past
//! statistics, and a median-of-means ensemble turns the draws into a
//! robust point forecast.

pub mod cli;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod ensemble;
pub mod forecast;
pub mod metrics;
pub mod nn;
pub mod normalize;
pub mod persist;
pub mod rng;
pub mod schedule;
pub mod train;

pub use data::{Dataset, SeriesWindow};
pub use denoiser::{DenoiserConfig, DenoiserModel};
pub use diffusion::{ForecastSamples, ReverseSamplerConfig};
pub use ensemble::MoMConfig;
pub use forecast::Forecaster;
pub use metrics::EvalReport;
pub use nn::Tensor;
pub use schedule::NoiseSchedule;
pub use train::TrainConfig;
