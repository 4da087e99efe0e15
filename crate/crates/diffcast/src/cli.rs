//! Command implementations behind the `diffcast` binary: synth, train,
//! forecast, evaluate, ablate-ni, bench. Every command is deterministic
//! given config + seed (bench timings and the wall-clock column of the
//! training history are the documented exceptions). All artifacts are
//! CSV except the binary model checkpoint and samples dump.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::data::{DataError, Dataset, SeriesWindow, Split};
use crate::denoiser::DenoiserModel;
use crate::diffusion::SampleError;
use crate::ensemble::{mean_ensemble, mom_grid, single_draw};
use crate::forecast::{evaluate_windows, Forecaster};
use crate::nn::{AdamError, Tensor, TensorError};
use crate::persist::{self, PersistError};
use crate::train::{self, NormMode, TrainError};

/// Command failures mapped to process exit codes: 2 config, 3 numeric,
/// 4 artifact mismatch.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Artifact(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Graph(TensorError::NonFinite { .. })
            | TrainError::Optimizer(AdamError::NonFiniteGradient { .. })
            | TrainError::Sampling(_) => CliError::Numeric(e.to_string()),
            TrainError::Denoiser(_) | TrainError::Config(_) | TrainError::EmptySplit(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Artifact(e.to_string())
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

/// `synth`: generate the configured synthetic series and write it as
/// `synth.csv` plus a `synth_meta.json` ground-truth sidecar.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.dataset.synth.is_none() {
        return Err(CliError::Config(
            "synth requires a [dataset.synth] generator section".into(),
        ));
    }
    let out = ensure_out_dir(cfg)?;
    let ds = cfg.load_dataset()?;
    ds.write_csv(&out.join("synth.csv"))?;
    let meta = serde_json::json!({
        "name": ds.name,
        "points": ds.n_points(),
        "channels": ds.n_channels(),
        "split_sizes": ds.split_sizes,
        "lookback": ds.lookback,
        "horizon": ds.horizon,
        "drift": ds.drift,
    });
    std::fs::write(
        out.join("synth_meta.json"),
        serde_json::to_string_pretty(&meta).expect("json"),
    )?;
    println!(
        "wrote {} points x {} channels to {}",
        ds.n_points(),
        ds.n_channels(),
        out.join("synth.csv").display()
    );
    Ok(())
}

fn train_windows(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<SeriesWindow>, CliError> {
    Ok(ds.windows(Split::Train, cfg.train.train_stride)?)
}

fn val_windows(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<SeriesWindow>, CliError> {
    let mut w = ds.windows(Split::Val, cfg.train.val_stride)?;
    if cfg.train.val_max_windows > 0 {
        w.truncate(cfg.train.val_max_windows);
    }
    Ok(w)
}

fn eval_windows_for(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<SeriesWindow>, CliError> {
    let mut w = ds.windows(Split::Test, cfg.dataset.eval_stride)?;
    if cfg.dataset.eval_max_windows > 0 {
        w.truncate(cfg.dataset.eval_max_windows);
    }
    if w.is_empty() {
        return Err(CliError::Config("test split produced no windows".into()));
    }
    Ok(w)
}

fn fit_fresh_model(
    cfg: &RunConfig,
    ds: &Dataset,
    norm_mode: NormMode,
    seed: u64,
) -> Result<(DenoiserModel, Vec<train::EpochRecord>), CliError> {
    let mut model = DenoiserModel::new(cfg.denoiser_config(), ds.n_channels(), seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut tcfg = cfg.train_config();
    tcfg.seed = seed;
    tcfg.norm_mode = norm_mode;
    let sched = tcfg
        .schedule
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let tw = train_windows(cfg, ds)?;
    let vw = val_windows(cfg, ds)?;
    let result = train::fit(&mut model, &tw, &vw, &sched, &tcfg)?;
    log::info!(
        "training finished: best val {:.6} at epoch {}",
        result.best_val,
        result.best_epoch
    );
    Ok((model, result.history))
}

/// `train`: fit a model and write `model.ckpt`, `history.csv` and the
/// schedule table `schedule.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = cfg.load_dataset()?;
    let (model, history) = fit_fresh_model(cfg, &ds, cfg.train.norm_mode, cfg.seed)?;
    train::write_history_csv(&history, &out.join("history.csv"))?;
    let sched_spec = cfg.train.schedule;
    sched_spec
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?
        .write_csv(&out.join("schedule.csv"))
        .map_err(|e| CliError::Config(e.to_string()))?;
    persist::save_model(&model, &sched_spec, cfg.train.norm_mode, &out.join("model.ckpt"))?;
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

fn load_for_inference(
    cfg: &RunConfig,
    checkpoint: &Path,
    ds: &Dataset,
) -> Result<(DenoiserModel, persist::ModelMeta), CliError> {
    let (model, meta) = persist::load_model(checkpoint)?;
    if meta.channels != ds.n_channels() {
        return Err(CliError::Artifact(format!(
            "checkpoint was trained on {} channels but the dataset has {}",
            meta.channels,
            ds.n_channels()
        )));
    }
    if meta.denoiser.lookback != cfg.dataset.lookback
        || meta.denoiser.horizon != cfg.dataset.horizon
    {
        return Err(CliError::Artifact(format!(
            "checkpoint geometry L={} H={} does not match config L={} H={}",
            meta.denoiser.lookback,
            meta.denoiser.horizon,
            cfg.dataset.lookback,
            cfg.dataset.horizon
        )));
    }
    Ok((model, meta))
}

/// `forecast`: sample `N` draws beyond the end of the series and write
/// `samples.csv` (long format), `samples.bin`, and `point.csv` with the
/// MoM / mean / single-draw point forecasts.
pub fn cmd_forecast(cfg: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = cfg.load_dataset()?;
    let (model, meta) = load_for_inference(cfg, checkpoint, &ds)?;
    let sched = meta
        .schedule
        .build()
        .map_err(|e| CliError::Artifact(e.to_string()))?;

    // condition on the final lookback window of the series
    let (l, m) = (ds.lookback, ds.n_channels());
    let t0 = ds.n_points() - l;
    let mut past = Tensor::zeros(&[l, m]);
    for r in 0..l {
        for c in 0..m {
            past.set(r, c, ds.values.at(t0 + r, c));
        }
    }

    let forecaster = Forecaster::new(&model, &sched, cfg.sampler_config());
    let draws = {
        use crate::forecast::WindowForecaster;
        forecaster.draws(&past, cfg.ensemble.draws, cfg.seed)?
    };
    draws.write_csv(&out.join("samples.csv"))?;
    draws.write_binary(&out.join("samples.bin"))?;

    let mom_point = mom_grid(&draws, &cfg.mom_config())
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let mean_point = mean_ensemble(&draws);
    let single = single_draw(&draws, 0).expect("at least one draw");
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("point.csv"))?);
    writeln!(w, "t,channel,mom,mean,single")?;
    for t in 0..draws.horizon() {
        for c in 0..draws.channels() {
            writeln!(
                w,
                "{},{},{},{},{}",
                t,
                c,
                mom_point.at(t, c),
                mean_point.at(t, c),
                single.at(t, c)
            )?;
        }
    }
    println!(
        "wrote {} draws x {} steps x {} channels to {}",
        draws.n_draws(),
        draws.horizon(),
        draws.channels(),
        out.join("samples.csv").display()
    );
    Ok(())
}

/// `evaluate`: score the checkpoint over the test split and write
/// `report.csv` plus the per-window breakdown.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = cfg.load_dataset()?;
    let (model, meta) = load_for_inference(cfg, checkpoint, &ds)?;
    let sched = meta
        .schedule
        .build()
        .map_err(|e| CliError::Artifact(e.to_string()))?;
    let windows = eval_windows_for(cfg, &ds)?;
    let forecaster = Forecaster::new(&model, &sched, cfg.sampler_config());
    let report = evaluate_windows(
        &forecaster,
        &windows,
        cfg.ensemble.draws,
        &cfg.mom_config(),
        cfg.seed,
    )?;
    report
        .write_csv(&out.join("report.csv"))
        .map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    report
        .write_windows_csv(&out.join("report_windows.csv"))
        .map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    println!("{report}");
    Ok(())
}

/// `ablate-ni`: train twin models that differ only in the normalization
/// path and write their side-by-side test scores.
pub fn cmd_ablate_ni(cfg: &RunConfig) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = cfg.load_dataset()?;
    let windows = eval_windows_for(cfg, &ds)?;
    let sched = cfg
        .train
        .schedule
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut rows = Vec::new();
    for norm_mode in [NormMode::Independent, NormMode::SharedPast] {
        let (model, _) = fit_fresh_model(cfg, &ds, norm_mode, cfg.seed)?;
        let forecaster = Forecaster::new(&model, &sched, cfg.sampler_config());
        let report = evaluate_windows(
            &forecaster,
            &windows,
            cfg.ensemble.draws,
            &cfg.mom_config(),
            cfg.seed,
        )?;
        rows.push((norm_mode, report));
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("ablation.csv"))?);
    writeln!(w, "ni,seed,mse,mse_e,mae,crps")?;
    for (mode, report) in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            matches!(mode, NormMode::Independent),
            cfg.seed,
            report.mse_single,
            report.mse_mom,
            report.mae,
            report.crps
        )?;
    }
    let ni = &rows[0].1;
    let shared = &rows[1].1;
    println!(
        "NI mse_e {:.6} vs shared-stats mse_e {:.6}",
        ni.mse_mom, shared.mse_mom
    );
    Ok(())
}

/// `bench`: wall-clock per single draw across configured horizons, using
/// the checkpoint's weights (patch models are horizon-agnostic). With
/// `verbose`, also writes a per-reverse-step breakdown.
pub fn cmd_bench(cfg: &RunConfig, checkpoint: &Path, verbose: bool) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let ds = cfg.load_dataset()?;
    let (model, meta) = load_for_inference(cfg, checkpoint, &ds)?;
    let sched = meta
        .schedule
        .build()
        .map_err(|e| CliError::Artifact(e.to_string()))?;

    let (l, m) = (ds.lookback, ds.n_channels());
    let t0 = ds.n_points() - l;
    let mut past = Tensor::zeros(&[l, m]);
    for r in 0..l {
        for c in 0..m {
            past.set(r, c, ds.values.at(t0 + r, c));
        }
    }

    let mut rows = Vec::new();
    let mut step_rows = Vec::new();
    for &h in &cfg.bench.horizons {
        let bench_model = model
            .with_geometry(l, h)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let forecaster = Forecaster::new(&bench_model, &sched, cfg.sampler_config());
        let mut total = 0.0;
        for rep in 0..cfg.bench.repeats.max(1) {
            use crate::forecast::WindowForecaster;
            let start = Instant::now();
            forecaster.draws(&past, 1, cfg.seed.wrapping_add(rep as u64))?;
            total += start.elapsed().as_secs_f64() * 1e3;
        }
        let ms = total / cfg.bench.repeats.max(1) as f64;
        let per_step = ms / cfg.sampler.steps as f64;
        rows.push((h, ms, per_step));

        if verbose {
            // time each denoiser call of the reverse chain separately
            use crate::diffusion::select_steps;
            use crate::normalize::normalize_past;
            let steps = select_steps(sched.len(), cfg.sampler.steps, cfg.sampler.skip)?;
            let (x_norm, _) =
                normalize_past(&past, &bench_model.gamma(), &bench_model.beta_shift());
            for (i, &k) in steps.iter().enumerate() {
                let noisy = Tensor::zeros(&[h, m]);
                let start = Instant::now();
                bench_model
                    .predict(&x_norm, &noisy, k, sched.len())
                    .map_err(|e| CliError::Numeric(e.to_string()))?;
                step_rows.push((h, i, k, start.elapsed().as_secs_f64() * 1e3));
            }
        }
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("bench.csv"))?);
    writeln!(w, "h,ms_per_draw,ms_per_step")?;
    for (h, ms, per_step) in &rows {
        writeln!(w, "{},{},{}", h, ms, per_step)?;
    }
    if verbose {
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(out.join("bench_steps.csv"))?);
        writeln!(w, "h,step_index,k,ms")?;
        for (h, i, k, ms) in &step_rows {
            writeln!(w, "{},{},{},{}", h, i, k, ms)?;
        }
    }
    for (h, ms, _) in &rows {
        println!("H={h}: {ms:.2} ms per draw");
    }
    Ok(())
}
