//! Dataset ingestion, chronological splits, sliding-window extraction,
//! and synthetic drift-series generation.
//!
//! CSV files need a header row; a leading timestamp column is detected by
//! its first data value failing numeric parsing and is skipped. Splits
//! are contiguous chronological blocks (train, validation, test) given as
//! point counts; windows never cross a split boundary.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;
use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: file has a header but no data rows")]
    Empty { path: String },
    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    Ragged {
        path: String,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric {
        path: String,
        line: u64,
        column: String,
        value: String,
    },
    #[error("split sizes {split:?} exceed the {total} available points")]
    SplitTooLarge { split: [usize; 3], total: usize },
    #[error("split {split:?} has {len} points; windows need at least lookback {lookback} + horizon {horizon}")]
    SplitTooShort {
        split: Split,
        len: usize,
        lookback: usize,
        horizon: usize,
    },
    #[error("synthetic series: {0}")]
    BadSynthParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// A multivariate series with chronological split sizes and the window
/// geometry used to cut it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// T×M value matrix in file order.
    pub values: Tensor,
    /// (train, val, test) point counts.
    pub split_sizes: [usize; 3],
    pub lookback: usize,
    pub horizon: usize,
    /// Ground-truth drift parameters when synthetically generated.
    pub drift: Option<DriftSpec>,
}

/// One supervised window: `past` immediately precedes `future`.
#[derive(Debug, Clone)]
pub struct SeriesWindow {
    /// L×M block ending just before the forecast origin.
    pub past: Tensor,
    /// H×M block starting at the forecast origin.
    pub future: Tensor,
    /// Index of the first past row in the full series.
    pub origin: usize,
}

impl Dataset {
    pub fn n_points(&self) -> usize {
        self.values.rows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.cols()
    }

    fn split_range(&self, split: Split) -> (usize, usize) {
        let [tr, va, te] = self.split_sizes;
        match split {
            Split::Train => (0, tr),
            Split::Val => (tr, tr + va),
            Split::Test => (tr + va, tr + va + te),
        }
    }

    /// Stride-1 sliding windows fully contained in a split; the count is
    /// `split_len - L - H + 1`. `stride > 1` subsamples window origins
    /// (for faster evaluation).
    pub fn windows(&self, split: Split, stride: usize) -> Result<Vec<SeriesWindow>, DataError> {
        let (start, end) = self.split_range(split);
        let len = end - start;
        let (l, h) = (self.lookback, self.horizon);
        if len < l + h {
            return Err(DataError::SplitTooShort {
                split,
                len,
                lookback: l,
                horizon: h,
            });
        }
        let m = self.n_channels();
        let count = len - l - h + 1;
        let mut out = Vec::with_capacity(count.div_ceil(stride.max(1)));
        let mut origin = start;
        while origin + l + h <= end {
            let mut past = Tensor::zeros(&[l, m]);
            let mut future = Tensor::zeros(&[h, m]);
            for r in 0..l {
                for c in 0..m {
                    past.set(r, c, self.values.at(origin + r, c));
                }
            }
            for r in 0..h {
                for c in 0..m {
                    future.set(r, c, self.values.at(origin + l + r, c));
                }
            }
            out.push(SeriesWindow {
                past,
                future,
                origin,
            });
            origin += stride.max(1);
        }
        Ok(out)
    }

    /// Write the value matrix as `ch0,ch1,...` CSV with a header.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let m = self.n_channels();
        let header: Vec<String> = (0..m).map(|c| format!("ch{c}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.n_points() {
            let row: Vec<String> = (0..m).map(|c| self.values.at(r, c).to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Load a CSV with a header row and numeric channel columns into a
/// dataset. A first column whose initial data value is non-numeric is
/// treated as a timestamp column and skipped.
pub fn load_csv(
    path: &Path,
    name: &str,
    split_sizes: [usize; 3],
    lookback: usize,
    horizon: usize,
) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skip_first: Option<bool> = None;

    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(rows.len() as u64 + 2);
        if record.len() != headers.len() {
            return Err(DataError::Ragged {
                path: display,
                line,
                expected: headers.len(),
                found: record.len(),
            });
        }
        // decide once, from the first data row, whether column 0 is a
        // timestamp
        let skip = *skip_first.get_or_insert_with(|| {
            record
                .get(0)
                .map(|v| v.trim().parse::<f64>().is_err())
                .unwrap_or(false)
        });
        let offset = usize::from(skip);
        let mut row = Vec::with_capacity(headers.len() - offset);
        for (i, field) in record.iter().enumerate().skip(offset) {
            match field.trim().parse::<f64>() {
                Ok(v) => row.push(v),
                Err(_) => {
                    return Err(DataError::NonNumeric {
                        path: display,
                        line,
                        column: headers[i].clone(),
                        value: field.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty { path: display });
    }
    let m = rows[0].len();
    let t = rows.len();
    let total: usize = split_sizes.iter().sum();
    if total > t {
        return Err(DataError::SplitTooLarge {
            split: split_sizes,
            total: t,
        });
    }
    let mut values = Tensor::zeros(&[t, m]);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            values.set(r, c, v);
        }
    }
    Ok(Dataset {
        name: name.to_string(),
        values,
        split_sizes,
        lookback,
        horizon,
        drift: None,
    })
}

/// Drift family applied on top of the sinusoidal base signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DriftKind {
    /// Mean grows linearly: `slope * t`.
    Trend { slope: f64 },
    /// Mean jumps by `delta` at the midpoint.
    LevelShift { delta: f64 },
    /// Noise standard deviation ramps from `noise_std` to
    /// `noise_std * factor` across the series.
    ScaleShift { factor: f64 },
}

/// Ground-truth generator parameters, stored with synthetic datasets so
/// experiments can assert against them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub kind: DriftKind,
    pub amplitude: f64,
    pub period: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Sinusoid + drift + Gaussian noise over `t_len` points and `channels`
/// channels. Channels share the drift but get phase-shifted sinusoids and
/// independent noise.
#[allow(clippy::too_many_arguments)]
pub fn synth_drift(
    spec: DriftSpec,
    t_len: usize,
    channels: usize,
    split_sizes: [usize; 3],
    lookback: usize,
    horizon: usize,
    name: &str,
) -> Result<Dataset, DataError> {
    if t_len < lookback + horizon + 100 {
        return Err(DataError::BadSynthParams(format!(
            "t_len {t_len} must be at least lookback + horizon + 100"
        )));
    }
    if channels == 0 {
        return Err(DataError::BadSynthParams("channels must be >= 1".into()));
    }
    if spec.period <= 0.0 || spec.noise_std < 0.0 || spec.amplitude < 0.0 {
        return Err(DataError::BadSynthParams(
            "period must be positive; amplitude and noise_std nonnegative".into(),
        ));
    }
    if let DriftKind::ScaleShift { factor } = spec.kind {
        if factor < 0.0 {
            return Err(DataError::BadSynthParams("scale factor must be >= 0".into()));
        }
    }
    let total: usize = split_sizes.iter().sum();
    if total > t_len {
        return Err(DataError::SplitTooLarge {
            split: split_sizes,
            total: t_len,
        });
    }

    let mut values = Tensor::zeros(&[t_len, channels]);
    for c in 0..channels {
        let mut noise_rng = rng::stream(spec.seed, &[0x73796e, c as u64]);
        let noise = rng::normal_vec(&mut noise_rng, t_len);
        let phase = c as f64 * std::f64::consts::PI / 3.0;
        for t in 0..t_len {
            let tt = t as f64;
            let base =
                spec.amplitude * (2.0 * std::f64::consts::PI * tt / spec.period + phase).sin();
            let (mean_drift, noise_scale) = match spec.kind {
                DriftKind::Trend { slope } => (slope * tt, 1.0),
                DriftKind::LevelShift { delta } => {
                    ((tt >= t_len as f64 / 2.0) as u8 as f64 * delta, 1.0)
                }
                DriftKind::ScaleShift { factor } => {
                    let frac = tt / (t_len.saturating_sub(1).max(1)) as f64;
                    (0.0, 1.0 + (factor - 1.0) * frac)
                }
            };
            values.set(
                t,
                c,
                base + mean_drift + spec.noise_std * noise_scale * noise[t],
            );
        }
    }
    Ok(Dataset {
        name: name.to_string(),
        values,
        split_sizes,
        lookback,
        horizon,
        drift: Some(spec),
    })
}
