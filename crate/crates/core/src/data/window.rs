//! Cutting (history, future) windows from a load series, chronological
//! splitting, and per-position standardization.

use chrono::{NaiveDate, NaiveDateTime, Timelike};

use crate::numerics::Array;
use crate::{Error, Result};

use super::{midnight, LoadSeries};

/// One (past, future) training pair. `start` is the timestamp of the first
/// past value.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: NaiveDateTime,
    pub past: Vec<f64>,
    pub future: Vec<f64>,
}

impl Window {
    pub fn end(&self, h: usize, k: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours((h + k) as i64)
    }
}

/// Per-position affine standardization over the `h + k` window positions.
/// Fitted on the training split only.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fit per-position statistics. Positions `0..h` cover the past,
    /// `h..h+k` the future. Standard deviations are floored at `1e-8`.
    pub fn fit(windows: &[Window], h: usize, k: usize) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Series("cannot fit a scaler on an empty split".into()));
        }
        let dims = h + k;
        let n = windows.len() as f64;
        let mut mean = vec![0.0; dims];
        let mut std = vec![0.0; dims];
        for w in windows {
            for (j, v) in w.past.iter().chain(w.future.iter()).enumerate() {
                mean[j] += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        for w in windows {
            for (j, v) in w.past.iter().chain(w.future.iter()).enumerate() {
                let d = v - mean[j];
                std[j] += d * d;
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt().max(1e-8);
        }
        Ok(Scaler { mean, std })
    }

    pub fn standardize_past(&self, past: &[f64]) -> Vec<f64> {
        past.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j]).collect()
    }

    pub fn standardize_future(&self, future: &[f64]) -> Vec<f64> {
        let h = self.mean.len() - future.len();
        future
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[h + j]) / self.std[h + j])
            .collect()
    }

    pub fn destandardize_future(&self, std_future: &[f64]) -> Vec<f64> {
        let h = self.mean.len() - std_future.len();
        std_future
            .iter()
            .enumerate()
            .map(|(j, v)| v * self.std[h + j] + self.mean[h + j])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// Overlapping (past, future) pairs cut from one series, optionally carrying
/// the standardization fitted on the training split.
#[derive(Clone, Debug)]
pub struct WindowDataset {
    pub h: usize,
    pub k: usize,
    pub windows: Vec<Window>,
    pub scaler: Option<Scaler>,
    pub split: SplitTag,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    fn scaler_ref(&self) -> Result<&Scaler> {
        self.scaler
            .as_ref()
            .ok_or_else(|| Error::Series("dataset has no standardization statistics".into()))
    }

    /// Standardized matrices for training: data `x = [N, k]` (future) and
    /// condition `c = [N, h]` (past).
    pub fn standardized_matrices(&self) -> Result<(Array, Array)> {
        let scaler = self.scaler_ref()?;
        let n = self.windows.len();
        let mut x = Vec::with_capacity(n * self.k);
        let mut c = Vec::with_capacity(n * self.h);
        for w in &self.windows {
            c.extend(scaler.standardize_past(&w.past));
            x.extend(scaler.standardize_future(&w.future));
        }
        Ok((Array::new(vec![n, self.k], x)?, Array::new(vec![n, self.h], c)?))
    }
}

/// Cut day-aligned windows advancing by `k`, so window `i+1`'s past is
/// window `i`'s future when `h == k`. The series is trimmed to its first
/// midnight so each window starts at hour 0.
pub fn make_windows(series: &LoadSeries, h: usize, k: usize) -> Result<WindowDataset> {
    if h == 0 || k == 0 {
        return Err(Error::Config("window lengths h and k must be positive".into()));
    }
    let skip = ((24 - series.start.hour()) % 24) as usize;
    let trimmed: &[f64] = series.values.get(skip..).unwrap_or(&[]);
    if trimmed.len() < h + k {
        return Err(Error::Series(format!(
            "series of length {} is shorter than h + k = {}",
            trimmed.len(),
            h + k
        )));
    }
    let origin = series.timestamp(skip);
    let count = (trimmed.len() - h) / k;
    let mut windows = Vec::with_capacity(count);
    for i in 0..count {
        let s = i * k;
        windows.push(Window {
            start: origin + chrono::Duration::hours(s as i64),
            past: trimmed[s..s + h].to_vec(),
            future: trimmed[s + h..s + h + k].to_vec(),
        });
    }
    Ok(WindowDataset { h, k, windows, scaler: None, split: SplitTag::Full })
}

/// Chronological split at the given dates, validation carved from the tail
/// of the training range, and per-position standardization fitted on the
/// training windows only.
pub fn split_and_standardize(
    dataset: &WindowDataset,
    train_end: NaiveDate,
    test_start: NaiveDate,
    val_fraction: f64,
) -> Result<(WindowDataset, WindowDataset, WindowDataset)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
    }
    let train_end_ts = midnight(train_end);
    let test_start_ts = midnight(test_start);
    if test_start_ts < train_end_ts {
        return Err(Error::Config("test start must not precede the train end".into()));
    }
    let (h, k) = (dataset.h, dataset.k);

    let mut train_all: Vec<Window> = Vec::new();
    let mut test: Vec<Window> = Vec::new();
    for w in &dataset.windows {
        if w.end(h, k) <= train_end_ts {
            train_all.push(w.clone());
        } else if w.start >= test_start_ts {
            test.push(w.clone());
        }
    }

    let n_val = (train_all.len() as f64 * val_fraction).ceil() as usize;
    if train_all.len() <= n_val {
        return Err(Error::Series("no training windows remain before the validation cut".into()));
    }
    let val = train_all.split_off(train_all.len() - n_val);
    if test.is_empty() {
        return Err(Error::Series("the test split is empty".into()));
    }
    if val_fraction > 0.0 && val.is_empty() {
        return Err(Error::Series("the validation split is empty".into()));
    }

    let scaler = Scaler::fit(&train_all, h, k)?;
    let mk = |windows: Vec<Window>, split| WindowDataset {
        h,
        k,
        windows,
        scaler: Some(scaler.clone()),
        split,
    };
    Ok((
        mk(train_all, SplitTag::Train),
        mk(val, SplitTag::Validation),
        mk(test, SplitTag::Test),
    ))
}
