//! Shared plumbing between commands: dataset preparation, the scaler
//! sidecar, scenario CSV input/output, per-window seeding, and bounded
//! parallelism.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use flowcast_core::data::{
    aggregate, make_windows, parse_csv, split_and_standardize, LoadSeries, Scaler, WindowDataset,
};
use flowcast_core::evaluation::ScenarioSet;
use flowcast_core::{Error, Result};

use crate::config::RunConfig;

/// The standardization sidecar written by `train` and consumed by
/// `forecast`: window geometry plus the per-position statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalerFile {
    pub h: usize,
    pub k: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerFile {
    pub fn new(h: usize, k: usize, scaler: &Scaler) -> Self {
        ScalerFile { h, k, mean: scaler.mean.clone(), std: scaler.std.clone() }
    }

    pub fn scaler(&self) -> Scaler {
        Scaler { mean: self.mean.clone(), std: self.std.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot encode scaler: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scaler {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid scaler {}: {e}", path.display())))
    }
}

/// Aggregated series plus the chronological splits for the configured run.
pub struct PreparedData {
    pub series: LoadSeries,
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let csv_path = cfg.resolve(&cfg.data.csv);
    let households = parse_csv(&csv_path)?;
    let series = aggregate(&households, cfg.data.households, cfg.data.aggregate_seed)?;
    let windows = make_windows(&series, cfg.data.h, cfg.data.k)?;
    let (train, val, test) = split_and_standardize(
        &windows,
        cfg.data.train_end,
        cfg.data.test_start,
        cfg.train.val_fraction,
    )?;
    Ok(PreparedData { series, train, val, test })
}

/// Scenario export: `window_id,scenario_id,hour,kw`, windows in order, raw
/// (unfloored) values with exact decimal round trip.
pub fn write_scenarios_csv(path: &Path, sets: &[ScenarioSet]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "window_id,scenario_id,hour,kw")?;
    for (w, set) in sets.iter().enumerate() {
        for (s, traj) in set.trajectories.iter().enumerate() {
            for (hour, v) in traj.iter().enumerate() {
                writeln!(file, "{w},{s},{hour},{v}")?;
            }
        }
    }
    file.flush()?;
    Ok(())
}

/// Read a scenario export back as `[window][scenario][hour]`.
pub fn read_scenarios_csv(path: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenarios {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "window_id,scenario_id,hour,kw")) => {}
        _ => {
            return Err(Error::Csv { line: 1, msg: "expected scenario export header".into() });
        }
    }
    let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx as u64 + 1;
        let mut fields = line.split(',');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| Error::Csv { line: line_no, msg: format!("missing {what}") })
        };
        let w: usize = next("window_id")?
            .parse()
            .map_err(|e| Error::Csv { line: line_no, msg: format!("bad window_id: {e}") })?;
        let s: usize = next("scenario_id")?
            .parse()
            .map_err(|e| Error::Csv { line: line_no, msg: format!("bad scenario_id: {e}") })?;
        let hour: usize = next("hour")?
            .parse()
            .map_err(|e| Error::Csv { line: line_no, msg: format!("bad hour: {e}") })?;
        let kw: f64 = next("kw")?
            .parse()
            .map_err(|e| Error::Csv { line: line_no, msg: format!("bad kw: {e}") })?;
        if w >= out.len() {
            out.resize_with(w + 1, Vec::new);
        }
        if s >= out[w].len() {
            out[w].resize_with(s + 1, Vec::new);
        }
        if hour != out[w][s].len() {
            return Err(Error::Csv {
                line: line_no,
                msg: format!("hour {hour} out of order for window {w} scenario {s}"),
            });
        }
        out[w][s].push(kw);
    }
    Ok(out)
}

/// Derive a per-window seed from the command seed.
pub fn window_seed(base: u64, window: usize) -> u64 {
    base ^ (window as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Effective worker count: `FLOWCAST_THREADS` caps the machine parallelism.
pub fn thread_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("FLOWCAST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(hw);
    cap.min(hw).min(jobs).max(1)
}

/// Run `f(index)` for every index in `0..jobs` on a bounded pool and return
/// the results in index order; the per-index work must be deterministic.
pub fn run_indexed<T: Send, F: Fn(usize) -> Result<T> + Sync>(
    jobs: usize,
    f: F,
) -> Result<Vec<T>> {
    let workers = thread_count(jobs);
    if workers <= 1 {
        return (0..jobs).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<T>>> = Vec::new();
    slots.resize_with(jobs, || None);
    let slots = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .iter_mut()
        .map(|slot| slot.take().expect("every job ran"))
        .collect()
}
