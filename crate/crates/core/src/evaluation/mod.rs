//! Scenario generation, quantile bands, the deviation-coverage reliability
//! metric, prediction-interval-width sharpness profiles, and the AR(24)
//! plus-Gaussian-noise baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Scaler;
use crate::flow::FlowModel;
use crate::numerics::Array;
use crate::training::standard_normal_array;
use crate::{Error, Result};

mod ar;

pub use ar::{ar_fit, ar_scenarios, ARBaseline};

/// `m` sampled future trajectories for one conditioning history, in kW.
/// Raw de-standardized values are retained; flooring at zero is applied only
/// when trajectories are rendered for reporting.
#[derive(Clone, Debug)]
pub struct ScenarioSet {
    /// `m x k`, row per scenario.
    pub trajectories: Vec<Vec<f64>>,
    /// The raw conditioning history.
    pub history: Vec<f64>,
    pub seed: u64,
}

impl ScenarioSet {
    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len())
    }

    /// Values at one look-ahead hour across scenarios.
    pub fn column(&self, hour: usize) -> Vec<f64> {
        self.trajectories.iter().map(|t| t[hour]).collect()
    }
}

/// Draw `m` i.i.d. latent vectors, push them through the inverse flow for
/// the standardized history, and de-standardize.
pub fn generate_scenarios(
    model: &FlowModel,
    scaler: &Scaler,
    history: &[f64],
    m: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    if m == 0 {
        return Err(Error::Config("at least one scenario is required".into()));
    }
    let h = model.cond_dim();
    let k = model.data_dim();
    if history.len() != h {
        return Err(Error::Shape(format!(
            "history length {} does not match the model's condition dimension {h}",
            history.len()
        )));
    }
    if scaler.mean.len() != h + k {
        return Err(Error::Shape(format!(
            "scaler covers {} positions, model needs {}",
            scaler.mean.len(),
            h + k
        )));
    }
    let std_hist = scaler.standardize_past(history);
    let mut cond = Vec::with_capacity(m * h);
    for _ in 0..m {
        cond.extend_from_slice(&std_hist);
    }
    let cond = Array::new(vec![m, h], cond)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = standard_normal_array(&mut rng, m, k);
    let samples = model.sample_batch(&z, &cond)?;
    let trajectories = (0..m)
        .map(|i| scaler.destandardize_future(&samples.data()[i * k..(i + 1) * k]))
        .collect();
    Ok(ScenarioSet { trajectories, history: history.to_vec(), seed })
}

/// Per-hour empirical quantile band of a scenario set.
#[derive(Clone, Debug)]
pub struct QuantileBand {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub median: Vec<f64>,
    /// Nominal coverage size `1 - alpha`.
    pub coverage: f64,
}

impl QuantileBand {
    pub fn width(&self, hour: usize) -> f64 {
        self.upper[hour] - self.lower[hour]
    }
}

/// Linear interpolation of order statistics at position `(m - 1) * q`.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Empirical band for a coverage size `1 - alpha`: the `alpha/2` and
/// `1 - alpha/2` quantiles per hour. Coverage 0 collapses both bounds to
/// the median.
pub fn quantile_band(scenarios: &ScenarioSet, coverage: f64) -> Result<QuantileBand> {
    if scenarios.count() < 2 {
        return Err(Error::Config("quantile bands need at least two scenarios".into()));
    }
    if !(0.0..=1.0).contains(&coverage) {
        return Err(Error::Config(format!("coverage size {coverage} must lie in [0, 1]")));
    }
    let alpha = 1.0 - coverage;
    let k = scenarios.horizon();
    let mut lower = Vec::with_capacity(k);
    let mut upper = Vec::with_capacity(k);
    let mut median = Vec::with_capacity(k);
    for hour in 0..k {
        let mut col = scenarios.column(hour);
        col.sort_by(|a, b| a.total_cmp(b));
        lower.push(interpolated_quantile(&col, alpha / 2.0));
        upper.push(interpolated_quantile(&col, 1.0 - alpha / 2.0));
        median.push(interpolated_quantile(&col, 0.5));
    }
    Ok(QuantileBand { lower, upper, median, coverage })
}

/// Deviation of realized values from quantile bands as a function of the
/// nominal coverage size, averaged over the look-ahead hours.
#[derive(Clone, Debug)]
pub struct CoverageCurve {
    pub coverage: Vec<f64>,
    pub deviation: Vec<f64>,
}

impl CoverageCurve {
    /// Pointwise mean of several curves over the same grid.
    pub fn average(curves: &[CoverageCurve]) -> Result<CoverageCurve> {
        let first = curves
            .first()
            .ok_or_else(|| Error::Config("cannot average zero coverage curves".into()))?;
        let mut deviation = vec![0.0; first.deviation.len()];
        for curve in curves {
            if curve.coverage != first.coverage {
                return Err(Error::Config("coverage grids differ between curves".into()));
            }
            for (acc, d) in deviation.iter_mut().zip(&curve.deviation) {
                *acc += d;
            }
        }
        for d in &mut deviation {
            *d /= curves.len() as f64;
        }
        Ok(CoverageCurve { coverage: first.coverage.clone(), deviation })
    }
}

/// Out-of-band deviation at one hour: zero inside the band, distance to the
/// nearer bound outside.
pub fn deviation(realized: f64, lower: f64, upper: f64) -> f64 {
    if realized < lower {
        lower - realized
    } else if realized > upper {
        realized - upper
    } else {
        0.0
    }
}

/// The default coverage grid: sizes 0.0, 0.1, ..., 1.0.
pub fn default_coverage_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Average deviation of the realized trajectory from one band per grid
/// point. `bands` must all share the realized trajectory's length.
pub fn deviation_coverage(realized: &[f64], bands: &[QuantileBand]) -> Result<CoverageCurve> {
    if bands.is_empty() {
        return Err(Error::Config("deviation-coverage needs at least one band".into()));
    }
    let mut coverage = Vec::with_capacity(bands.len());
    let mut dev = Vec::with_capacity(bands.len());
    for band in bands {
        if band.lower.len() != realized.len() {
            return Err(Error::Shape(format!(
                "band covers {} hours, realized has {}",
                band.lower.len(),
                realized.len()
            )));
        }
        let total: f64 = realized
            .iter()
            .enumerate()
            .map(|(t, &y)| deviation(y, band.lower[t], band.upper[t]))
            .sum();
        coverage.push(band.coverage);
        dev.push(total / realized.len() as f64);
    }
    Ok(CoverageCurve { coverage, deviation: dev })
}

/// Mean band width per look-ahead hour across windows. Every band must use
/// the same coverage size and horizon.
pub fn pi_width_profile(bands: &[QuantileBand]) -> Result<Vec<f64>> {
    let first = bands
        .first()
        .ok_or_else(|| Error::Config("width profile needs at least one band".into()))?;
    let k = first.lower.len();
    let mut widths = vec![0.0; k];
    for band in bands {
        if band.lower.len() != k {
            return Err(Error::Shape("bands have mismatched horizons".into()));
        }
        for (w, t) in widths.iter_mut().zip(0..k) {
            *w += band.width(t);
        }
    }
    for w in &mut widths {
        *w /= bands.len() as f64;
    }
    Ok(widths)
}
