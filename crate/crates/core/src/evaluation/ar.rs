//! 24-order linear autoregressive baseline with recursive multi-step point
//! forecasts and Gaussian residual noise.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

use super::ScenarioSet;

pub const AR_ORDER: usize = 24;

/// Least-squares AR(24) fit: intercept, one coefficient per lag, and the
/// residual standard deviation. Fitted on the training series only.
#[derive(Clone, Debug)]
pub struct ARBaseline {
    /// `coeffs[j]` multiplies the value `j + 1` hours in the past.
    pub coeffs: Vec<f64>,
    pub intercept: f64,
    pub sigma: f64,
    /// Whether the normal equations needed the ridge fallback.
    pub used_ridge: bool,
}

/// Solve a symmetric linear system by Gaussian elimination with partial
/// pivoting; `None` when a pivot collapses.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..n {
        let (pivot, best) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if best < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

/// Fit `y_t` on `(y_{t-1}, ..., y_{t-24})` plus intercept by least squares
/// over the training series. Singular normal equations fall back to a ridge
/// solve with `lambda = 1e-8`.
pub fn ar_fit(train: &[f64]) -> Result<ARBaseline> {
    if train.len() < 2 * AR_ORDER {
        return Err(Error::Series(format!(
            "AR fit needs at least {} hours, got {}",
            2 * AR_ORDER,
            train.len()
        )));
    }
    let p = AR_ORDER + 1;
    let rows = train.len() - AR_ORDER;

    // Accumulate the normal equations X'X and X'y directly.
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    let mut x_row = vec![0.0; p];
    for t in AR_ORDER..train.len() {
        x_row[0] = 1.0;
        for j in 0..AR_ORDER {
            x_row[j + 1] = train[t - 1 - j];
        }
        let y = train[t];
        for i in 0..p {
            xty[i] += x_row[i] * y;
            for j in i..p {
                xtx[i][j] += x_row[i] * x_row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
    }

    let (beta, used_ridge) = match solve(xtx.clone(), xty.clone()) {
        Some(beta) => (beta, false),
        None => {
            let mut ridged = xtx;
            for (i, row) in ridged.iter_mut().enumerate() {
                row[i] += 1e-8;
            }
            let beta = solve(ridged, xty)
                .ok_or_else(|| Error::Series("AR normal equations are singular".into()))?;
            (beta, true)
        }
    };

    let mut sse = 0.0;
    for t in AR_ORDER..train.len() {
        let mut pred = beta[0];
        for j in 0..AR_ORDER {
            pred += beta[j + 1] * train[t - 1 - j];
        }
        let r = train[t] - pred;
        sse += r * r;
    }
    let sigma = (sse / rows as f64).sqrt();

    Ok(ARBaseline {
        coeffs: beta[1..].to_vec(),
        intercept: beta[0],
        sigma,
        used_ridge,
    })
}

impl ARBaseline {
    /// Recursive multi-step point forecast: each prediction is fed back as
    /// an input for the next step.
    pub fn point_forecast(&self, history: &[f64], horizon: usize) -> Result<Vec<f64>> {
        if history.len() < AR_ORDER {
            return Err(Error::Series(format!(
                "recursive forecasting needs {} hours of history",
                AR_ORDER
            )));
        }
        let mut state: Vec<f64> = history[history.len() - AR_ORDER..].to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut pred = self.intercept;
            for j in 0..AR_ORDER {
                pred += self.coeffs[j] * state[state.len() - 1 - j];
            }
            out.push(pred);
            state.push(pred);
            state.remove(0);
        }
        Ok(out)
    }
}

/// Scenarios around the recursive point forecast. Each hour receives the
/// same variance-matched set of `m` Gaussian noise offsets (stratified
/// normal quantiles), assigned to scenarios by independent per-hour seeded
/// permutations. The per-hour value multiset is therefore identical across
/// the horizon, making the prediction-interval width exactly constant, the
/// defining property of the noise-added baseline.
pub fn ar_scenarios(
    baseline: &ARBaseline,
    history: &[f64],
    horizon: usize,
    m: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    if m == 0 {
        return Err(Error::Config("at least one scenario is required".into()));
    }
    let point = baseline.point_forecast(history, horizon)?;
    let normal = Normal::standard();
    let offsets: Vec<f64> = (0..m)
        .map(|j| baseline.sigma * normal.inverse_cdf((j as f64 + 0.5) / m as f64))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = vec![vec![0.0; horizon]; m];
    let mut order: Vec<usize> = (0..m).collect();
    for (t, &p) in point.iter().enumerate() {
        order.shuffle(&mut rng);
        for (j, &o) in order.iter().enumerate() {
            trajectories[j][t] = p + offsets[o];
        }
    }
    Ok(ScenarioSet { trajectories, history: history.to_vec(), seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{pi_width_profile, quantile_band};
    use rand::Rng;

    #[test]
    fn constant_series_forecasts_the_constant() {
        let series = vec![3.5; 200];
        let baseline = ar_fit(&series).unwrap();
        assert!(baseline.sigma < 1e-6, "sigma {} should vanish", baseline.sigma);
        let forecast = baseline.point_forecast(&series[..24], 24).unwrap();
        for v in forecast {
            assert!((v - 3.5).abs() < 1e-6);
        }
    }

    #[test]
    fn periodic_series_is_reproduced_one_day_ahead() {
        // A pure 24-hour periodic signal is exactly representable at lag 24,
        // so the recursive forecast reproduces the next period.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pattern: Vec<f64> = (0..24).map(|_| rng.random_range(0.5..3.0)).collect();
        let series: Vec<f64> = (0..24 * 30).map(|t| pattern[t % 24]).collect();
        let baseline = ar_fit(&series).unwrap();
        let forecast = baseline.point_forecast(&series[..48], 24).unwrap();
        for (t, v) in forecast.iter().enumerate() {
            assert!(
                (v - pattern[t % 24]).abs() < 1e-6,
                "hour {t}: {v} vs {}",
                pattern[t % 24]
            );
        }
    }

    #[test]
    fn scenario_width_profile_is_exactly_flat() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let series: Vec<f64> = (0..24 * 20)
            .map(|t| 1.0 + ((t % 24) as f64 / 4.0).sin() + rng.random_range(-0.2..0.2))
            .collect();
        let baseline = ar_fit(&series).unwrap();
        let scen = ar_scenarios(&baseline, &series[..24], 24, 100, 9).unwrap();
        let band = quantile_band(&scen, 0.5).unwrap();
        let profile = pi_width_profile(&[band]).unwrap();
        let first = profile[0];
        assert!(first > 0.0);
        for w in &profile {
            // Identical per-hour offset multisets; only addition rounding
            // differs between hours.
            assert!(
                ((w - first) / first).abs() < 1e-12,
                "width {w} deviates from {first}"
            );
        }
    }

    #[test]
    fn scenarios_are_seed_deterministic() {
        let series = vec![1.0; 120];
        let baseline = ar_fit(&series).unwrap();
        let a = ar_scenarios(&baseline, &series[..24], 12, 20, 3).unwrap();
        let b = ar_scenarios(&baseline, &series[..24], 12, 20, 3).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(ar_fit(&[1.0; 40]).is_err());
    }
}
