//! One-dimensional divergence oracles: quantile functions, the closed-form
//! Wasserstein-1 distance as a quantile-difference integral, empirical KL by
//! quadrature, and the two-component-mixture fitting study.

use std::io::Write;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// An inverse CDF on (0, 1): analytic for Gaussians and two-component
/// mixtures, interpolated order statistics for samples. Monotone
/// nondecreasing by construction or validation.
#[derive(Clone, Debug)]
pub enum QuantileFn {
    Gaussian { mean: f64, std: f64 },
    /// Equal-variance two-component Gaussian mixture.
    GaussianMixture2 { mean1: f64, mean2: f64, std: f64, weight1: f64 },
    Empirical { sorted: Vec<f64> },
}

impl QuantileFn {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        if std <= 0.0 || !std.is_finite() {
            return Err(Error::Config(format!("gaussian std must be positive, got {std}")));
        }
        Ok(QuantileFn::Gaussian { mean, std })
    }

    pub fn mixture(mean1: f64, mean2: f64, std: f64, weight1: f64) -> Result<Self> {
        if std <= 0.0 || !(0.0..=1.0).contains(&weight1) {
            return Err(Error::Config("mixture needs positive std and weight in [0,1]".into()));
        }
        Ok(QuantileFn::GaussianMixture2 { mean1, mean2, std, weight1 })
    }

    /// Sorts the samples, so the result is always monotone.
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("empirical quantile function needs samples".into()));
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        Ok(QuantileFn::Empirical { sorted: samples })
    }

    /// Validates that the provided samples are already nondecreasing.
    pub fn from_sorted(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("empirical quantile function needs samples".into()));
        }
        if samples.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::Config("quantile function must be monotone nondecreasing".into()));
        }
        Ok(QuantileFn::Empirical { sorted: samples })
    }

    /// Evaluate the inverse CDF at `z` in (0, 1).
    pub fn inverse_cdf(&self, z: f64) -> f64 {
        debug_assert!(z > 0.0 && z < 1.0);
        match self {
            QuantileFn::Gaussian { mean, std } => {
                mean + std * Normal::standard().inverse_cdf(z)
            }
            QuantileFn::GaussianMixture2 { mean1, mean2, std, weight1 } => {
                mixture_inverse_cdf(*mean1, *mean2, *std, *weight1, z)
            }
            QuantileFn::Empirical { sorted } => {
                let pos = (sorted.len() - 1) as f64 * z;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let frac = pos - lo as f64;
                sorted[lo] + frac * (sorted[hi] - sorted[lo])
            }
        }
    }
}

fn mixture_cdf(mean1: f64, mean2: f64, std: f64, weight1: f64, x: f64) -> f64 {
    let n = Normal::standard();
    weight1 * n.cdf((x - mean1) / std) + (1.0 - weight1) * n.cdf((x - mean2) / std)
}

/// Invert the mixture CDF by bisection to 1e-10; there is no closed form.
fn mixture_inverse_cdf(mean1: f64, mean2: f64, std: f64, weight1: f64, z: f64) -> f64 {
    let q = Normal::standard().inverse_cdf(z);
    // The mixture quantile lies between the two component quantiles.
    let mut lo = (mean1 + std * q).min(mean2 + std * q);
    let mut hi = (mean1 + std * q).max(mean2 + std * q);
    if hi - lo < 1e-10 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(mean1, mean2, std, weight1, mid) < z {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Wasserstein-1 distance via midpoint quadrature of the quantile-difference
/// integral over (0, 1).
pub fn w1_closed_form(f_inv: &QuantileFn, g_inv: &QuantileFn, n_quad: usize) -> Result<f64> {
    if n_quad < 100 {
        return Err(Error::Config(format!("n_quad must be at least 100, got {n_quad}")));
    }
    let n = n_quad as f64;
    let mut acc = 0.0;
    for i in 0..n_quad {
        let z = (i as f64 + 0.5) / n;
        acc += (f_inv.inverse_cdf(z) - g_inv.inverse_cdf(z)).abs();
    }
    Ok(acc / n)
}

/// The two-component mixture study: equal weights, means `mean1`/`mean2`,
/// shared component variance, fitted by a zero-mean Gaussian family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySpec {
    pub mean1: f64,
    pub mean2: f64,
    pub component_var: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec { mean1: -1.0, mean2: 1.0, component_var: 0.1 }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.component_var <= 0.0 {
            return Err(Error::Config("component variance must be positive".into()));
        }
        Ok(())
    }

    pub fn density(&self, x: f64) -> f64 {
        let var = self.component_var;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
        let g = |mu: f64| norm * (-0.5 * (x - mu) * (x - mu) / var).exp();
        0.5 * g(self.mean1) + 0.5 * g(self.mean2)
    }

    pub fn quantile_fn(&self) -> QuantileFn {
        QuantileFn::GaussianMixture2 {
            mean1: self.mean1,
            mean2: self.mean2,
            std: self.component_var.sqrt(),
            weight1: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMetric {
    Kl,
    W1,
}

/// Objective curve over a sigma-squared grid with its argmin.
#[derive(Clone, Debug)]
pub struct ToyFit {
    pub sigma2: Vec<f64>,
    pub objective: Vec<f64>,
    pub argmin_sigma2: f64,
    pub argmin_objective: f64,
}

/// The default search grid (0.001, 4] with step 0.001.
pub fn default_sigma2_grid() -> Vec<f64> {
    (1..=4000).map(|i| i as f64 * 0.001).collect()
}

/// Fit `N(0, sigma^2)` to the mixture by grid search under the chosen
/// metric. KL(P || Q) is computed by quadrature of `p log(p/q)`; W1 by the
/// quantile-difference integral.
pub fn toy_fit(spec: &ToySpec, metric: FitMetric, grid: &[f64]) -> Result<ToyFit> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::Config("sigma-squared grid is empty".into()));
    }
    if grid.iter().any(|s| *s <= 0.0) {
        return Err(Error::Config("sigma-squared grid must be positive".into()));
    }

    let objective: Vec<f64> = match metric {
        FitMetric::Kl => {
            // Hoist the x-grid and mixture density out of the sigma loop.
            let n = 4001;
            let (lo, hi) = (-8.0f64, 8.0f64);
            let step = (hi - lo) / n as f64;
            let xs: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect();
            let ps: Vec<f64> = xs.iter().map(|&x| spec.density(x)).collect();
            let plogp: Vec<f64> =
                ps.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).collect();
            grid.iter()
                .map(|&s2| {
                    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
                    let mut acc = 0.0;
                    for i in 0..n {
                        let logq = log_norm - xs[i] * xs[i] / (2.0 * s2);
                        acc += plogp[i] - ps[i] * logq;
                    }
                    acc * step
                })
                .collect()
        }
        FitMetric::W1 => {
            let n_quad = 2000;
            let f_inv = spec.quantile_fn();
            let normal = Normal::standard();
            let zs: Vec<f64> = (0..n_quad).map(|i| (i as f64 + 0.5) / n_quad as f64).collect();
            let fq: Vec<f64> = zs.iter().map(|&z| f_inv.inverse_cdf(z)).collect();
            let nq: Vec<f64> = zs.iter().map(|&z| normal.inverse_cdf(z)).collect();
            grid.iter()
                .map(|&s2| {
                    let sigma = s2.sqrt();
                    let acc: f64 = fq.iter().zip(&nq).map(|(f, q)| (f - sigma * q).abs()).sum();
                    acc / n_quad as f64
                })
                .collect()
        }
    };

    let (best_idx, _) = objective
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty grid");
    Ok(ToyFit {
        sigma2: grid.to_vec(),
        objective: objective.clone(),
        argmin_sigma2: grid[best_idx],
        argmin_objective: objective[best_idx],
    })
}

/// Emit a fit curve as `sigma2,objective` CSV.
pub fn write_toy_csv(fit: &ToyFit, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "sigma2,objective")?;
    for (s, o) in fit.sigma2.iter().zip(&fit.objective) {
        writeln!(file, "{s},{o}")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_distributions_have_zero_w1() {
        let f = QuantileFn::gaussian(0.3, 1.2).unwrap();
        let g = QuantileFn::gaussian(0.3, 1.2).unwrap();
        assert_eq!(w1_closed_form(&f, &g, 1000).unwrap(), 0.0);
    }

    #[test]
    fn translation_identity() {
        // W1(N(0,1), N(mu,1)) = |mu|.
        for mu in [0.5, 1.0, 2.0] {
            let f = QuantileFn::gaussian(0.0, 1.0).unwrap();
            let g = QuantileFn::gaussian(mu, 1.0).unwrap();
            let w = w1_closed_form(&f, &g, 4000).unwrap();
            assert!((w - mu).abs() < 1e-3, "mu={mu}: {w}");
        }
    }

    #[test]
    fn gaussian_scale_identity() {
        // W1(N(0,1), N(0,4)) = |2 - 1| * E|Z| = sqrt(2/pi).
        let f = QuantileFn::gaussian(0.0, 1.0).unwrap();
        let g = QuantileFn::gaussian(0.0, 2.0).unwrap();
        let w = w1_closed_form(&f, &g, 4000).unwrap();
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((w - expected).abs() < 1e-3, "{w} vs {expected}");
    }

    #[test]
    fn quad_count_must_be_at_least_100() {
        let f = QuantileFn::gaussian(0.0, 1.0).unwrap();
        assert!(w1_closed_form(&f, &f, 99).is_err());
    }

    #[test]
    fn unsorted_samples_are_rejected_sorted_accepted() {
        assert!(QuantileFn::from_sorted(vec![1.0, 0.5]).is_err());
        let q = QuantileFn::from_samples(vec![3.0, 1.0, 2.0]).unwrap();
        // Interpolated median of {1,2,3}.
        assert_eq!(q.inverse_cdf(0.5), 2.0);
    }

    #[test]
    fn mixture_quantile_matches_cdf_inversion() {
        let spec = ToySpec::default();
        let q = spec.quantile_fn();
        for z in [0.01, 0.2, 0.5, 0.77, 0.99] {
            let x = q.inverse_cdf(z);
            let back = mixture_cdf(spec.mean1, spec.mean2, spec.component_var.sqrt(), 0.5, x);
            assert!((back - z).abs() < 1e-9, "z={z}: cdf(q)={back}");
        }
    }

    #[test]
    fn kl_argmin_matches_moment_matching() {
        // Analytic cross-entropy minimization gives sigma^2 = mu^2 + var0 = 1.1.
        let fit = toy_fit(&ToySpec::default(), FitMetric::Kl, &default_sigma2_grid()).unwrap();
        assert!(
            (fit.argmin_sigma2 - 1.1).abs() < 0.01,
            "KL argmin {} should match the moment-matching value 1.1",
            fit.argmin_sigma2
        );
        assert_eq!(fit.sigma2.len(), 4000);
    }

    #[test]
    fn degenerate_spec_recovers_component_variance() {
        let spec = ToySpec { mean1: 0.0, mean2: 0.0, component_var: 0.1 };
        for metric in [FitMetric::Kl, FitMetric::W1] {
            let fit = toy_fit(&spec, metric, &default_sigma2_grid()).unwrap();
            assert!(
                (fit.argmin_sigma2 - 0.1).abs() < 2e-3,
                "{metric:?} argmin {}",
                fit.argmin_sigma2
            );
        }
    }

    #[test]
    fn w1_fit_beats_both_extremes() {
        let fit = toy_fit(&ToySpec::default(), FitMetric::W1, &default_sigma2_grid()).unwrap();
        // The quadrature oracle's optimum is interior: strictly better than
        // a near-point-mass and than a very wide Gaussian.
        assert!(fit.argmin_objective < fit.objective[0]);
        assert!(fit.argmin_objective < *fit.objective.last().unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn w1_is_symmetric_and_satisfies_triangle(
            m1 in -2.0f64..2.0, s1 in 0.3f64..2.0,
            m2 in -2.0f64..2.0, s2 in 0.3f64..2.0,
            m3 in -2.0f64..2.0, s3 in 0.3f64..2.0,
        ) {
            let a = QuantileFn::gaussian(m1, s1).unwrap();
            let b = QuantileFn::gaussian(m2, s2).unwrap();
            let c = QuantileFn::gaussian(m3, s3).unwrap();
            let ab = w1_closed_form(&a, &b, 2000).unwrap();
            let ba = w1_closed_form(&b, &a, 2000).unwrap();
            let ac = w1_closed_form(&a, &c, 2000).unwrap();
            let cb = w1_closed_form(&c, &b, 2000).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= ac + cb + 1e-3);
        }
    }
}
