//! The five subcommands: synth, train, forecast, eval, toy.

use std::io::Write as _;
use std::path::Path;

use flowcast_core::data::{synth_generate, write_csv};
use flowcast_core::evaluation::{
    ar_fit, ar_scenarios, default_coverage_grid, deviation_coverage, generate_scenarios,
    pi_width_profile, quantile_band, CoverageCurve, QuantileBand, ScenarioSet,
};
use flowcast_core::flow::{load_checkpoint, save_checkpoint};
use flowcast_core::training::{
    toy_fit, train_mle, train_wflow, write_history_csv, write_toy_csv, FitMetric, ToySpec,
};
use flowcast_core::{Error, Result};

use crate::config::{ForecastMethod, RunConfig};
use crate::pipeline::{
    prepare_data, read_scenarios_csv, run_indexed, window_seed, write_scenarios_csv, ScalerFile,
};
use crate::svg::{BandArea, Chart, Series, PALETTE};

/// Generate the synthetic dataset CSV.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    cfg.synth.validate()?;
    cfg.echo("synth")?;
    let series = synth_generate(&cfg.synth)?;
    let path = cfg.resolve(&cfg.data.csv);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(&series, &path)?;
    println!(
        "wrote {} households x {} days to {}",
        cfg.synth.households,
        cfg.synth.days,
        path.display()
    );
    Ok(())
}

/// Train a flow on the configured dataset and write the checkpoint, the
/// standardization sidecar, and the loss history.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.echo("train")?;
    let data = prepare_data(cfg)?;
    let spec = cfg.flow.to_spec(cfg.data.k, cfg.data.h);

    let outcome = if cfg.train.beta > 0.0 {
        train_wflow(&data.train, &data.val, spec, &cfg.train)?
    } else {
        train_mle(&data.train, &data.val, spec, &cfg.train)?
    };

    let ckpt_path = cfg.resolve(&cfg.forecast.checkpoint);
    save_checkpoint(&outcome.model, &ckpt_path)?;
    let scaler = data.train.scaler.as_ref().expect("training split carries the scaler");
    ScalerFile::new(cfg.data.h, cfg.data.k, scaler).save(&cfg.resolve(&cfg.forecast.scaler))?;
    write_history_csv(&outcome.history, &cfg.resolve("loss.csv"))?;

    println!(
        "trained {} blocks ({}) for {} epochs; best validation nll {:.6} at epoch {}",
        cfg.flow.blocks,
        cfg.flow.variant,
        outcome.history.len(),
        outcome.best_val_nll,
        outcome.best_epoch
    );
    Ok(())
}

fn flow_scenarios(cfg: &RunConfig, data: &crate::pipeline::PreparedData) -> Result<Vec<ScenarioSet>> {
    let model = load_checkpoint(&cfg.resolve(&cfg.forecast.checkpoint))?;
    let scaler_file = ScalerFile::load(&cfg.resolve(&cfg.forecast.scaler))?;
    if model.data_dim() != cfg.data.k || model.cond_dim() != cfg.data.h {
        return Err(Error::Config(format!(
            "checkpoint models ({} <- {}) but the configuration asks for ({} <- {})",
            model.data_dim(),
            model.cond_dim(),
            cfg.data.k,
            cfg.data.h
        )));
    }
    if scaler_file.h != cfg.data.h || scaler_file.k != cfg.data.k {
        return Err(Error::Config("scaler window geometry does not match the configuration".into()));
    }
    let scaler = scaler_file.scaler();
    let m = cfg.forecast.scenarios;
    let seed = cfg.forecast.seed;
    run_indexed(data.test.len(), |w| {
        generate_scenarios(&model, &scaler, &data.test.windows[w].past, m, window_seed(seed, w))
    })
}

fn ar_noise_scenarios(
    cfg: &RunConfig,
    data: &crate::pipeline::PreparedData,
) -> Result<Vec<ScenarioSet>> {
    // Fit on the training span only: everything before the first validation
    // window (or the train end when validation is empty).
    let fit_end = data
        .val
        .windows
        .first()
        .map(|w| w.start)
        .unwrap_or_else(|| flowcast_core::data::midnight(cfg.data.train_end));
    let hours = (fit_end - data.series.start).num_hours();
    if hours <= 0 {
        return Err(Error::Series("no training data before the validation cut".into()));
    }
    let train_series = &data.series.values[..(hours as usize).min(data.series.len())];
    let baseline = ar_fit(train_series)?;
    if baseline.used_ridge {
        eprintln!("warning: AR normal equations were singular; ridge fallback used");
    }
    let m = cfg.forecast.scenarios;
    let seed = cfg.forecast.seed;
    let k = cfg.data.k;
    run_indexed(data.test.len(), |w| {
        ar_scenarios(&baseline, &data.test.windows[w].past, k, m, window_seed(seed, w))
    })
}

/// Produce the scenario CSV for every test window.
pub fn cmd_forecast(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.echo("forecast")?;
    let data = prepare_data(cfg)?;
    let sets = match cfg.forecast.method {
        ForecastMethod::Flow => flow_scenarios(cfg, &data)?,
        ForecastMethod::ArNoise => ar_noise_scenarios(cfg, &data)?,
    };
    let path = cfg.resolve(&cfg.forecast.out_csv);
    write_scenarios_csv(&path, &sets)?;
    println!(
        "wrote {} scenarios x {} windows x {} hours to {}",
        cfg.forecast.scenarios,
        sets.len(),
        cfg.data.k,
        path.display()
    );
    Ok(())
}

fn write_coverage_csv(path: &Path, curve: &CoverageCurve) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "coverage,deviation")?;
    for (c, d) in curve.coverage.iter().zip(&curve.deviation) {
        writeln!(file, "{c},{d}")?;
    }
    file.flush()?;
    Ok(())
}

fn write_width_csv(path: &Path, widths: &[f64]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "hour,width")?;
    for (hour, w) in widths.iter().enumerate() {
        writeln!(file, "{hour},{w}")?;
    }
    file.flush()?;
    Ok(())
}

struct MethodMetrics {
    name: String,
    curve: CoverageCurve,
    widths: Vec<f64>,
    fan_band: QuantileBand,
    fan_median: Vec<f64>,
}

/// Compute metrics and plots from scenario CSVs against the realized data.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    cfg.echo("eval")?;
    let data = prepare_data(cfg)?;
    let n_windows = data.test.len();
    let k = cfg.data.k;
    if cfg.eval.fan_window >= n_windows {
        return Err(Error::Config(format!(
            "fan window {} out of range ({} test windows)",
            cfg.eval.fan_window, n_windows
        )));
    }
    let grid = default_coverage_grid();

    let mut all_metrics = Vec::new();
    for method in &cfg.eval.methods {
        let scen = read_scenarios_csv(&cfg.resolve(&method.scenarios_csv))?;
        if scen.len() != n_windows {
            return Err(Error::Config(format!(
                "{}: {} scenario windows but {} test windows",
                method.name,
                scen.len(),
                n_windows
            )));
        }
        let mut curves = Vec::with_capacity(n_windows);
        let mut half_bands = Vec::with_capacity(n_windows);
        let mut fan = None;
        for (w, trajectories) in scen.into_iter().enumerate() {
            if trajectories.len() < 2 || trajectories.iter().any(|t| t.len() != k) {
                return Err(Error::Config(format!(
                    "{}: window {w} scenarios are misaligned with the {k}-hour horizon",
                    method.name
                )));
            }
            let set = ScenarioSet {
                trajectories,
                history: data.test.windows[w].past.clone(),
                seed: 0,
            };
            let bands: Vec<QuantileBand> =
                grid.iter().map(|&c| quantile_band(&set, c)).collect::<Result<_>>()?;
            curves.push(deviation_coverage(&data.test.windows[w].future, &bands)?);
            let half = quantile_band(&set, 0.5)?;
            if w == cfg.eval.fan_window {
                fan = Some((half.clone(), quantile_band(&set, 0.0)?.median));
            }
            half_bands.push(half);
        }
        let (fan_band, fan_median) = fan.expect("fan window validated above");
        all_metrics.push(MethodMetrics {
            name: method.name.clone(),
            curve: CoverageCurve::average(&curves)?,
            widths: pi_width_profile(&half_bands)?,
            fan_band,
            fan_median,
        });
    }

    let out = cfg.out_dir();
    for m in &all_metrics {
        write_coverage_csv(&out.join(format!("coverage_{}.csv", m.name)), &m.curve)?;
        write_width_csv(&out.join(format!("width_{}.csv", m.name)), &m.widths)?;
    }

    // Deviation-coverage curves for all methods on one chart.
    let chart = Chart {
        title: "Deviation vs coverage size".into(),
        x_label: "coverage size".into(),
        y_label: "mean deviation (kW)".into(),
        series: all_metrics
            .iter()
            .enumerate()
            .map(|(i, m)| Series {
                label: m.name.clone(),
                color: PALETTE[i % PALETTE.len()].into(),
                dashed: i != 0,
                points: m.curve.coverage.iter().copied().zip(m.curve.deviation.iter().copied()).collect(),
            })
            .collect(),
        bands: vec![],
    };
    std::fs::write(out.join("deviation_coverage.svg"), chart.render())?;

    let chart = Chart {
        title: "50% prediction-interval width by hour".into(),
        x_label: "look-ahead hour".into(),
        y_label: "width (kW)".into(),
        series: all_metrics
            .iter()
            .enumerate()
            .map(|(i, m)| Series {
                label: m.name.clone(),
                color: PALETTE[i % PALETTE.len()].into(),
                dashed: i != 0,
                points: m.widths.iter().enumerate().map(|(h, w)| (h as f64, *w)).collect(),
            })
            .collect(),
        bands: vec![],
    };
    std::fs::write(out.join("width_profile.svg"), chart.render())?;

    // Fan chart per method: 50% band and median vs the realized load.
    // Rendered values are floored at zero; metrics above used raw values.
    let realized = &data.test.windows[cfg.eval.fan_window].future;
    let floor = |v: f64| v.max(0.0);
    for (i, m) in all_metrics.iter().enumerate() {
        let xs: Vec<f64> = (0..k).map(|h| h as f64).collect();
        let chart = Chart {
            title: format!("Scenario fan ({}), test window {}", m.name, cfg.eval.fan_window),
            x_label: "look-ahead hour".into(),
            y_label: "load (kW)".into(),
            series: vec![
                Series {
                    label: "median".into(),
                    color: PALETTE[i % PALETTE.len()].into(),
                    dashed: true,
                    points: xs.iter().copied().zip(m.fan_median.iter().map(|&v| floor(v))).collect(),
                },
                Series {
                    label: "realized".into(),
                    color: "#000000".into(),
                    dashed: false,
                    points: xs.iter().copied().zip(realized.iter().copied()).collect(),
                },
            ],
            bands: vec![BandArea {
                label: "50% interval".into(),
                color: PALETTE[i % PALETTE.len()].into(),
                xs: xs.clone(),
                lower: m.fan_band.lower.iter().map(|&v| floor(v)).collect(),
                upper: m.fan_band.upper.iter().map(|&v| floor(v)).collect(),
            }],
        };
        std::fs::write(out.join(format!("fan_{}.svg", m.name)), chart.render())?;
    }

    println!("evaluated {} methods over {} test windows", all_metrics.len(), n_windows);
    Ok(())
}

/// The mixture-fitting study: objective curves, argmins, and a density plot.
pub fn cmd_toy(cfg: &RunConfig) -> Result<()> {
    cfg.echo("toy")?;
    let spec = ToySpec {
        mean1: cfg.toy.mean1,
        mean2: cfg.toy.mean2,
        component_var: cfg.toy.component_var,
    };
    let grid = cfg.toy.grid()?;
    let kl = toy_fit(&spec, FitMetric::Kl, &grid)?;
    let w1 = toy_fit(&spec, FitMetric::W1, &grid)?;

    let out = cfg.out_dir();
    write_toy_csv(&kl, &out.join("toy_kl.csv"))?;
    write_toy_csv(&w1, &out.join("toy_w1.csv"))?;

    // Cross-checks reported alongside the grid argmins: the analytic
    // cross-entropy optimum (second moment of the mixture) and the
    // degenerate point-mass candidate for the Wasserstein branch.
    let moment_matching =
        0.5 * (spec.mean1 * spec.mean1 + spec.mean2 * spec.mean2) + spec.component_var;
    let point_mass_objective = {
        let n = 4000;
        let q = spec.quantile_fn();
        (0..n).map(|i| q.inverse_cdf((i as f64 + 0.5) / n as f64).abs()).sum::<f64>() / n as f64
    };
    let summary = serde_json::json!({
        "kl": {
            "argmin_sigma2": kl.argmin_sigma2,
            "objective_at_argmin": kl.argmin_objective,
            "moment_matching_sigma2": moment_matching,
        },
        "w1": {
            "argmin_sigma2": w1.argmin_sigma2,
            "objective_at_argmin": w1.argmin_objective,
            "point_mass_sigma2": 0.0,
            "objective_at_point_mass": point_mass_objective,
        },
    });
    std::fs::write(
        out.join("toy_summary.json"),
        serde_json::to_string_pretty(&summary).expect("json encodes") + "\n",
    )?;

    // Density plot: the mixture against both fitted Gaussians.
    let xs: Vec<f64> = (0..601).map(|i| -3.0 + i as f64 * 0.01).collect();
    let gauss = |s2: f64, x: f64| {
        (-0.5 * x * x / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
    };
    let chart = Chart {
        title: "Mixture target and fitted zero-mean Gaussians".into(),
        x_label: "x".into(),
        y_label: "density".into(),
        series: vec![
            Series {
                label: "mixture".into(),
                color: "#000000".into(),
                dashed: false,
                points: xs.iter().map(|&x| (x, spec.density(x))).collect(),
            },
            Series {
                label: format!("KL fit (s2={:.3})", kl.argmin_sigma2),
                color: PALETTE[0].into(),
                dashed: true,
                points: xs.iter().map(|&x| (x, gauss(kl.argmin_sigma2, x))).collect(),
            },
            Series {
                label: format!("W1 fit (s2={:.3})", w1.argmin_sigma2),
                color: PALETTE[1].into(),
                dashed: true,
                points: xs.iter().map(|&x| (x, gauss(w1.argmin_sigma2, x))).collect(),
            },
        ],
        bands: vec![],
    };
    std::fs::write(out.join("toy_fit.svg"), chart.render())?;

    println!(
        "toy fits: KL argmin sigma2 = {:.3}, W1 argmin sigma2 = {:.3}",
        kl.argmin_sigma2, w1.argmin_sigma2
    );
    Ok(())
}
