//! Command-line behavior: exit codes, byte reproducibility, and output
//! schemas, using small synthetic runs.

use std::path::Path;
use std::process::{Command, Output};

fn flowcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) {
    std::fs::write(dir.join(name), json).unwrap();
}

const SMALL_SYNTH: &str = r#"{
  "out": "run",
  "synth": { "households": 4, "days": 3, "seed": 9 }
}"#;

#[test]
fn synth_is_byte_reproducible_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL_SYNTH);
    let out = flowcast(dir.path(), &["synth", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(dir.path().join("run/dataset.csv")).unwrap();
    assert!(dir.path().join("run/resolved_config.synth.json").exists());

    let out = flowcast(dir.path(), &["synth", "--config", "c.json"]);
    assert!(out.status.success());
    let second = std::fs::read(dir.path().join("run/dataset.csv")).unwrap();
    assert_eq!(first, second, "same invocation must produce identical bytes");

    // Header plus 4 households x 72 hours.
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 72);
}

#[test]
fn synth_default_has_105_households() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{ "out": "run", "synth": { "days": 2, "seed": 7 } }"#,
    );
    let out = flowcast(dir.path(), &["synth", "--config", "c.json"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("run/dataset.csv")).unwrap();
    let mut ids = std::collections::BTreeSet::new();
    for line in text.lines().skip(1) {
        ids.insert(line.split(',').nth(1).unwrap().to_string());
    }
    assert_eq!(ids.len(), 105);
}

#[test]
fn zero_households_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL_SYNTH);
    let out = flowcast(dir.path(), &["synth", "--config", "c.json", "--households", "0"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#"{ "out": "run" }"#);
    let out = flowcast(dir.path(), &["train", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#"{ "no_such_field": 1 }"#);
    let out = flowcast(dir.path(), &["synth", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{
  "out": "run",
  "synth": { "households": 3, "days": 10, "seed": 9 },
  "data": { "households": 2, "train_end": "2013-01-08", "test_start": "2013-01-08" }
}"#,
    );
    assert!(flowcast(dir.path(), &["synth", "--config", "c.json"]).status.success());
    let out = flowcast(dir.path(), &["forecast", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn toy_outputs_grid_length_curves_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{
  "out": "run",
  "toy": { "grid_start": 0.05, "grid_end": 2.0, "grid_step": 0.05 }
}"#,
    );
    let out = flowcast(dir.path(), &["toy", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["toy_kl.csv", "toy_w1.csv"] {
        let text = std::fs::read_to_string(dir.path().join("run").join(name)).unwrap();
        // Header plus exactly one row per grid point.
        assert_eq!(text.lines().count(), 1 + 40, "{name}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/toy_summary.json")).unwrap())
            .unwrap();
    assert!(summary["kl"]["argmin_sigma2"].as_f64().unwrap() > 0.0);
    assert!(summary["w1"]["argmin_sigma2"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("run/toy_fit.svg").exists());
}

#[test]
fn toy_degenerate_mixture_recovers_component_variance() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{
  "out": "run",
  "toy": { "mean1": 0.0, "mean2": 0.0, "component_var": 0.1,
           "grid_start": 0.02, "grid_end": 1.0, "grid_step": 0.02 }
}"#,
    );
    let out = flowcast(dir.path(), &["toy", "--config", "c.json"]);
    assert!(out.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/toy_summary.json")).unwrap())
            .unwrap();
    let kl = summary["kl"]["argmin_sigma2"].as_f64().unwrap();
    let w1 = summary["w1"]["argmin_sigma2"].as_f64().unwrap();
    assert!((kl - 0.1).abs() < 1e-9, "kl argmin {kl}");
    assert!((w1 - 0.1).abs() < 1e-9, "w1 argmin {w1}");
}

/// End-to-end on a deliberately tiny model: train, forecast, eval, with the
/// per-command artifacts and byte determinism of repeated runs.
#[test]
fn tiny_pipeline_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
  "out": "run",
  "synth": { "households": 6, "days": 60, "seed": 3 },
  "data": { "households": 3, "train_end": "2013-02-20", "test_start": "2013-02-20" },
  "flow": { "blocks": 2, "conv_channels": 2, "cond_hidden": 8 },
  "train": { "epochs": 2, "batch_size": 16, "seed": 31 },
  "forecast": { "scenarios": 20, "seed": 77 },
  "eval": { "methods": [
    { "name": "flow", "scenarios_csv": "scenarios_flow.csv" },
    { "name": "ar-noise", "scenarios_csv": "scenarios_ar.csv" }
  ] }
}"#;
    write_config(dir.path(), "c.json", config);
    let run = dir.path().join("run");

    assert!(flowcast(dir.path(), &["synth", "--config", "c.json"]).status.success());

    let out = flowcast(dir.path(), &["train", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint.bin").exists());
    assert!(run.join("scaler.json").exists());
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,train_nll,val_nll,w_estimate\n"));
    let ckpt_a = std::fs::read(run.join("checkpoint.bin")).unwrap();

    // Same seed and configuration: byte-identical checkpoint.
    assert!(flowcast(dir.path(), &["train", "--config", "c.json"]).status.success());
    let ckpt_b = std::fs::read(run.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt_a, ckpt_b);

    let out = flowcast(
        dir.path(),
        &["forecast", "--config", "c.json", "--out-csv", "scenarios_flow.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scen_a = std::fs::read(run.join("scenarios_flow.csv")).unwrap();
    assert!(flowcast(
        dir.path(),
        &["forecast", "--config", "c.json", "--out-csv", "scenarios_flow.csv"]
    )
    .status
    .success());
    let scen_b = std::fs::read(run.join("scenarios_flow.csv")).unwrap();
    assert_eq!(scen_a, scen_b, "fixed seed must reproduce scenario bytes");

    // Row count: windows x scenarios x horizon + header.
    let text = String::from_utf8(scen_a).unwrap();
    let n_windows = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    assert_eq!(text.lines().count(), 1 + n_windows * 20 * 24);

    let out = flowcast(
        dir.path(),
        &["forecast", "--config", "c.json", "--method", "ar-noise", "--out-csv", "scenarios_ar.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = flowcast(dir.path(), &["eval", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "coverage_flow.csv",
        "coverage_ar-noise.csv",
        "width_flow.csv",
        "width_ar-noise.csv",
        "deviation_coverage.svg",
        "width_profile.svg",
        "fan_flow.svg",
        "fan_ar-noise.svg",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let cov = std::fs::read_to_string(run.join("coverage_flow.csv")).unwrap();
    assert!(cov.starts_with("coverage,deviation\n"));
    assert_eq!(cov.lines().count(), 1 + 11);
    let width = std::fs::read_to_string(run.join("width_flow.csv")).unwrap();
    assert_eq!(width.lines().count(), 1 + 24);
}

/// A scenario file that reproduces the realized future exactly must score
/// zero deviation at every coverage size.
#[test]
fn perfect_forecast_fixture_has_zero_deviation_curve() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
  "out": "run",
  "synth": { "households": 4, "days": 40, "seed": 2 },
  "data": { "households": 2, "train_end": "2013-02-01", "test_start": "2013-02-01" },
  "eval": { "methods": [ { "name": "perfect", "scenarios_csv": "scenarios_perfect.csv" } ] }
}"#;
    write_config(dir.path(), "c.json", config);
    assert!(flowcast(dir.path(), &["synth", "--config", "c.json"]).status.success());

    // Rebuild the test windows and write scenarios identical to the future.
    let households =
        flowcast_core::data::parse_csv(&dir.path().join("run/dataset.csv")).unwrap();
    let series = flowcast_core::data::aggregate(&households, 2, 1).unwrap();
    let all = flowcast_core::data::make_windows(&series, 24, 24).unwrap();
    let boundary = chrono::NaiveDate::from_ymd_opt(2013, 2, 1).unwrap();
    let (_, _, test) =
        flowcast_core::data::split_and_standardize(&all, boundary, boundary, 0.15).unwrap();
    let mut csv = String::from("window_id,scenario_id,hour,kw\n");
    for (w, window) in test.windows.iter().enumerate() {
        for s in 0..2 {
            for (hour, v) in window.future.iter().enumerate() {
                csv.push_str(&format!("{w},{s},{hour},{v}\n"));
            }
        }
    }
    std::fs::write(dir.path().join("run/scenarios_perfect.csv"), csv).unwrap();

    let out = flowcast(dir.path(), &["eval", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("run/coverage_perfect.csv")).unwrap();
    for line in text.lines().skip(1) {
        let dev: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(dev, 0.0, "perfect forecast must have zero deviation: {line}");
    }
}

/// Scenarios written to CSV round-trip through the forward flow back to the
/// exact latents that generated them.
#[test]
fn exported_scenarios_recover_their_latents() {
    use flowcast_cli::pipeline::{read_scenarios_csv, window_seed, ScalerFile};
    use flowcast_core::flow::load_checkpoint;
    use flowcast_core::training::standard_normal_array;
    use rand::SeedableRng;

    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
  "out": "run",
  "synth": { "households": 5, "days": 80, "seed": 13 },
  "data": { "households": 3, "train_end": "2013-03-10", "test_start": "2013-03-10" },
  "flow": { "blocks": 3, "conv_channels": 2, "cond_hidden": 8 },
  "train": { "epochs": 3, "batch_size": 16, "seed": 21 },
  "forecast": { "scenarios": 8, "seed": 55 }
}"#;
    write_config(dir.path(), "c.json", config);
    assert!(flowcast(dir.path(), &["synth", "--config", "c.json"]).status.success());
    assert!(flowcast(dir.path(), &["train", "--config", "c.json"]).status.success());
    let out = flowcast(dir.path(), &["forecast", "--config", "c.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run = dir.path().join("run");
    let model = load_checkpoint(&run.join("checkpoint.bin")).unwrap();
    let scaler = ScalerFile::load(&run.join("scaler.json")).unwrap().scaler();
    let windows = read_scenarios_csv(&run.join("scenarios.csv")).unwrap();

    // Rebuild the conditioning histories exactly as forecast did.
    let households = flowcast_core::data::parse_csv(&run.join("dataset.csv")).unwrap();
    let series = flowcast_core::data::aggregate(&households, 3, 1).unwrap();
    let all = flowcast_core::data::make_windows(&series, 24, 24).unwrap();
    let (_, _, test) = flowcast_core::data::split_and_standardize(
        &all,
        chrono::NaiveDate::from_ymd_opt(2013, 3, 10).unwrap(),
        chrono::NaiveDate::from_ymd_opt(2013, 3, 10).unwrap(),
        0.15,
    )
    .unwrap();
    assert_eq!(windows.len(), test.len());

    let mut worst: f64 = 0.0;
    for (w, scenarios) in windows.iter().enumerate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(window_seed(55, w));
        let z = standard_normal_array(&mut rng, scenarios.len(), 24);
        let hist = scaler.standardize_past(&test.windows[w].past);
        for (s, traj) in scenarios.iter().enumerate() {
            let std_traj = scaler.standardize_future(traj);
            let (latent, _) = model.forward(&std_traj, &hist).unwrap();
            for (a, b) in latent.iter().zip(&z.data()[s * 24..(s + 1) * 24]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-6, "scenario -> latent round trip error {worst}");
}

#[test]
fn forecast_rejects_mismatched_checkpoint_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
  "out": "run",
  "synth": { "households": 4, "days": 30, "seed": 3 },
  "data": { "households": 2, "train_end": "2013-01-25", "test_start": "2013-01-25" },
  "flow": { "blocks": 1, "conv_channels": 2, "cond_hidden": 4 },
  "train": { "epochs": 1, "batch_size": 8, "seed": 1 }
}"#;
    write_config(dir.path(), "c.json", config);
    assert!(flowcast(dir.path(), &["synth", "--config", "c.json"]).status.success());
    assert!(flowcast(dir.path(), &["train", "--config", "c.json"]).status.success());

    // Same checkpoint, different window geometry.
    let mismatched = config.replace(r#""data": { "households": 2,"#, r#""data": { "h": 12, "households": 2,"#);
    write_config(dir.path(), "c2.json", &mismatched);
    let out = flowcast(dir.path(), &["forecast", "--config", "c2.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
