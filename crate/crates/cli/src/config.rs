//! Run configuration: a JSON file with per-command sections, overridable by
//! command-line flags. The effective resolved configuration is echoed into
//! the output directory before any computation.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use flowcast_core::data::SynthSpec;
use flowcast_core::flow::{CouplingVariant, FlowSpec};
use flowcast_core::training::TrainConfig;
use flowcast_core::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset CSV; relative paths resolve against the output directory.
    pub csv: String,
    /// Number of households to aggregate.
    pub households: usize,
    pub aggregate_seed: u64,
    /// History length and forecast horizon in hours.
    pub h: usize,
    pub k: usize,
    /// Chronological boundaries: training windows end before `train_end`,
    /// test windows start at or after `test_start`.
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: "dataset.csv".into(),
            households: 10,
            aggregate_seed: 1,
            h: 24,
            k: 24,
            train_end: NaiveDate::from_ymd_opt(2015, 3, 1).unwrap(),
            test_start: NaiveDate::from_ymd_opt(2015, 3, 1).unwrap(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub blocks: usize,
    pub variant: CouplingVariant,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub cond_hidden: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            blocks: 9,
            variant: CouplingVariant::Reinforced,
            conv_channels: 8,
            conv_kernel: 3,
            cond_hidden: 64,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl FlowConfig {
    pub fn to_spec(&self, data_dim: usize, cond_dim: usize) -> FlowSpec {
        FlowSpec {
            data_dim,
            cond_dim,
            blocks: self.blocks,
            variant: self.variant,
            conv_channels: self.conv_channels,
            conv_kernel: self.conv_kernel,
            cond_hidden: self.cond_hidden,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastMethod {
    /// Sample a trained flow checkpoint.
    Flow,
    /// AR(24) recursive point forecast plus Gaussian residual noise.
    ArNoise,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub method: ForecastMethod,
    /// Checkpoint to sample (flow method only).
    pub checkpoint: String,
    pub scaler: String,
    /// Scenarios per test window.
    pub scenarios: usize,
    pub seed: u64,
    pub out_csv: String,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            method: ForecastMethod::Flow,
            checkpoint: "checkpoint.bin".into(),
            scaler: "scaler.json".into(),
            scenarios: 100,
            seed: 900,
            out_csv: "scenarios.csv".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMethod {
    pub name: String,
    pub scenarios_csv: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<EvalMethod>,
    /// Test-window index rendered in the fan charts.
    pub fan_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: vec![
                EvalMethod { name: "reinforced".into(), scenarios_csv: "scenarios_reinforced.csv".into() },
                EvalMethod { name: "vanilla".into(), scenarios_csv: "scenarios_vanilla.csv".into() },
                EvalMethod { name: "ar-noise".into(), scenarios_csv: "scenarios_ar-noise.csv".into() },
            ],
            fan_window: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub mean1: f64,
    pub mean2: f64,
    pub component_var: f64,
    pub grid_start: f64,
    pub grid_end: f64,
    pub grid_step: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            mean1: -1.0,
            mean2: 1.0,
            component_var: 0.1,
            grid_start: 0.001,
            grid_end: 4.0,
            grid_step: 0.001,
        }
    }
}

impl ToyConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.grid_step <= 0.0 || self.grid_end <= self.grid_start || self.grid_start <= 0.0 {
            return Err(Error::Config("invalid sigma-squared grid".into()));
        }
        let n = ((self.grid_end - self.grid_start) / self.grid_step).round() as usize + 1;
        Ok((0..n).map(|i| self.grid_start + i as f64 * self.grid_step).collect())
    }
}

/// The complete run configuration.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<String>,
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub forecast: ForecastConfig,
    pub eval: EvalConfig,
    pub toy: ToyConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("invalid config {}: {e}", p.display())))
            }
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.out.clone().unwrap_or_else(|| "out".into()))
    }

    /// Resolve a possibly relative artifact path against the output dir.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = PathBuf::from(path);
        if p.is_absolute() {
            p
        } else {
            self.out_dir().join(p)
        }
    }

    /// Write the effective configuration next to the command's outputs.
    pub fn echo(&self, command: &str) -> Result<()> {
        let dir = self.out_dir();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("resolved_config.{command}.json"));
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot encode config: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.households == 0 {
            return Err(Error::Config("at least one household is required".into()));
        }
        if self.data.h == 0 || self.data.k == 0 {
            return Err(Error::Config("window lengths h and k must be positive".into()));
        }
        if self.forecast.scenarios == 0 {
            return Err(Error::Config("at least one scenario per window is required".into()));
        }
        self.synth.validate()?;
        self.train.validate()?;
        self.flow.to_spec(self.data.k, self.data.h).validate()?;
        Ok(())
    }
}
