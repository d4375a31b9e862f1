//! Experiment configuration: one optional block per command.

use std::path::Path;

use fdavp_core::design::{DesignDensity, WeightConfig};
use fdavp_core::estimate::{EstimationConfig, K1Choice};
use fdavp_core::experiments::{Experiment, SweepVariable};
use fdavp_core::inference::{BandMethod, SigmaMode, SubsampleScheme, VarthetaMode};
use fdavp_core::regularity::{NeighborMode, RegularityConfig};
use fdavp_core::simulate::SimulationSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub simulate: Option<SimulationSpec>,
    #[serde(default)]
    pub estimate: Option<EstimationConfig>,
    #[serde(default)]
    pub infer: Option<InferConfig>,
    #[serde(default)]
    pub regularity: Option<RegularityBlock>,
    #[serde(default)]
    pub bench: Option<BenchConfig>,
}

/// Where the Gaussian band is centred.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Centering {
    /// `V_L(mu)` at the model's level.
    #[default]
    Vp,
    /// `mu` itself, refitting at the undersmoothed level for exponent `alpha`.
    Mean { alpha: f64 },
}

fn default_draws() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

fn plug_in() -> SigmaMode {
    SigmaMode::PlugIn
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianOptions {
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default = "plug_in")]
    pub sigma: SigmaMode,
    #[serde(default)]
    pub quadrature: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default = "default_true")]
    pub refinement: bool,
    #[serde(default)]
    pub centering: Centering,
}

impl Default for GaussianOptions {
    fn default() -> Self {
        GaussianOptions {
            n_draws: default_draws(),
            sigma: SigmaMode::PlugIn,
            quadrature: None,
            rho: None,
            refinement: true,
            centering: Centering::Vp,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn auto() -> VarthetaMode {
    VarthetaMode::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsamplingOptions {
    pub alpha: f64,
    #[serde(default = "one")]
    pub c_vp: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(default)]
    pub rho: Option<f64>,
    pub n_subsamples: usize,
    #[serde(default = "auto")]
    pub vartheta: VarthetaMode,
    #[serde(default)]
    pub scheme: SubsampleScheme,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub method: BandMethod,
    pub level: f64,
    pub density: DesignDensity,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub weights: WeightConfig,
    #[serde(default)]
    pub gaussian: GaussianOptions,
    #[serde(default)]
    pub subsampling: Option<SubsamplingOptions>,
}

fn default_tau() -> f64 {
    RegularityConfig::default().tau
}

fn default_tau_prime() -> f64 {
    RegularityConfig::default().tau_prime
}

fn default_r_prime() -> f64 {
    RegularityConfig::default().r_prime
}

fn default_cap() -> f64 {
    RegularityConfig::default().cap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityBlock {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_tau_prime")]
    pub tau_prime: f64,
    #[serde(default = "default_r_prime")]
    pub r_prime: f64,
    #[serde(default)]
    pub neighbor_mode: NeighborMode,
    #[serde(default = "default_cap")]
    pub cap: f64,
    #[serde(default)]
    pub cells: Option<usize>,
    /// Enables the plug-in level `L*(alpha_hat)`.
    #[serde(default, rename = "K1")]
    pub k1: Option<K1Choice>,
    #[serde(default = "one")]
    pub c_vp: f64,
    /// Needed for a plug-in `K1`; uniform by default.
    #[serde(default)]
    pub density: Option<DesignDensity>,
}

impl RegularityBlock {
    pub fn tuning(&self) -> RegularityConfig {
        RegularityConfig {
            tau: self.tau,
            tau_prime: self.tau_prime,
            r_prime: self.r_prime,
            neighbor_mode: self.neighbor_mode,
            cap: self.cap,
            cells: self.cells,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub experiment: Experiment,
    pub replications: usize,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The config with defaults expanded, as embedded in every output.
    pub fn resolved(&self, seed: u64) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("plain data");
        v["seed"] = seed.into();
        v
    }
}

/// The block a command needs, or a config error naming it.
pub fn require<'a, T>(block: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing `{name}` block in config")))
}
