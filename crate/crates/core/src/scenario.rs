//! Scenario configuration and the resolved runtime scenario.
//!
//! Configs are TOML with one table per subsystem; every table and field is
//! optional and falls back to the defaults documented in the README.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::convergence::ConvergenceParams;
use crate::error::{Result, SflError};
use crate::profiler::{builtin_architecture, profile, NetworkArchitecture, NetworkProfile};
use crate::split::layer_bound;
use crate::trainer::TrainConfig;
use crate::wireless::{
    mean_channel, rng_stream, sample_channel, ChannelRealization, DeviceProfile, NoiseModel,
    SystemParams,
};

/// Random stream ids carved out of the scenario seed.
pub const STREAM_FLEET: u64 = 1;
pub const STREAM_CHANNEL: u64 = 2;
pub const STREAM_ROUNDS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    /// One Rayleigh draw per device, fixed for the planning horizon.
    #[default]
    Rayleigh,
    /// Path loss only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
    pub noise_model: NoiseModel,
    pub seed: u64,
    pub fading: Fading,
    /// Count the gradient download as a second transfer of the activation size.
    pub downlink: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            bandwidth_hz: 20e6,
            noise_dbm: -114.0,
            noise_model: NoiseModel::TotalPower,
            seed: 1,
            fading: Fading::Rayleigh,
            downlink: false,
        }
    }
}

/// Fluctuation rate: a number in MACs/s, or `"<x>/a"` for `x / a_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSpec {
    Value(f64),
    Shorthand(String),
}

impl Default for EpsSpec {
    fn default() -> Self {
        EpsSpec::Shorthand("2/a".into())
    }
}

impl EpsSpec {
    pub fn resolve(&self, a: f64, field: &str) -> Result<f64> {
        match self {
            EpsSpec::Value(v) => Ok(*v),
            EpsSpec::Shorthand(s) => {
                let numerator = s
                    .trim()
                    .strip_suffix("/a")
                    .and_then(|n| n.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        SflError::config(field, format!("expected a number or \"<x>/a\", got \"{s}\""))
                    })?;
                Ok(numerator / a)
            }
        }
    }
}

fn default_power() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub a: f64,
    #[serde(default)]
    pub eps: EpsSpec,
    #[serde(default = "default_power")]
    pub power_dbm: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetGenerator {
    pub count: usize,
    pub a_range: [f64; 2],
    pub eps: EpsSpec,
    pub power_dbm: f64,
    pub distance_range: [f64; 2],
}

impl Default for FleetGenerator {
    fn default() -> Self {
        FleetGenerator {
            count: 20,
            a_range: [0.2e-9, 1e-9],
            eps: EpsSpec::default(),
            power_dbm: 10.0,
            distance_range: [100.0, 500.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    /// Explicit devices; when non-empty the generator is ignored.
    pub devices: Vec<DeviceEntry>,
    pub generate: FleetGenerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub batch_size: Option<u64>,
    pub element_bits: Option<u64>,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            preset: Some("alexnet20".into()),
            file: None,
            batch_size: None,
            element_bits: None,
        }
    }
}

/// Split-depth cap: either `l_hat` directly, or `phi_sq` and `phi_hat_sq`.
/// With neither, every layer is allowed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub l_hat: Option<usize>,
    pub phi_sq: Option<f64>,
    pub phi_hat_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_iter: usize,
    pub eps_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_iter: 10,
            eps_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Use the planning channel for every round.
    #[default]
    Static,
    /// Draw new Rayleigh fading for every device each round.
    PerRound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeMode {
    /// One shifted-exponential draw for the whole front-end.
    #[default]
    Independent,
    /// Sum of per-layer draws, so that cumulative times are correlated.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Mean device distance in meters.
    Distance,
    /// Seconds per MAC, applied to every device.
    A,
    /// CPU frequency in GHz at one MAC per cycle (`a = 1e-9 / f`).
    FrequencyGhz,
    /// Split-depth cap.
    LHat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Local iterations `E` per round.
    pub local_iters: usize,
    pub n_rounds: usize,
    pub seeds: Vec<u64>,
    pub fedavg: bool,
    /// Samples FedAvg processes per round.
    pub local_samples: u64,
    /// Override for the FedAvg upload size; defaults to the model's parameter bits.
    pub model_bits: Option<u64>,
    pub channel_mode: ChannelMode,
    pub compute_mode: ComputeMode,
    /// Remove the exponential tail of compute times.
    pub deterministic: bool,
    /// Write every round rather than only the per-grid-point summary.
    pub per_round_rows: bool,
    pub sweep: Option<SweepConfig>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            local_iters: 5,
            n_rounds: 1000,
            seeds: vec![1],
            fedavg: true,
            local_samples: 1500,
            model_bits: None,
            channel_mode: ChannelMode::Static,
            compute_mode: ComputeMode::Independent,
            deterministic: false,
            per_round_rows: false,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub params: ConvergenceParams,
    pub t_values: Vec<u64>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            params: ConvergenceParams::default(),
            t_values: vec![1, 10, 100, 1_000, 10_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemConfig,
    pub fleet: FleetConfig,
    pub architecture: ArchitectureConfig,
    pub constraint: ConstraintConfig,
    pub optimizer: OptimizerConfig,
    pub simulate: SimulateConfig,
    pub train: TrainConfig,
    pub bound: BoundConfig,
}

/// Resolved inputs for planning and simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub system: SystemParams,
    pub devices: Vec<DeviceProfile>,
    pub channels: Vec<ChannelRealization>,
    pub architecture: NetworkArchitecture,
    pub profile: NetworkProfile,
    pub layer_bound: usize,
    pub downlink: bool,
}

impl Scenario {
    /// Bits moved over the air per iteration when splitting after `layer`.
    pub fn transfer_bits(&self, layer: usize) -> f64 {
        let up = self.profile.data_bits_at(layer) as f64;
        if self.downlink { 2.0 * up } else { up }
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().to_string())
                .map(|line| format!("config line {line}"))
                .unwrap_or_else(|| "config".into());
            SflError::config(field, e.message().to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SflError::io(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Architecture files are resolved relative to the config file.
        if let (Some(file), Some(dir)) = (&cfg.architecture.file, path.parent()) {
            if file.is_relative() {
                cfg.architecture.file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn load_architecture(&self) -> Result<NetworkArchitecture> {
        let a = &self.architecture;
        let mut arch = match (&a.file, &a.preset) {
            (Some(file), _) => {
                if !file.exists() {
                    return Err(SflError::config(
                        "architecture.file",
                        format!("{} does not exist", file.display()),
                    ));
                }
                NetworkArchitecture::from_file(file)?
            }
            (None, Some(name)) => builtin_architecture(name.parse()?),
            (None, None) => {
                return Err(SflError::config("architecture", "set either `preset` or `file`"))
            }
        };
        if let Some(m) = a.batch_size {
            arch.batch_size = m;
        }
        if let Some(bits) = a.element_bits {
            arch.element_bits = bits;
        }
        arch.validate()?;
        Ok(arch)
    }

    fn device_profiles(&self) -> Result<Vec<DeviceProfile>> {
        let fleet = &self.fleet;
        let wrap = |field: String| move |e: SflError| match e {
            SflError::Domain(msg) => SflError::config(field.clone(), msg),
            other => other,
        };
        if !fleet.devices.is_empty() {
            return fleet
                .devices
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    let eps = d.eps.resolve(d.a, &format!("fleet.devices[{k}].eps"))?;
                    DeviceProfile::new(d.a, eps, d.power_dbm, d.distance_m)
                        .map_err(wrap(format!("fleet.devices[{k}]")))
                })
                .collect();
        }
        let g = &fleet.generate;
        if g.count == 0 {
            return Err(SflError::config("fleet.generate.count", "must be >= 1"));
        }
        for (name, r) in [("a_range", g.a_range), ("distance_range", g.distance_range)] {
            if !(r[0] <= r[1] && r[0] > 0.0) {
                return Err(SflError::config(
                    format!("fleet.generate.{name}"),
                    format!("expected 0 < lo <= hi, got [{}, {}]", r[0], r[1]),
                ));
            }
        }
        let mut rng = rng_stream(self.system.seed, STREAM_FLEET);
        (0..g.count)
            .map(|k| {
                let ua: f64 = rng.random();
                let ud: f64 = rng.random();
                let a = g.a_range[0] + ua * (g.a_range[1] - g.a_range[0]);
                let d = g.distance_range[0] + ud * (g.distance_range[1] - g.distance_range[0]);
                let eps = g.eps.resolve(a, "fleet.generate.eps")?;
                DeviceProfile::new(a, eps, g.power_dbm, d).map_err(wrap(format!("fleet.generate (device {k})")))
            })
            .collect()
    }

    fn resolve_layer_bound(&self, k: usize, total: usize) -> Result<usize> {
        let c = &self.constraint;
        match (c.l_hat, c.phi_sq, c.phi_hat_sq) {
            (Some(l), _, _) => {
                if l == 0 {
                    return Err(SflError::Infeasible(
                        "constraint.l_hat = 0 excludes every split point".into(),
                    ));
                }
                Ok(l.min(total))
            }
            (None, Some(phi), Some(phi_hat)) => layer_bound(phi, phi_hat, k, total),
            (None, None, None) => Ok(total),
            _ => Err(SflError::config(
                "constraint",
                "phi_sq and phi_hat_sq must be given together",
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.system.bandwidth_hz > 0.0) {
            return Err(SflError::config("system.bandwidth_hz", "must be positive"));
        }
        if !(self.optimizer.eps_tol > 0.0 && self.optimizer.eps_tol < 0.1) {
            return Err(SflError::config("optimizer.eps_tol", "must lie in (0, 0.1)"));
        }
        if self.optimizer.n_iter == 0 {
            return Err(SflError::config("optimizer.n_iter", "must be >= 1"));
        }
        if self.simulate.local_iters == 0 {
            return Err(SflError::config("simulate.local_iters", "must be >= 1"));
        }
        if self.simulate.seeds.is_empty() {
            return Err(SflError::config("simulate.seeds", "must not be empty"));
        }
        if let Some(sweep) = &self.simulate.sweep {
            if sweep.values.is_empty() {
                return Err(SflError::config("simulate.sweep.values", "must not be empty"));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Scenario> {
        self.validate()?;
        let architecture = self.load_architecture()?;
        let profile = profile(&architecture);
        let devices = self.device_profiles()?;
        let system = SystemParams {
            bandwidth_hz: self.system.bandwidth_hz,
            noise_dbm: self.system.noise_dbm,
            noise_model: self.system.noise_model,
            num_devices: devices.len(),
            seed: self.system.seed,
        };
        let mut rng = rng_stream(self.system.seed, STREAM_CHANNEL);
        let channels = devices
            .iter()
            .map(|d| match self.system.fading {
                Fading::Rayleigh => sample_channel(d, &system, &mut rng),
                Fading::None => mean_channel(d, &system),
            })
            .collect::<Result<Vec<_>>>()?;
        let layer_bound = self.resolve_layer_bound(devices.len(), profile.num_layers())?;
        Ok(Scenario {
            system,
            devices,
            channels,
            architecture,
            profile,
            layer_bound,
            downlink: self.system.downlink,
        })
    }

    /// Copy of this config with one sweep parameter set to `value`.
    pub fn with_override(&self, parameter: SweepParameter, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        match parameter {
            SweepParameter::Distance => {
                if !(value > 0.0) {
                    return Err(SflError::config("simulate.sweep.values", "distances must be positive"));
                }
                if cfg.fleet.devices.is_empty() {
                    let r = &mut cfg.fleet.generate.distance_range;
                    let scale = value / (0.5 * (r[0] + r[1]));
                    *r = [r[0] * scale, r[1] * scale];
                } else {
                    let mean = cfg.fleet.devices.iter().map(|d| d.distance_m).sum::<f64>()
                        / cfg.fleet.devices.len() as f64;
                    for d in &mut cfg.fleet.devices {
                        d.distance_m *= value / mean;
                    }
                }
            }
            SweepParameter::A | SweepParameter::FrequencyGhz => {
                let a = if parameter == SweepParameter::A { value } else { 1e-9 / value };
                if !(a > 0.0 && a.is_finite()) {
                    return Err(SflError::config("simulate.sweep.values", "compute speed must be positive"));
                }
                if cfg.fleet.devices.is_empty() {
                    cfg.fleet.generate.a_range = [a, a];
                } else {
                    for d in &mut cfg.fleet.devices {
                        d.a = a;
                    }
                }
            }
            SweepParameter::LHat => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(SflError::config("simulate.sweep.values", "l_hat values must be positive integers"));
                }
                cfg.constraint = ConstraintConfig {
                    l_hat: Some(value as usize),
                    ..ConstraintConfig::default()
                };
            }
        }
        Ok(cfg)
    }
}
