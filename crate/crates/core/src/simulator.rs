//! Monte-Carlo round simulation for split training and the FedAvg baseline.
//!
//! An SFL round is `E` local iterations followed by aggregation on the
//! server, whose own latency is not counted. Each device's round time is the
//! sum of its `E` compute draws plus `E` uploads of its split activation; the
//! round ends when the slowest device is done. A FedAvg round runs the whole
//! network over the local dataset and uploads the full parameter vector once.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bandwidth::{binary_search_allocation, BandwidthAllocation, DeviceLoad};
use crate::error::{Result, SflError};
use crate::joint::{alternating_optimize, JointSolution};
use crate::scenario::{
    ChannelMode, ComputeMode, Scenario, ScenarioConfig, SimulateConfig, SweepParameter, STREAM_ROUNDS,
};
use crate::split::format_f64;
use crate::wireless::{
    comm_latency, expected_compute_latency, rng_stream, sample_channel, sample_compute_latency,
    ChannelRealization, DeviceProfile, SimRng,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Sfl,
    Fedavg,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Sfl => "sfl",
            Scheme::Fedavg => "fedavg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOutcome {
    pub scheme: Scheme,
    pub per_device_compute: Vec<f64>,
    pub per_device_comm: Vec<f64>,
    pub round_latency: f64,
}

impl RoundOutcome {
    fn from_parts(scheme: Scheme, compute: Vec<f64>, comm: Vec<f64>) -> Self {
        let round_latency = compute
            .iter()
            .zip(&comm)
            .map(|(a, b)| a + b)
            .fold(f64::NEG_INFINITY, f64::max);
        RoundOutcome {
            scheme,
            per_device_compute: compute,
            per_device_comm: comm,
            round_latency,
        }
    }

    /// Index of the device that finished last.
    pub fn bottleneck(&self) -> usize {
        let mut best = 0;
        for k in 0..self.per_device_compute.len() {
            let t = self.per_device_compute[k] + self.per_device_comm[k];
            if t > self.per_device_compute[best] + self.per_device_comm[best] {
                best = k;
            }
        }
        best
    }
}

fn effective_device(dev: &DeviceProfile, sim: &SimulateConfig) -> DeviceProfile {
    if sim.deterministic {
        DeviceProfile {
            eps: f64::INFINITY,
            ..*dev
        }
    } else {
        *dev
    }
}

fn round_channel(
    scenario: &Scenario,
    k: usize,
    sim: &SimulateConfig,
    rng: &mut SimRng,
) -> Result<ChannelRealization> {
    match sim.channel_mode {
        ChannelMode::Static => Ok(scenario.channels[k]),
        ChannelMode::PerRound => sample_channel(&scenario.devices[k], &scenario.system, rng),
    }
}

fn front_end_compute(scenario: &Scenario, dev: &DeviceProfile, split: usize, sim: &SimulateConfig, rng: &mut SimRng) -> f64 {
    match sim.compute_mode {
        ComputeMode::Independent => {
            sample_compute_latency(dev, scenario.profile.macs_through(split) as f64, rng)
        }
        ComputeMode::Incremental => scenario.profile.layer_macs[..split]
            .iter()
            .map(|&m| sample_compute_latency(dev, m as f64, rng))
            .sum(),
    }
}

pub fn simulate_sfl_round(
    solution: &JointSolution,
    scenario: &Scenario,
    sim: &SimulateConfig,
    rng: &mut SimRng,
) -> Result<RoundOutcome> {
    let k = scenario.num_devices();
    let mut compute = Vec::with_capacity(k);
    let mut comm = Vec::with_capacity(k);
    for i in 0..k {
        let dev = effective_device(&scenario.devices[i], sim);
        let split = solution.splits[i];
        let ch = round_channel(scenario, i, sim, rng)?;
        let rate = solution.allocation.ratios[i] * ch.full_band_rate(&scenario.system);
        let per_iter_comm = comm_latency(scenario.transfer_bits(split), rate);
        let mut total = 0.0;
        for _ in 0..sim.local_iters {
            total += front_end_compute(scenario, &dev, split, sim, rng);
        }
        compute.push(total);
        comm.push(per_iter_comm * sim.local_iters as f64);
    }
    Ok(RoundOutcome::from_parts(Scheme::Sfl, compute, comm))
}

/// Per-round FedAvg workload and its bandwidth split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FedAvgPlan {
    pub model_bits: f64,
    pub macs_per_round: f64,
    pub allocation: BandwidthAllocation,
}

pub fn fedavg_plan(scenario: &Scenario, sim: &SimulateConfig, eps_tol: f64) -> Result<FedAvgPlan> {
    let model_bits = sim
        .model_bits
        .unwrap_or_else(|| scenario.architecture.model_size_bits()) as f64;
    let per_sample = scenario.profile.total_macs() as f64 / scenario.architecture.batch_size as f64;
    let macs_per_round = per_sample * sim.local_samples as f64;
    let loads: Vec<DeviceLoad> = scenario
        .devices
        .iter()
        .zip(&scenario.channels)
        .map(|(dev, ch)| DeviceLoad {
            data_bits: model_bits,
            compute_s: expected_compute_latency(dev, macs_per_round),
            full_band_rate: ch.full_band_rate(&scenario.system),
        })
        .collect();
    let allocation = binary_search_allocation(&loads, eps_tol, None)?;
    Ok(FedAvgPlan {
        model_bits,
        macs_per_round,
        allocation,
    })
}

pub fn simulate_fedavg_round(
    plan: &FedAvgPlan,
    scenario: &Scenario,
    sim: &SimulateConfig,
    rng: &mut SimRng,
) -> Result<RoundOutcome> {
    let k = scenario.num_devices();
    let mut compute = Vec::with_capacity(k);
    let mut comm = Vec::with_capacity(k);
    for i in 0..k {
        let dev = effective_device(&scenario.devices[i], sim);
        let ch = round_channel(scenario, i, sim, rng)?;
        let rate = plan.allocation.ratios[i] * ch.full_band_rate(&scenario.system);
        compute.push(sample_compute_latency(&dev, plan.macs_per_round, rng));
        comm.push(comm_latency(plan.model_bits, rate));
    }
    Ok(RoundOutcome::from_parts(Scheme::Fedavg, compute, comm))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    /// Mean compute and upload time of the bottleneck device.
    pub mean_compute: f64,
    pub mean_comm: f64,
}

impl LatencySummary {
    pub fn from_rounds(rounds: &[RoundOutcome]) -> Self {
        let n = rounds.len().max(1) as f64;
        let mut totals: Vec<f64> = rounds.iter().map(|r| r.round_latency).collect();
        totals.sort_by(f64::total_cmp);
        let pct = |q: f64| -> f64 {
            if totals.is_empty() {
                return f64::NAN;
            }
            let rank = ((q * totals.len() as f64).ceil() as usize).clamp(1, totals.len());
            totals[rank - 1]
        };
        let (mut comp, mut comm) = (0.0, 0.0);
        for r in rounds {
            let b = r.bottleneck();
            comp += r.per_device_compute[b];
            comm += r.per_device_comm[b];
        }
        LatencySummary {
            mean: rounds.iter().map(|r| r.round_latency).sum::<f64>() / n,
            p50: pct(0.5),
            p95: pct(0.95),
            mean_compute: comp / n,
            mean_comm: comm / n,
        }
    }
}

/// One grid point of a campaign, simulated under one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignRow {
    pub scheme: Scheme,
    pub parameter: String,
    pub value: f64,
    pub seed: u64,
    pub layer_bound: usize,
    pub expected_latency: f64,
    pub summary: Option<LatencySummary>,
    pub splits: Vec<usize>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRow {
    pub scheme: Scheme,
    pub parameter: String,
    pub value: f64,
    pub seed: u64,
    pub round: usize,
    pub compute_s: f64,
    pub comm_s: f64,
    pub total_s: f64,
    pub splits: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CampaignResult {
    pub rows: Vec<CampaignRow>,
    pub rounds: Vec<RoundRow>,
}

fn join_splits(splits: &[usize]) -> String {
    splits.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";")
}

impl CampaignResult {
    pub const SUMMARY_HEADER: [&'static str; 14] = [
        "scheme",
        "parameter",
        "value",
        "seed",
        "layer_bound",
        "expected_latency_s",
        "mean_s",
        "p50_s",
        "p95_s",
        "mean_compute_s",
        "mean_comm_s",
        "splits",
        "max_split",
        "status",
    ];

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::SUMMARY_HEADER)?;
        for r in &self.rows {
            let s = r.summary.clone().unwrap_or(LatencySummary {
                mean: f64::NAN,
                p50: f64::NAN,
                p95: f64::NAN,
                mean_compute: f64::NAN,
                mean_comm: f64::NAN,
            });
            w.write_record([
                r.scheme.as_str().to_string(),
                r.parameter.clone(),
                format_f64(r.value),
                r.seed.to_string(),
                r.layer_bound.to_string(),
                format_f64(r.expected_latency),
                format_f64(s.mean),
                format_f64(s.p50),
                format_f64(s.p95),
                format_f64(s.mean_compute),
                format_f64(s.mean_comm),
                join_splits(&r.splits),
                r.splits.iter().max().copied().unwrap_or(0).to_string(),
                r.status.clone(),
            ])?;
        }
        w.flush().map_err(|e| SflError::io("summary csv", e))?;
        Ok(())
    }

    pub fn write_rounds_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scheme", "parameter", "value", "seed", "round", "compute_s", "comm_s", "total_s", "splits"])?;
        for r in &self.rounds {
            w.write_record([
                r.scheme.as_str().to_string(),
                r.parameter.clone(),
                format_f64(r.value),
                r.seed.to_string(),
                r.round.to_string(),
                format_f64(r.compute_s),
                format_f64(r.comm_s),
                format_f64(r.total_s),
                join_splits(&r.splits),
            ])?;
        }
        w.flush().map_err(|e| SflError::io("rounds csv", e))?;
        Ok(())
    }
}

fn parameter_name(p: Option<SweepParameter>) -> &'static str {
    match p {
        None => "none",
        Some(SweepParameter::Distance) => "distance",
        Some(SweepParameter::A) => "a",
        Some(SweepParameter::FrequencyGhz) => "frequency_ghz",
        Some(SweepParameter::LHat) => "l_hat",
    }
}

struct PointOutput {
    rows: Vec<CampaignRow>,
    rounds: Vec<RoundRow>,
}

fn run_point(
    cfg: &ScenarioConfig,
    parameter: Option<SweepParameter>,
    value: f64,
    n_rounds: usize,
    seeds: &[u64],
) -> Result<PointOutput> {
    let point_cfg = match parameter {
        Some(p) => cfg.with_override(p, value)?,
        None => cfg.clone(),
    };
    let scenario = point_cfg.build()?;
    let sim = &point_cfg.simulate;
    let opt = &point_cfg.optimizer;
    let solution = alternating_optimize(&scenario, opt.n_iter, opt.eps_tol)?;
    let fedavg = if sim.fedavg {
        Some(fedavg_plan(&scenario, sim, opt.eps_tol)?)
    } else {
        None
    };
    let name = parameter_name(parameter).to_string();

    let mut out = PointOutput {
        rows: Vec::new(),
        rounds: Vec::new(),
    };
    for &seed in seeds {
        let mut schemes = vec![Scheme::Sfl];
        if fedavg.is_some() {
            schemes.push(Scheme::Fedavg);
        }
        for scheme in schemes {
            let stream = STREAM_ROUNDS + if scheme == Scheme::Sfl { 0 } else { 1 };
            let mut rng = rng_stream(seed, stream);
            let mut outcomes = Vec::with_capacity(n_rounds);
            for _ in 0..n_rounds {
                outcomes.push(match scheme {
                    Scheme::Sfl => simulate_sfl_round(&solution, &scenario, sim, &mut rng)?,
                    Scheme::Fedavg => simulate_fedavg_round(fedavg.as_ref().unwrap(), &scenario, sim, &mut rng)?,
                });
            }
            let (splits, expected) = match scheme {
                Scheme::Sfl => (solution.splits.clone(), solution.expected_total_latency),
                Scheme::Fedavg => (
                    vec![scenario.profile.num_layers(); scenario.num_devices()],
                    fedavg.as_ref().unwrap().allocation.tau_star,
                ),
            };
            if sim.per_round_rows {
                for (r, o) in outcomes.iter().enumerate() {
                    let b = o.bottleneck();
                    out.rounds.push(RoundRow {
                        scheme,
                        parameter: name.clone(),
                        value,
                        seed,
                        round: r,
                        compute_s: o.per_device_compute[b],
                        comm_s: o.per_device_comm[b],
                        total_s: o.round_latency,
                        splits: splits.clone(),
                    });
                }
            }
            out.rows.push(CampaignRow {
                scheme,
                parameter: name.clone(),
                value,
                seed,
                layer_bound: scenario.layer_bound,
                expected_latency: expected,
                summary: Some(LatencySummary::from_rounds(&outcomes)),
                splits,
                status: "ok".into(),
            });
        }
    }
    Ok(out)
}

/// Optimizes and simulates every grid point of the configured sweep (or the
/// base scenario when no sweep is set). A failing grid point produces one
/// row carrying the error and does not stop the campaign.
pub fn run_campaign(cfg: &ScenarioConfig, n_rounds: usize, seeds: &[u64]) -> CampaignResult {
    let (parameter, values) = match &cfg.simulate.sweep {
        Some(s) => (Some(s.parameter), s.values.clone()),
        None => (None, vec![f64::NAN]),
    };
    let outputs: Vec<(f64, Result<PointOutput>)> = values
        .par_iter()
        .map(|&v| (v, run_point(cfg, parameter, v, n_rounds, seeds)))
        .collect();

    let mut result = CampaignResult::default();
    for (value, output) in outputs {
        match output {
            Ok(mut o) => {
                result.rows.append(&mut o.rows);
                result.rounds.append(&mut o.rounds);
            }
            Err(e) => result.rows.push(CampaignRow {
                scheme: Scheme::Sfl,
                parameter: parameter_name(parameter).to_string(),
                value,
                seed: seeds.first().copied().unwrap_or(0),
                layer_bound: 0,
                expected_latency: f64::NAN,
                summary: None,
                splits: Vec::new(),
                status: format!("error: {e}"),
            }),
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::expected_total_latency;

    fn small_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.fleet.generate.count = 4;
        cfg.constraint.l_hat = Some(8);
        cfg
    }

    #[test]
    fn deterministic_round_equals_expected_latency_analogue() {
        let mut cfg = small_config();
        cfg.simulate.deterministic = true;
        cfg.simulate.local_iters = 1;
        let scenario = cfg.build().unwrap();
        let sol = alternating_optimize(&scenario, 10, 1e-3).unwrap();
        // Deterministic analogue: compute is exactly a * c.
        let mut det = scenario.clone();
        for d in &mut det.devices {
            d.eps = f64::INFINITY;
        }
        let expected = expected_total_latency(&det, &sol.splits, &sol.allocation.ratios);
        let mut rng = rng_stream(5, 0);
        let r = simulate_sfl_round(&sol, &scenario, &cfg.simulate, &mut rng).unwrap();
        assert!((r.round_latency - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn same_seed_same_round() {
        let cfg = small_config();
        let scenario = cfg.build().unwrap();
        let sol = alternating_optimize(&scenario, 10, 1e-3).unwrap();
        let run = || {
            let mut rng = rng_stream(42, 0);
            simulate_sfl_round(&sol, &scenario, &cfg.simulate, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shift_bound_holds_every_round() {
        let mut cfg = small_config();
        cfg.simulate.compute_mode = ComputeMode::Incremental;
        let scenario = cfg.build().unwrap();
        let sol = alternating_optimize(&scenario, 10, 1e-3).unwrap();
        let mut rng = rng_stream(1, 0);
        for _ in 0..200 {
            let r = simulate_sfl_round(&sol, &scenario, &cfg.simulate, &mut rng).unwrap();
            for k in 0..scenario.num_devices() {
                let floor = scenario.devices[k].a
                    * scenario.profile.macs_through(sol.splits[k]) as f64
                    * cfg.simulate.local_iters as f64;
                assert!(r.per_device_compute[k] >= floor * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn fedavg_upload_of_200_mbytes() {
        let mut cfg = ScenarioConfig::default();
        cfg.fleet.devices = vec![crate::scenario::DeviceEntry {
            a: 1e-9,
            eps: crate::scenario::EpsSpec::default(),
            power_dbm: 10.0,
            distance_m: 100.0,
        }];
        let mut scenario = cfg.build().unwrap();
        // Force a 20 Mbit/s full-band link.
        scenario.channels[0] = ChannelRealization::with_snr(1.0);
        let mut sim = cfg.simulate.clone();
        sim.model_bits = Some(200 * 8_000_000);
        let plan = fedavg_plan(&scenario, &sim, 1e-3).unwrap();
        let mut rng = rng_stream(1, 0);
        let r = simulate_fedavg_round(&plan, &scenario, &sim, &mut rng).unwrap();
        let b = plan.allocation.ratios[0];
        assert!((r.per_device_comm[0] * b - 80.0).abs() < 1e-9);
        assert!(b > 0.999);

        sim.model_bits = Some(0);
        let plan = fedavg_plan(&scenario, &sim, 1e-3).unwrap();
        let r = simulate_fedavg_round(&plan, &scenario, &sim, &mut rng).unwrap();
        assert_eq!(r.per_device_comm[0], 0.0);
    }

    #[test]
    fn failing_grid_point_is_recorded() {
        let mut cfg = small_config();
        cfg.simulate.sweep = Some(crate::scenario::SweepConfig {
            parameter: SweepParameter::Distance,
            values: vec![200.0, -1.0, 400.0],
        });
        cfg.simulate.fedavg = false;
        let res = run_campaign(&cfg, 5, &[1]);
        assert_eq!(res.rows.len(), 3);
        assert!(res.rows[1].status.starts_with("error"));
        assert_eq!(res.rows[0].status, "ok");
        assert_eq!(res.rows[2].status, "ok");
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let rounds: Vec<RoundOutcome> = (1..=20)
            .map(|i| RoundOutcome::from_parts(Scheme::Sfl, vec![i as f64], vec![0.0]))
            .collect();
        let s = LatencySummary::from_rounds(&rounds);
        assert_eq!(s.p50, 10.0);
        assert_eq!(s.p95, 19.0);
        assert_eq!(s.mean, 10.5);
    }
}
