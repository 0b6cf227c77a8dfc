//! Alternating optimization of split points and bandwidth shares.
//!
//! Starting from a uniform bandwidth split, each pass picks every device's
//! split point under the current shares, then re-solves the shares for those
//! split points. The loop stops as soon as a pass reproduces any earlier
//! split vector or after `n_iter` passes, and returns the best pass seen.

use std::io::Write;

use serde::Serialize;

use crate::bandwidth::{binary_search_allocation, BandwidthAllocation, DeviceLoad};
use crate::error::Result;
use crate::scenario::Scenario;
use crate::split::{backward_induction, comm_latencies, format_f64, SplitPolicy};
use crate::wireless::{comm_latency, expected_compute_latency};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointSolution {
    pub splits: Vec<usize>,
    pub allocation: BandwidthAllocation,
    pub expected_total_latency: f64,
    /// Best objective seen after each pass.
    pub trace: Vec<f64>,
    /// Objective of each pass as computed.
    pub raw_trace: Vec<f64>,
    /// Split vector produced by each pass.
    pub split_history: Vec<Vec<usize>>,
    /// The last pass reproduced the one before it.
    pub converged: bool,
    /// Policies behind `splits`.
    pub policies: Vec<SplitPolicy>,
}

impl JointSolution {
    pub fn iterations(&self) -> usize {
        self.raw_trace.len()
    }

    pub const CSV_HEADER: [&'static str; 8] = [
        "device",
        "split",
        "layer_bound",
        "ratio",
        "compute_s",
        "comm_s",
        "total_s",
        "split_prob",
    ];

    pub fn write_csv<W: Write>(&self, scenario: &Scenario, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        let loads = device_loads(scenario, &self.splits);
        for (k, load) in loads.iter().enumerate() {
            let b = self.allocation.ratios[k];
            let total = load.finish_time(b);
            let split = self.splits[k];
            w.write_record([
                k.to_string(),
                split.to_string(),
                scenario.layer_bound.to_string(),
                format_f64(b),
                format_f64(load.compute_s),
                format_f64(total - load.compute_s),
                format_f64(total),
                format_f64(self.policies[k].split_probs[split - 1]),
            ])?;
        }
        w.flush().map_err(|e| crate::error::SflError::io("solution csv", e))?;
        Ok(())
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "objective_s", "best_s", "splits"])?;
        for i in 0..self.iterations() {
            let splits: Vec<String> = self.split_history[i].iter().map(|s| s.to_string()).collect();
            w.write_record([
                (i + 1).to_string(),
                format_f64(self.raw_trace[i]),
                format_f64(self.trace[i]),
                splits.join(";"),
            ])?;
        }
        w.flush().map_err(|e| crate::error::SflError::io("trace csv", e))?;
        Ok(())
    }
}

/// Split policy of every device for the given bandwidth shares.
pub fn split_step(scenario: &Scenario, ratios: &[f64]) -> Result<Vec<SplitPolicy>> {
    scenario
        .devices
        .iter()
        .zip(&scenario.channels)
        .zip(ratios)
        .map(|((dev, ch), &b)| {
            let rate = b * ch.full_band_rate(&scenario.system);
            let comm = comm_latencies(&scenario.profile, rate, scenario.layer_bound);
            backward_induction(&scenario.profile, dev, &comm, scenario.layer_bound)
        })
        .collect()
}

/// Allocation inputs for fixed split points, using expected compute times.
pub fn device_loads(scenario: &Scenario, splits: &[usize]) -> Vec<DeviceLoad> {
    scenario
        .devices
        .iter()
        .zip(&scenario.channels)
        .zip(splits)
        .map(|((dev, ch), &l)| DeviceLoad {
            data_bits: scenario.transfer_bits(l),
            compute_s: expected_compute_latency(dev, scenario.profile.macs_through(l) as f64),
            full_band_rate: ch.full_band_rate(&scenario.system),
        })
        .collect()
}

pub fn allocation_step(scenario: &Scenario, splits: &[usize], eps_tol: f64) -> Result<BandwidthAllocation> {
    binary_search_allocation(&device_loads(scenario, splits), eps_tol, None)
}

/// Latency of the slowest device: expected compute at its split plus upload
/// time at its share.
pub fn expected_total_latency(scenario: &Scenario, splits: &[usize], ratios: &[f64]) -> f64 {
    scenario
        .devices
        .iter()
        .zip(&scenario.channels)
        .zip(splits.iter().zip(ratios))
        .map(|((dev, ch), (&l, &b))| {
            let compute = expected_compute_latency(dev, scenario.profile.macs_through(l) as f64);
            compute + comm_latency(scenario.transfer_bits(l), b * ch.full_band_rate(&scenario.system))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn alternating_optimize(scenario: &Scenario, n_iter: usize, eps_tol: f64) -> Result<JointSolution> {
    let k = scenario.devices.len();
    let mut ratios = vec![1.0 / k as f64; k];
    let mut best: Option<(Vec<usize>, BandwidthAllocation, f64, Vec<SplitPolicy>)> = None;
    let mut trace = Vec::new();
    let mut raw_trace = Vec::new();
    let mut history: Vec<Vec<usize>> = Vec::new();
    let mut converged = false;

    for _ in 0..n_iter.max(1) {
        let policies = split_step(scenario, &ratios)?;
        let splits: Vec<usize> = policies.iter().map(|p| p.chosen_split).collect();
        let allocation = allocation_step(scenario, &splits, eps_tol)?;
        let objective = expected_total_latency(scenario, &splits, &allocation.ratios);
        raw_trace.push(objective);
        if best.as_ref().is_none_or(|b| objective < b.2) {
            best = Some((splits.clone(), allocation.clone(), objective, policies));
        }
        trace.push(best.as_ref().map(|b| b.2).unwrap_or(objective));
        // Each pass depends only on the previous split vector, so any repeat
        // means the remaining passes would cycle through seen solutions.
        let fixed_point = history.last() == Some(&splits);
        let repeated = history.contains(&splits);
        history.push(splits);
        if repeated {
            converged = fixed_point;
            break;
        }
        ratios = allocation.ratios;
    }

    let (splits, allocation, objective, policies) = best.expect("at least one pass runs");
    Ok(JointSolution {
        splits,
        allocation,
        expected_total_latency: objective,
        trace,
        raw_trace,
        split_history: history,
        converged,
        policies,
    })
}
