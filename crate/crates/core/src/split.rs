//! Per-device split-point selection by backward induction.
//!
//! The device runs layers in order and observes its cumulative compute time
//! after each one. At layer `l` it stops and uploads if that time beats the
//! threshold `E[V_{l+1}] - tau_cm_l`, the expected cost of continuing minus
//! the cost of uploading here. Layer `L_hat` always stops.
//!
//! Compute times at different layers are modeled as independent
//! shifted-exponential draws, one per layer.

use std::io::Write;

use serde::Serialize;

use crate::error::{Result, SflError};
use crate::profiler::NetworkProfile;
use crate::wireless::{expected_compute_latency, DeviceProfile};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPolicy {
    /// Stop threshold per layer; the last entry is `+inf` (always stop).
    pub thresholds: Vec<f64>,
    /// `E[V_l]`: expected total latency of following the policy from layer `l`.
    pub expected_values: Vec<f64>,
    /// Probability that the policy stops at each layer.
    pub split_probs: Vec<f64>,
    /// 1-based most likely stopping layer.
    pub chosen_split: usize,
}

impl SplitPolicy {
    pub fn layer_bound(&self) -> usize {
        self.thresholds.len()
    }

    pub fn write_csv<W: Write>(&self, device: usize, out: &mut csv::Writer<W>) -> Result<()> {
        for l in 0..self.layer_bound() {
            out.write_record([
                device.to_string(),
                (l + 1).to_string(),
                format_f64(self.thresholds[l]),
                format_f64(self.expected_values[l]),
                format_f64(self.split_probs[l]),
                u8::from(l + 1 == self.chosen_split).to_string(),
            ])?;
        }
        Ok(())
    }

    pub const CSV_HEADER: [&'static str; 6] =
        ["device", "layer", "threshold_s", "expected_value_s", "split_prob", "chosen"];
}

pub(crate) fn format_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

/// Largest split layer allowed by the convergence constraint
/// `l * (1 - 1/K) * phi_sq <= phi_hat_sq`, capped at `total_layers`.
pub fn layer_bound(phi_sq: f64, phi_hat_sq: f64, num_devices: usize, total_layers: usize) -> Result<usize> {
    if num_devices == 0 {
        return Err(SflError::config("num_devices", "must be >= 1"));
    }
    if num_devices == 1 {
        return Ok(total_layers);
    }
    if !(phi_sq > 0.0 && phi_hat_sq > 0.0) {
        return Err(SflError::config(
            "convergence.phi_sq",
            "phi_sq and phi_hat_sq must be positive",
        ));
    }
    let shrink = 1.0 - 1.0 / num_devices as f64;
    let raw = (phi_hat_sq / (shrink * phi_sq)).floor();
    if raw < 1.0 {
        return Err(SflError::Infeasible(format!(
            "layer bound floor({phi_hat_sq} / ({shrink} * {phi_sq})) = {raw} excludes every split point"
        )));
    }
    Ok(if raw >= total_layers as f64 { total_layers } else { raw as usize })
}

/// Upload latency of every candidate split for a link of `rate` bits/s.
pub fn comm_latencies(profile: &NetworkProfile, rate: f64, upto: usize) -> Vec<f64> {
    (1..=upto)
        .map(|l| crate::wireless::comm_latency(profile.data_bits_at(l) as f64, rate))
        .collect()
}

/// Probability of *not* stopping at layer `l` given its threshold, i.e.
/// `P[tau_cp_l >= threshold]`, clamped to `[0, 1]`.
pub fn survival(dev: &DeviceProfile, macs: f64, threshold: f64) -> f64 {
    let floor = dev.a * macs;
    if threshold <= floor {
        return 1.0;
    }
    if macs <= 0.0 {
        return 0.0;
    }
    (-(dev.eps / macs) * (threshold - floor)).exp().clamp(0.0, 1.0)
}

/// Solves the stopping problem for one device over layers `1..=layer_bound`.
pub fn backward_induction(
    profile: &NetworkProfile,
    dev: &DeviceProfile,
    comm: &[f64],
    layer_bound: usize,
) -> Result<SplitPolicy> {
    if layer_bound == 0 || layer_bound > profile.num_layers() {
        return Err(SflError::Domain(format!(
            "layer bound {layer_bound} outside 1..={}",
            profile.num_layers()
        )));
    }
    if comm.len() < layer_bound {
        return Err(SflError::Domain(format!(
            "{} upload latencies supplied for layer bound {layer_bound}",
            comm.len()
        )));
    }
    let n = layer_bound;
    let mut thresholds = vec![f64::INFINITY; n];
    let mut values = vec![0.0; n];
    let mut survive = vec![1.0; n - 1];

    values[n - 1] = expected_compute_latency(dev, profile.macs_through(n) as f64) + comm[n - 1];
    for l in (1..n).rev() {
        let i = l - 1;
        let macs = profile.macs_through(l) as f64;
        let floor = dev.a * macs;
        let continuation = values[i + 1];
        let threshold = continuation - comm[i];
        thresholds[i] = threshold;
        if threshold <= floor || threshold.is_nan() {
            survive[i] = 1.0;
            values[i] = continuation;
            continue;
        }
        if macs <= 0.0 {
            survive[i] = 0.0;
            values[i] = comm[i];
            continue;
        }
        // E[min(X + comm, continuation)] with X shifted-exponential reduces to
        // comm + floor + (c/eps) * P[X < threshold].
        let rate = dev.eps / macs;
        let stop_prob = -(-rate * (threshold - floor)).exp_m1();
        survive[i] = 1.0 - stop_prob;
        values[i] = comm[i] + floor + stop_prob / rate;
    }

    let split_probs = split_probabilities(&survive);
    let chosen_split = select_split(&split_probs);
    Ok(SplitPolicy {
        thresholds,
        expected_values: values,
        split_probs,
        chosen_split,
    })
}

/// Stopping distribution from per-layer survival probabilities
/// `S_1..S_{L_hat - 1}`. The result has one more entry than `survival`.
pub fn split_probabilities(survival: &[f64]) -> Vec<f64> {
    let mut probs = Vec::with_capacity(survival.len() + 1);
    let mut reach = 1.0;
    for &s in survival {
        let s = s.clamp(0.0, 1.0);
        probs.push(reach * (1.0 - s));
        reach *= s;
    }
    probs.push(reach);
    probs
}

/// 1-based index of the largest probability; ties go to the shallower layer.
pub fn select_split(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best + 1
}

/// Expected compute plus upload latency when splitting at `split`.
pub fn expected_latency_at_split(
    dev: &DeviceProfile,
    profile: &NetworkProfile,
    split: usize,
    comm: &[f64],
) -> f64 {
    expected_compute_latency(dev, profile.macs_through(split) as f64) + comm[split - 1]
}
