//! Equal-finish-time bandwidth allocation.
//!
//! For a common finish time `tau`, device `k` needs the share
//! `b_k = D_k / ((tau - cp_k) * W log2(1 + snr_k))` to upload its activation
//! right as `tau` expires. The total share is strictly decreasing in `tau`,
//! so bisection on `tau` finds the allocation whose shares sum to just under
//! one.

use std::io::Write;

use serde::Serialize;

use crate::error::{Result, SflError};
use crate::split::format_f64;

/// What one device contributes to the allocation problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviceLoad {
    /// Bits to upload.
    pub data_bits: f64,
    /// Compute time before the upload can start.
    pub compute_s: f64,
    /// Rate with the whole band, `W log2(1 + snr)`.
    pub full_band_rate: f64,
}

impl DeviceLoad {
    pub fn finish_time(&self, ratio: f64) -> f64 {
        if self.data_bits <= 0.0 {
            return self.compute_s;
        }
        self.compute_s + crate::wireless::comm_latency(self.data_bits, ratio * self.full_band_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthAllocation {
    pub ratios: Vec<f64>,
    pub tau_star: f64,
    /// `1 - sum(ratios)`, the share left unallocated.
    pub residual: f64,
    pub iterations: usize,
}

impl BandwidthAllocation {
    pub fn uniform(k: usize) -> Self {
        BandwidthAllocation {
            ratios: vec![1.0 / k as f64; k],
            tau_star: f64::NAN,
            residual: 0.0,
            iterations: 0,
        }
    }

    pub const CSV_HEADER: [&'static str; 5] = ["device", "ratio", "compute_s", "comm_s", "total_s"];

    pub fn write_csv<W: Write>(&self, loads: &[DeviceLoad], out: &mut csv::Writer<W>) -> Result<()> {
        for (k, (load, &b)) in loads.iter().zip(&self.ratios).enumerate() {
            let total = load.finish_time(b);
            out.write_record([
                k.to_string(),
                format_f64(b),
                format_f64(load.compute_s),
                format_f64(total - load.compute_s),
                format_f64(total),
            ])?;
        }
        Ok(())
    }
}

/// Shares that make every device finish exactly at `tau`.
pub fn ratio_for_tau(tau: f64, loads: &[DeviceLoad]) -> Result<Vec<f64>> {
    loads
        .iter()
        .enumerate()
        .map(|(k, load)| {
            if load.data_bits <= 0.0 {
                return Ok(0.0);
            }
            let slack = tau - load.compute_s;
            if !(slack > 0.0) {
                return Err(SflError::Domain(format!(
                    "tau = {tau} does not exceed compute time {} of device {k}",
                    load.compute_s
                )));
            }
            Ok(load.data_bits / (slack * load.full_band_rate))
        })
        .collect()
}

/// Largest per-device finish time under `ratios`.
pub fn max_finish_time(ratios: &[f64], loads: &[DeviceLoad]) -> f64 {
    loads
        .iter()
        .zip(ratios)
        .map(|(l, &b)| l.finish_time(b))
        .fold(f64::NEG_INFINITY, f64::max)
}

const MAX_ITERATIONS: usize = 2_000;

/// Bisection on the common finish time.
///
/// The search starts from `tau_up_init` when given, otherwise from
/// `max cp + max_k D_k / (rate_k / K)` (the finish time under a uniform
/// split), doubling the gap above the lower end until the shares fit.
/// Accepts once the total share lies in `(1 - eps_tol, 1]`.
pub fn binary_search_allocation(
    loads: &[DeviceLoad],
    eps_tol: f64,
    tau_up_init: Option<f64>,
) -> Result<BandwidthAllocation> {
    if loads.is_empty() {
        return Err(SflError::Domain("no devices to allocate bandwidth to".into()));
    }
    if !(eps_tol > 0.0 && eps_tol < 0.1) {
        return Err(SflError::config("optimizer.eps_tol", format!("must lie in (0, 0.1), got {eps_tol}")));
    }
    for (k, load) in loads.iter().enumerate() {
        if load.data_bits > 0.0 && !(load.full_band_rate > 0.0 && load.full_band_rate.is_finite()) {
            return Err(SflError::Domain(format!(
                "device {k} has no usable link (rate {})",
                load.full_band_rate
            )));
        }
        if !load.compute_s.is_finite() {
            return Err(SflError::Domain(format!("device {k} has non-finite compute time")));
        }
    }
    let mut tau_low = loads.iter().map(|l| l.compute_s).fold(f64::NEG_INFINITY, f64::max);
    if loads.iter().all(|l| l.data_bits <= 0.0) {
        return Ok(BandwidthAllocation {
            ratios: vec![0.0; loads.len()],
            tau_star: tau_low,
            residual: 1.0,
            iterations: 0,
        });
    }

    let total = |tau: f64| -> Result<f64> { Ok(ratio_for_tau(tau, loads)?.iter().sum()) };

    // A device without data computing longest pins the finish time; when the
    // others fit before it, spare bandwidth is spread proportionally.
    if loads.iter().all(|l| l.data_bits <= 0.0 || l.compute_s < tau_low) {
        let at_floor = ratio_for_tau(tau_low, loads)?;
        let sum: f64 = at_floor.iter().sum();
        if sum <= 1.0 {
            return Ok(BandwidthAllocation {
                ratios: at_floor.iter().map(|b| b / sum * (1.0 - f64::EPSILON)).collect(),
                tau_star: tau_low,
                residual: 0.0,
                iterations: 0,
            });
        }
    }

    let k = loads.len() as f64;
    let mut tau_up = match tau_up_init {
        Some(t) if t > tau_low => t,
        _ => {
            let worst_uniform = loads
                .iter()
                .map(|l| crate::wireless::comm_latency(l.data_bits, l.full_band_rate / k))
                .fold(0.0, f64::max);
            tau_low + worst_uniform
        }
    };
    let mut doublings = 0;
    while total(tau_up)? > 1.0 {
        tau_up = tau_low + 2.0 * (tau_up - tau_low);
        doublings += 1;
        if doublings > 1_100 || !tau_up.is_finite() {
            return Err(SflError::Numerical("could not bracket the finish time".into()));
        }
    }

    let mut tau = tau_up;
    for iteration in 1..=MAX_ITERATIONS {
        let ratios = ratio_for_tau(tau, loads)?;
        let sum: f64 = ratios.iter().sum();
        if sum > 1.0 {
            tau_low = tau;
            tau = 0.5 * (tau + tau_up);
        } else if sum <= 1.0 - eps_tol {
            tau_up = tau;
            tau = 0.5 * (tau + tau_low);
        } else {
            return Ok(BandwidthAllocation {
                ratios,
                tau_star: tau,
                residual: 1.0 - sum,
                iterations: iteration,
            });
        }
        if !(tau > tau_low && tau < tau_up) {
            return Err(SflError::Numerical(format!(
                "bisection interval collapsed at tau = {tau} after {iteration} steps"
            )));
        }
    }
    Err(SflError::Numerical(format!(
        "bandwidth search did not converge in {MAX_ITERATIONS} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(bits: f64, cp: f64, rate: f64) -> DeviceLoad {
        DeviceLoad {
            data_bits: bits,
            compute_s: cp,
            full_band_rate: rate,
        }
    }

    #[test]
    fn direct_substitution() {
        let b = ratio_for_tau(3.0, &[load(1e6, 2.0, 1e7)]).unwrap();
        assert!((b[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn shares_vanish_for_large_tau() {
        let loads = [load(1e6, 0.5, 1e7), load(3e6, 0.1, 2e7)];
        let b = ratio_for_tau(1e12, &loads).unwrap();
        assert!(b.iter().all(|&x| x < 1e-12));
    }

    #[test]
    fn tau_below_compute_names_device() {
        let loads = [load(1e6, 0.5, 1e7), load(3e6, 2.0, 2e7)];
        let err = ratio_for_tau(1.0, &loads).unwrap_err();
        assert!(err.to_string().contains("device 1"), "{err}");
    }

    #[test]
    fn single_device_gets_nearly_everything() {
        let l = load(4e6, 0.3, 1e7);
        let a = binary_search_allocation(&[l], 1e-3, None).unwrap();
        assert!(a.ratios[0] > 1.0 - 1e-3 && a.ratios[0] <= 1.0);
        let expected = 0.3 + 4e6 / (a.ratios[0] * 1e7);
        assert!((a.tau_star - expected).abs() < 1e-9);
    }

    #[test]
    fn double_data_gets_double_share() {
        let a = binary_search_allocation(&[load(1e6, 0.0, 1e7), load(2e6, 0.0, 1e7)], 1e-3, None).unwrap();
        assert!((a.ratios[1] / a.ratios[0] - 2.0).abs() < 1e-9);
        assert!((a.ratios[0] - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn symmetric_fleet_is_uniform() {
        let loads = vec![load(2e6, 0.4, 5e6); 7];
        let a = binary_search_allocation(&loads, 1e-3, None).unwrap();
        for &b in &a.ratios {
            assert!((b - 1.0 / 7.0).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_data_devices_get_nothing() {
        let loads = [load(0.0, 0.4, 5e6), load(1e6, 0.1, 5e6)];
        let a = binary_search_allocation(&loads, 1e-3, None).unwrap();
        assert_eq!(a.ratios[0], 0.0);
        assert!(a.tau_star >= 0.4);
    }

    #[test]
    fn dead_link_is_rejected() {
        let err = binary_search_allocation(&[load(1e6, 0.0, 0.0)], 1e-3, None).unwrap_err();
        assert!(matches!(err, SflError::Domain(_)));
    }

    #[test]
    fn explicit_upper_bound_that_is_too_small_gets_widened() {
        let loads = [load(1e6, 1.0, 1e6), load(1e6, 0.0, 1e6)];
        let a = binary_search_allocation(&loads, 1e-3, Some(1.0 + 1e-9)).unwrap();
        let sum: f64 = a.ratios.iter().sum();
        assert!(sum > 1.0 - 1e-3 && sum <= 1.0);
    }

    #[test]
    fn tolerance_is_validated() {
        assert!(binary_search_allocation(&[load(1.0, 0.0, 1.0)], 0.0, None).is_err());
        assert!(binary_search_allocation(&[load(1.0, 0.0, 1.0)], 0.2, None).is_err());
    }
}
