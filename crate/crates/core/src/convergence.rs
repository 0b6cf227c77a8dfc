//! Convergence bound of split federated training as a function of the
//! aggregation boundary.
//!
//! `P` collects the variance and heterogeneity terms; the bound after `T`
//! iterations is `alpha / (gamma + T) * (2P / mu + mu/2 * (gamma + 1) * delta1)`
//! with `alpha = beta / mu` and `gamma = max(8 alpha, E)`.
//!
//! Two versions of `P` circulate: the theorem statement weighs the
//! heterogeneity gap with `6 beta`, the proof with `4 beta`. Both are
//! available through [`GammaCoefficient`]; the theorem form is the default.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SflError};
use crate::split::format_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaCoefficient {
    /// `6 beta Gamma`.
    #[default]
    Theorem,
    /// `4 beta Gamma`.
    Appendix,
}

impl GammaCoefficient {
    fn factor(self) -> f64 {
        match self {
            GammaCoefficient::Theorem => 6.0,
            GammaCoefficient::Appendix => 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceParams {
    pub beta: f64,
    pub mu: f64,
    pub z_sq: f64,
    pub sigma_sq: f64,
    pub gamma_gap: f64,
    pub local_iters: u64,
    pub num_devices: u64,
    pub total_layers: u64,
    /// Aggregation boundary, the largest split point in the fleet.
    pub ell: u64,
    /// Initial mean squared distance to the optimum.
    pub delta1: f64,
    pub coefficient: GammaCoefficient,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            beta: 1.0,
            mu: 0.5,
            z_sq: 1.0,
            sigma_sq: 1.0,
            gamma_gap: 0.5,
            local_iters: 2,
            num_devices: 2,
            total_layers: 10,
            ell: 4,
            delta1: 1.0,
            coefficient: GammaCoefficient::Theorem,
        }
    }
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(SflError::config(format!("bound.params.{field}"), msg));
        if !(self.mu > 0.0) {
            return bad("mu", "must be positive");
        }
        if !(self.beta >= self.mu) {
            return bad("beta", "must be >= mu");
        }
        if self.z_sq < 0.0 || self.sigma_sq < 0.0 || self.gamma_gap < 0.0 || self.delta1 < 0.0 {
            return bad("z_sq", "z_sq, sigma_sq, gamma_gap and delta1 must be non-negative");
        }
        if self.local_iters == 0 {
            return bad("local_iters", "must be >= 1");
        }
        if self.num_devices == 0 {
            return bad("num_devices", "must be >= 1");
        }
        if !(1..=self.total_layers).contains(&self.ell) {
            return bad("ell", "must lie in 1..=total_layers");
        }
        Ok(())
    }

    pub fn with_ell(self, ell: u64) -> Self {
        ConvergenceParams { ell, ..self }
    }
}

/// Collected as the `ell`-free part plus `ell * dP/dl`, so that `K = 1`
/// leaves no trace of `ell` even in floating point.
pub fn p_term(p: &ConvergenceParams) -> f64 {
    let e = p.local_iters as f64;
    let l_total = p.total_layers as f64;
    let inv_k = 1.0 / p.num_devices as f64;
    let base = 2.0 * (e - 1.0).powi(2) * l_total * p.z_sq
        + p.coefficient.factor() * p.beta * p.gamma_gap
        + inv_k * l_total * (p.z_sq + p.sigma_sq);
    base + p.ell as f64 * dp_dl(p)
}

/// `(alpha, gamma)` of the step-size schedule `eta_t = 2 / (mu (gamma + t))`.
pub fn schedule_constants(p: &ConvergenceParams) -> (f64, f64) {
    let alpha = p.beta / p.mu;
    (alpha, (8.0 * alpha).max(p.local_iters as f64))
}

/// Optimality-gap bound after `t` iterations.
pub fn bound_at(p: &ConvergenceParams, t: u64) -> f64 {
    let (alpha, gamma) = schedule_constants(p);
    alpha / (gamma + t as f64) * (2.0 * p_term(p) / p.mu + 0.5 * p.mu * (gamma + 1.0) * p.delta1)
}

/// Sensitivity of `P` to the aggregation boundary.
pub fn dp_dl(p: &ConvergenceParams) -> f64 {
    (1.0 - 1.0 / p.num_devices as f64) * (p.z_sq + p.sigma_sq)
}

pub fn write_bound_csv<W: Write>(p: &ConvergenceParams, t_values: &[u64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "ell", "p_term", "dp_dl", "bound"])?;
    for &t in t_values {
        w.write_record([
            t.to_string(),
            p.ell.to_string(),
            format_f64(p_term(p)),
            format_f64(dp_dl(p)),
            format_f64(bound_at(p, t)),
        ])?;
    }
    w.flush().map_err(|e| SflError::io("bound csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> ConvergenceParams {
        ConvergenceParams {
            beta: 1.0,
            mu: 0.5,
            z_sq: 1.0,
            sigma_sq: 1.0,
            gamma_gap: 0.5,
            local_iters: 2,
            num_devices: 2,
            total_layers: 10,
            ell: 4,
            delta1: 1.0,
            coefficient: GammaCoefficient::Theorem,
        }
    }

    #[test]
    fn hand_evaluated_p() {
        // 2*1*10*1 + 6*1*0.5 + 4 + 0.5*6 + 4 + 0.5*6
        assert_eq!(p_term(&example()), 37.0);
        let appendix = ConvergenceParams {
            coefficient: GammaCoefficient::Appendix,
            ..example()
        };
        assert_eq!(p_term(&appendix), 36.0);
    }

    #[test]
    fn collapsed_cases() {
        let base = ConvergenceParams {
            local_iters: 1,
            gamma_gap: 0.0,
            num_devices: 1,
            z_sq: 0.7,
            sigma_sq: 0.2,
            ..example()
        };
        assert!((p_term(&base) - 10.0 * 0.9).abs() < 1e-12);
        for k in [1, 2, 7, 100] {
            let p = ConvergenceParams {
                num_devices: k,
                ell: 10,
                ..base
            };
            assert!((p_term(&p) - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sensitivity() {
        let p = example();
        assert_eq!(dp_dl(&ConvergenceParams { num_devices: 1, ..p }), 0.0);
        let many = ConvergenceParams {
            num_devices: 1_000_000_000,
            ..p
        };
        assert!((dp_dl(&many) - 2.0).abs() < 1e-8);
        for ell in 1..10 {
            let diff = p_term(&p.with_ell(ell + 1)) - p_term(&p.with_ell(ell));
            assert_eq!(diff, dp_dl(&p));
        }
    }

    #[test]
    fn bound_scaling() {
        let p = example();
        let (_, gamma) = schedule_constants(&p);
        assert_eq!(gamma, 16.0);
        // gamma + T doubles from 116 to 232.
        let ratio = bound_at(&p, 100) / bound_at(&p, 216);
        assert!((ratio - 2.0).abs() < 1e-12);
        assert!(bound_at(&p, 10_000_000) < 1e-4);
    }

    #[test]
    fn bound_dual_evaluation() {
        // Written out independently: alpha = 2, gamma = 16.
        let expected = 2.0 / 116.0 * (2.0 * 37.0 / 0.5 + 0.25 * 17.0 * 1.0);
        assert!((bound_at(&example(), 100) - expected).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(example().validate().is_ok());
        assert!(ConvergenceParams { beta: 0.1, ..example() }.validate().is_err());
        assert!(ConvergenceParams { ell: 11, ..example() }.validate().is_err());
        assert!(ConvergenceParams { ell: 0, ..example() }.validate().is_err());
    }
}
