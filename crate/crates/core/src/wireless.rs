//! Device compute latency and uplink transmission models.
//!
//! Compute latency for `c` MACs on device `k` is shifted exponential:
//! a floor of `a_k * c` seconds plus an exponential tail with rate
//! `eps_k / c`. The uplink rate follows Shannon capacity over the device's
//! share of the band, with distance-based path loss and Rayleigh
//! (unit-mean exponential power) small-scale fading.
//!
//! Everything inside this module works in linear SI units; decibel values
//! only cross the boundary through [`db_to_linear`] and [`dbm_to_mw`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SflError};

pub type SimRng = ChaCha8Rng;

/// Independent, reproducible random stream `stream` of the run seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Seconds per MAC at full speed.
    pub a: f64,
    /// Fluctuation rate in MACs per second. `f64::INFINITY` removes the
    /// exponential tail.
    pub eps: f64,
    pub power_dbm: f64,
    pub distance_m: f64,
}

impl DeviceProfile {
    pub fn new(a: f64, eps: f64, power_dbm: f64, distance_m: f64) -> Result<Self> {
        let dev = DeviceProfile {
            a,
            eps,
            power_dbm,
            distance_m,
        };
        dev.validate()?;
        Ok(dev)
    }

    /// Device whose fluctuation rate is tied to its speed as `eps = 2 / a`.
    pub fn with_eps_two_over_a(a: f64, power_dbm: f64, distance_m: f64) -> Result<Self> {
        Self::new(a, 2.0 / a, power_dbm, distance_m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(SflError::Domain(format!("a must be positive, got {}", self.a)));
        }
        if !(self.eps > 0.0) {
            return Err(SflError::Domain(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.distance_m > 0.0 && self.distance_m.is_finite()) {
            return Err(SflError::Domain(format!(
                "distance must be positive, got {}",
                self.distance_m
            )));
        }
        Ok(())
    }
}

/// How the configured noise figure is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `noise_dbm` is the total noise power seen by a receiver.
    #[default]
    TotalPower,
    /// `noise_dbm` is a density in dBm/Hz, integrated over the full band `W`.
    Psd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub bandwidth_hz: f64,
    pub noise_dbm: f64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    pub num_devices: usize,
    pub seed: u64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            bandwidth_hz: 20e6,
            noise_dbm: -114.0,
            noise_model: NoiseModel::TotalPower,
            num_devices: 20,
            seed: 1,
        }
    }
}

impl SystemParams {
    pub fn noise_power_mw(&self) -> f64 {
        match self.noise_model {
            NoiseModel::TotalPower => dbm_to_mw(self.noise_dbm),
            NoiseModel::Psd => dbm_to_mw(self.noise_dbm) * self.bandwidth_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Linear power gain `|g|^2`, path loss included.
    pub gain_sq: f64,
    pub noise_power_mw: f64,
    pub snr_linear: f64,
}

impl ChannelRealization {
    pub fn from_gain(dev: &DeviceProfile, sys: &SystemParams, gain_sq: f64) -> Self {
        let noise = sys.noise_power_mw();
        ChannelRealization {
            gain_sq,
            noise_power_mw: noise,
            snr_linear: dbm_to_mw(dev.power_dbm) * gain_sq / noise,
        }
    }

    /// Channel with a given SNR, for tests and hand-built instances.
    pub fn with_snr(snr_linear: f64) -> Self {
        ChannelRealization {
            gain_sq: snr_linear,
            noise_power_mw: 1.0,
            snr_linear,
        }
    }

    /// `W * log2(1 + snr)`: the rate the device would get with the whole band.
    pub fn full_band_rate(&self, sys: &SystemParams) -> f64 {
        sys.bandwidth_hz * (1.0 + self.snr_linear).log2()
    }
}

/// Large-scale path loss in dB for a distance in meters.
pub fn path_loss_db(distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(SflError::Domain(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    Ok(128.1 + 37.6 * (1e-3 * distance_m).log10())
}

/// Linear large-scale gain `rho` for a distance.
pub fn large_scale_gain(distance_m: f64) -> Result<f64> {
    Ok(db_to_linear(-path_loss_db(distance_m)?))
}

/// Channel without small-scale fading: `|g|^2 = rho`.
pub fn mean_channel(dev: &DeviceProfile, sys: &SystemParams) -> Result<ChannelRealization> {
    Ok(ChannelRealization::from_gain(dev, sys, large_scale_gain(dev.distance_m)?))
}

/// Rayleigh-faded channel: `|g|^2 = rho * X`, `X ~ Exp(1)`.
pub fn sample_channel<R: Rng + ?Sized>(
    dev: &DeviceProfile,
    sys: &SystemParams,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let fading: f64 = rng.sample(Exp1);
    Ok(ChannelRealization::from_gain(
        dev,
        sys,
        large_scale_gain(dev.distance_m)? * fading,
    ))
}

/// Uplink rate in bits/s for bandwidth share `ratio`.
pub fn transmission_rate(ratio: f64, ch: &ChannelRealization, sys: &SystemParams) -> Result<f64> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(SflError::Domain(format!(
            "bandwidth ratio must lie in (0, 1], got {ratio}"
        )));
    }
    Ok(ratio * ch.full_band_rate(sys))
}

/// Seconds to push `bits` through a link of `rate` bits/s.
///
/// A zero rate yields `f64::INFINITY`, which orders after every finite
/// latency. Nothing to send costs nothing, whatever the rate.
pub fn comm_latency(bits: f64, rate: f64) -> f64 {
    if bits <= 0.0 {
        0.0
    } else if rate <= 0.0 {
        f64::INFINITY
    } else {
        bits / rate
    }
}

/// One draw of the time needed to run `macs` MACs.
pub fn sample_compute_latency<R: Rng + ?Sized>(dev: &DeviceProfile, macs: f64, rng: &mut R) -> f64 {
    if macs <= 0.0 {
        return 0.0;
    }
    let tail: f64 = rng.sample(Exp1);
    dev.a * macs + tail * macs / dev.eps
}

/// Mean of [`sample_compute_latency`]: `c * (a + 1/eps)`.
pub fn expected_compute_latency(dev: &DeviceProfile, macs: f64) -> f64 {
    if macs <= 0.0 {
        return 0.0;
    }
    macs * (dev.a + 1.0 / dev.eps)
}

/// `P[latency < theta]` for `macs` MACs.
pub fn compute_latency_cdf(dev: &DeviceProfile, macs: f64, theta: f64) -> f64 {
    let floor = dev.a * macs;
    if theta < floor {
        0.0
    } else {
        1.0 - (-(dev.eps / macs) * (theta - floor)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev() -> DeviceProfile {
        DeviceProfile::new(1e-9, 2e9, 10.0, 500.0).unwrap()
    }

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss_db(1000.0).unwrap() - 128.1).abs() < 1e-12);
        assert!((path_loss_db(10_000.0).unwrap() - 165.7).abs() < 1e-9);
        assert!((path_loss_db(100.0).unwrap() - 90.5).abs() < 1e-9);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-3.0).is_err());
    }

    #[test]
    fn rates() {
        let sys = SystemParams::default();
        let r = transmission_rate(0.5, &ChannelRealization::with_snr(3.0), &sys).unwrap();
        assert!((r - 20e6).abs() < 1e-6);
        let r = transmission_rate(1.0, &ChannelRealization::with_snr(0.0), &sys).unwrap();
        assert_eq!(r, 0.0);
        let r = transmission_rate(1.0, &ChannelRealization::with_snr(1.0), &sys).unwrap();
        assert!((r - 20e6).abs() < 1e-6);
        assert!(transmission_rate(0.0, &ChannelRealization::with_snr(1.0), &sys).is_err());
        assert!(transmission_rate(1.5, &ChannelRealization::with_snr(1.0), &sys).is_err());
    }

    #[test]
    fn comm_latency_cases() {
        assert_eq!(comm_latency(20e6, 20e6), 1.0);
        assert_eq!(comm_latency(0.0, 20e6), 0.0);
        assert!((comm_latency(6_195_200.0, 20e6) - 0.30976).abs() < 1e-12);
        assert_eq!(comm_latency(1.0, 0.0), f64::INFINITY);
        assert!(comm_latency(1.0, 0.0) > 1e300);
    }

    #[test]
    fn expected_compute() {
        let d = DeviceProfile::with_eps_two_over_a(0.2e-9, 10.0, 100.0).unwrap();
        assert!((expected_compute_latency(&d, 1e9) - 0.3).abs() < 1e-12);
        assert_eq!(expected_compute_latency(&d, 0.0), 0.0);
    }

    #[test]
    fn compute_samples_respect_shift_and_mean() {
        let d = dev();
        let mut rng = rng_stream(7, 0);
        let c = 1e9;
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = sample_compute_latency(&d, c, &mut rng);
            assert!(s >= d.a * c);
            sum += s;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.5).abs() / 1.5 < 0.01, "{mean}");
    }

    #[test]
    fn huge_eps_degenerates_to_floor() {
        let d = DeviceProfile::new(1e-9, f64::INFINITY, 10.0, 1.0).unwrap();
        let mut rng = rng_stream(1, 0);
        assert_eq!(sample_compute_latency(&d, 1e9, &mut rng), 1.0);
        let d = DeviceProfile::new(1e-9, 1e30, 10.0, 1.0).unwrap();
        assert!((sample_compute_latency(&d, 1e9, &mut rng) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fading_mean_and_scaling() {
        let sys = SystemParams::default();
        let d = dev();
        let rho = large_scale_gain(d.distance_m).unwrap();
        let mut rng = rng_stream(3, 0);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_channel(&d, &sys, &mut rng).unwrap().gain_sq / rho)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");

        // 10*log10(2) dB less path loss doubles rho; with a shared stream every gain doubles.
        let near = DeviceProfile {
            distance_m: d.distance_m * 2f64.powf(-10.0 / 37.6),
            ..d
        };
        let rho_near = large_scale_gain(near.distance_m).unwrap();
        assert!((rho_near / rho - 2.0).abs() < 1e-9);
        let mut a = rng_stream(3, 1);
        let mut b = rng_stream(3, 1);
        for _ in 0..100 {
            let ga = sample_channel(&d, &sys, &mut a).unwrap().gain_sq;
            let gb = sample_channel(&near, &sys, &mut b).unwrap().gain_sq;
            assert!((gb / ga - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let sys = SystemParams::default();
        let d = dev();
        let draw = |seed| {
            let mut rng = rng_stream(seed, 4);
            (0..10)
                .map(|_| sample_channel(&d, &sys, &mut rng).unwrap().gain_sq)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn psd_noise_integrates_over_band() {
        let mut sys = SystemParams::default();
        sys.noise_dbm = -174.0;
        sys.noise_model = NoiseModel::Psd;
        let expected = dbm_to_mw(-174.0) * 20e6;
        assert!((sys.noise_power_mw() / expected - 1.0).abs() < 1e-12);
    }
}
