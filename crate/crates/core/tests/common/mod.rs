//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use sfl_core::bandwidth::{max_finish_time, DeviceLoad};
use sfl_core::joint::{allocation_step, expected_total_latency};
use sfl_core::profiler::{profile, LayerSpec, NetworkArchitecture};
use sfl_core::scenario::Scenario;
use sfl_core::trainer::net::{Dense, MicroNet};
use sfl_core::trainer::{draw_batch, setup, TrainConfig};
use sfl_core::wireless::{rng_stream, sample_channel, DeviceProfile, SimRng, SystemParams};

/// Expected stopping values and thresholds by numerical integration of the
/// shifted-exponential density: `V_l = E[min(X_l + comm_l, V_{l+1})]`.
pub fn quadrature_policy(cum_macs: &[f64], a: f64, eps: f64, comm: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = cum_macs.len();
    let mut values = vec![0.0; n];
    let mut thresholds = vec![f64::INFINITY; n];
    values[n - 1] = cum_macs[n - 1] * (a + 1.0 / eps) + comm[n - 1];
    for i in (0..n - 1).rev() {
        let c = cum_macs[i];
        let shift = a * c;
        let scale = c / eps;
        let cont = values[i + 1];
        thresholds[i] = cont - comm[i];
        // Simpson's rule over [0, 60 scale] of the exponential part.
        let steps = 20_000;
        let h = 60.0 * scale / steps as f64;
        let f = |u: f64| (shift + u + comm[i]).min(cont) * (-u / scale).exp() / scale;
        let mut acc = f(0.0) + f(60.0 * scale);
        for j in 1..steps {
            acc += f(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        values[i] = acc * h / 3.0;
    }
    (values, thresholds)
}

/// Monte-Carlo run of the threshold stopping rule: at layer `l` the device
/// stops when its fresh cumulative compute draw is below `thresholds[l]`.
/// Returns the mean realized latency and the empirical stopping frequencies.
pub fn simulate_threshold_policy(
    cum_macs: &[f64],
    a: f64,
    eps: f64,
    comm: &[f64],
    thresholds: &[f64],
    runs: usize,
    rng: &mut SimRng,
) -> (f64, Vec<f64>) {
    let n = cum_macs.len();
    let mut counts = vec![0usize; n];
    let mut total = 0.0;
    for _ in 0..runs {
        for l in 0..n {
            let e: f64 = Exp1.sample(rng);
            let x = a * cum_macs[l] + e * cum_macs[l] / eps;
            if l == n - 1 || x < thresholds[l] {
                counts[l] += 1;
                total += x + comm[l];
                break;
            }
        }
    }
    (total / runs as f64, counts.iter().map(|&c| c as f64 / runs as f64).collect())
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Minimum over every split vector in `1..=layer_bound` of the objective
/// with re-solved bandwidth shares.
pub fn brute_force_joint(scenario: &Scenario, eps_tol: f64) -> (Vec<usize>, f64) {
    let k = scenario.num_devices();
    let lb = scenario.layer_bound;
    let mut best = (Vec::new(), f64::INFINITY);
    let mut splits = vec![1usize; k];
    loop {
        let alloc = allocation_step(scenario, &splits, eps_tol).expect("allocation");
        let obj = expected_total_latency(scenario, &splits, &alloc.ratios);
        if obj < best.1 {
            best = (splits.clone(), obj);
        }
        let mut i = 0;
        while i < k && splits[i] == lb {
            splits[i] = 1;
            i += 1;
        }
        if i == k {
            return best;
        }
        splits[i] += 1;
    }
}

/// Best worst-case finish time over the bandwidth simplex on a regular grid
/// of the given resolution (K <= 3).
pub fn simplex_grid_min(loads: &[DeviceLoad], resolution: f64) -> f64 {
    let steps = (1.0 / resolution).round() as usize;
    let mut best = f64::INFINITY;
    match loads.len() {
        1 => best = max_finish_time(&[1.0], loads),
        2 => {
            for i in 0..=steps {
                let b = i as f64 * resolution;
                best = best.min(max_finish_time(&[b, 1.0 - b], loads));
            }
        }
        3 => {
            for i in 0..=steps {
                for j in 0..=(steps - i) {
                    let b0 = i as f64 * resolution;
                    let b1 = j as f64 * resolution;
                    best = best.min(max_finish_time(&[b0, b1, (1.0 - b0 - b1).max(0.0)], loads));
                }
            }
        }
        k => panic!("grid search supports up to three devices, got {k}"),
    }
    best
}

/// Fully connected architecture with random widths.
pub fn random_architecture(rng: &mut SimRng, layers: usize) -> NetworkArchitecture {
    let mut widths = vec![rng.random_range(1024..8192u64)];
    for _ in 0..layers {
        widths.push(rng.random_range(256..8192u64));
    }
    let specs = (0..layers)
        .map(|i| LayerSpec::fully_connected(&format!("fc{}", i + 1), widths[i], widths[i + 1]))
        .collect();
    NetworkArchitecture::new("random", specs, 32, 32).expect("valid architecture")
}

/// Scenario with random FC layers and `k` devices drawn like the default
/// generated fleet.
pub fn random_scenario(seed: u64, k: usize, layers: usize, layer_bound: usize) -> Scenario {
    let mut rng = rng_stream(seed, 77);
    let architecture = random_architecture(&mut rng, layers);
    let system = SystemParams {
        num_devices: k,
        seed,
        ..SystemParams::default()
    };
    let devices: Vec<DeviceProfile> = (0..k)
        .map(|_| {
            let a = rng.random_range(0.2e-9..1e-9);
            let d = rng.random_range(100.0..500.0);
            DeviceProfile::with_eps_two_over_a(a, 10.0, d).unwrap()
        })
        .collect();
    let channels = devices
        .iter()
        .map(|d| sample_channel(d, &system, &mut rng).unwrap())
        .collect();
    Scenario {
        system,
        devices,
        channels,
        profile: profile(&architecture),
        architecture,
        layer_bound,
        downlink: false,
    }
}

/// Plain SGD on device 0 written against the network primitives only.
pub fn reference_centralized(cfg: &TrainConfig) -> Vec<(f64, f64)> {
    let s = setup(cfg).unwrap();
    let mut net = s.initial.clone();
    let mut rng = s.batch_rngs.into_iter().next().unwrap();
    let data = &s.device_data[0];
    let mut acc = f64::NAN;
    let mut out = Vec::new();
    for t in 1..=cfg.iterations {
        let (x, y) = draw_batch(data, cfg.batch_size, &mut rng);
        let loss = net.sgd_step(&x, &y, cfg.learning_rate);
        if t % cfg.local_iters == 0 || t == cfg.iterations {
            acc = accuracy(&net, &s.test.x, &s.test.labels);
        }
        out.push((loss, acc));
    }
    out
}

/// FedAvg with full-model averaging every `E` iterations.
pub fn reference_fedavg(cfg: &TrainConfig) -> Vec<(f64, f64)> {
    let s = setup(cfg).unwrap();
    let k = cfg.num_devices;
    let mut nets = vec![s.initial.clone(); k];
    let mut rngs = s.batch_rngs;
    let mut acc = f64::NAN;
    let mut out = Vec::new();
    for t in 1..=cfg.iterations {
        let mut losses = Vec::new();
        for i in 0..k {
            let (x, y) = draw_batch(&s.device_data[i], cfg.batch_size, &mut rngs[i]);
            losses.push(nets[i].sgd_step(&x, &y, cfg.learning_rate));
        }
        let loss = losses.iter().sum::<f64>() / k as f64;
        if t % cfg.local_iters == 0 || t == cfg.iterations {
            for l in 0..nets[0].layers.len() {
                let mut avg: Dense = nets[0].layers[l].clone();
                for n in &nets[1..] {
                    for (a, v) in avg.weights.data.iter_mut().zip(&n.layers[l].weights.data) {
                        *a += v;
                    }
                    for (a, v) in avg.bias.iter_mut().zip(&n.layers[l].bias) {
                        *a += v;
                    }
                }
                for v in avg.weights.data.iter_mut().chain(avg.bias.iter_mut()) {
                    *v /= k as f64;
                }
                for n in nets.iter_mut() {
                    n.layers[l] = avg.clone();
                }
            }
            acc = nets.iter().map(|n| accuracy(n, &s.test.x, &s.test.labels)).sum::<f64>() / k as f64;
        }
        out.push((loss, acc));
    }
    out
}

fn accuracy(net: &MicroNet, x: &sfl_core::trainer::net::Matrix, labels: &[usize]) -> f64 {
    let pred = sfl_core::trainer::net::predict(&net.layers, x);
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}
