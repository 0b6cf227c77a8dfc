mod common;

use sfl_core::bandwidth::binary_search_allocation;
use sfl_core::joint::{alternating_optimize, device_loads, expected_total_latency};
use sfl_core::profiler::NetworkProfile;
use sfl_core::split::{backward_induction, comm_latencies, expected_latency_at_split};
use sfl_core::wireless::{rng_stream, DeviceProfile};

fn two_layer() -> (NetworkProfile, DeviceProfile, Vec<f64>) {
    let profile = NetworkProfile::from_raw(vec![1_000_000_000, 1_000_000_000], vec![1, 1]);
    let dev = DeviceProfile::new(1e-9, 2e9, 10.0, 100.0).unwrap();
    (profile, dev, vec![0.5, 0.1])
}

#[test]
fn two_layer_policy_matches_simulation() {
    let (profile, dev, comm) = two_layer();
    let policy = backward_induction(&profile, &dev, &comm, 2).unwrap();
    let cum = [1e9, 2e9];
    let (oracle_values, oracle_thresholds) = common::quadrature_policy(&cum, dev.a, dev.eps, &comm);
    let mut rng = rng_stream(2024, 0);
    let (mean, freq) =
        common::simulate_threshold_policy(&cum, dev.a, dev.eps, &comm, &oracle_thresholds, 1_000_000, &mut rng);

    assert!((policy.expected_values[0] - mean).abs() / mean < 0.005);
    assert!((policy.expected_values[0] - oracle_values[0]).abs() / oracle_values[0] < 1e-7);
    assert!((policy.thresholds[0] - oracle_thresholds[0]).abs() < 1e-12);
    // Five binomial standard errors at 1e6 runs.
    for (p, f) in policy.split_probs.iter().zip(&freq) {
        let se = (p * (1.0 - p) / 1e6).sqrt();
        assert!((p - f).abs() < 5.0 * se, "{p} vs {f}");
    }
    // Threshold 2.1 - 0.5 = 1.6 s against a 1 s floor and 0.5 s scale.
    let most_frequent = if freq[0] >= freq[1] { 1 } else { 2 };
    assert_eq!(policy.chosen_split, most_frequent);
}

#[test]
fn quadrature_agrees_on_random_policies() {
    for seed in 0..30u64 {
        let mut rng = rng_stream(seed, 5);
        use rand::Rng;
        let n = rng.random_range(2..=6usize);
        let macs: Vec<u64> = (0..n).map(|_| rng.random_range(10_000_000..3_000_000_000u64)).collect();
        let profile = NetworkProfile::from_raw(macs, vec![1; n]);
        let a = rng.random_range(0.2e-9..1e-9);
        let eps = rng.random_range(0.3..8.0) / a;
        let dev = DeviceProfile::new(a, eps, 10.0, 100.0).unwrap();
        let comm: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let cum: Vec<f64> = (1..=n).map(|l| profile.macs_through(l) as f64).collect();
        let policy = backward_induction(&profile, &dev, &comm, n).unwrap();
        let (values, _) = common::quadrature_policy(&cum, a, eps, &comm);
        for (v, q) in policy.expected_values.iter().zip(&values) {
            assert!((v - q).abs() / q < 1e-6, "seed {seed}: {v} vs {q}");
        }
    }
}

/// Under fixed shares the objective is a max of per-device terms, so the best
/// split vector is the per-device minimizers put together.
#[test]
fn objective_decouples_per_device() {
    for seed in 0..12u64 {
        let scenario = common::random_scenario(seed, 1 + (seed as usize % 3), 5, 4);
        let k = scenario.num_devices();
        let ratios = vec![1.0 / k as f64; k];

        let mut best_joint = f64::INFINITY;
        let mut splits = vec![1usize; k];
        loop {
            best_joint = best_joint.min(expected_total_latency(&scenario, &splits, &ratios));
            let mut i = 0;
            while i < k && splits[i] == scenario.layer_bound {
                splits[i] = 1;
                i += 1;
            }
            if i == k {
                break;
            }
            splits[i] += 1;
        }

        let per_device = (0..k)
            .map(|i| {
                let rate = ratios[i] * scenario.channels[i].full_band_rate(&scenario.system);
                let comm = comm_latencies(&scenario.profile, rate, scenario.layer_bound);
                (1..=scenario.layer_bound)
                    .map(|l| expected_latency_at_split(&scenario.devices[i], &scenario.profile, l, &comm))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best_joint, per_device, "seed {seed}");
    }
}

#[test]
fn alternating_result_is_consistent() {
    let scenario = common::random_scenario(3, 3, 6, 4);
    let sol = alternating_optimize(&scenario, 10, 1e-3).unwrap();
    assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*sol.trace.last().unwrap(), sol.expected_total_latency);
    let again = binary_search_allocation(&device_loads(&scenario, &sol.splits), 1e-3, None).unwrap();
    assert_eq!(again.ratios, sol.allocation.ratios);
    assert!(sol.splits.iter().all(|&l| (1..=4).contains(&l)));
}

#[test]
fn allocation_beats_grid_for_small_fleets() {
    for seed in 0..10u64 {
        let scenario = common::random_scenario(seed, 2 + (seed as usize % 2), 4, 4);
        let splits = vec![2; scenario.num_devices()];
        let loads = device_loads(&scenario, &splits);
        let alloc = binary_search_allocation(&loads, 1e-3, None).unwrap();
        let grid = common::simplex_grid_min(&loads, 1e-3);
        assert!(grid >= alloc.tau_star * (1.0 - 1e-3), "seed {seed}");
    }
}
