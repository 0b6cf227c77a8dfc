//! Micro-scale split federated training.
//!
//! Every device owns a copy of a small dense network cut after its split
//! layer: the device trains the front part, the server trains one back part
//! per device. Each iteration the device sends its boundary activation and
//! labels up, the server finishes the forward pass, backpropagates through
//! its part and sends the boundary gradient down. Every `E` iterations the
//! server averages the layers that all back parts share, i.e. the layers
//! above the deepest split in the fleet.
//!
//! The device ships raw labels to the server along with the activation.
//!
//! Split `0` puts the whole network on the server and turns aggregation into
//! full-model averaging.

pub mod data;
pub mod net;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SflError};
use crate::split::format_f64;
use crate::wireless::{rng_stream, SimRng};
use data::{dirichlet, BlobTask, Dataset};
use net::{backward_stack, forward_stack, predict, softmax_cross_entropy, Dense, Matrix, MicroNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_devices: usize,
    /// One split per device, or a single value used for every device.
    pub splits: Vec<usize>,
    pub local_iters: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
    /// Standard deviation of the class means around the origin.
    pub separation: f64,
    pub noise: f64,
    pub samples_per_device: usize,
    pub test_samples: usize,
    pub non_iid: bool,
    pub dirichlet_alpha: f64,
    pub seed: u64,
    /// Latency charged per iteration in the `model_time_s` column.
    pub seconds_per_iteration: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_devices: 4,
            splits: vec![1],
            local_iters: 5,
            iterations: 300,
            learning_rate: 0.05,
            batch_size: 8,
            hidden: vec![32, 32, 32],
            dim: 20,
            classes: 5,
            separation: 1.0,
            noise: 1.0,
            samples_per_device: 40,
            test_samples: 500,
            non_iid: false,
            dirichlet_alpha: 0.3,
            seed: 1,
            seconds_per_iteration: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.dim];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }

    pub fn device_splits(&self) -> Result<Vec<usize>> {
        let splits = match self.splits.len() {
            1 => vec![self.splits[0]; self.num_devices],
            n if n == self.num_devices => self.splits.clone(),
            n => {
                return Err(SflError::config(
                    "train.splits",
                    format!("{n} splits given for {} devices", self.num_devices),
                ))
            }
        };
        if let Some(&bad) = splits.iter().find(|&&s| s > self.num_layers()) {
            return Err(SflError::config(
                "train.splits",
                format!("split {bad} exceeds the {} network layers", self.num_layers()),
            ));
        }
        Ok(splits)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_devices", self.num_devices),
            ("local_iters", self.local_iters),
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("dim", self.dim),
            ("classes", self.classes),
            ("samples_per_device", self.samples_per_device),
            ("test_samples", self.test_samples),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(SflError::config(format!("train.{field}"), "must be >= 1"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(SflError::config("train.hidden", "widths must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SflError::config("train.learning_rate", "must be finite and >= 0"));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(SflError::config("train.dirichlet_alpha", "must be positive"));
        }
        self.device_splits()?;
        Ok(())
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_TASK: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_DEVICE_DATA: u64 = 10;
const STREAM_DEVICE_BATCH: u64 = 10_000;

/// Shared starting point of every training scheme: the initial network,
/// per-device data and batch streams, and the test set.
pub struct TrainingSetup {
    pub initial: MicroNet,
    pub device_data: Vec<Dataset>,
    pub batch_rngs: Vec<SimRng>,
    pub test: Dataset,
}

pub fn setup(cfg: &TrainConfig) -> Result<TrainingSetup> {
    cfg.validate()?;
    let mut init_rng = rng_stream(cfg.seed, STREAM_INIT);
    let initial = MicroNet::new(&cfg.widths(), &mut init_rng);
    let mut task_rng = rng_stream(cfg.seed, STREAM_TASK);
    let task = BlobTask::new(cfg.dim, cfg.classes, cfg.separation, cfg.noise, &mut task_rng);
    let device_data = (0..cfg.num_devices)
        .map(|k| {
            let mut rng = rng_stream(cfg.seed, STREAM_DEVICE_DATA + k as u64);
            let probs = if cfg.non_iid {
                dirichlet(cfg.dirichlet_alpha, cfg.classes, &mut rng)
            } else {
                vec![1.0; cfg.classes]
            };
            task.sample(&probs, cfg.samples_per_device, &mut rng)
        })
        .collect();
    let batch_rngs = (0..cfg.num_devices)
        .map(|k| rng_stream(cfg.seed, STREAM_DEVICE_BATCH + k as u64))
        .collect();
    let test = task.balanced(cfg.test_samples, &mut rng_stream(cfg.seed, STREAM_TEST));
    Ok(TrainingSetup {
        initial,
        device_data,
        batch_rngs,
        test,
    })
}

/// Uniformly drawn (with replacement) mini-batch.
pub fn draw_batch(data: &Dataset, batch: usize, rng: &mut SimRng) -> (Matrix, Vec<usize>) {
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..data.len())).collect();
    data.batch(&idx)
}

pub struct DeviceTrainState {
    pub split: usize,
    pub front: Vec<Dense>,
    pub data: Dataset,
    pub rng: SimRng,
}

pub struct ServerTrainState {
    /// Back part of every device's network.
    pub backs: Vec<Vec<Dense>>,
    /// Deepest split in the fleet; layers above it are shared.
    pub boundary: usize,
}

impl ServerTrainState {
    /// Back-part layer of device `k` holding the 0-based network layer `layer`.
    fn layer(&self, k: usize, split: usize, layer: usize) -> &Dense {
        &self.backs[k][layer - split]
    }
}

/// Splits every device's copy of `initial` at its split point.
pub fn partition(setup: TrainingSetup, splits: &[usize]) -> (Vec<DeviceTrainState>, ServerTrainState) {
    let mut devices = Vec::with_capacity(splits.len());
    let mut backs = Vec::with_capacity(splits.len());
    for ((&split, data), rng) in splits.iter().zip(setup.device_data).zip(setup.batch_rngs) {
        let mut layers = setup.initial.layers.clone();
        let back = layers.split_off(split);
        devices.push(DeviceTrainState {
            split,
            front: layers,
            data,
            rng,
        });
        backs.push(back);
    }
    let boundary = splits.iter().copied().max().unwrap_or(0);
    (devices, ServerTrainState { backs, boundary })
}

/// Gradient of the loss with respect to a device's boundary activation for
/// one batch, as the server would send it down. Parameters are not touched.
pub fn boundary_gradient(back: &[Dense], activation: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let (logits, caches) = forward_stack(back, activation);
    let (loss, grad) = softmax_cross_entropy(&logits, labels);
    let (_, g) = backward_stack(back, &caches, &grad);
    (loss, g)
}

/// One forward/backward exchange for every device. Returns per-device losses.
pub fn sfl_iteration(
    devices: &mut [DeviceTrainState],
    server: &mut ServerTrainState,
    batch_size: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if devices.len() != server.backs.len() {
        return Err(SflError::Protocol(format!(
            "{} devices but {} server back parts",
            devices.len(),
            server.backs.len()
        )));
    }
    let mut losses = Vec::with_capacity(devices.len());
    for (k, (dev, back)) in devices.iter_mut().zip(server.backs.iter_mut()).enumerate() {
        // Device: front-end forward pass on a fresh batch.
        let (x, labels) = draw_batch(&dev.data, batch_size, &mut dev.rng);
        if let Some(first) = dev.front.first() {
            if first.inputs() != x.cols {
                return Err(SflError::Protocol(format!(
                    "device {k}: input width {} but front expects {}",
                    x.cols,
                    first.inputs()
                )));
            }
        }
        let (activation, front_caches) = forward_stack(&dev.front, &x);

        // Server: finish the pass, update its part, return the boundary gradient.
        if let Some(first) = back.first() {
            if first.inputs() != activation.cols {
                return Err(SflError::Protocol(format!(
                    "device {k}: activation width {} but server part expects {}",
                    activation.cols,
                    first.inputs()
                )));
            }
        }
        if labels.len() != activation.rows {
            return Err(SflError::Protocol(format!("device {k}: label count mismatch")));
        }
        let (logits, back_caches) = forward_stack(back, &activation);
        let (loss, grad_logits) = softmax_cross_entropy(&logits, &labels);
        let (back_grads, boundary_grad) = backward_stack(back, &back_caches, &grad_logits);
        for (layer, g) in back.iter_mut().zip(&back_grads) {
            layer.apply(g, lr);
        }

        // Device: backpropagate the received gradient through the front.
        if boundary_grad.rows != activation.rows || boundary_grad.cols != activation.cols {
            return Err(SflError::Protocol(format!("device {k}: boundary gradient shape mismatch")));
        }
        let (front_grads, _) = backward_stack(&dev.front, &front_caches, &boundary_grad);
        for (layer, g) in dev.front.iter_mut().zip(&front_grads) {
            layer.apply(g, lr);
        }
        losses.push(loss);
    }
    Ok(losses)
}

/// Element-wise mean over `layers`, summed in slice order.
pub fn average_layers(layers: &[&Dense]) -> Dense {
    let k = layers.len() as f64;
    let mut acc = layers[0].clone();
    for l in &layers[1..] {
        for (a, v) in acc.weights.data.iter_mut().zip(&l.weights.data) {
            *a += v;
        }
        for (a, v) in acc.bias.iter_mut().zip(&l.bias) {
            *a += v;
        }
    }
    for a in acc.weights.data.iter_mut().chain(acc.bias.iter_mut()) {
        *a /= k;
    }
    acc
}

/// Replaces the shared back-end layers (those above the deepest split) of
/// every device by their uniform mean. Returns the averaged layers.
pub fn aggregate_common(server: &mut ServerTrainState, devices: &[DeviceTrainState]) -> Vec<Dense> {
    let total = devices[0].split + server.backs[0].len();
    let mut averaged = Vec::new();
    for layer in server.boundary..total {
        let members: Vec<&Dense> = devices
            .iter()
            .enumerate()
            .map(|(k, d)| server.layer(k, d.split, layer))
            .collect();
        let mean = average_layers(&members);
        for (k, d) in devices.iter().enumerate() {
            server.backs[k][layer - d.split] = mean.clone();
        }
        averaged.push(mean);
    }
    averaged
}

fn accuracy(layers: &[Dense], test: &Dataset) -> f64 {
    let pred = predict(layers, &test.x);
    pred.iter().zip(&test.labels).filter(|(p, l)| p == l).count() as f64 / test.len() as f64
}

/// Mean test accuracy of the devices' stitched networks.
pub fn fleet_accuracy(devices: &[DeviceTrainState], server: &ServerTrainState, test: &Dataset) -> f64 {
    let total: f64 = devices
        .iter()
        .zip(&server.backs)
        .map(|(d, b)| {
            let mut layers = d.front.clone();
            layers.extend(b.iter().cloned());
            accuracy(&layers, test)
        })
        .sum();
    total / devices.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub model_time_s: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub scheme: String,
    pub splits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub rows: Vec<MetricRow>,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.accuracy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "model_time_s", "loss", "accuracy", "scheme", "splits"])?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                format_f64(r.model_time_s),
                format_f64(r.loss),
                format_f64(r.accuracy),
                r.scheme.clone(),
                r.splits.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            ])?;
        }
        w.flush().map_err(|e| SflError::io("train csv", e))?;
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs the metric bookkeeping shared by every scheme. `step` performs one
/// iteration and returns per-device losses; `sync` runs every `E` iterations
/// and returns the current accuracy.
fn run_loop(
    cfg: &TrainConfig,
    scheme: &str,
    splits: Vec<usize>,
    mut step: impl FnMut() -> Result<Vec<f64>>,
    mut sync: impl FnMut() -> f64,
) -> Result<TrainReport> {
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut acc = f64::NAN;
    for t in 1..=cfg.iterations {
        let loss = mean(&step()?);
        if !loss.is_finite() {
            return Err(SflError::Diverged {
                iteration: t,
                message: format!("loss became {loss}"),
            });
        }
        if t % cfg.local_iters == 0 || t == cfg.iterations {
            acc = sync();
        }
        rows.push(MetricRow {
            iteration: t,
            model_time_s: t as f64 * cfg.seconds_per_iteration,
            loss,
            accuracy: acc,
            scheme: scheme.to_string(),
            splits: splits.clone(),
        });
    }
    Ok(TrainReport { rows })
}

/// Split federated training. Aggregation runs every `E` iterations and once
/// more at the end when `T` is not a multiple of `E`.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    let splits = cfg.device_splits()?;
    let s = setup(cfg)?;
    let test = s.test.clone();
    let (devices, server) = partition(s, &splits);
    let state = std::cell::RefCell::new((devices, server));
    run_loop(
        cfg,
        "sfl",
        splits,
        || {
            let (d, srv) = &mut *state.borrow_mut();
            sfl_iteration(d, srv, cfg.batch_size, cfg.learning_rate)
        },
        || {
            let (d, srv) = &mut *state.borrow_mut();
            aggregate_common(srv, d);
            fleet_accuracy(d, srv, &test)
        },
    )
}

/// Plain minibatch SGD on device 0's data with device 0's batch stream.
pub fn train_centralized(cfg: &TrainConfig) -> Result<TrainReport> {
    let s = setup(cfg)?;
    let mut net = s.initial.clone();
    let data = s.device_data.into_iter().next().expect("at least one device");
    let mut rng = s.batch_rngs.into_iter().next().expect("at least one device");
    let test = s.test;
    let net_cell = std::cell::RefCell::new(&mut net);
    run_loop(
        cfg,
        "centralized",
        vec![0],
        || {
            let (x, y) = draw_batch(&data, cfg.batch_size, &mut rng);
            Ok(vec![net_cell.borrow_mut().sgd_step(&x, &y, cfg.learning_rate)])
        },
        || accuracy(&net_cell.borrow().layers, &test),
    )
}

/// FedAvg: every device trains the full network; all layers are averaged
/// every `E` iterations.
pub fn train_fedavg(cfg: &TrainConfig) -> Result<TrainReport> {
    let s = setup(cfg)?;
    let mut nets = vec![s.initial.clone(); cfg.num_devices];
    let data = s.device_data;
    let mut rngs = s.batch_rngs;
    let test = s.test;
    let nets_cell = std::cell::RefCell::new(&mut nets);
    run_loop(
        cfg,
        "fedavg",
        vec![0; cfg.num_devices],
        || {
            let mut nets = nets_cell.borrow_mut();
            Ok(nets
                .iter_mut()
                .zip(&data)
                .zip(rngs.iter_mut())
                .map(|((net, d), rng)| {
                    let (x, y) = draw_batch(d, cfg.batch_size, rng);
                    net.sgd_step(&x, &y, cfg.learning_rate)
                })
                .collect())
        },
        || {
            let mut nets = nets_cell.borrow_mut();
            for l in 0..nets[0].num_layers() {
                let members: Vec<&Dense> = nets.iter().map(|n| &n.layers[l]).collect();
                let avg = average_layers(&members);
                for n in nets.iter_mut() {
                    n.layers[l] = avg.clone();
                }
            }
            nets.iter().map(|n| accuracy(&n.layers, &test)).sum::<f64>() / nets.len() as f64
        },
    )
}
