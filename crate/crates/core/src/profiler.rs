//! Layer-wise compute and activation-size profiling.
//!
//! A [`NetworkArchitecture`] is an ordered list of layers. Profiling it yields
//! the cumulative multiply-accumulate count `c_l` of running layers `1..=l`
//! on the device and the size `D_l` in bits of the activation leaving layer
//! `l`, which is what gets uploaded when the network is split after `l`.
//!
//! All counts are exact `u64` arithmetic.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SflError};
use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    FullyConnected,
    Activation,
    Pooling,
    Normalization,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv => "conv",
            LayerKind::FullyConnected => "fully_connected",
            LayerKind::Activation => "activation",
            LayerKind::Pooling => "pooling",
            LayerKind::Normalization => "normalization",
        };
        f.write_str(s)
    }
}

fn one() -> u64 {
    1
}

/// One layer of a feed-forward network.
///
/// `kernel_h`/`kernel_w` only matter for convolutions. Fully connected layers
/// have a 1x1 output map and `out_channels` output units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default = "one")]
    pub kernel_h: u64,
    #[serde(default = "one")]
    pub kernel_w: u64,
    pub in_channels: u64,
    pub out_channels: u64,
    #[serde(default = "one")]
    pub out_h: u64,
    #[serde(default = "one")]
    pub out_w: u64,
}

impl LayerSpec {
    pub fn conv(name: &str, kernel: u64, in_ch: u64, out_ch: u64, out_hw: u64) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv,
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels: in_ch,
            out_channels: out_ch,
            out_h: out_hw,
            out_w: out_hw,
        }
    }

    pub fn fully_connected(name: &str, inputs: u64, outputs: u64) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::FullyConnected,
            kernel_h: 1,
            kernel_w: 1,
            in_channels: inputs,
            out_channels: outputs,
            out_h: 1,
            out_w: 1,
        }
    }

    /// Shape-preserving layer (activation, normalization) or a pooling layer
    /// that keeps the channel count and produces an `out_hw` x `out_hw` map.
    pub fn elementwise(name: &str, kind: LayerKind, channels: u64, out_hw: u64) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind,
            kernel_h: 1,
            kernel_w: 1,
            in_channels: channels,
            out_channels: channels,
            out_h: out_hw,
            out_w: out_hw,
        }
    }

    /// Number of elements in this layer's output for a single sample.
    pub fn output_elements(&self) -> u64 {
        self.out_h * self.out_w * self.out_channels
    }

    /// Trainable parameter count (weights plus biases).
    pub fn parameter_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv => {
                self.kernel_h * self.kernel_w * self.in_channels * self.out_channels
                    + self.out_channels
            }
            LayerKind::FullyConnected => self.in_channels * self.out_channels + self.out_channels,
            _ => 0,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let dims = [
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("out_h", self.out_h),
            ("out_w", self.out_w),
        ];
        for (field, value) in dims {
            if value == 0 {
                return Err(SflError::config(
                    format!("layers[{index}].{field}"),
                    format!("layer `{}` must have {field} >= 1", self.name),
                ));
            }
        }
        if self.kind == LayerKind::FullyConnected && (self.out_h != 1 || self.out_w != 1) {
            return Err(SflError::config(
                format!("layers[{index}].out_h"),
                format!("fully connected layer `{}` must have a 1x1 output", self.name),
            ));
        }
        Ok(())
    }
}

/// MAC-equivalents charged per output element for the layer kinds that have
/// no multiply-accumulate formula of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostFactors {
    pub activation: u64,
    pub pooling: u64,
    pub normalization: u64,
}

impl Default for CostFactors {
    fn default() -> Self {
        CostFactors {
            activation: 1,
            pooling: 1,
            normalization: 1,
        }
    }
}

fn default_element_bits() -> u64 {
    32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    #[serde(default)]
    pub name: String,
    #[serde(default = "one")]
    pub batch_size: u64,
    #[serde(default = "default_element_bits")]
    pub element_bits: u64,
    #[serde(default)]
    pub cost_factors: CostFactors,
    pub layers: Vec<LayerSpec>,
}

impl NetworkArchitecture {
    pub fn new(name: &str, layers: Vec<LayerSpec>, batch_size: u64, element_bits: u64) -> Result<Self> {
        let arch = NetworkArchitecture {
            name: name.to_string(),
            batch_size,
            element_bits,
            cost_factors: CostFactors::default(),
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Checks dimensions and channel chaining.
    ///
    /// Chaining: a layer's `in_channels` equals the previous layer's
    /// `out_channels`, except for a fully connected layer fed by a spatial
    /// map, whose input width is the flattened element count of that map.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(SflError::config("layers", "architecture has no layers"));
        }
        if self.batch_size == 0 {
            return Err(SflError::config("batch_size", "must be >= 1"));
        }
        if self.element_bits == 0 {
            return Err(SflError::config("element_bits", "must be >= 1"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            let expected = if next.kind == LayerKind::FullyConnected {
                prev.output_elements()
            } else {
                prev.out_channels
            };
            if next.in_channels != expected {
                return Err(SflError::config(
                    format!("layers[{}].in_channels", i + 1),
                    format!(
                        "layer `{}` expects {} inputs but `{}` produces {}",
                        next.name, next.in_channels, prev.name, expected
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Total trainable parameters of the full model.
    pub fn parameter_count(&self) -> u64 {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }

    /// Size in bits of the full parameter vector, as uploaded by FedAvg.
    pub fn model_size_bits(&self) -> u64 {
        self.parameter_count() * self.element_bits
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let arch: NetworkArchitecture =
            toml::from_str(text).map_err(|e| SflError::config("architecture", e.to_string()))?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SflError::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SflError::Config { field, message } => SflError::Config {
                field: format!("{} ({})", field, path.display()),
                message,
            },
            other => other,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinArchitecture {
    AlexNet20,
    Vgg16,
}

impl FromStr for BuiltinArchitecture {
    type Err = SflError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alexnet20" | "alexnet" => Ok(BuiltinArchitecture::AlexNet20),
            "vgg16" => Ok(BuiltinArchitecture::Vgg16),
            other => Err(SflError::config(
                "architecture.preset",
                format!("unknown architecture `{other}` (expected alexnet20 or vgg16)"),
            )),
        }
    }
}

pub fn builtin_architecture(name: BuiltinArchitecture) -> NetworkArchitecture {
    match name {
        BuiltinArchitecture::AlexNet20 => presets::alexnet20(),
        BuiltinArchitecture::Vgg16 => presets::vgg16(),
    }
}

/// MACs of one layer for a batch of `batch` samples.
pub fn layer_macs(layer: &LayerSpec, batch: u64, factors: &CostFactors) -> u64 {
    match layer.kind {
        LayerKind::Conv => {
            layer.kernel_h
                * layer.kernel_w
                * layer.in_channels
                * layer.out_h
                * layer.out_w
                * layer.out_channels
                * batch
        }
        LayerKind::FullyConnected => layer.in_channels * layer.out_channels * batch,
        LayerKind::Activation => factors.activation * layer.output_elements() * batch,
        LayerKind::Pooling => factors.pooling * layer.output_elements() * batch,
        LayerKind::Normalization => factors.normalization * layer.output_elements() * batch,
    }
}

/// Bits needed to ship this layer's output for a batch.
pub fn intermediate_size_bits(layer: &LayerSpec, batch: u64, element_bits: u64) -> u64 {
    layer.output_elements() * batch * element_bits
}

/// Per-layer profile of an architecture. Index `i` of every vector describes
/// layer `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkProfile {
    pub names: Vec<String>,
    pub kinds: Vec<LayerKind>,
    pub layer_macs: Vec<u64>,
    pub cumulative_macs: Vec<u64>,
    pub data_size_bits: Vec<u64>,
}

impl NetworkProfile {
    /// Builds a profile straight from per-layer MACs and output sizes.
    pub fn from_raw(layer_macs: Vec<u64>, data_size_bits: Vec<u64>) -> Self {
        assert_eq!(layer_macs.len(), data_size_bits.len());
        let n = layer_macs.len();
        let cumulative_macs = layer_macs
            .iter()
            .scan(0u64, |acc, &m| {
                *acc += m;
                Some(*acc)
            })
            .collect();
        NetworkProfile {
            names: (1..=n).map(|i| format!("layer{i}")).collect(),
            kinds: vec![LayerKind::FullyConnected; n],
            layer_macs,
            cumulative_macs,
            data_size_bits,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.cumulative_macs.len()
    }

    /// Cumulative MACs `c_l` for the 1-based layer index `l`.
    pub fn macs_through(&self, layer: usize) -> u64 {
        self.cumulative_macs[layer - 1]
    }

    /// Activation size `D_l` in bits for the 1-based layer index `l`.
    pub fn data_bits_at(&self, layer: usize) -> u64 {
        self.data_size_bits[layer - 1]
    }

    pub fn total_macs(&self) -> u64 {
        self.cumulative_macs.last().copied().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "name", "kind", "layer_macs", "cumulative_macs", "data_bits"])?;
        for i in 0..self.num_layers() {
            w.write_record([
                (i + 1).to_string(),
                self.names[i].clone(),
                self.kinds[i].to_string(),
                self.layer_macs[i].to_string(),
                self.cumulative_macs[i].to_string(),
                self.data_size_bits[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| SflError::io("profile csv", e))?;
        Ok(())
    }
}

pub fn profile(arch: &NetworkArchitecture) -> NetworkProfile {
    let layer_macs: Vec<u64> = arch
        .layers
        .iter()
        .map(|l| layer_macs(l, arch.batch_size, &arch.cost_factors))
        .collect();
    let data_size_bits = arch
        .layers
        .iter()
        .map(|l| intermediate_size_bits(l, arch.batch_size, arch.element_bits))
        .collect();
    let mut p = NetworkProfile::from_raw(layer_macs, data_size_bits);
    p.names = arch.layers.iter().map(|l| l.name.clone()).collect();
    p.kinds = arch.layers.iter().map(|l| l.kind).collect();
    p
}
