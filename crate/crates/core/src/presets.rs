//! Built-in layer tables.
//!
//! `alexnet20` is the single-tower AlexNet with 64/192/384/256/256 conv
//! channels and a 224x224x3 input, split into 20 profiled layers:
//!
//! ```text
//!  1 conv1  11x11  3->64   55x55     11 conv4  3x3 384->256 13x13
//!  2 relu1                            12 relu4
//!  3 norm1                            13 conv5  3x3 256->256 13x13
//!  4 pool1          64     27x27      14 relu5
//!  5 conv2  5x5   64->192  27x27      15 pool5          256  6x6
//!  6 relu2                            16 fc6  9216->4096
//!  7 norm2                            17 relu6
//!  8 pool2         192     13x13      18 fc7  4096->4096
//!  9 conv3  3x3  192->384  13x13      19 relu7
//! 10 relu3                            20 fc8  4096->1000
//! ```
//!
//! The per-layer dimensions are a reconstruction: only the overall structure
//! (20 layers, 5 conv, 3 fully connected, relu and norm layers) is fixed.
//!
//! `vgg16` is the standard configuration D network on a 224x224x3 input:
//! 13 3x3 convolutions in five blocks, each conv followed by a relu, a 2x2
//! max-pool closing every block, then fc6/relu/fc7/relu/fc8. 36 layers.

use crate::profiler::{LayerKind, LayerSpec, NetworkArchitecture};

fn relu(name: &str, ch: u64, hw: u64) -> LayerSpec {
    LayerSpec::elementwise(name, LayerKind::Activation, ch, hw)
}

fn pool(name: &str, ch: u64, hw: u64) -> LayerSpec {
    LayerSpec::elementwise(name, LayerKind::Pooling, ch, hw)
}

fn norm(name: &str, ch: u64, hw: u64) -> LayerSpec {
    LayerSpec::elementwise(name, LayerKind::Normalization, ch, hw)
}

pub fn alexnet20() -> NetworkArchitecture {
    let layers = vec![
        LayerSpec::conv("conv1", 11, 3, 64, 55),
        relu("relu1", 64, 55),
        norm("norm1", 64, 55),
        pool("pool1", 64, 27),
        LayerSpec::conv("conv2", 5, 64, 192, 27),
        relu("relu2", 192, 27),
        norm("norm2", 192, 27),
        pool("pool2", 192, 13),
        LayerSpec::conv("conv3", 3, 192, 384, 13),
        relu("relu3", 384, 13),
        LayerSpec::conv("conv4", 3, 384, 256, 13),
        relu("relu4", 256, 13),
        LayerSpec::conv("conv5", 3, 256, 256, 13),
        relu("relu5", 256, 13),
        pool("pool5", 256, 6),
        LayerSpec::fully_connected("fc6", 256 * 6 * 6, 4096),
        relu("relu6", 4096, 1),
        LayerSpec::fully_connected("fc7", 4096, 4096),
        relu("relu7", 4096, 1),
        LayerSpec::fully_connected("fc8", 4096, 1000),
    ];
    NetworkArchitecture::new("alexnet20", layers, 1, 32).expect("alexnet20 preset is valid")
}

pub fn vgg16() -> NetworkArchitecture {
    let blocks: [(u64, u64, usize); 5] = [(64, 224, 2), (128, 112, 2), (256, 56, 3), (512, 28, 3), (512, 14, 3)];
    let mut layers = Vec::with_capacity(36);
    let mut in_ch = 3;
    for (b, &(ch, hw, convs)) in blocks.iter().enumerate() {
        for c in 0..convs {
            let tag = format!("{}_{}", b + 1, c + 1);
            layers.push(LayerSpec::conv(&format!("conv{tag}"), 3, in_ch, ch, hw));
            layers.push(relu(&format!("relu{tag}"), ch, hw));
            in_ch = ch;
        }
        layers.push(pool(&format!("pool{}", b + 1), ch, hw / 2));
    }
    layers.push(LayerSpec::fully_connected("fc6", 512 * 7 * 7, 4096));
    layers.push(relu("relu6", 4096, 1));
    layers.push(LayerSpec::fully_connected("fc7", 4096, 4096));
    layers.push(relu("relu7", 4096, 1));
    layers.push(LayerSpec::fully_connected("fc8", 4096, 1000));
    NetworkArchitecture::new("vgg16", layers, 1, 32).expect("vgg16 preset is valid")
}
