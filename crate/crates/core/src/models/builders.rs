use serde::{Deserialize, Serialize};

use super::{ModelBuilder, ModelGraph};
use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::tensor::Precision;

/// Parameter count of [`build_nvidia`] at 120×320×3.
pub const NVIDIA_PARAM_COUNT: usize = 1_826_619;
/// Parameter count of [`build_conv3d_lstm`] with the bundled default config.
pub const CONV3D_LSTM_PARAM_COUNT: usize = 543_131;
/// Parameter count of the full-depth [`build_transfer`] model (batch-norm
/// running statistics excluded).
pub const TRANSFER_FULL_PARAM_COUNT: usize = 24_731_521;
/// Layers of the full residual trunk, input layer and final pooling included.
pub const TRANSFER_TRUNK_LAYERS: usize = 175;

/// NVIDIA-style baseline at 120×320×3.
pub fn build_nvidia(seed: u64, precision: Precision) -> Result<ModelGraph> {
    build_nvidia_sized(120, 320, seed, precision)
}

/// NVIDIA-style baseline at an arbitrary input size.
pub fn build_nvidia_sized(height: usize, width: usize, seed: u64, precision: Precision) -> Result<ModelGraph> {
    let mut b = ModelBuilder::new("nvidia", &[height, width, 3], seed, precision);
    let convs = [(24, 5, 2), (36, 5, 2), (48, 5, 2), (64, 3, 1), (64, 3, 1)];
    for (i, (filters, k, s)) in convs.into_iter().enumerate() {
        b.conv(
            &format!("conv{}", i + 1),
            ConvSpec::new2d(filters, [k, k], [s, s], [0, 0]),
        )?;
        b.relu(&format!("relu{}", i + 1));
    }
    b.flatten("flatten");
    for (i, units) in [100, 50, 10].into_iter().enumerate() {
        b.dense(&format!("fc{}", i + 1), units, true)?;
    }
    b.dense("steering", 1, false)?;
    b.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerConfig {
    pub filters: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvLayerConfig {
    fn spec(&self) -> ConvSpec {
        ConvSpec::new3d(self.filters, self.kernel, self.stride, self.padding)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    pub blocks: usize,
    /// Odd extents; padding is chosen to preserve shape.
    pub kernel: [usize; 3],
}

/// Layout of the 3D-convolution + LSTM model. The bundled default lives in
/// `configs/conv3d_lstm.toml`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conv3dLstmConfig {
    pub version: u32,
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub lstm: Vec<usize>,
    pub dense: Vec<usize>,
    pub stem: Vec<ConvLayerConfig>,
    pub residual: ResidualConfig,
    pub shrink: Vec<ConvLayerConfig>,
}

const DEFAULT_CONV3D_LSTM: &str = include_str!("../../configs/conv3d_lstm.toml");

impl Conv3dLstmConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("conv3d_lstm config: {e}")))
    }
}

impl Default for Conv3dLstmConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONV3D_LSTM).expect("bundled conv3d_lstm config parses")
    }
}

/// 3D convolutions over each sequence, residual blocks, per-step features
/// fed to stacked LSTMs, dense head. Input `[sequences, frames, H, W, C]`.
pub fn build_conv3d_lstm(config: &Conv3dLstmConfig, seed: u64, precision: Precision) -> Result<ModelGraph> {
    let c = config;
    if c.lstm.is_empty() {
        return Err(Error::invalid("conv3d_lstm needs at least one LSTM layer"));
    }
    if c.residual.kernel.iter().any(|k| k % 2 == 0) {
        return Err(Error::invalid("residual kernel extents must be odd"));
    }
    let input = [c.sequences, c.frames, c.height, c.width, c.channels];
    let mut b = ModelBuilder::new("conv3d_lstm", &input, seed, precision);
    b.fold_sequences("fold");
    for (i, layer) in c.stem.iter().enumerate() {
        b.conv(&format!("stem{i}_conv"), layer.spec())?;
        b.batch_norm(&format!("stem{i}_bn"));
        b.relu(&format!("stem{i}_relu"));
    }
    for i in 0..c.residual.blocks {
        let entry = b.current();
        let filters = *b.shape(entry).last().expect("activations");
        let k = c.residual.kernel;
        let spec = ConvSpec::new3d(filters, k, [1, 1, 1], [k[0] / 2, k[1] / 2, k[2] / 2]);
        b.conv(&format!("res{i}_conv_a"), spec.clone())?;
        b.batch_norm(&format!("res{i}_bn_a"));
        b.relu(&format!("res{i}_relu_a"));
        b.conv(&format!("res{i}_conv_b"), spec)?;
        let body = b.batch_norm(&format!("res{i}_bn_b"));
        b.add(&format!("res{i}_add"), &[body, entry])?;
        b.relu(&format!("res{i}_relu"));
    }
    for (i, layer) in c.shrink.iter().enumerate() {
        b.conv(&format!("shrink{i}_conv"), layer.spec())?;
        b.batch_norm(&format!("shrink{i}_bn"));
        b.relu(&format!("shrink{i}_relu"));
    }
    b.unfold_sequences("unfold", c.sequences);
    let last = c.lstm.len() - 1;
    for (i, &hidden) in c.lstm.iter().enumerate() {
        b.lstm(&format!("lstm{i}"), hidden, i != last)?;
    }
    for (i, &units) in c.dense.iter().enumerate() {
        b.dense(&format!("fc{i}"), units, true)?;
    }
    b.dense("steering", 1, false)?;
    b.finish()
}

/// Residual-trunk transfer model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferConfig {
    pub height: usize,
    pub width: usize,
    /// Bottleneck blocks kept, counted across stages (16 = full depth).
    pub trunk_depth: usize,
    /// Divides every trunk filter count (1 = full width).
    pub width_divisor: usize,
    pub freeze_layers: usize,
    pub head: Vec<usize>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            height: 224,
            width: 224,
            trunk_depth: 16,
            width_divisor: 1,
            freeze_layers: 45,
            head: vec![512, 256, 64],
        }
    }
}

/// Stages of the trunk: (blocks, bottleneck filters, first-block stride).
const STAGES: [(usize, [usize; 3], usize); 4] = [
    (3, [64, 64, 256], 1),
    (4, [128, 128, 512], 2),
    (6, [256, 256, 1024], 2),
    (3, [512, 512, 2048], 2),
];

/// ResNet-50-style trunk (7×7 stem, bottleneck stages of 3, 4, 6, 3 blocks,
/// global average pooling) followed by the dense head. Parameters of the
/// first `freeze_layers` layers are marked non-trainable.
pub fn build_transfer(config: &TransferConfig, seed: u64, precision: Precision) -> Result<ModelGraph> {
    let max_depth: usize = STAGES.iter().map(|s| s.0).sum();
    if config.trunk_depth == 0 || config.trunk_depth > max_depth {
        return Err(Error::invalid(format!(
            "trunk_depth must be in 1..={max_depth}, got {}",
            config.trunk_depth
        )));
    }
    if config.width_divisor == 0 {
        return Err(Error::invalid("width_divisor must be positive"));
    }
    let narrow = |f: usize| (f / config.width_divisor).max(1);
    let mut b = ModelBuilder::new("transfer", &[config.height, config.width, 3], seed, precision);
    b.zero_pad("conv1_pad", &[3, 3])?;
    b.conv("conv1", ConvSpec::new2d(narrow(64), [7, 7], [2, 2], [0, 0]))?;
    b.batch_norm("bn_conv1");
    b.relu("conv1_relu");
    b.max_pool("pool1", &[3, 3], &[2, 2])?;

    let mut remaining = config.trunk_depth;
    'stages: for (stage, (blocks, filters, stride)) in STAGES.into_iter().enumerate() {
        let filters = filters.map(narrow);
        for block in 0..blocks {
            if remaining == 0 {
                break 'stages;
            }
            remaining -= 1;
            let tag = format!("{}{}", stage + 2, (b'a' + block as u8) as char);
            let s = if block == 0 { stride } else { 1 };
            bottleneck(&mut b, &tag, filters, s, block == 0)?;
        }
    }
    b.global_avg_pool("avg_pool");
    for (i, &units) in config.head.iter().enumerate() {
        b.dense(&format!("fc{}", i + 1), units, true)?;
    }
    b.dense("steering", 1, false)?;
    let mut model = b.finish()?;
    model.freeze_layers(config.freeze_layers)?;
    Ok(model)
}

/// 1×1 → 3×3 → 1×1 bottleneck; the first block of a stage projects the
/// shortcut with a strided 1×1 convolution.
fn bottleneck(b: &mut ModelBuilder, tag: &str, filters: [usize; 3], stride: usize, project: bool) -> Result<()> {
    let entry = b.current();
    let [f1, f2, f3] = filters;
    b.conv(
        &format!("res{tag}_branch2a"),
        ConvSpec::new2d(f1, [1, 1], [stride, stride], [0, 0]),
    )?;
    b.batch_norm(&format!("bn{tag}_branch2a"));
    b.relu(&format!("res{tag}_branch2a_relu"));
    b.conv(
        &format!("res{tag}_branch2b"),
        ConvSpec::new2d(f2, [3, 3], [1, 1], [1, 1]),
    )?;
    b.batch_norm(&format!("bn{tag}_branch2b"));
    b.relu(&format!("res{tag}_branch2b_relu"));
    b.conv(
        &format!("res{tag}_branch2c"),
        ConvSpec::new2d(f3, [1, 1], [1, 1], [0, 0]),
    )?;
    let body = b.batch_norm(&format!("bn{tag}_branch2c"));
    let shortcut = if project {
        b.conv_from(
            entry,
            &format!("res{tag}_branch1"),
            ConvSpec::new2d(f3, [1, 1], [stride, stride], [0, 0]),
        )?;
        b.batch_norm(&format!("bn{tag}_branch1"))
    } else {
        entry
    };
    b.add(&format!("res{tag}_add"), &[body, shortcut])?;
    b.relu(&format!("res{tag}_relu"));
    Ok(())
}
