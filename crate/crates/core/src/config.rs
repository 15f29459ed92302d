//! Run configuration: a `key = value` text file with `#` comments.
//!
//! Every key has a default, unknown keys are rejected, and the whole
//! configuration is recorded in checkpoint metadata (as `cfg.<key>`) so a
//! checkpoint alone is enough to rebuild its model.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::{preset, AugOp, PipelineSpec, Preset, CROP_HEIGHT, CROP_WIDTH};
use crate::dataset::{make_windows, split_by, Camera, Dataset, SkippedRow, SplitPolicy};
use crate::error::{ConfigError, Result};
use crate::models::{
    build_conv3d_lstm, build_nvidia, build_transfer, Conv3dLstmConfig, Metadata, ModelGraph, TransferConfig,
};
use crate::tensor::{derive_seed, Precision};
use crate::train::{
    frame_examples, window_examples, AdamConfig, DecayMode, Example, TrainConfig, DEFAULT_EPOCHS, DEFAULT_LR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Nvidia,
    Conv3dLstm,
    Transfer,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nvidia" => Ok(ModelKind::Nvidia),
            "conv3d_lstm" => Ok(ModelKind::Conv3dLstm),
            "transfer" => Ok(ModelKind::Transfer),
            _ => Err("expected nvidia, conv3d_lstm or transfer".into()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nvidia => "nvidia",
            ModelKind::Conv3dLstm => "conv3d_lstm",
            ModelKind::Transfer => "transfer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Chronological,
    Random,
}

/// Seed streams derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Init = 1,
    Augment = 2,
    Shuffle = crate::train::SHUFFLE_STREAM as isize,
    Split = 4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub dataset: Option<PathBuf>,
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_mode: DecayMode,
    pub seed: u64,
    pub precision: Precision,
    /// `None` keeps the model default (45 for transfer, 0 otherwise).
    pub freeze_layers: Option<usize>,
    pub angle_per_px: f64,
    pub trunk_depth: usize,
    pub width_divisor: usize,
    pub output: PathBuf,
    pub split: SplitKind,
    pub split_ratio: f64,
    pub camera: Camera,
    pub max_steps: Option<usize>,
    /// Named-tensor checkpoint imported leniently before training.
    pub pretrained: Option<PathBuf>,
    pub k_display: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Nvidia,
            dataset: None,
            preset: Preset::Minimal,
            epochs: DEFAULT_EPOCHS,
            batch_size: crate::dataset::DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            decay_mode: DecayMode::PerEpochs,
            seed: 0,
            precision: Precision::Single,
            freeze_layers: None,
            angle_per_px: crate::augment::DEFAULT_ANGLE_PER_PX,
            trunk_depth: 16,
            width_divisor: 1,
            output: PathBuf::from("runs/default"),
            split: SplitKind::Chronological,
            split_ratio: crate::dataset::DEFAULT_SPLIT_RATIO,
            camera: Camera::Center,
            max_steps: None,
            pretrained: None,
            k_display: crate::saliency::DEFAULT_K_DISPLAY,
        }
    }
}

/// Every accepted key, in file order.
pub const KEYS: [&str; 20] = [
    "model",
    "dataset",
    "preset",
    "epochs",
    "batch_size",
    "lr",
    "decay_mode",
    "seed",
    "precision",
    "freeze_layers",
    "angle_per_px",
    "trunk_depth",
    "width_divisor",
    "output",
    "split",
    "split_ratio",
    "camera",
    "max_steps",
    "pretrained",
    "k_display",
];

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| invalid(key, value, e.to_string()))
}

fn positive(key: &str, value: &str) -> std::result::Result<usize, ConfigError> {
    match parse::<usize>(key, value)? {
        0 => Err(invalid(key, value, "must be at least 1")),
        n => Ok(n),
    }
}

fn optional<T>(
    value: &str,
    f: impl FnOnce(&str) -> std::result::Result<T, ConfigError>,
) -> std::result::Result<Option<T>, ConfigError> {
    if value == "none" || value.is_empty() {
        Ok(None)
    } else {
        f(value).map(Some)
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let dir = path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::parse(&text, &dir.canonicalize()?)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(key.trim(), value.trim(), base)?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        match key {
            "model" => self.model = parse(key, value)?,
            "dataset" => self.dataset = optional(value, |v| Ok(resolve(base, v)))?,
            "preset" => self.preset = parse(key, value)?,
            "epochs" => self.epochs = positive(key, value)?,
            "batch_size" => self.batch_size = positive(key, value)?,
            "lr" => {
                let lr: f64 = parse(key, value)?;
                if !(lr.is_finite() && lr > 0.0) {
                    return Err(invalid(key, value, "must be positive").into());
                }
                self.lr = lr;
            }
            "decay_mode" => self.decay_mode = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "freeze_layers" => self.freeze_layers = optional(value, |v| parse(key, v))?,
            "angle_per_px" => {
                let v: f64 = parse(key, value)?;
                if !v.is_finite() {
                    return Err(invalid(key, value, "must be finite").into());
                }
                self.angle_per_px = v;
            }
            "trunk_depth" => self.trunk_depth = positive(key, value)?,
            "width_divisor" => self.width_divisor = positive(key, value)?,
            "output" => self.output = resolve(base, value),
            "split" => {
                self.split = match value {
                    "chronological" => SplitKind::Chronological,
                    "random" => SplitKind::Random,
                    _ => return Err(invalid(key, value, "expected chronological or random").into()),
                }
            }
            "split_ratio" => {
                let r: f64 = parse(key, value)?;
                if !(r > 0.0 && r < 1.0) {
                    return Err(invalid(key, value, "must be in (0, 1)").into());
                }
                self.split_ratio = r;
            }
            "camera" => self.camera = parse(key, value)?,
            "max_steps" => self.max_steps = optional(value, |v| positive(key, v))?,
            "pretrained" => self.pretrained = optional(value, |v| Ok(resolve(base, v)))?,
            "k_display" => self.k_display = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string()).into()),
        }
        Ok(())
    }

    /// Applies `key=value` overrides (relative paths against `base`).
    pub fn apply_overrides(&mut self, overrides: &[String], base: &Path) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
            self.set(k.trim(), v.trim(), base)?;
        }
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        match key {
            "model" => self.model.to_string(),
            "dataset" => path(&self.dataset),
            "preset" => self.preset.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "decay_mode" => match self.decay_mode {
                DecayMode::PerEpochs => "per_epochs",
                DecayMode::PerBatch => "per_batch",
                DecayMode::None => "none",
            }
            .to_string(),
            "seed" => self.seed.to_string(),
            "precision" => self.precision.name().to_string(),
            "freeze_layers" => self.freeze_layers.map_or("none".to_string(), |n| n.to_string()),
            "angle_per_px" => self.angle_per_px.to_string(),
            "trunk_depth" => self.trunk_depth.to_string(),
            "width_divisor" => self.width_divisor.to_string(),
            "output" => self.output.display().to_string(),
            "split" => match self.split {
                SplitKind::Chronological => "chronological",
                SplitKind::Random => "random",
            }
            .to_string(),
            "split_ratio" => self.split_ratio.to_string(),
            "camera" => self.camera.to_string(),
            "max_steps" => self.max_steps.map_or("none".to_string(), |n| n.to_string()),
            "pretrained" => path(&self.pretrained),
            "k_display" => self.k_display.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// The full configuration in file syntax; parses back to `self`.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value(k))).collect()
    }

    pub fn to_metadata(&self) -> Result<Metadata> {
        let mut m = Metadata::new();
        for k in KEYS {
            m.set(&format!("cfg.{k}"), self.value(k))?;
        }
        Ok(m)
    }

    /// Rebuilds the configuration stored by [`to_metadata`](Self::to_metadata).
    pub fn from_metadata(meta: &Metadata) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in meta.iter() {
            if let Some(key) = k.strip_prefix("cfg.") {
                cfg.set(key, v, Path::new(""))?;
            }
        }
        Ok(cfg)
    }

    pub fn stream_seed(&self, stream: Stream) -> u64 {
        derive_seed(self.seed, &[stream as u64])
    }

    pub fn build_model(&self) -> Result<ModelGraph> {
        let seed = self.stream_seed(Stream::Init);
        let mut model = match self.model {
            ModelKind::Nvidia => build_nvidia(seed, self.precision)?,
            ModelKind::Conv3dLstm => build_conv3d_lstm(&Conv3dLstmConfig::default(), seed, self.precision)?,
            ModelKind::Transfer => {
                let cfg = TransferConfig {
                    trunk_depth: self.trunk_depth,
                    width_divisor: self.width_divisor,
                    freeze_layers: 0,
                    ..TransferConfig::default()
                };
                build_transfer(&cfg, seed, self.precision)?
            }
        };
        // The default freeze depth is clamped for shallow desk-scale trunks;
        // an explicit value must fit.
        let freeze = match self.freeze_layers {
            Some(n) => n,
            None if self.model == ModelKind::Transfer => {
                TransferConfig::default().freeze_layers.min(model.layers.len())
            }
            None => 0,
        };
        model.freeze_layers(freeze)?;
        Ok(model)
    }

    /// Training augmentation with the model's geometry step first.
    pub fn pipeline(&self) -> PipelineSpec {
        let geometry = match self.model {
            ModelKind::Transfer => {
                let t = TransferConfig::default();
                AugOp::Resize {
                    width: t.width as u32,
                    height: t.height as u32,
                }
            }
            _ => AugOp::CropSky,
        };
        let mut spec = preset(self.preset, self.stream_seed(Stream::Augment)).with_geometry(geometry);
        spec.angle_per_px = self.angle_per_px;
        spec
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                decay: self.decay_mode.decay(self.lr, self.epochs, self.batch_size),
                ..AdamConfig::default()
            },
            pipeline: self.pipeline(),
            max_steps: self.max_steps,
            out_dir: Some(self.output.clone()),
            metadata: self.to_metadata()?,
        })
    }

    fn split_policy(&self) -> SplitPolicy {
        match self.split {
            SplitKind::Chronological => SplitPolicy::Chronological,
            SplitKind::Random => SplitPolicy::SeededRandom(self.stream_seed(Stream::Split)),
        }
    }

    /// Loads the dataset and splits it into training and validation
    /// examples shaped for the configured model.
    pub fn load_examples(&self) -> Result<LoadedData> {
        let root = self
            .dataset
            .as_ref()
            .ok_or_else(|| invalid("dataset", "none", "a dataset root is required"))?;
        let data = Dataset::load(root)?.with_camera(self.camera);
        let policy = self.split_policy();
        let (train, val, unwindowed) = match self.model {
            ModelKind::Conv3dLstm => {
                let c = Conv3dLstmConfig::default();
                let mut windows = Vec::new();
                let mut unwindowed = 0;
                for (vi, v) in data.videos.iter().enumerate() {
                    let ws = make_windows(&v.records, c.sequences, c.frames);
                    unwindowed += v.records.len() - ws.len();
                    windows.extend(ws.into_iter().map(|w| (vi, w)));
                }
                let (t, v) = split_by(&windows, self.split_ratio, policy, |(_, w)| &w.video)?;
                let to_examples = |ws: Vec<(usize, crate::dataset::SequenceWindow)>| -> Vec<Example> {
                    ws.into_iter()
                        .flat_map(|(vi, w)| window_examples(&data.videos[vi].records, std::slice::from_ref(&w)))
                        .collect()
                };
                (to_examples(t), to_examples(v), unwindowed)
            }
            _ => {
                let records: Vec<_> = data.records().cloned().collect();
                let (t, v) = split_by(&records, self.split_ratio, policy, |r| &r.video)?;
                (frame_examples(&t), frame_examples(&v), 0)
            }
        };
        Ok(LoadedData {
            train,
            val,
            skipped: data.skipped,
            unwindowed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub skipped: Vec<SkippedRow>,
    /// Leading frames of each video that end no window.
    pub unwindowed: usize,
}

/// Frame size the configured model consumes after its geometry step.
pub fn model_frame_size(kind: ModelKind) -> (u32, u32) {
    match kind {
        ModelKind::Transfer => {
            let t = TransferConfig::default();
            (t.width as u32, t.height as u32)
        }
        _ => (CROP_WIDTH, CROP_HEIGHT),
    }
}
