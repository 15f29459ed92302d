//! Loss, optimizer, the training loop and evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use image::RgbImage;

use crate::augment::{normalize, LabeledImage, PipelineSpec};
use crate::autodiff::{ops, Graph, NodeId};
use crate::dataset::{batches, load_frame, FrameRecord, SequenceWindow};
use crate::error::{DatasetError, Error, Result};
use crate::models::{Checkpoint, Metadata, ModelGraph};
use crate::nn::BnMode;
use crate::tensor::derive_seed;
use crate::tensor::{Precision, Tensor};

pub const DEFAULT_EPOCHS: usize = 32;
pub const DEFAULT_LR: f64 = 0.001;
pub const HISTORY_FILE: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
/// Sub-stream of the master seed that orders training batches.
pub const SHUFFLE_STREAM: u64 = 3;
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// `(1/n) Σ (yᵢ − ŷᵢ)²`.
pub fn mse(pred: &Tensor, y: &Tensor) -> Result<f64> {
    if pred.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: pred.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    if pred.numel() == 0 {
        return Err(DatasetError::Empty("mse of zero predictions").into());
    }
    let sse: f64 = pred.data().iter().zip(y.data()).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(sse / pred.numel() as f64)
}

pub fn rmse(pred: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(mse(pred, y)?.sqrt())
}

/// Differentiable mean squared error.
pub fn mse_node(g: &mut Graph, pred: NodeId, y: NodeId) -> Result<NodeId> {
    let d = ops::sub(g, pred, y)?;
    let sq = ops::mul(g, d, d)?;
    Ok(ops::mean(g, sq))
}

/// RMSE of the constant-zero predictor, `sqrt(mean(y²))`.
pub fn zero_baseline(labels: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(DatasetError::Empty("baseline over zero labels").into());
    }
    Ok((labels.iter().map(|y| y * y).sum::<f64>() / labels.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate at step `t` is `lr / (1 + decay·t)`.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.0,
        }
    }
}

impl AdamConfig {
    /// `t` counts completed optimizer steps.
    pub fn effective_lr(&self, t: u64) -> f64 {
        self.lr / (1.0 + self.decay * t as f64)
    }
}

/// How the decay constant is derived from the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayMode {
    /// `lr / epochs`.
    #[default]
    PerEpochs,
    /// `lr / batch_size`.
    PerBatch,
    None,
}

impl DecayMode {
    pub fn decay(self, lr: f64, epochs: usize, batch_size: usize) -> f64 {
        match self {
            DecayMode::PerEpochs => lr / epochs as f64,
            DecayMode::PerBatch => lr / batch_size as f64,
            DecayMode::None => 0.0,
        }
    }
}

impl std::str::FromStr for DecayMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per_epochs" => Ok(DecayMode::PerEpochs),
            "per_batch" => Ok(DecayMode::PerBatch),
            "none" => Ok(DecayMode::None),
            _ => Err("expected per_epochs, per_batch or none".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let zeros = |p: &&Tensor| Tensor::zeros(p.shape(), p.precision());
        AdamState {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam_step: {} moments, {} parameters, {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        let c = self.config;
        let lr = c.effective_lr(self.t);
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
                pd[i] -= lr * (md[i] / bc1) / ((vd[i] / bc2).sqrt() + c.eps);
            }
            m.round_in_place();
            v.round_in_place();
            p.round_in_place();
        }
        Ok(())
    }
}

/// Where a frame's pixels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameSource {
    Path(PathBuf),
    Memory(Arc<RgbImage>),
}

impl FrameSource {
    pub fn load(&self) -> Result<RgbImage> {
        match self {
            FrameSource::Path(p) => load_frame(p),
            FrameSource::Memory(img) => Ok((**img).clone()),
        }
    }
}

/// One labelled model input: a single frame, or the frames of a sequence
/// window in sequence-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub frames: Vec<FrameSource>,
    pub label: f64,
}

/// Counts how many samples went through randomized augmentation, split by
/// purpose. Evaluation must leave `eval` at zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugCounters {
    pub train: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Train,
    Eval,
}

/// Turns examples into a `[B, input_shape...]` batch and its labels.
#[allow(clippy::too_many_arguments)]
fn encode(
    examples: &[&Example],
    ids: &[usize],
    pipeline: &PipelineSpec,
    epoch: u64,
    input_shape: &[usize],
    precision: Precision,
    purpose: Purpose,
    counters: &mut AugCounters,
) -> Result<(Tensor, Tensor)> {
    let per_sample: usize = input_shape.iter().product();
    let mut data = Vec::with_capacity(per_sample * examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for (ex, &id) in examples.iter().zip(ids) {
        let images = ex.frames.iter().map(FrameSource::load).collect::<Result<Vec<_>>>()?;
        let (images, label) = if images.len() == 1 {
            let out = pipeline.apply(
                &LabeledImage {
                    image: images.into_iter().next().expect("one frame"),
                    steering: ex.label,
                },
                epoch,
                id as u64,
            )?;
            (vec![out.image], out.steering)
        } else {
            pipeline.apply_window(&images, ex.label, epoch, id as u64)?
        };
        if pipeline.is_randomized() {
            match purpose {
                Purpose::Train => counters.train += 1,
                Purpose::Eval => counters.eval += 1,
            }
        }
        let start = data.len();
        for img in &images {
            data.extend_from_slice(normalize(img, precision).data());
        }
        if data.len() - start != per_sample {
            let (w, h) = images[0].dimensions();
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: vec![images.len(), h as usize, w as usize, 3],
                right: input_shape.to_vec(),
            });
        }
        labels.push(label);
    }
    let mut shape = vec![examples.len()];
    shape.extend_from_slice(input_shape);
    let n = labels.len();
    Ok((
        Tensor::new(shape, data, precision)?,
        Tensor::new(vec![n], labels, precision)?,
    ))
}

/// Inference-mode predictions with augmentation randomness removed.
pub fn predict(
    model: &ModelGraph,
    examples: &[Example],
    pipeline: &PipelineSpec,
    batch_size: usize,
) -> Result<Vec<f64>> {
    predict_counted(model, examples, pipeline, batch_size, &mut AugCounters::default()).map(|(p, _)| p)
}

fn predict_counted(
    model: &ModelGraph,
    examples: &[Example],
    pipeline: &PipelineSpec,
    batch_size: usize,
    counters: &mut AugCounters,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let eval_pipeline = pipeline.geometry_only();
    let mut preds = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ids in batches(examples.len(), batch_size, 0, 0, false)? {
        let batch: Vec<&Example> = ids.iter().map(|&i| &examples[i]).collect();
        let (x, y) = encode(
            &batch,
            &ids,
            &eval_pipeline,
            0,
            model.input_shape(),
            model.precision,
            Purpose::Eval,
            counters,
        )?;
        preds.extend_from_slice(model.predict(&x)?.data());
        labels.extend_from_slice(y.data());
    }
    Ok((preds, labels))
}

/// RMSE of `model` over `examples`.
pub fn evaluate(model: &ModelGraph, examples: &[Example], pipeline: &PipelineSpec, batch_size: usize) -> Result<f64> {
    evaluate_counted(model, examples, pipeline, batch_size, &mut AugCounters::default())
}

fn evaluate_counted(
    model: &ModelGraph,
    examples: &[Example],
    pipeline: &PipelineSpec,
    batch_size: usize,
    counters: &mut AugCounters,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(DatasetError::Empty("evaluation set").into());
    }
    let (p, y) = predict_counted(model, examples, pipeline, batch_size, counters)?;
    rmse(&Tensor::from_vec(&[p.len()], p)?, &Tensor::from_vec(&[y.len()], y)?)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Master seed; batch order uses its [`SHUFFLE_STREAM`] sub-stream.
    pub seed: u64,
    pub adam: AdamConfig,
    /// Training augmentation; validation uses its geometry only.
    pub pipeline: PipelineSpec,
    /// Stop after this many optimizer steps (the epoch is still recorded).
    pub max_steps: Option<usize>,
    /// Directory for the history file and checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Extra entries written into every checkpoint.
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Over the augmented training batches seen during the epoch.
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub steps: u64,
    pub augmented: AugCounters,
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl History {
    /// CSV with a `# seed=` comment line. Values use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# seed={}\nepoch,train_rmse,val_rmse,seconds\n", self.seed);
        for e in &self.epochs {
            let val = e.val_rmse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{:.3}", e.epoch, e.train_rmse, val, e.seconds);
        }
        s
    }
}

/// Trains every trainable parameter of `model` with Adam on mean squared
/// error. Batches are reshuffled each epoch from `(seed, epoch)`; batch-norm
/// running statistics are updated after every step. When `out_dir` is set,
/// the history is rewritten after each epoch and the checkpoint with the
/// lowest validation RMSE (training RMSE when there is no validation set)
/// is kept as `best.ckpt`, with the final state in `last.ckpt`.
pub fn train(
    model: &mut ModelGraph,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
) -> Result<History> {
    if train_set.is_empty() {
        return Err(DatasetError::Empty("training set").into());
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let trainable: Vec<usize> = (0..model.params.len()).filter(|&i| model.params[i].trainable).collect();
    let mut adam = AdamState::new(
        config.adam,
        &trainable.iter().map(|&i| &model.params[i].value).collect::<Vec<_>>(),
    );
    let mut history = History {
        seed: config.seed,
        epochs: Vec::new(),
        best_epoch: None,
        steps: 0,
        augmented: AugCounters::default(),
        step_losses: Vec::new(),
    };
    let mut best = f64::INFINITY;
    let shuffle_seed = derive_seed(config.seed, &[SHUFFLE_STREAM]);

    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut sse = 0.0;
        let mut seen = 0usize;
        let order = batches(train_set.len(), config.batch_size, shuffle_seed, epoch as u64, true)?;
        let mut stop = false;
        for (b, ids) in order.iter().enumerate() {
            let batch: Vec<&Example> = ids.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = encode(
                &batch,
                ids,
                &config.pipeline,
                epoch as u64,
                model.input_shape(),
                model.precision,
                Purpose::Train,
                &mut history.augmented,
            )?;
            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let xi = g.constant(x);
            let yi = g.constant(y);
            let fwd = model.forward(&mut g, xi, &params, BnMode::Train)?;
            let loss = mse_node(&mut g, fwd.output, yi)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor> = trainable
                .iter()
                .map(|&i| {
                    grads
                        .take(params[i])
                        .unwrap_or_else(|| Tensor::zeros(model.params[i].value.shape(), model.precision))
                })
                .collect();
            let mut targets: Vec<&mut Tensor> = model
                .params
                .iter_mut()
                .filter(|p| p.trainable)
                .map(|p| &mut p.value)
                .collect();
            adam.step(&mut targets, &grads.iter().collect::<Vec<_>>())?;
            model.commit_batch_stats(&fwd.batch_stats);
            history.steps += 1;
            history.step_losses.push(value);
            sse += value * ids.len() as f64;
            seen += ids.len();
            if config.max_steps.is_some_and(|m| history.steps as usize >= m) {
                stop = true;
                break;
            }
        }
        let train_rmse = (sse / seen as f64).sqrt();
        let val_rmse = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_counted(
                model,
                val_set,
                &config.pipeline,
                config.batch_size,
                &mut history.augmented,
            )?)
        };
        log::info!("epoch {epoch}: train_rmse {train_rmse:.6} val_rmse {val_rmse:?}");
        history.epochs.push(EpochRecord {
            epoch,
            train_rmse,
            val_rmse,
            seconds: started.elapsed().as_secs_f64(),
        });
        let score = val_rmse.unwrap_or(train_rmse);
        if score < best {
            best = score;
            history.best_epoch = Some(epoch);
            if let Some(dir) = &config.out_dir {
                save_checkpoint(model, &history, &config.metadata, &dir.join(BEST_CHECKPOINT))?;
            }
        }
        if let Some(dir) = &config.out_dir {
            std::fs::write(dir.join(HISTORY_FILE), history.to_csv())?;
        }
        if stop {
            break 'epochs;
        }
    }
    if let Some(dir) = &config.out_dir {
        save_checkpoint(model, &history, &config.metadata, &dir.join(LAST_CHECKPOINT))?;
    }
    Ok(history)
}

fn save_checkpoint(model: &ModelGraph, history: &History, extra: &Metadata, path: &Path) -> Result<()> {
    let mut meta = extra.clone();
    meta.set("seed", history.seed)?;
    meta.set("epoch", history.epochs.len())?;
    meta.set_list(
        "train_rmse",
        &history.epochs.iter().map(|e| e.train_rmse).collect::<Vec<_>>(),
    )?;
    meta.set_list(
        "val_rmse",
        &history.epochs.iter().filter_map(|e| e.val_rmse).collect::<Vec<_>>(),
    )?;
    Checkpoint::from_model(model, meta)?.save(path)
}

/// One single-frame example per record.
pub fn frame_examples(records: &[FrameRecord]) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example {
            frames: vec![FrameSource::Path(r.image.clone())],
            label: r.steering,
        })
        .collect()
}

/// Sequence-window examples; `records` is the video the windows index into.
pub fn window_examples(records: &[FrameRecord], windows: &[SequenceWindow]) -> Vec<Example> {
    windows
        .iter()
        .map(|w| Example {
            frames: w
                .indices
                .iter()
                .flatten()
                .map(|&i| FrameSource::Path(records[i].image.clone()))
                .collect(),
            label: w.label,
        })
        .collect()
}
