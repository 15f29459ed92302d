//! Commands behind the `steerlab` binary.
//!
//! Each command writes a human-readable report to the supplied writer and
//! fails with a [`CliError`] that carries the process exit code: 2 for usage,
//! configuration and input-layout problems, 3 for failures during a run.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use steerlab::augment::{normalize, LabeledImage};
use steerlab::config::RunConfig;
use steerlab::dataset::{load_frame, steering_stats, Dataset};
use steerlab::models::{Checkpoint, ModelGraph};
use steerlab::saliency::{collapse_sequence, frame_gradients, input_gradient, render, render_angle, to_map};
use steerlab::tensor::Tensor;
use steerlab::train::{evaluate, train, zero_baseline, Example, History};
use steerlab::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Name of the resolved configuration written next to the run outputs.
pub const CONFIG_COPY: &str = "config.txt";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Dataset(_) | Error::Checkpoint(_) | Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        CliError { code, error: e.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

pub type CmdResult<T> = Result<T, CliError>;

/// Reads a config file and applies `key=value` overrides on top.
pub fn load_run_config(path: &Path, overrides: &[String]) -> CmdResult<RunConfig> {
    if !path.is_file() {
        return Err(CliError::usage(format!("{}: config file not found", path.display())));
    }
    let mut cfg = RunConfig::from_file(path)?;
    cfg.apply_overrides(overrides, &std::env::current_dir()?)?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> CmdResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::usage(format!("{}: checkpoint not found", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

/// Rebuilds the model recorded in a checkpoint and restores its tensors.
pub fn model_from_checkpoint(ckpt: &Checkpoint, cfg: &RunConfig) -> CmdResult<ModelGraph> {
    let mut model = cfg.build_model()?;
    model.restore(ckpt)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub videos: Vec<(String, usize)>,
    pub frames: usize,
    pub skipped: usize,
    pub steering: Option<(f64, f64)>,
}

pub fn cmd_ingest(root: &Path, out: &mut dyn Write) -> CmdResult<IngestSummary> {
    if !root.is_dir() {
        return Err(CliError::usage(format!("{}: not a directory", root.display())));
    }
    let data = Dataset::load(root)?;
    let videos: Vec<(String, usize)> = data.videos.iter().map(|v| (v.id.clone(), v.records.len())).collect();
    for (id, n) in &videos {
        writeln!(out, "{id}\t{n} frames")?;
    }
    let steering = steering_stats(data.records());
    writeln!(out, "total\t{} videos\t{} frames", videos.len(), data.frame_count())?;
    match steering {
        Some((mean, std)) => writeln!(out, "steering\tmean {mean:.6}\tstd {std:.6}")?,
        None => writeln!(out, "steering\tno labelled frames")?,
    }
    writeln!(out, "skipped\t{} rows", data.skipped.len())?;
    for s in &data.skipped {
        writeln!(out, "  {} line {}: {}", s.index.display(), s.line, s.reason)?;
    }
    Ok(IngestSummary {
        videos,
        frames: data.frame_count(),
        skipped: data.skipped.len(),
        steering,
    })
}

pub fn cmd_train(config: &Path, overrides: &[String], out: &mut dyn Write) -> CmdResult<History> {
    let cfg = load_run_config(config, overrides)?;
    let data = cfg.load_examples()?;
    if data.train.is_empty() {
        return Err(CliError::usage("the training split is empty"));
    }
    let mut model = cfg.build_model()?;
    if let Some(path) = &cfg.pretrained {
        let report = model.import_named(&load_checkpoint(path)?)?;
        writeln!(
            out,
            "pretrained: loaded {} tensors, {} unmatched, {} left at init",
            report.loaded.len(),
            report.unmatched.len(),
            report.untouched.len()
        )?;
    }
    writeln!(
        out,
        "model {}: {} parameters, {} trainable",
        model.id,
        model.param_count(),
        model.trainable_count()
    )?;
    writeln!(
        out,
        "examples: {} train, {} val, {} skipped rows",
        data.train.len(),
        data.val.len(),
        data.skipped.len()
    )?;
    std::fs::create_dir_all(&cfg.output)?;
    std::fs::write(cfg.output.join(CONFIG_COPY), cfg.to_text())?;

    let history = train(&mut model, &data.train, &data.val, &cfg.train_config()?)?;
    for e in &history.epochs {
        let val = e.val_rmse.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(
            out,
            "epoch {:>3}  train_rmse {:.6}  val_rmse {val}  ({:.1}s)",
            e.epoch, e.train_rmse, e.seconds
        )?;
    }
    if let Some(best) = history.best_epoch {
        writeln!(out, "best epoch {best}; outputs in {}", cfg.output.display())?;
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    #[default]
    Val,
    All,
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    /// Overrides the configuration stored in the checkpoint.
    pub config: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub split: Split,
    pub baseline: bool,
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub examples: usize,
    pub rmse: Option<f64>,
    pub baseline: Option<f64>,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult<EvalReport> {
    if args.checkpoint.is_none() && !args.baseline {
        return Err(CliError::usage("eval needs --checkpoint, --baseline or both"));
    }
    let ckpt = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut cfg = match (&args.config, &ckpt) {
        (Some(path), _) => load_run_config(path, &[])?,
        (None, Some(c)) => RunConfig::from_metadata(&c.metadata)?,
        (None, None) => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides, &std::env::current_dir()?)?;
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }
    let data = cfg.load_examples()?;
    let examples: Vec<Example> = match args.split {
        Split::Train => data.train,
        Split::Val => data.val,
        Split::All => data.train.into_iter().chain(data.val).collect(),
    };
    if examples.is_empty() {
        return Err(CliError::usage("the selected split is empty"));
    }
    writeln!(out, "examples {}", examples.len())?;
    let rmse = match &ckpt {
        Some(c) => {
            let model = model_from_checkpoint(c, &cfg)?;
            let r = evaluate(&model, &examples, &cfg.pipeline(), cfg.batch_size)?;
            writeln!(out, "rmse {r}")?;
            Some(r)
        }
        None => None,
    };
    let baseline = if args.baseline {
        let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
        let b = zero_baseline(&labels)?;
        writeln!(out, "baseline_rmse {b}")?;
        Some(b)
    } else {
        None
    };
    Ok(EvalReport {
        examples: examples.len(),
        rmse,
        baseline,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreviewPair {
    pub before: PathBuf,
    pub after: PathBuf,
    pub label: f64,
    pub augmented_label: f64,
}

/// Writes `n` before/after pairs of the first training examples as they are
/// augmented in epoch 1, plus `labels.csv`. `n = 0` writes nothing.
pub fn cmd_augment_preview(
    config: &Path,
    overrides: &[String],
    n: usize,
    out_dir: &Path,
    out: &mut dyn Write,
) -> CmdResult<Vec<PreviewPair>> {
    let cfg = load_run_config(config, overrides)?;
    if n == 0 {
        writeln!(out, "nothing to preview")?;
        return Ok(Vec::new());
    }
    let data = cfg.load_examples()?;
    let pipeline = cfg.pipeline();
    let geometry = pipeline.geometry_only();
    std::fs::create_dir_all(out_dir)?;
    let mut pairs = Vec::new();
    let mut csv = String::from("index,label,augmented_label,delta\n");
    for (i, ex) in data.train.iter().take(n).enumerate() {
        let source = LabeledImage {
            image: ex.frames.last().expect("examples have frames").load()?,
            steering: ex.label,
        };
        let before = geometry.apply(&source, 1, i as u64)?;
        let after = pipeline.apply(&source, 1, i as u64)?;
        let pair = PreviewPair {
            before: out_dir.join(format!("before_{i:03}.png")),
            after: out_dir.join(format!("after_{i:03}.png")),
            label: ex.label,
            augmented_label: after.steering,
        };
        before.image.save(&pair.before).map_err(Error::from)?;
        after.image.save(&pair.after).map_err(Error::from)?;
        let delta = after.steering - ex.label;
        csv.push_str(&format!("{i},{},{},{delta}\n", ex.label, after.steering));
        writeln!(
            out,
            "{i:03}  label {:+.6}  augmented {:+.6}  delta {delta:+.6}",
            ex.label, after.steering
        )?;
        pairs.push(pair);
    }
    std::fs::write(out_dir.join("labels.csv"), csv)?;
    if pairs.len() < n {
        writeln!(out, "only {} training examples available", pairs.len())?;
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Default)]
pub struct SaliencyArgs {
    pub checkpoint: PathBuf,
    /// One frame, or a whole window in sequence-major order.
    pub frames: Vec<PathBuf>,
    /// True steering value; when given, an angle dial is rendered too.
    pub truth: Option<f64>,
    pub k_display: Option<f64>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyOutput {
    pub prediction: f64,
    pub files: Vec<PathBuf>,
}

pub fn cmd_saliency(args: &SaliencyArgs, out: &mut dyn Write) -> CmdResult<SaliencyOutput> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cfg = RunConfig::from_metadata(&ckpt.metadata)?;
    let model = model_from_checkpoint(&ckpt, &cfg)?;
    let shape = model.input_shape().to_vec();
    let expected = if shape.len() == 5 { shape[0] * shape[1] } else { 1 };
    if args.frames.len() != expected {
        return Err(CliError::usage(format!(
            "model {} takes {expected} frame(s), got {}",
            model.id,
            args.frames.len()
        )));
    }
    let images = args
        .frames
        .iter()
        .map(|p| load_frame(p))
        .collect::<steerlab::Result<Vec<_>>>()?;
    let (frames, _) = cfg.pipeline().geometry_only().apply_window(&images, 0.0, 0, 0)?;
    let mut data = Vec::new();
    for f in &frames {
        data.extend_from_slice(normalize(f, model.precision).data());
    }
    let x = Tensor::new(shape.clone(), data, model.precision).map_err(|_| {
        let (w, h) = frames[0].dimensions();
        CliError::usage(format!(
            "frames are {w}x{h} after the geometry step; model input is {shape:?}"
        ))
    })?;
    let mut batched = vec![1];
    batched.extend_from_slice(&shape);
    let prediction = model.predict(&x.reshape(&batched)?)?.item();
    let grad = input_gradient(&model, &x)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut files = Vec::new();
    if frames.len() == 1 {
        let path = args.out_dir.join("saliency.png");
        render(&frames[0], &to_map(&grad)?, &path)?;
        files.push(path);
    } else {
        let grads = frame_gradients(&grad)?;
        for (j, (g, f)) in grads.iter().zip(&frames).enumerate() {
            let path = args.out_dir.join(format!("frame_{j:02}.png"));
            render(f, &to_map(g)?, &path)?;
            files.push(path);
        }
        let path = args.out_dir.join("collapsed.png");
        render(
            frames.last().expect("window frames"),
            &collapse_sequence(&grads)?,
            &path,
        )?;
        files.push(path);
    }
    if let Some(truth) = args.truth {
        let path = args.out_dir.join("angle.png");
        let k = args.k_display.unwrap_or(cfg.k_display);
        render_angle(frames.last().expect("frames"), truth, prediction, k, &path)?;
        files.push(path);
    }
    writeln!(out, "prediction {prediction}")?;
    for f in &files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(SaliencyOutput { prediction, files })
}
