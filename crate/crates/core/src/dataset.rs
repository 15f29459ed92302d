//! Frame-index ingestion, splitting, sequence windows and batching.
//!
//! A dataset root holds one directory per video. Each video directory has an
//! `index.csv` with the columns `timestamp, frame, camera, steering, torque,
//! speed` (any order, extra columns ignored) and the frame images it names,
//! with paths relative to the video directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::Deserialize;

use crate::error::{DatasetError, Error, Result};
use crate::tensor::{derive_seed, SeededRng};

pub const INDEX_FILE: &str = "index.csv";
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Camera {
    Left,
    Center,
    Right,
}

impl FromStr for Camera {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(Camera::Left),
            "center" | "centre" => Ok(Camera::Center),
            "right" => Ok(Camera::Right),
            other => Err(format!("unknown camera `{other}`")),
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Camera::Left => "left",
            Camera::Center => "center",
            Camera::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub video: String,
    pub image: PathBuf,
    pub timestamp: i64,
    pub camera: Camera,
    /// Inverse turning radius (1/m).
    pub steering: f64,
    pub torque: f64,
    pub speed: f64,
}

/// A row that was read but left out, with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRow {
    pub index: PathBuf,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IndexReport {
    pub records: Vec<FrameRecord>,
    pub skipped: Vec<SkippedRow>,
}

const COLUMNS: [&str; 6] = ["timestamp", "frame", "camera", "steering", "torque", "speed"];

#[derive(Deserialize)]
struct Row {
    timestamp: i64,
    frame: String,
    camera: String,
    steering: f64,
    torque: f64,
    speed: f64,
}

/// Reads one index file. Rows whose image is absent go to the skipped list;
/// anything unparsable is an error naming its line.
pub fn parse_index(csv_path: &Path, image_root: &Path) -> Result<IndexReport> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| malformed(csv_path, 1, e.to_string()))?
        .clone();
    if text.trim().is_empty() || headers.iter().all(str::is_empty) {
        return Err(DatasetError::NoHeader {
            path: csv_path.to_path_buf(),
        }
        .into());
    }
    if let Some(column) = COLUMNS.into_iter().find(|c| !headers.iter().any(|h| h == *c)) {
        return Err(DatasetError::MissingColumn {
            path: csv_path.to_path_buf(),
            column,
        }
        .into());
    }
    let video = image_root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut report = IndexReport::default();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(csv_path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| malformed(csv_path, line, e.to_string()))?;
        let camera = row.camera.parse::<Camera>().map_err(|e| malformed(csv_path, line, e))?;
        if !row.steering.is_finite() {
            return Err(malformed(csv_path, line, "steering is not finite".into()));
        }
        if let Some(prev) = report.records.last() {
            if row.timestamp < prev.timestamp {
                return Err(malformed(csv_path, line, "timestamp decreases".into()));
            }
        }
        let image = image_root.join(&row.frame);
        if !image.is_file() {
            report.skipped.push(SkippedRow {
                index: csv_path.to_path_buf(),
                line,
                reason: format!("missing image {}", image.display()),
            });
            continue;
        }
        report.records.push(FrameRecord {
            video: video.clone(),
            image,
            timestamp: row.timestamp,
            camera,
            steering: row.steering,
            torque: row.torque,
            speed: row.speed,
        });
    }
    Ok(report)
}

fn malformed(path: &Path, row: u64, reason: String) -> Error {
    DatasetError::MalformedRow {
        path: path.to_path_buf(),
        row: row as usize,
        reason,
    }
    .into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub records: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub videos: Vec<Video>,
    pub skipped: Vec<SkippedRow>,
}

impl Dataset {
    /// Loads every video directory under `root`, sorted by name.
    pub fn load(root: &Path) -> Result<Self> {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(DatasetError::EmptyRoot(root.to_path_buf()).into());
        }
        let mut out = Dataset::default();
        for dir in dirs {
            let index = dir.join(INDEX_FILE);
            if !index.is_file() {
                return Err(DatasetError::MissingIndex(dir).into());
            }
            let report = parse_index(&index, &dir)?;
            out.skipped.extend(report.skipped);
            out.videos.push(Video {
                id: dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                records: report.records,
            });
        }
        Ok(out)
    }

    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.records.len()).sum()
    }

    /// Keeps only frames from `camera` in every video.
    pub fn with_camera(mut self, camera: Camera) -> Self {
        for v in &mut self.videos {
            v.records.retain(|r| r.camera == camera);
        }
        self
    }

    pub fn records(&self) -> impl Iterator<Item = &FrameRecord> {
        self.videos.iter().flat_map(|v| &v.records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPolicy {
    /// First `⌊ratio·n⌋` items of every video train, the rest validate.
    Chronological,
    /// A seeded shuffle of all items, then the first `⌊ratio·n⌋` train.
    SeededRandom(u64),
}

/// Splits `items` into (train, validation). `video_of` groups items for the
/// chronological policy; relative order is kept in both halves.
pub fn split_by<T: Clone>(
    items: &[T],
    ratio: f64,
    policy: SplitPolicy,
    video_of: impl Fn(&T) -> &str,
) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(DatasetError::Empty("nothing to split").into());
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} is outside (0, 1)")));
    }
    let cut = |n: usize| (ratio * n as f64).floor() as usize;
    let mut in_train = vec![false; items.len()];
    match policy {
        SplitPolicy::Chronological => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, item) in items.iter().enumerate() {
                groups.entry(video_of(item)).or_default().push(i);
            }
            for members in groups.values() {
                for &i in &members[..cut(members.len())] {
                    in_train[i] = true;
                }
            }
        }
        SplitPolicy::SeededRandom(seed) => {
            let mut order: Vec<usize> = (0..items.len()).collect();
            SeededRng::new(seed).shuffle(&mut order);
            for &i in &order[..cut(items.len())] {
                in_train[i] = true;
            }
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (item, t) in items.iter().zip(in_train) {
        if t {
            train.push(item.clone());
        } else {
            val.push(item.clone());
        }
    }
    Ok((train, val))
}

pub fn split(records: &[FrameRecord], ratio: f64, policy: SplitPolicy) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>)> {
    split_by(records, ratio, policy, |r| &r.video)
}

/// `sequences` overlapping runs of `frames` consecutive frames, each starting
/// one frame after the previous, labelled by the last frame's steering.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub video: String,
    /// `indices[j][k]` is the position within the video of frame `k` of
    /// sequence `j`.
    pub indices: Vec<Vec<usize>>,
    pub label: f64,
}

impl SequenceWindow {
    /// Position of the final (labelling) frame.
    pub fn end(&self) -> usize {
        *self.indices.last().and_then(|s| s.last()).expect("window is non-empty")
    }
}

/// Windows ending at every frame `t ≥ sequences + frames − 2`. Sequence `j`
/// covers `t − (sequences + frames − 2) + j ..= t − (sequences − 1) + j`.
pub fn make_windows(records: &[FrameRecord], sequences: usize, frames: usize) -> Vec<SequenceWindow> {
    let span = sequences + frames - 1;
    if sequences == 0 || frames == 0 || records.len() < span {
        log::debug!("{} frames are too few for a {sequences}×{frames} window", records.len());
        return Vec::new();
    }
    (span - 1..records.len())
        .map(|t| {
            let start = t + 1 - span;
            SequenceWindow {
                video: records[t].video.clone(),
                indices: (0..sequences)
                    .map(|j| (start + j..start + j + frames).collect())
                    .collect(),
                label: records[t].steering,
            }
        })
        .collect()
}

/// Index batches over `n` items. Shuffling is seeded by `(seed, epoch)`; the
/// last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        SeededRng::new(derive_seed(seed, &[epoch])).shuffle(&mut order);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn load_frame(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

/// Mean and population standard deviation of the steering labels.
pub fn steering_stats<'a>(records: impl IntoIterator<Item = &'a FrameRecord>) -> Option<(f64, f64)> {
    let values: Vec<f64> = records.into_iter().map(|r| r.steering).collect();
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Steering value encoded by the synthetic frame generator for a bar at
/// horizontal fraction `u ∈ [0, 1]`.
pub fn synthetic_steering(u: f64) -> f64 {
    0.5 * (u - 0.5)
}

/// Writes a dataset whose frames show a bright vertical bar on a dark road
/// texture; the bar's horizontal position determines the steering label.
/// `frames_per_video[i]` frames go to video `video_{i:02}`.
pub fn write_synthetic(root: &Path, frames_per_video: &[usize], width: u32, height: u32, seed: u64) -> Result<()> {
    use std::fmt::Write as _;
    for (vi, &n) in frames_per_video.iter().enumerate() {
        let dir = root.join(format!("video_{vi:02}"));
        std::fs::create_dir_all(&dir)?;
        let mut rng = SeededRng::new(derive_seed(seed, &[vi as u64]));
        let mut csv = String::from("timestamp,frame,camera,steering,torque,speed\n");
        let mut u = rng.uniform();
        for t in 0..n {
            u = (u + rng.uniform_range(-0.05, 0.05)).clamp(0.05, 0.95);
            let bar = (u * f64::from(width)) as u32;
            let half = (width / 40).max(1);
            let img = RgbImage::from_fn(width, height, |x, y| {
                if x.abs_diff(bar) <= half {
                    image::Rgb([230, 230, 200])
                } else {
                    let v = (40 + (x * 7 + y * 13) % 30) as u8;
                    image::Rgb([v, v, v + 10])
                }
            });
            let name = format!("frame_{t:05}.png");
            img.save(dir.join(&name))?;
            let steering = synthetic_steering(u);
            let _ = writeln!(
                csv,
                "{},{name},center,{steering},{},{}",
                1_000 + t * 50,
                steering * 2.0,
                10.0
            );
        }
        std::fs::write(dir.join(INDEX_FILE), csv)?;
    }
    Ok(())
}
