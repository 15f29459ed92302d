#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use steerlab::dataset::write_synthetic;

/// Frames already at the cropped model size pass through the sky crop.
pub const FRAME: (u32, u32) = (320, 120);

pub fn dataset(root: &Path, frames_per_video: &[usize], seed: u64) -> PathBuf {
    let data = root.join("data");
    write_synthetic(&data, frames_per_video, FRAME.0, FRAME.1, seed).unwrap();
    data
}

/// Rewrites every steering value in the dataset's index files.
pub fn set_labels(data: &Path, value: f64) {
    for entry in std::fs::read_dir(data).unwrap() {
        let index = entry.unwrap().path().join("index.csv");
        let text = std::fs::read_to_string(&index).unwrap();
        let mut lines = text.lines();
        let mut out = format!("{}\n", lines.next().unwrap());
        for line in lines {
            let mut cols: Vec<String> = line.split(',').map(str::to_string).collect();
            cols[3] = value.to_string();
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        std::fs::write(&index, out).unwrap();
    }
}

pub fn write_config(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

/// A one-epoch NVIDIA run over 16 training frames.
pub fn smoke_config(dir: &Path, data: &Path, output: &str) -> PathBuf {
    write_config(
        dir,
        "smoke.cfg",
        &[
            "model = nvidia",
            &format!("dataset = {}", data.display()),
            "epochs = 1",
            "batch_size = 4",
            "seed = 11",
            "preset = moderate",
            &format!("output = {output}"),
        ],
    )
}

pub fn steerlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steerlab"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The history file with its wall-clock column removed.
pub fn history_without_seconds(text: &str) -> String {
    text.lines()
        .map(|l| {
            if l.starts_with('#') {
                l
            } else {
                l.rsplit_once(',').map_or(l, |(head, _)| head)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
