mod common;

use std::path::Path;

use common::*;
use steerlab::config::{ModelKind, RunConfig};
use steerlab::models::Checkpoint;
use steerlab::train::zero_baseline;

fn labels(data: &Path) -> Vec<f64> {
    let mut dirs: Vec<_> = std::fs::read_dir(data).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    dirs.iter()
        .flat_map(|d| {
            std::fs::read_to_string(d.join("index.csv"))
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn ingest_reports_counts_and_label_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &[6, 9], 1);
    std::fs::remove_file(data.join("video_01/frame_00004.png")).unwrap();
    let o = steerlab(&["ingest", "data"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("video_00\t6 frames"), "{text}");
    assert!(text.contains("video_01\t8 frames"), "{text}");
    assert!(text.contains("total\t2 videos\t14 frames"), "{text}");
    assert!(text.contains("skipped\t1 rows"), "{text}");
    assert!(text.contains("line 6"), "{text}");

    let mut ys = labels(&data);
    ys.remove(6 + 4);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
    assert!(text.contains(&format!("mean {mean:.6}\tstd {std:.6}")), "{text}");
}

#[test]
fn ingest_layout_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("empty")).unwrap();
    let o = steerlab(&["ingest", "empty"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no videos"));

    std::fs::create_dir_all(dir.path().join("bad/video_00")).unwrap();
    let o = steerlab(&["ingest", "bad"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("index.csv"), "{}", stderr(&o));

    let o = steerlab(&["ingest", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"));
}

#[test]
fn train_smoke_run_writes_history_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &[10, 10], 2);
    let cfg = smoke_config(dir.path(), &data, "run");
    let o = steerlab(&["train", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("examples: 16 train, 4 val"), "{text}");
    assert!(text.contains("epoch   1  train_rmse"), "{text}");

    let run = dir.path().join("run");
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "# seed=11");
    assert_eq!(lines[1], "epoch,train_rmse,val_rmse,seconds");
    assert_eq!(lines.len(), 3);
    for f in ["best.ckpt", "last.ckpt", "config.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let stored = RunConfig::from_file(&run.join("config.txt")).unwrap();
    assert_eq!(stored.seed, 11);
    assert_eq!(stored.output, run.canonicalize().unwrap());
}

#[test]
fn train_config_errors_exit_2_and_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &[10, 10], 3);
    let cfg = smoke_config(dir.path(), &data, "run");
    let path = cfg.to_str().unwrap();

    let bad = write_config(dir.path(), "bad.cfg", &["model = nvidia", "colour = red"]);
    let o = steerlab(&["train", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    let o = steerlab(&["train", path, "--set", "learning_rate=0.1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));

    let o = steerlab(&["train", "missing.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = steerlab(&["train"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = steerlab(&["train", path, "--set", "lr=1e300"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch 1, batch 2"), "{}", stderr(&o));
}

#[test]
fn eval_matches_training_history_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &[10, 10], 4);
    let cfg = smoke_config(dir.path(), &data, "run");
    let o = steerlab(&["train", cfg.to_str().unwrap(), "--set", "epochs=2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let history = std::fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    let val: Vec<f64> = history
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let best = val.iter().copied().fold(f64::INFINITY, f64::min);

    let o = steerlab(&["eval", "--checkpoint", "run/best.ckpt", "--baseline"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("examples 4\n"), "{text}");
    let rmse: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rmse "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(rmse, best);
    let ys = labels(&data);
    let val_labels: Vec<f64> = ys[8..10].iter().chain(&ys[18..20]).copied().collect();
    assert!(
        text.contains(&format!("baseline_rmse {}\n", zero_baseline(&val_labels).unwrap())),
        "{text}"
    );

    let again = steerlab(&["eval", "--checkpoint", "run/best.ckpt", "--baseline"], dir.path());
    assert_eq!(stdout(&again), text);

    let o = steerlab(
        &["eval", "--baseline", "--dataset", "data", "--split", "all"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains(&format!("baseline_rmse {}\n", zero_baseline(&ys).unwrap())));

    let o = steerlab(&["eval", "--dataset", "data"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = steerlab(&["eval", "--checkpoint", "nope.ckpt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_of_zero_head_on_zero_labels_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &[5], 5);
    set_labels(&data, 0.0);
    let cfg = RunConfig {
        dataset: Some(data.clone()),
        ..RunConfig::default()
    };
    let mut model = cfg.build_model().unwrap();
    for p in model.params.iter_mut().filter(|p| p.name.contains("_steering/")) {
        p.value = p.value.map(|_| 0.0);
    }
    let ckpt = dir.path().join("zero.ckpt");
    Checkpoint::from_model(&model, cfg.to_metadata().unwrap())
        .unwrap()
        .save(&ckpt)
        .unwrap();
    let o = steerlab(
        &["eval", "--checkpoint", "zero.ckpt", "--split", "all", "--baseline"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "examples 5\nrmse 0\nbaseline_rmse 0\n");
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn augment_preview_cases() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &[6], 6);
    let cfg = smoke_config(dir.path(), &data, "run");
    let cfg = cfg.to_str().unwrap();

    let o = steerlab(&["augment-preview", cfg, "--n", "0", "--out", "zero"], dir.path());
    assert!(o.status.success());
    assert!(!dir.path().join("zero").exists());

    let run = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "augment-preview",
            cfg,
            "--n",
            "3",
            "--out",
            out,
            "--set",
            "preset=heavy",
        ];
        args.extend_from_slice(extra);
        let o = steerlab(&args, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        files(&dir.path().join(out))
    };
    let a = run("a", &[]);
    assert_eq!(a.len(), 7);
    assert_eq!(a, run("b", &[]));
    assert_ne!(a, run("c", &["--set", "seed=12"]));

    let plain = run("none", &["--set", "preset=none"]);
    for i in 0..3 {
        let before = image::open(dir.path().join(format!("none/before_{i:03}.png"))).unwrap();
        let after = image::open(dir.path().join(format!("none/after_{i:03}.png"))).unwrap();
        assert_eq!(before, after);
    }
    let csv = &plain.iter().find(|(n, _)| n == "labels.csv").unwrap().1;
    for line in String::from_utf8_lossy(csv).lines().skip(1) {
        assert_eq!(line.rsplit(',').next(), Some("0"));
    }
}

#[test]
fn saliency_for_frames_and_windows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), &[25], 7);

    let o = steerlab(
        &[
            "saliency",
            "--checkpoint",
            "none.ckpt",
            "--frame",
            "x.png",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));

    let save = |kind: ModelKind, name: &str| {
        let cfg = RunConfig {
            model: kind,
            ..RunConfig::default()
        };
        let model = cfg.build_model().unwrap();
        Checkpoint::from_model(&model, cfg.to_metadata().unwrap())
            .unwrap()
            .save(&dir.path().join(name))
            .unwrap();
    };
    save(ModelKind::Nvidia, "nvidia.ckpt");
    save(ModelKind::Conv3dLstm, "conv3d.ckpt");
    let frame = |t: usize| data.join(format!("video_00/frame_{t:05}.png")).display().to_string();

    let f0 = frame(0);
    let o = steerlab(
        &[
            "saliency",
            "--checkpoint",
            "nvidia.ckpt",
            "--frame",
            &f0,
            "--truth",
            "-0.1",
            "--out",
            "single",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let written: Vec<String> = files(&dir.path().join("single")).into_iter().map(|(n, _)| n).collect();
    assert_eq!(written, ["angle.png", "saliency.png"]);

    let o = steerlab(
        &["saliency", "--checkpoint", "conv3d.ckpt", "--frame", &f0, "--out", "w"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("25 frame"));

    let frames: Vec<String> = (0..25).map(frame).collect();
    let mut args = vec!["saliency", "--checkpoint", "conv3d.ckpt", "--out", "window"];
    for f in &frames {
        args.extend_from_slice(&["--frame", f]);
    }
    let o = steerlab(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let written: Vec<String> = files(&dir.path().join("window")).into_iter().map(|(n, _)| n).collect();
    assert_eq!(written.len(), 26);
    assert_eq!(written[0], "collapsed.png");
    assert_eq!(written[25], "frame_24.png");
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut kinds = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let cfg = RunConfig::from_file(&entry.unwrap().path()).unwrap();
        assert!(cfg.dataset.is_some());
        kinds.push(cfg.model);
    }
    kinds.sort_by_key(|k| k.to_string());
    assert_eq!(kinds, [ModelKind::Conv3dLstm, ModelKind::Nvidia, ModelKind::Transfer]);
}
