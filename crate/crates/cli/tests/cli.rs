//! End-to-end tests of the `trackgen` binary: exit codes, written artifacts,
//! and determinism of whole output trees.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn trackgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trackgen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// All files under `dir`, as paths relative to it, sorted.
fn tree(dir: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, base, out);
            } else {
                out.push(path.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

fn assert_identical_trees(a: &Path, b: &Path) {
    let ta = tree(a);
    assert_eq!(ta, tree(b), "different file sets");
    for rel in &ta {
        let ba = std::fs::read(a.join(rel)).unwrap();
        let bb = std::fs::read(b.join(rel)).unwrap();
        assert_eq!(ba, bb, "file {} differs", rel.display());
    }
}

#[test]
fn gen_is_deterministic_and_self_describing() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        assert_ok(&trackgen(&[
            "gen", "--preset", "mini", "--clips", "3", "--seed", "7", "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_identical_trees(&a, &b);

    let files = tree(&a);
    assert!(files.contains(&PathBuf::from("config.kv")));
    assert!(files.contains(&PathBuf::from("clip_000/annotation.json")));
    assert!(files.contains(&PathBuf::from("clip_002/frames/frame_000.ppm")));

    // a different seed must change the data
    let c = tmp.path().join("c");
    assert_ok(&trackgen(&[
        "gen", "--preset", "mini", "--clips", "3", "--seed", "8", "--out",
        c.to_str().unwrap(),
    ]));
    let first = std::fs::read(a.join("clip_000/annotation.json")).unwrap();
    let other = std::fs::read(c.join("clip_000/annotation.json")).unwrap();
    assert_ne!(first, other);
}

#[test]
fn gen_rejects_more_instances_than_slots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = trackgen(&[
        "gen", "--instances", "99", "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    let msg = String::from_utf8_lossy(&out.stderr).to_lowercase();
    assert!(msg.contains("capacity"), "stderr: {msg}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.kv");
    std::fs::write(&cfg, "framez = 4\n").unwrap();
    let out = trackgen(&[
        "gen", "--config", cfg.to_str().unwrap(), "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("framez"));
}

#[test]
fn video_stage_requires_image_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    assert_ok(&trackgen(&[
        "gen", "--preset", "mini", "--clips", "2", "--out", ds.to_str().unwrap(),
    ]));

    let refused = trackgen(&[
        "train", "--preset", "mini", "--data", ds.to_str().unwrap(), "--out",
        tmp.path().join("r").to_str().unwrap(), "--stage", "video", "--steps", "1",
    ]);
    assert_exit(&refused, 2);

    let cold = trackgen(&[
        "train", "--preset", "mini", "--data", ds.to_str().unwrap(), "--out",
        tmp.path().join("cold").to_str().unwrap(), "--stage", "video", "--steps", "1",
        "--allow-cold-start",
    ]);
    assert_ok(&cold);
}

#[test]
fn train_writes_checkpoint_loss_trace_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let run = tmp.path().join("run");
    assert_ok(&trackgen(&[
        "gen", "--preset", "mini", "--clips", "2", "--out", ds.to_str().unwrap(),
    ]));
    assert_ok(&trackgen(&[
        "train", "--preset", "mini", "--data", ds.to_str().unwrap(), "--out",
        run.to_str().unwrap(), "--stage", "image", "--steps", "6", "--log-every", "2",
    ]));

    assert!(run.join("checkpoint.bin").exists());
    let cfg = std::fs::read_to_string(run.join("config.kv")).unwrap();
    assert!(cfg.contains("stage = image"));
    assert!(cfg.contains("steps = 6"));
    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,loss");
    assert!(lines[1].starts_with("0,"));
    assert!(lines.last().unwrap().starts_with("5,"));
    for line in &lines[1..] {
        let loss: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(loss.is_finite());
    }
}

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let s1 = tmp.path().join("s1");
    let s2 = tmp.path().join("s2");
    let gen = tmp.path().join("gen");

    assert_ok(&trackgen(&[
        "gen", "--preset", "mini", "--clips", "2", "--seed", "3", "--out",
        ds.to_str().unwrap(),
    ]));
    assert_ok(&trackgen(&[
        "train", "--preset", "mini", "--data", ds.to_str().unwrap(), "--out",
        s1.to_str().unwrap(), "--stage", "image", "--steps", "12",
    ]));
    assert_ok(&trackgen(&[
        "train", "--preset", "mini", "--data", ds.to_str().unwrap(), "--out",
        s2.to_str().unwrap(), "--stage", "video", "--init",
        s1.join("checkpoint.bin").to_str().unwrap(), "--steps", "12",
    ]));
    assert_ok(&trackgen(&[
        "sample", "--ckpt", s2.join("checkpoint.bin").to_str().unwrap(), "--steps",
        "5", "--out", gen.to_str().unwrap(),
        ds.join("clip_000/annotation.json").to_str().unwrap(),
        ds.join("clip_001/annotation.json").to_str().unwrap(),
    ]));

    // sampled tree mirrors the dataset layout and echoes the model config
    assert!(gen.join("clip_001/frames/frame_003.ppm").exists());
    assert!(gen.join("clip_000/annotation.json").exists());
    let cfg = std::fs::read_to_string(gen.join("config.kv")).unwrap();
    assert!(cfg.contains("stage = video"));

    // sampling with the same inputs is reproducible
    let gen2 = tmp.path().join("gen2");
    assert_ok(&trackgen(&[
        "sample", "--ckpt", s2.join("checkpoint.bin").to_str().unwrap(), "--steps",
        "5", "--out", gen2.to_str().unwrap(),
        ds.join("clip_000/annotation.json").to_str().unwrap(),
        ds.join("clip_001/annotation.json").to_str().unwrap(),
    ]));
    assert_identical_trees(&gen, &gen2);

    // eval writes per-clip and aggregate reports
    assert_ok(&trackgen(&["eval", "--preset", "mini", "--data", gen.to_str().unwrap()]));
    assert!(gen.join("report_clip_000.json").exists());
    let report = std::fs::read_to_string(gen.join("report.json")).unwrap();
    assert!(report.contains("\"mean_iou\""));

    // a barely trained model cannot pass a strict self-check
    let failed = trackgen(&[
        "eval", "--preset", "mini", "--data", gen.to_str().unwrap(), "--self-check",
        "--min-miou", "0.95",
    ]);
    assert_exit(&failed, 2);

    // ground-truth frames ground perfectly, so the same self-check passes
    assert_ok(&trackgen(&[
        "eval", "--preset", "mini", "--data", ds.to_str().unwrap(), "--self-check",
        "--min-miou", "0.95",
    ]));
}

#[test]
fn ablation_flags_reach_the_model() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    assert_ok(&trackgen(&[
        "gen", "--preset", "mini", "--clips", "2", "--out", ds.to_str().unwrap(),
    ]));
    let run = tmp.path().join("abl");
    assert_ok(&trackgen(&[
        "train", "--preset", "mini", "--data", ds.to_str().unwrap(), "--out",
        run.to_str().unwrap(), "--stage", "video", "--allow-cold-start", "--steps", "2",
        "--no-enhancer", "--fusion", "self", "--enhancer-pos", "encoder",
    ]));
    let cfg = std::fs::read_to_string(run.join("config.kv")).unwrap();
    assert!(cfg.contains("no_enhancer = true"));
    assert!(cfg.contains("fusion = self"));
    assert!(cfg.contains("enhancer_pos = encoder"));

    let bad = trackgen(&[
        "train", "--preset", "mini", "--data", ds.to_str().unwrap(), "--out",
        tmp.path().join("bad").to_str().unwrap(), "--stage", "video",
        "--allow-cold-start", "--steps", "1", "--fusion", "sideways",
    ]);
    assert_exit(&bad, 2);
}

#[test]
fn gradcheck_reports_every_module() {
    let out = trackgen(&["gradcheck", "--seeds", "1"]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["matmul", "roi_align", "q_sample", "denoiser_miniature"] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
    assert!(!text.contains("FAIL"));
}
