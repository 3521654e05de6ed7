use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cad_core::io::{read_label, write_label, Dataset, LabelFile};
use cad_core::oracle::{label_from_scene, TraversabilityRules};
use cad_core::{CadProfile, PolarGridSpec};

fn cad(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cad")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = cad(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    cad(args, cwd).status.code().unwrap()
}

/// Relative path -> contents of every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn sim_gen_writes_deterministic_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["sim-gen", "--out", "a", "--scenes", "10", "--seed", "1", "--frames", "2"];
    ok(&args, p);
    let ds = Dataset::open(p.join("a")).unwrap();
    assert_eq!(ds.manifest.records.len(), 10);
    for r in &ds.manifest.records {
        assert_eq!(r.frames.len(), 3);
        for f in &r.frames {
            assert!(p.join("a").join(f).exists());
        }
    }
    let mut again = args;
    again[2] = "b";
    ok(&again, p);
    assert_eq!(snapshot(&p.join("a")), snapshot(&p.join("b")));
}

#[test]
fn sim_gen_rejects_bad_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&["sim-gen", "--out", "x", "--scenes", "2", "--profile", "nope"], p), 2);
    assert_eq!(code(&["sim-gen", "--out", "x", "--scenes", "0"], p), 2);
    assert_eq!(code(&["sim-gen", "--out", "x", "--scenes", "2", "--n-r", "12"], p), 2);
    assert_eq!(code(&["sim-gen", "--out", "x", "--scenes", "2", "--bogus"], p), 2);
    assert_eq!(code(&["--threads", "0", "sim-gen", "--out", "x", "--scenes", "1"], p), 2);
    fs::write(p.join("file"), b"").unwrap();
    assert_eq!(code(&["sim-gen", "--out", "file/sub", "--scenes", "1"], p), 3);
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["sim-gen", "label", "split", "train", "eval", "predict", "plot"] {
        let out = ok(&[sub, "--help"], dir.path());
        assert!(out.contains("Usage"), "{sub}");
    }
    assert!(ok(&["--help"], dir.path()).contains("sim-gen"));
}

#[test]
fn label_writes_scene_labels_and_needs_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["sim-gen", "--out", "d", "--scenes", "4", "--seed", "2"], p);
    let out = ok(&["label", "--dataset", "d"], p);
    assert!(out.contains("directions hold points"), "{out}");
    let ds = Dataset::open(p.join("d")).unwrap();
    for r in &ds.manifest.records {
        let l = ds.load_label(r).unwrap().expect("label written");
        let scene = ds.load_scene(r).unwrap().unwrap();
        let expect =
            label_from_scene(&scene, &r.poses[0], &ds.manifest.grid, &TraversabilityRules::default(), r.time.unwrap())
                .unwrap();
        assert_eq!(l.profile, expect);
        assert_eq!(l.categories.unwrap().len(), ds.manifest.grid.n_phi());
    }

    // strip the scene references
    let mut stripped = ds.clone();
    for r in &mut stripped.manifest.records {
        r.scene = None;
    }
    stripped.save_manifest().unwrap();
    assert_eq!(code(&["label", "--dataset", "d"], p), 4);
    let out = ok(&["label", "--dataset", "d", "--from-points"], p);
    assert!(out.contains("from points"));
    assert_eq!(code(&["label", "--dataset", "missing"], p), 3);
}

#[test]
fn from_points_on_dense_data_reports_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["sim-gen", "--out", "d", "--scenes", "3", "--seed", "4", "--profile", "static-check", "--lidar", "dense", "--multi-view"], p);
    let out = ok(&["label", "--dataset", "d", "--from-points"], p);
    let line = out.lines().find(|l| l.starts_with("agreement")).unwrap_or_else(|| panic!("{out}"));
    let pct: f64 = line.split(": ").nth(1).unwrap().split('%').next().unwrap().parse().unwrap();
    assert!(pct >= 95.0, "{line}");
}

#[test]
fn saturated_height_rule_extends_labels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["sim-gen", "--out", "d", "--scenes", "3", "--seed", "5", "--profile", "dynamic"], p);
    ok(&["label", "--dataset", "d"], p);
    let ds = Dataset::open(p.join("d")).unwrap();
    let before: Vec<CadProfile> =
        ds.manifest.records.iter().map(|r| ds.load_label(r).unwrap().unwrap().profile).collect();
    fs::write(p.join("rules.json"), r#"{"h_obs": 999.0}"#).unwrap();
    ok(&["label", "--dataset", "d", "--rules", "rules.json"], p);
    let (mut sum_a, mut sum_b) = (0, 0);
    for (r, b) in ds.manifest.records.iter().zip(&before) {
        let a = ds.load_label(r).unwrap().unwrap().profile;
        for (x, y) in a.depth_index.iter().zip(&b.depth_index) {
            assert!(x >= y);
        }
        sum_a += a.depth_index.iter().sum::<usize>();
        sum_b += b.depth_index.iter().sum::<usize>();
    }
    assert!(sum_a > sum_b);
    fs::write(p.join("bad.json"), r#"{"h_obs": -1.0}"#).unwrap();
    assert_eq!(code(&["label", "--dataset", "d", "--rules", "bad.json"], p), 2);
    fs::write(p.join("typo.json"), "{not json").unwrap();
    assert_eq!(code(&["label", "--dataset", "d", "--rules", "typo.json"], p), 2);
}

#[test]
fn train_eval_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["sim-gen", "--out", "d", "--scenes", "10", "--seed", "3"], p);
    ok(&["label", "--dataset", "d"], p);
    ok(&["split", "--dataset", "d", "--labeled", "1.0", "--unlabeled", "0", "--validation", "0"], p);
    fs::write(
        p.join("train.json"),
        r#"{"model": "small", "train": {"epochs": 120, "batch_labeled": 2, "batch_unlabeled": 0, "seed": 1}}"#,
    )
    .unwrap();
    ok(&["train", "--dataset", "d", "--out", "m.ckpt", "--config", "train.json"], p);
    assert!(p.join("m.ckpt.log.jsonl").exists());
    assert_eq!(fs::read_to_string(p.join("m.ckpt.log.jsonl")).unwrap().lines().count(), 120);

    let table = ok(&["eval", "--dataset", "d", "--ckpt", "m.ckpt", "--report", "r.json", "--split", "all"], p);
    for col in ["Total", "Thin", "Dynamic", "Negative", "Others"] {
        assert!(table.contains(col), "{table}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p.join("r.json")).unwrap()).unwrap();
    let mae_bins = report["total"]["mae"].as_f64().unwrap() / PolarGridSpec::desk().r_width();
    assert!(mae_bins < 2.0, "training-set MAE {mae_bins} bins");
    assert_eq!(fs::read_to_string(p.join("r.json.txt")).unwrap(), table);

    ok(&["predict", "--ckpt", "m.ckpt", "--dataset", "d", "--sample", "s00002", "--out", "p1.json"], p);
    ok(&["predict", "--ckpt", "m.ckpt", "--dataset", "d", "--sample", "s00002", "--out", "p2.json"], p);
    assert_eq!(fs::read(p.join("p1.json")).unwrap(), fs::read(p.join("p2.json")).unwrap());
    let pred = read_label(p.join("p1.json"), &PolarGridSpec::desk()).unwrap();
    assert!(!pred.profile.labeled);
    assert_eq!(code(&["predict", "--ckpt", "m.ckpt", "--dataset", "d", "--sample", "zz", "--out", "x"], p), 2);

    // a dataset on another grid
    ok(&["sim-gen", "--out", "other", "--scenes", "1", "--n-r", "16"], p);
    ok(&["label", "--dataset", "other"], p);
    assert_eq!(code(&["eval", "--dataset", "other", "--ckpt", "m.ckpt", "--report", "o.json", "--split", "all"], p), 5);
    assert_eq!(code(&["predict", "--ckpt", "m.ckpt", "--dataset", "other", "--sample", "s00000", "--out", "x"], p), 5);
    assert_eq!(code(&["train", "--dataset", "d", "--out", "n.ckpt", "--small", "--config", "train.json"], p), 2);
    assert_eq!(code(&["eval", "--dataset", "d", "--ckpt", "nothing.ckpt", "--report", "o.json"], p), 3);
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["sim-gen", "--out", "d", "--scenes", "6", "--seed", "8"], p);
    ok(&["label", "--dataset", "d"], p);
    ok(&["split", "--dataset", "d", "--seed", "2", "--labeled", "0.5", "--unlabeled", "0.25", "--validation", "0.25"], p);
    for name in ["a.ckpt", "b.ckpt"] {
        ok(&["--threads", "1", "train", "--dataset", "d", "--out", name, "--small", "--epochs", "2", "--seed", "4"], p);
    }
    assert_eq!(fs::read(p.join("a.ckpt")).unwrap(), fs::read(p.join("b.ckpt")).unwrap());
    assert_eq!(fs::read(p.join("a.ckpt.log.jsonl")).unwrap(), fs::read(p.join("b.ckpt.log.jsonl")).unwrap());
}

fn write_profile(path: &Path, grid: &PolarGridSpec, depth: Vec<usize>) {
    let n = depth.len();
    let profile = CadProfile { depth_index: depth, confidence: vec![1.0; n], labeled: true };
    write_label(path, &LabelFile { profile, categories: None }, grid).unwrap();
}

#[test]
fn plot_renders_deterministic_svg() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let grid = PolarGridSpec::desk();
    write_profile(&p.join("full.json"), &grid, vec![grid.n_r() - 1; grid.n_phi()]);
    ok(&["plot", "--profile", "full.json", "--out", "full.svg", "--size", "800"], p);
    let svg = fs::read_to_string(p.join("full.svg")).unwrap();
    // full range: every arc has radius R at 0.45 * 800 / R pixels per meter
    let path = svg.lines().find(|l| l.contains("id=\"accessible\"")).unwrap();
    let arcs: Vec<&str> = path.split('A').skip(1).collect();
    assert_eq!(arcs.len(), grid.n_phi());
    for a in arcs {
        assert!(a.starts_with("360.00,360.00 "), "{a}");
    }
    assert_eq!(svg.matches("<path").count(), 1);

    let depth: Vec<usize> = (0..grid.n_phi()).map(|j| 5 + j % 20).collect();
    write_profile(&p.join("gt.json"), &grid, depth);
    ok(&["sim-gen", "--out", "d", "--scenes", "1"], p);
    let args = [
        "plot", "--profile", "full.json", "--gt", "gt.json", "--points", "d/frames/s00000_0.bin",
        "d/frames/s00000_1.bin", "--out", "a.svg",
    ];
    ok(&args, p);
    let mut again = args;
    again[9] = "b.svg";
    ok(&again, p);
    let a = fs::read_to_string(p.join("a.svg")).unwrap();
    assert_eq!(a, fs::read_to_string(p.join("b.svg")).unwrap());
    let paths: Vec<&str> = a.lines().filter(|l| l.starts_with("<path")).collect();
    assert_eq!(paths.len(), 2);
    assert_ne!(paths[0], paths[1]);
    assert!(a.contains("<g id=\"points\">"));

    write_profile(&p.join("small.json"), &PolarGridSpec::new(9.6, -0.3, 2.0, 16, 48).unwrap(), vec![3; 48]);
    assert_eq!(code(&["plot", "--profile", "full.json", "--gt", "small.json", "--out", "c.svg"], p), 5);
    assert_eq!(code(&["plot", "--profile", "none.json", "--out", "c.svg"], p), 3);
}
