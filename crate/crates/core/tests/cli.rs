use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use wsol::manifest::{BoxFile, ImageFile, ManifestFile, SplitsFile};
use wsol::{load_tensor, write_tensor, Tensor};

const N: usize = 6;
const ROWS: usize = 8;
const COLS: usize = 8;

/// Eight images with a bright square in each stack; weights (N, 2) with
/// channel 0 negative for class 0 only.
fn fixture(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut weights = vec![0.0f64; N * 2];
    for n in 0..N {
        weights[n * 2] = if n == 0 { -0.5 } else { 0.3 + 0.1 * n as f64 };
        weights[n * 2 + 1] = 0.2;
    }
    write_tensor(dir.join("w.npy"), &Tensor::from_vec(vec![N, 2], weights).unwrap()).unwrap();

    let mut images = Vec::new();
    for k in 0..8 {
        let (r0, c0) = (rng.gen_range(0..4), rng.gen_range(0..4));
        let data: Vec<f64> = (0..N * ROWS * COLS)
            .map(|i| {
                let p = i % (ROWS * COLS);
                let inside = (r0..r0 + 4).contains(&(p / COLS)) && (c0..c0 + 4).contains(&(p % COLS));
                rng.gen_range(0.0..0.2) + if inside { 20.0 } else { 0.0 }
            })
            .collect();
        let file = format!("f{k}.npy");
        write_tensor(dir.join(&file), &Tensor::from_vec(vec![N, ROWS, COLS], data).unwrap()).unwrap();
        images.push(ImageFile {
            id: format!("img/{k}"),
            class_index: k % 2,
            width: 64,
            height: 64,
            featuremap: file,
            gt_boxes: vec![BoxFile {
                x_min: c0 as u32 * 8,
                y_min: r0 as u32 * 8,
                x_max: (c0 as u32 + 4) * 8,
                y_max: (r0 as u32 + 4) * 8,
            }],
        });
    }
    let ids: Vec<String> = images.iter().map(|i| i.id.clone()).collect();
    let m = ManifestFile {
        class_count: 2,
        weights: Some("w.npy".into()),
        splits: SplitsFile { train_weaksup: vec![], train_fullsup: ids[..3].to_vec(), test: ids[3..].to_vec() },
        images,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    path
}

fn wsol(manifest: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsol"))
        .arg("--manifest")
        .arg(manifest)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn cam_writes_normalized_maps_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("cam");
    ok(wsol(&m, &out, &["cam"]));

    let index = json(out.join("cam_index.json"));
    assert_eq!(index["images"].as_array().unwrap().len(), 8);
    assert_eq!(index["failed"], 0);
    assert_eq!(index["precision"], "f64");
    // ids with separators are flattened in file names
    let t = load_tensor(out.join("img_0.cam.npy")).unwrap();
    assert_eq!(t.shape(), &[ROWS, COLS]);
    let v = t.to_vec::<f64>();
    assert_eq!(v.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
    assert_eq!(v.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
}

#[test]
fn empty_filter_selection_is_a_per_image_warning() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("neg");
    let o = ok(wsol(&m, &out, &["cam", "--filter", "negative"]));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));

    // class 1 has no negative weights
    let index = json(out.join("cam_index.json"));
    assert_eq!(index["failed"], 4);
    for e in index["images"].as_array().unwrap() {
        let class1 = e["image_id"].as_str().unwrap().ends_with(['1', '3', '5', '7']);
        assert_eq!(e["status"] == "error", class1);
    }
}

#[test]
fn band_filter_requires_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let o = wsol(&m, &dir.path().join("b"), &["cam", "--filter", "band"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("band"));
}

#[test]
fn score_is_perfect_on_planted_squares_and_reports_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let maps = dir.path().join("cam");
    ok(wsol(&m, &maps, &["cam"]));
    let out = dir.path().join("score");
    ok(wsol(&m, &out, &["score", "--heatmaps", maps.to_str().unwrap(), "--variant", "v2"]));

    let r = json(out.join("report.json"));
    assert_eq!(r["variant"], "v2");
    assert_eq!(r["optimistic"], false);
    assert_eq!(r["operating_split"], "train_fullsup");
    assert_eq!(r["final_boxacc"], 1.0);
    assert_eq!(r["tau_grid_points"], 101);
    let csv = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
    assert!(csv.starts_with("tau,boxacc_test,boxacc_fullsup"));
    assert!(fs::read_to_string(out.join("curve.svg")).unwrap().contains("<polyline"));
}

#[test]
fn score_fails_on_missing_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let maps = dir.path().join("cam");
    ok(wsol(&m, &maps, &["cam"]));
    fs::remove_file(maps.join("img_5.cam.npy")).unwrap();
    let o = wsol(&m, &dir.path().join("s"), &["score", "--heatmaps", maps.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("img/5"));
}

#[test]
fn pc1_then_score() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let maps = dir.path().join("pc1");
    ok(wsol(&m, &maps, &["pc1"]));
    let rates = fs::read_to_string(maps.join("contribution_rates.csv")).unwrap();
    assert_eq!(rates.lines().count(), 1 + 8 * N);
    let index = json(maps.join("pc1_index.json"));
    for e in index["images"].as_array().unwrap() {
        assert!(e["pc1_rate"].as_f64().unwrap() > 0.5);
    }

    let out = dir.path().join("score");
    ok(wsol(&m, &out, &["score", "--heatmaps", maps.to_str().unwrap(), "--kind", "pc1"]));
    assert_eq!(json(out.join("report.json"))["final_boxacc"], 1.0);
}

#[test]
fn f32_precision_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("cam32");
    ok(wsol(&m, &out, &["--precision", "f32", "cam", "--images", "img/0,img/1"]));
    let index = json(out.join("cam_index.json"));
    assert_eq!(index["precision"], "f32");
    assert_eq!(index["input_dtypes"], serde_json::json!(["f64"]));
    assert_eq!(index["images"].as_array().unwrap().len(), 2);
    assert_eq!(load_tensor(out.join("img_1.cam.npy")).unwrap().dtype(), wsol::DType::F32);
}

#[test]
fn stats_rows_cover_every_channel() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("stats");
    ok(wsol(&m, &out, &["stats", "--split", "test", "--raw-threshold", "10"]));
    let csv = fs::read_to_string(out.join("channel_stats.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 5 * N);
    // 16 of 64 cells carry the planted square
    for row in rows {
        assert_eq!(row.split(',').nth(3).unwrap(), "0.25");
    }
    assert!(out.join("area_vs_weight.svg").exists() && out.join("gap_vs_weight.svg").exists());
}

#[test]
fn erf_of_delta_map() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = vec![0.0f32; 9 * 9];
    m[4 * 9 + 4] = 1.0;
    let map = dir.path().join("delta.npy");
    write_tensor(&map, &Tensor::from_vec(vec![1, 9, 9], m).unwrap()).unwrap();
    let out = dir.path().join("erf");
    let o = Command::new(env!("CARGO_BIN_EXE_wsol"))
        .args(["erf", "--map", map.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    let curve = json(out.join("erf.json"));
    assert_eq!(curve["auc"], 1.0 / 81.0);
    let csv = fs::read_to_string(out.join("erf.csv")).unwrap();
    assert_eq!(csv.lines().last().unwrap(), format!("auc,{}", 1.0 / 81.0));
}

#[test]
fn complexity_curve_is_nonincreasing() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("cx");
    ok(wsol(&m, &out, &["--seed", "3", "complexity", "--components", "2,4,8"]));
    let c = json(out.join("complexity.json"));
    let errs: Vec<f64> = c["curve"]["reconstruction_errors"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(errs.len(), 3);
    assert!(errs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(c["train_maps"].as_u64().unwrap() + c["test_maps"].as_u64().unwrap(), 8 * N as u64);
    assert_eq!(fs::read_to_string(out.join("complexity.csv")).unwrap().lines().count(), 4);
}

#[test]
fn unknown_image_and_missing_manifest_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    assert!(!wsol(&m, &dir.path().join("x"), &["cam", "--images", "nope"]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_wsol"))
        .args(["--out", dir.path().join("y").to_str().unwrap(), "pc1"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--manifest"));
}

#[test]
fn pc1_batch_rates_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("pc1b");
    ok(wsol(&m, &out, &["pc1", "--batch"]));
    let csv = fs::read_to_string(out.join("batch_contribution_rates.csv")).unwrap();
    let rates: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rates.len(), N);
    assert!((rates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(rates.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn score_reference_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let maps = dir.path().join("cam");
    ok(wsol(&m, &maps, &["cam"]));
    let out = dir.path().join("score");
    ok(wsol(&m, &out, &["score", "--heatmaps", maps.to_str().unwrap(), "--reference", "replknet-cam"]));
    let r = json(out.join("report.json"));
    assert_eq!(r["reference"]["name"], "replknet-cam");
    assert_eq!(r["reference"]["value"], 0.9099);
    assert_eq!(r["reference"]["difference"].as_f64().unwrap(), 1.0 - 0.9099);
}
