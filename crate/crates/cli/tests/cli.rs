use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segqc_core::synth::oracle_error;
use segqc_core::volume::{read_mask, write_volume, BinaryMask, ProbabilityVolume, VolumeGeometry};
use serde_json::Value;

fn segqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segqc"))
        .args(args)
        .env_remove("SEGQC_JOBS")
        .output()
        .expect("running segqc")
}

fn ok(args: &[&str]) -> String {
    let out = segqc(args);
    assert!(
        out.status.success(),
        "segqc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Square truth with a shifted mask, 32×32×4.
fn write_pair(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let g = VolumeGeometry::unit(32, 32, 4).unwrap();
    let mut t = BinaryMask::zeros(g);
    let mut m = BinaryMask::zeros(g);
    for k in 0..4 {
        for r in 8..24 {
            for c in 8..24 {
                t.set(k, r, c, 1);
                m.set(k, r, c + 3, 1);
            }
        }
    }
    let (mp, tp, ep) = (dir.join("mask.sqv"), dir.join("gt.sqv"), dir.join("error.sqv"));
    write_volume(&m, &mp).unwrap();
    write_volume(&t, &tp).unwrap();
    write_volume(&oracle_error(&m, &t).unwrap(), &ep).unwrap();
    (mp, tp, ep)
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = segqc(&["metrics", "--mask", "m.sqv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn garbled_header_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sqv.json");
    std::fs::write(&bad, "{ not json").unwrap();
    std::fs::write(dir.path().join("bad.sqv.raw"), [0u8; 8]).unwrap();
    let out = segqc(&["metrics", "--mask", s(&bad), "--error", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn band_source_mask_without_mask_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, ep) = write_pair(dir.path());
    let o = dir.path().join("o.sqv");
    let out = segqc(&["extract-error", "--input", s(&ep), "--band-source", "mask", "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_metrics_match_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, tp, ep) = write_pair(dir.path());
    let report: Value = serde_json::from_str(&ok(&[
        "metrics", "--mask", s(&mp), "--error", s(&ep), "--gt", s(&tp), "--no-timestamp",
    ]))
    .unwrap();
    let est = report["dice3d"].as_f64().unwrap();
    let truth = report["truth"]["dice3d"].as_f64().unwrap();
    assert!((est - truth).abs() < 1e-6, "{report}");
    // 16×13 overlap of two 16×16 squares
    assert!((truth - 13.0 / 16.0).abs() < 1e-12);
    assert_eq!(report["case_id"], "mask");

    let lit: Value = serde_json::from_str(&ok(&[
        "metrics", "--mask", s(&mp), "--error", s(&ep), "--mode", "paper-literal", "--no-timestamp",
    ]))
    .unwrap();
    assert!(lit["dice3d"].as_f64().unwrap() < est);
}

#[test]
fn no_timestamp_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _, ep) = write_pair(dir.path());
    let args = ["metrics", "--mask", s(&mp), "--error", s(&ep), "--no-timestamp"];
    assert_eq!(ok(&args), ok(&args));
}

#[test]
fn extract_then_detect() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, ep) = write_pair(dir.path());
    let ex = dir.path().join("ex.sqv");
    ok(&["extract-error", "--input", s(&ep), "--out", s(&ex)]);
    let ex = read_mask(&ex).unwrap();
    // each 16×3 stripe erodes to a 14×1 column, which passes the 10-voxel filter
    assert_eq!(ex.count(), 4 * 2 * 14);
    let ex15 = dir.path().join("ex15.sqv");
    ok(&["extract-error", "--input", s(&ep), "--min-size", "15", "--out", s(&ex15)]);
    assert_eq!(read_mask(&ex15).unwrap().count(), 0);

    let boxes: Value = serde_json::from_str(&ok(&["detect", "--input", s(&ep), "--min-area-mm2", "10"])).unwrap();
    let boxes = boxes.as_array().unwrap();
    // both stripes on a slice are 10 columns apart, so they stay separate
    assert_eq!(boxes.len(), 8);
    for b in boxes {
        assert_eq!(b["area_vox"], 48);
    }
    // the default 100 mm² area filter removes every 48 mm² stripe
    let none: Value = serde_json::from_str(&ok(&["detect", "--input", s(&ep)])).unwrap();
    assert!(none.as_array().unwrap().is_empty());

    let csv = dir.path().join("boxes.csv");
    ok(&["detect", "--input", s(&ep), "--min-area-mm2", "10", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 9);
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["synth", "--out", s(&out), "--seed", "7", "--n-cases", "4"];
    if !extra.contains(&"--dims") {
        args.extend_from_slice(&["--dims", "24,24,12"]);
    }
    args.extend_from_slice(extra);
    let printed = ok(&args);
    let manifest = PathBuf::from(printed.trim());
    assert_eq!(manifest, out.join("manifest.json"));
    manifest
}

#[test]
fn synth_is_deterministic_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = synth(a.path(), &[]);
    let mb = synth(b.path(), &["--jobs", "1"]);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(&ma).unwrap()).unwrap();
    let cases = manifest["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 4);
    for c in cases {
        for key in ["scan_path", "mask_path", "error_path", "gt_path"] {
            assert!(ma.parent().unwrap().join(c[key].as_str().unwrap()).exists());
        }
        let ens = ma.parent().unwrap().join(c["ensemble_dir"].as_str().unwrap());
        assert_eq!(std::fs::read_dir(ens).unwrap().count(), 10);
        let rel = c["mask_path"].as_str().unwrap();
        let fa = std::fs::read(ma.parent().unwrap().join(rel).with_extension("raw")).unwrap();
        let fb = std::fs::read(mb.parent().unwrap().join(rel).with_extension("raw")).unwrap();
        assert_eq!(fa, fb);
    }
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
}

#[test]
fn rank_orders_worst_first() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), &["--targets", "0.9,0.6"]);
    let ranked: Value = serde_json::from_str(&ok(&["rank", "--manifest", s(&m)])).unwrap();
    let entries = ranked["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    let scores: Vec<f64> = entries.iter().map(|e| e["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] <= w[1]), "{scores:?}");
    // cases 1 and 3 target 0.6
    let mut first: Vec<&str> = entries[..2].iter().map(|e| e["id"].as_str().unwrap()).collect();
    first.sort();
    assert_eq!(first, ["case_001", "case_003"]);
}

#[test]
fn eval_detect_with_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), &["--kind", "detection", "--no-ribbon", "--dims", "64,64,8", "--spacing", "1.5,1.5,3"]);
    let table = ok(&["eval-detect", "--manifest", s(&m), "--extraction", "off"]);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("method,tau,precision,recall,tp,fp,fn"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for (row, tau) in rows.iter().zip(["0.05", "0.10", "0.15", "0.20"]) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], "without_extraction");
        assert_eq!(f[1], tau);
        assert_eq!(f[2].parse::<f64>().unwrap(), 1.0, "{row}");
        assert_eq!(f[3].parse::<f64>().unwrap(), 1.0, "{row}");
        assert_eq!(f[5], "0");
        assert_eq!(f[6], "0");
    }
}

#[test]
fn tta_estimate_reports_every_slice() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), &[]);
    let ens = m.parent().unwrap().join("case_000/ensemble");
    let r: Value = serde_json::from_str(&ok(&["tta-estimate", "--ensemble-dir", s(&ens)])).unwrap();
    assert_eq!(r["members"], 5);
    assert_eq!(r["slices"].as_array().unwrap().len(), 12);
    let d = r["dice"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&d));
}

#[test]
fn rank_slices_needs_its_input() {
    let out = segqc(&["rank-slices", "--policy", "entropy"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let (_, _, ep) = write_pair(dir.path());
    let r: Value = serde_json::from_str(&ok(&["rank-slices", "--error", s(&ep)])).unwrap();
    assert_eq!(r["entries"].as_array().unwrap().len(), 4);
}

#[test]
fn eval_correction_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), &[]);
    let out = dir.path().join("curves");
    ok(&["eval-correction", "--manifest", s(&m), "--seed", "3", "--out-dir", s(&out)]);
    let c3 = std::fs::read_to_string(out.join("curves_3d.csv")).unwrap();
    assert!(c3.starts_with("policy,fraction,mean_dice\n"));
    for p in ["optimal", "metric_estimate", "error_sum", "tta", "random"] {
        assert!(c3.lines().any(|l| l.starts_with(&format!("{p},"))), "{p}");
    }
    let c2 = std::fs::read_to_string(out.join("curves_2d.csv")).unwrap();
    assert!(c2.starts_with("policy,percent,mean_dice\n"));
    for p in ["optimal", "error_sum", "entropy", "sequential", "random", "random_non_empty"] {
        assert!(c2.lines().any(|l| l.starts_with(&format!("{p},"))), "{p}");
    }
}

#[test]
fn probability_volume_accepted_as_detection_input() {
    let dir = tempfile::tempdir().unwrap();
    let g = VolumeGeometry::unit(40, 40, 1).unwrap();
    let mut v = vec![0.2f32; 1600];
    for r in 5..20 {
        for c in 5..20 {
            v[r * 40 + c] = 0.9;
        }
    }
    let p = dir.path().join("p.sqv");
    write_volume(&ProbabilityVolume::new(g, v).unwrap(), &p).unwrap();
    let boxes: Value = serde_json::from_str(&ok(&["detect", "--input", s(&p)])).unwrap();
    let b = &boxes.as_array().unwrap()[0];
    assert_eq!((b["row0"].as_u64(), b["row1"].as_u64()), (Some(5), Some(20)));
}
