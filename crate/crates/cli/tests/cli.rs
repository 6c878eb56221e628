use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use psl_core::grid::LabelMask;
use psl_core::volio::write_label_mask;

fn psl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psl"))
        .current_dir(dir)
        .env_remove("PSL_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn psl")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|row| headers.iter().zip(row.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

/// Three phantoms (amplitudes 0, 1, 2 mm), generated once per test binary.
fn phantoms() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        ok(&psl(dir.path(), &["--output-dir", "ph", "phantom", "--amplitudes", "0,1,2"]));
        dir
    })
    .path()
    .join("ph")
    .leak()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let p = entry.unwrap().path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &dest);
        } else {
            std::fs::copy(&p, &dest).unwrap();
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

#[test]
fn biomarkers_match_phantom_truth() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(phantoms(), &dir.path().join("ph"));
    ok(&psl(dir.path(), &["--output-dir", "bm", "biomarkers", "--cohort", "ph/phantom_cohort.csv"]));
    let rows = read_csv(&dir.path().join("bm/biomarkers.csv"));
    assert_eq!(rows.len(), 3);
    let mut psl_values = Vec::new();
    for row in &rows {
        let id = &row["patient_id"];
        let truth: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("ph").join(id).join("truth.json")).unwrap())
                .unwrap();
        for (name, expected) in truth["features"].as_object().unwrap() {
            let got: f64 = row[name].parse().unwrap();
            let expected = expected.as_f64().unwrap();
            assert!(close(got, expected), "{id} {name}: {got} vs {expected}");
        }
        psl_values.push(row["psl_median"].parse::<f64>().unwrap());
        assert!(dir.path().join("bm/psl").join(format!("{id}.json")).exists());
    }
    assert!(psl_values.windows(2).all(|w| w[0] < w[1]), "{psl_values:?}");
    assert_eq!(read_csv(&dir.path().join("bm/biomarker_errors.csv")).len(), 0);
}

#[test]
fn unreadable_mask_is_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(phantoms(), &dir.path().join("ph"));
    std::fs::write(dir.path().join("ph/P001/mask.nii"), b"not a volume").unwrap();
    ok(&psl(dir.path(), &["--output-dir", "bm", "biomarkers", "--cohort", "ph/phantom_cohort.csv"]));
    let ids: Vec<String> = read_csv(&dir.path().join("bm/biomarkers.csv"))
        .into_iter()
        .map(|r| r["patient_id"].clone())
        .collect();
    assert_eq!(ids, ["P000", "P002"]);
    let errors = read_csv(&dir.path().join("bm/biomarker_errors.csv"));
    assert_eq!(errors.len(), 1);
    assert_eq!((errors[0]["patient_id"].as_str(), errors[0]["stage"].as_str()), ("P001", "read_mask"));
}

#[test]
fn empty_cohort_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cohort.csv"),
        "patient_id,age,bmi,hba1c,hba1c_date,ct_date,t2dm_diagnosis_date,confirm_date,ct_path,mask_path\n",
    )
    .unwrap();
    let out = psl(dir.path(), &["biomarkers", "--cohort", "cohort.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = psl(dir.path(), &["biomarkers", "--cohort", "missing.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn negative_amplitude_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = psl(dir.path(), &["phantom", "--amplitudes", "-1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn phantoms_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        ok(&psl(dir.path(), &["--output-dir", d, "phantom", "--amplitudes", "1"]));
    }
    for f in ["ct.nii", "mask.nii", "truth.json", "spec.json"] {
        let a = std::fs::read(dir.path().join("a/P000").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b/P000").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn psl_command_writes_scores_and_debug_svgs() {
    let dir = tempfile::tempdir().unwrap();
    let masks: Vec<String> = ["P000", "P002"]
        .iter()
        .map(|p| phantoms().join(p).join("mask.nii").display().to_string())
        .collect();
    ok(&psl(
        dir.path(),
        &["--output-dir", "o", "psl", "--mask", &masks[0], "--mask", &masks[1], "--debug-svg"],
    ));
    let rows = read_csv(&dir.path().join("o/psl.csv"));
    let ids: Vec<&str> = rows.iter().map(|r| r["case_id"].as_str()).collect();
    assert_eq!(ids, ["P000_mask", "P002_mask"]);
    let scores: Vec<f64> = rows.iter().map(|r| r["psl_median"].parse().unwrap()).collect();
    assert!(scores[0] < scores[1]);
    let svgs = std::fs::read_dir(dir.path().join("o/psl_debug")).unwrap().count();
    let used: usize = rows.iter().map(|r| r["slices_used"].parse::<usize>().unwrap()).sum();
    assert_eq!(svgs, used);
}

/// A 16×16×6 box, optionally eroded by `shrink` voxels in x on one side.
fn box_mask(shrink: usize, extra: usize) -> LabelMask {
    let dims = [16, 16, 6];
    let mut m = LabelMask::filled(dims, [1.0, 1.0, 2.0], 0).unwrap();
    for z in 1..5 {
        for y in 4..12 {
            for x in 3..(13 - shrink + extra) {
                m.set(x, y, z, 1);
            }
        }
    }
    m
}

fn write_cases(dir: &Path, masks: &[LabelMask]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, m) in masks.iter().enumerate() {
        write_label_mask(m, dir.join(format!("case{i:02}.nii"))).unwrap();
    }
}

#[test]
fn segmetrics_identity_and_degraded_models() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let n = 6;
    let refs: Vec<LabelMask> = (0..n).map(|i| box_mask(0, i % 2)).collect();
    let degraded: Vec<LabelMask> = (0..n).map(|i| box_mask(2 + i % 3, i % 2)).collect();
    write_cases(&d.join("ref"), &refs);
    write_cases(&d.join("same"), &refs);
    write_cases(&d.join("worse"), &degraded);
    let out = psl(
        d,
        &["--output-dir", "o", "segmetrics", "--ref-dir", "ref", "--pred-dir", "same", "--pred-dir", "worse"],
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("same"));
    for row in read_csv(&d.join("o/segmetrics_cases.csv")) {
        let (dice, assd): (f64, f64) = (row["dice"].parse().unwrap(), row["assd_mm"].parse().unwrap());
        if row["model"] == "same" {
            assert_eq!((dice, assd), (1.0, 0.0));
        } else {
            assert!(dice < 1.0 && assd > 0.0);
        }
    }
    let tests = read_csv(&d.join("o/segmetrics_tests.csv"));
    let dice_test = tests.iter().find(|r| r["test"] == "wilcoxon" && r["metric"] == "dice").unwrap();
    assert!(dice_test["p_value"].parse::<f64>().unwrap() < 0.05, "{dice_test:?}");
    assert!(!tests.iter().any(|r| r["test"] == "friedman"));
}

#[test]
fn segmetrics_friedman_on_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let masks: Vec<LabelMask> = (0..6).map(|i| box_mask(i % 3, 0)).collect();
    write_cases(&d.join("ref"), &(0..6).map(|_| box_mask(0, 1)).collect::<Vec<_>>());
    for m in ["a", "b", "c"] {
        write_cases(&d.join(m), &masks);
    }
    ok(&psl(
        d,
        &["--output-dir", "o", "segmetrics", "--ref-dir", "ref", "--pred-dir", "a", "--pred-dir", "b", "--pred-dir", "c"],
    ));
    let tests = read_csv(&d.join("o/segmetrics_tests.csv"));
    let friedman: Vec<_> = tests.iter().filter(|r| r["test"] == "friedman").collect();
    assert_eq!(friedman.len(), 2);
    for r in friedman {
        assert_eq!(r["p_value"].parse::<f64>().unwrap(), 1.0, "{r:?}");
    }
}

#[test]
fn segmetrics_case_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cases(&d.join("ref"), &[box_mask(0, 0), box_mask(0, 0)]);
    write_cases(&d.join("pred"), &[box_mask(0, 0)]);
    let out = psl(d, &["segmetrics", "--ref-dir", "ref", "--pred-dir", "pred"]);
    assert_eq!(out.status.code(), Some(2));
}

fn synthetic_cohort(d: &Path, name: &str) -> PathBuf {
    ok(&psl(d, &["--output-dir", name, "phantom", "--synthetic-cohort", "200", "--effect", "strong"]));
    d.join(name)
}

#[test]
fn train_eval_separates_presets_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic_cohort(d, "co");
    let run = |out: &str| {
        ok(&psl(
            d,
            &[
                "--output-dir",
                out,
                "train-eval",
                "--cohort",
                "co/cohort.csv",
                "--biomarkers",
                "co/biomarkers.csv",
                "--bootstrap",
                "500",
            ],
        ))
    };
    run("r1");
    run("r2");
    for f in ["metrics.csv", "comparisons.csv", "roc_points.csv", "split.csv", "model_combined.json"] {
        assert_eq!(
            std::fs::read(d.join("r1").join(f)).unwrap(),
            std::fs::read(d.join("r2").join(f)).unwrap(),
            "{f} differs between runs"
        );
    }
    let metrics = read_csv(&d.join("r1/metrics.csv"));
    let auc = |p: &str| -> f64 { metrics.iter().find(|r| r["preset"] == p).unwrap()["auc"].parse().unwrap() };
    assert!(auc("combined") > auc("clinical"));
    let cmp = read_csv(&d.join("r1/comparisons.csv"));
    let row = cmp
        .iter()
        .find(|r| r["model_a"] == "clinical" && r["model_b"] == "combined")
        .unwrap();
    assert!(row["p_value"].parse::<f64>().unwrap() < 0.05);
    for f in ["roc.svg", "psl_boxplot.svg", "exclusions.csv", "model_clinical.json", "importance_clinical.csv"] {
        assert!(d.join("r1").join(f).exists(), "{f} missing");
    }

    ok(&psl(
        d,
        &["--output-dir", "rp", "roc-plot", "--points", "r1/roc_points.csv", "--metrics", "r1/metrics.csv"],
    ));
    let svg = std::fs::read_to_string(d.join("rp/roc.svg")).unwrap();
    assert!(svg.contains(&format!("combined (AUC {:.3})", auc("combined"))));
}

#[test]
fn single_class_cohort_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let co = synthetic_cohort(d, "co");
    let text = std::fs::read_to_string(co.join("cohort.csv")).unwrap();
    let mut lines = text.lines();
    let mut kept = vec![lines.next().unwrap().to_string()];
    kept.extend(lines.filter(|l| l.split(',').nth(6) == Some("")).map(str::to_string));
    std::fs::write(co.join("nondiabetic.csv"), kept.join("\n") + "\n").unwrap();
    let out = psl(
        d,
        &["train-eval", "--cohort", "co/nondiabetic.csv", "--biomarkers", "co/biomarkers.csv", "--bootstrap", "100"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn output_dir_from_environment_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |extra: &[&str]| {
        let mut args = extra.to_vec();
        args.extend(["phantom", "--synthetic-cohort", "40"]);
        let out = Command::new(env!("CARGO_BIN_EXE_psl"))
            .current_dir(d)
            .env("PSL_OUTPUT_DIR", "from-env")
            .args(&args)
            .output()
            .unwrap();
        ok(&out);
    };
    run(&[]);
    assert!(d.join("from-env/cohort.csv").exists());
    run(&["--output-dir", "from-flag"]);
    assert!(d.join("from-flag/cohort.csv").exists());

    std::fs::write(d.join("cfg.json"), r#"{"output_dir": "from-config", "seed": 3}"#).unwrap();
    run(&["--config", "cfg.json"]);
    assert!(!d.join("from-config").exists());
    let bad = psl(d, &["--config", "cfg.json", "--output-dir", "x", "train-eval", "--train-fraction", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
}
