use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn geodisp(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geodisp"));
    cmd.args(args).env_remove("GEODISP_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const AFRICA_BUS: &str = r#"{
  "seed": 9,
  "classes": ["bus", "person"],
  "instances_per_cell": 120,
  "confusion": [
    {"continent": "Africa", "true_class": "bus", "predicted": {"car": 0.8, "bus": 0.2}}
  ],
  "localization": {"bus": {"base_iou": 0.6, "jitter": 0.05}, "person": {"base_iou": 0.7, "jitter": 0.2}}
}"#;

fn synth(dir: &Path, spec: &str) {
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, spec).unwrap();
    let fx = dir.join("fx");
    let o = geodisp(
        &[
            "synth",
            "-s",
            spec_path.to_str().unwrap(),
            "-o",
            fx.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

fn metrics(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn synth_validate_audit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), AFRICA_BUS);
    let cfg = dir.path().join("fx/audit.json");
    let cfg = cfg.to_str().unwrap();

    let v = geodisp(&["validate", "-c", cfg], &[]);
    assert_eq!(v.status.code(), Some(0), "{}", stderr(&v));
    let out = stdout(&v);
    assert!(out.contains("Africa"), "{out}");
    assert!(out.contains("instances per class and continent"), "{out}");

    let a = geodisp(&["audit", "-c", cfg], &[]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let report = dir.path().join("fx/report");
    for f in [
        "metrics.json",
        "summary.txt",
        "iou_synth_mask.csv",
        "iou_synth_box.csv",
        "disparity_synth.csv",
        "boxplots_mask_plain.svg",
        "boxplots_mask_corrected.svg",
        "boxplots_box_plain.svg",
        "boxplots_box_corrected.svg",
    ] {
        assert!(report.join(f).is_file(), "missing {f}");
    }
    let iou = fs::read_to_string(report.join("iou_synth_mask.csv")).unwrap();
    let bus = iou.lines().find(|l| l.starts_with("bus,")).unwrap();
    assert!(bus.ends_with(",Africa"), "{bus}");
    let m = metrics(&report);
    let pct = m["models"][0]["classes"][1]["by_criterion"]["mask"]["pct_change"]
        .as_f64()
        .unwrap();
    assert!(pct < -50.0, "{pct}");
}

#[test]
fn identity_confusion_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    synth(
        dir.path(),
        r#"{"seed": 1, "classes": ["car"], "instances_per_cell": 40,
            "localization": {"car": {"base_iou": 0.6, "jitter": 0.3}}}"#,
    );
    let cfg = dir.path().join("fx/audit.json");
    let a = geodisp(
        &["audit", "-c", cfg.to_str().unwrap(), "--criteria", "mask"],
        &[],
    );
    assert!(a.status.success(), "{}", stderr(&a));
    let report = dir.path().join("fx/report");
    assert!(!report.join("iou_synth_box.csv").exists());
    let d = fs::read_to_string(report.join("disparity_synth.csv")).unwrap();
    assert_eq!(d, "class,Disp_seg-seg-corrected\ncar,0.00%\n");
    let iou = fs::read_to_string(report.join("iou_synth_mask.csv")).unwrap();
    assert!(iou.lines().nth(1).unwrap().ends_with(','), "{iou}");
}

#[test]
fn empty_merge_policy_copies_plain_tables() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), AFRICA_BUS);
    let cfg = dir.path().join("fx/audit.json");
    let a = geodisp(
        &[
            "audit",
            "-c",
            cfg.to_str().unwrap(),
            "--merge-policy",
            "none",
        ],
        &[],
    );
    assert!(a.status.success(), "{}", stderr(&a));
    let m = metrics(&dir.path().join("fx/report"));
    for class in m["models"][0]["classes"].as_array().unwrap() {
        for (_, cm) in class["by_criterion"].as_object().unwrap() {
            assert_eq!(cm["plain"], cm["corrected"]);
        }
    }
}

#[test]
fn missing_geo_row_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), AFRICA_BUS);
    let geo = dir.path().join("fx/geo.csv");
    let text = fs::read_to_string(&geo).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with("syn-Asia-000000,"))
        .collect();
    fs::write(&geo, kept.join("\n") + "\n").unwrap();
    let cfg = dir.path().join("fx/audit.json");
    let v = geodisp(&["validate", "-c", cfg.to_str().unwrap()], &[]);
    assert_eq!(v.status.code(), Some(0));
    let out = stdout(&v);
    assert!(out.contains("images without geo row: 1"), "{out}");
    assert!(out.contains("warning: 1 image(s) have no geo row"), "{out}");
}

#[test]
fn malformed_line_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), AFRICA_BUS);
    let gt = dir.path().join("fx/gt.jsonl");
    let mut text = fs::read_to_string(&gt).unwrap();
    text = text.replacen('\n', "\n{not json\n", 2);
    fs::write(&gt, text).unwrap();
    let cfg = dir.path().join("fx/audit.json");
    let v = geodisp(&["validate", "-c", cfg.to_str().unwrap()], &[]);
    assert_eq!(v.status.code(), Some(1));
    let err = stderr(&v);
    assert!(err.contains("gt.jsonl:2"), "{err}");
    let a = geodisp(&["audit", "-c", cfg.to_str().unwrap()], &[]);
    assert_eq!(a.status.code(), Some(1));
    assert!(!dir.path().join("fx/report").exists());
}

#[test]
fn two_models_in_one_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), AFRICA_BUS);
    let fx = dir.path().join("fx");
    let pred = fx.join("pred.jsonl");
    let other = fx.join("pred_b.jsonl");
    fs::copy(&pred, &other).unwrap();
    let cfg = fx.join("audit.json");
    let a = geodisp(
        &[
            "audit",
            "-c",
            cfg.to_str().unwrap(),
            "--prediction",
            &format!("alpha={}", pred.display()),
            "--prediction",
            &format!("beta={}", other.display()),
        ],
        &[],
    );
    assert!(a.status.success(), "{}", stderr(&a));
    let report = fx.join("report");
    assert!(report.join("disparity_alpha.csv").is_file());
    assert!(report.join("disparity_beta.csv").is_file());
    let m = metrics(&report);
    assert_eq!(m["models"][0]["model_id"], "alpha");
    assert_eq!(m["models"][1]["model_id"], "beta");
    let svg = fs::read_to_string(report.join("boxplots_mask_plain.svg")).unwrap();
    assert_eq!(svg.matches("class=\"glyph\"").count(), 4);
}

#[test]
fn thread_count_does_not_change_metrics() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), AFRICA_BUS);
    let cfg = dir.path().join("fx/audit.json");
    let cfg = cfg.to_str().unwrap();
    let report = dir.path().join("fx/report/metrics.json");
    assert!(geodisp(&["audit", "-c", cfg], &[("GEODISP_THREADS", "1")])
        .status
        .success());
    let one = fs::read(&report).unwrap();
    assert!(geodisp(&["audit", "-c", cfg, "--threads", "3"], &[])
        .status
        .success());
    assert_eq!(one, fs::read(&report).unwrap());
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"ground_truth": "x"}"#).unwrap();
    let o = geodisp(&["audit", "-c", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing field"), "{}", stderr(&o));
}
