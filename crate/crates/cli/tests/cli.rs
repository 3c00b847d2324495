use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pluripot"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = bin();
    cmd.args(args).env_remove("PLURIPOT_NODE_CAP");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const DISK: &str = r#"{
  "schema": "pluripot/1",
  "domain": { "name": "unit_disk" },
  "lattice": { "h": 0.1 },
  "experiments": [
    { "kind": "envelope", "obstacle": { "name": "neg_abs2" }, "probes": [[0.0, 0.0]] },
    { "kind": "relative_extremal", "k_radius": 0.25 }
  ]
}"#;

#[test]
fn disk_envelope_run_writes_report_grids_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run", config("disk_envelope.json").to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let report = read_json(&out.join("report.json"));
    assert_eq!(report["partial"], false);
    let probe = &report["experiments"][0]["result"]["probes"][0];
    let value = probe["value"].as_f64().unwrap();
    assert!((value + 1.0).abs() < 0.15, "envelope at the centre {value}");
    assert!(probe["gap"].as_f64().unwrap().abs() < 1e-5);

    let csv = std::fs::read_to_string(out.join("e00_envelope_envelope.csv")).unwrap();
    assert!(csv.lines().count() > 300);
    assert!(out.join("e00_envelope_envelope.dat").exists());
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DISK);
    let out = tmp.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let manifest = read_json(&out.join("manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    let mut names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for f in files {
        let bytes = std::fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    names.sort_unstable();
    let mut on_disk: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort_unstable();
    assert_eq!(names, on_disk);
}

#[test]
fn jacobi_results_do_not_depend_on_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DISK);
    let mut hashes = Vec::new();
    for jobs in ["1", "3"] {
        let out = tmp.path().join(format!("out{jobs}"));
        let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs], &[]);
        assert!(o.status.success());
        let m = read_json(&out.join("manifest.json"));
        let deterministic: Vec<Value> =
            m["files"].as_array().unwrap().iter().filter(|f| f["path"] != "timings.json").cloned().collect();
        hashes.push(deterministic);
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn validation_errors_exit_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for body in [
        DISK.replace("\"h\": 0.1", "\"h\": -0.1"),
        DISK.replace("\"h\": 0.1", "\"h\": 0.1, \"spacing\": 2"),
        DISK.replace(r#"{ "kind": "relative_extremal", "k_radius": 0.25 }"#, r#"{ "kind": "classify" }"#),
    ] {
        let cfg = write_config(tmp.path(), &body);
        let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(2), "{body}\n{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
    }
}

#[test]
fn node_cap_env_overrides_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DISK);
    let out = tmp.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[("PLURIPOT_NODE_CAP", "50")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn non_convergence_exits_3_with_partial_report() {
    let tmp = tempfile::tempdir().unwrap();
    let body = DISK.replace("\"lattice\"", "\"solver\": { \"max_iter\": 3 }, \"lattice\"");
    let cfg = write_config(tmp.path(), &body);
    let out = tmp.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["partial"], true);
    assert_eq!(report["experiments"].as_array().unwrap().len(), 1);
    assert!(out.join("e00_envelope_best.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn hartogs_expected_hyperconvex_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run", config("hartogs_classify.json").to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    let result = &report["experiments"][0]["result"];
    assert_eq!(result["verdict"]["verdict"], "not_p_hyperconvex");
    assert!(result["witnessed_by"].as_array().unwrap().iter().any(|t| t == "disk_probe"));
    assert_eq!(report["partial"], false);
}

#[test]
fn slit_disk_expected_verdict_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run", config("slit_disk_classify.json").to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["experiments"][0]["result"]["verdict"]["verdict"], "not_p_hyperconvex");
    // The slit is boundary, so the Jensen measure there is the point mass.
    let jensen = &report["experiments"][1]["result"]["probes"][0];
    assert_eq!(jensen["boundary_mass"].as_f64().unwrap(), 1.0);
    assert_eq!(jensen["atoms"], 1);
}

#[test]
fn refine_reports_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), DISK);
    let out = tmp.path().join("out");
    let o = run(&["refine", cfg.to_str().unwrap(), "--h", "0.2,0.1,0.05", "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("refine.json"));
    let centre = &r["convergence"][0];
    assert_eq!(centre["values"].as_array().unwrap().len(), 3);
    assert_eq!(centre["monotone"], true);
    assert!(centre["order"].as_f64().unwrap() > 0.5);
    let csv = std::fs::read_to_string(out.join("refine.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let o = run(&["refine", cfg.to_str().unwrap(), "--h", "0.1,0.2", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}
