use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/config.toml")
}

fn cipca(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cipca"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("CIPCA_LOG", "error")
        .output()
        .expect("spawn cipca")
}

fn pipeline(out: &Path, extra: &[&str]) -> Output {
    let cfg = fixture_config();
    let mut args = vec!["pipeline", "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    cipca(&args, out)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn pipeline_writes_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline(tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(tmp.path());
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["ingest", "similarity", "cluster", "fit", "oos", "tangency", "select-ordered", "embed"]);
    for s in m["stages"].as_array().unwrap() {
        assert_eq!(s["status"], "ok");
        for a in s["artifacts"].as_array().unwrap() {
            let path = tmp.path().join(a["path"].as_str().unwrap());
            assert!(path.is_file(), "{}", path.display());
            assert_eq!(a["stale"], false);
            assert_eq!(a["sha256"].as_str().unwrap().len(), 64);
        }
    }
    assert_eq!(m["mode"], "dc");
    let partition = fs::read_to_string(tmp.path().join("partition.csv")).unwrap();
    assert_eq!(partition.lines().count(), 10);
}

#[test]
fn pipeline_is_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(pipeline(a.path(), &["--jobs", "1"]).status.success());
    assert!(pipeline(b.path(), &[]).status.success());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert!(bytes == &tb[name], "{name} differs");
    }
}

#[test]
fn missing_panel_fails_before_computing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline(tmp.path(), &["--set", "input.panel=\"nowhere.csv\""]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does not exist"), "{err}");
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn dc_without_prior_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    let panel = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/panel.csv");
    fs::write(&cfg, format!("mode = \"dc\"\n[input]\npanel = {:?}\n", panel.to_str().unwrap())).unwrap();
    let out = cipca(&["ingest", "--config", cfg.to_str().unwrap()], &tmp.path().join("o"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs input.prior"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config();
    let out = cipca(&["ingest", "--config", cfg.to_str().unwrap(), "--set", "clustering.kn=[3]"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn rerunning_a_stage_marks_later_artifacts_stale() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(pipeline(tmp.path(), &[]).status.success());
    let cfg = fixture_config();
    let out = cipca(&["similarity", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(tmp.path());
    for s in m["stages"].as_array().unwrap() {
        let later = !matches!(s["stage"].as_str().unwrap(), "ingest" | "similarity");
        for a in s["artifacts"].as_array().unwrap() {
            assert_eq!(a["stale"].as_bool().unwrap(), later, "{}", a["path"]);
        }
    }
}

#[test]
fn stage_without_its_inputs_reports_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config();
    let out = cipca(&["fit", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `fit` failed"));
    let m = manifest(tmp.path());
    assert_eq!(m["stages"][0]["status"], "failed");
}

#[test]
fn other_modes_run_end_to_end() {
    for extra in [
        &["--mode", "ipca", "--set", "model.ipca_factors=2"][..],
        &["--mode", "ic", "--set", "selection=\"bayes\""][..],
        &["--mode", "rc", "--set", "clustering.rc_k=3", "--weights", "equal"][..],
        &["--mode", "pdc"][..],
    ] {
        let tmp = tempfile::tempdir().unwrap();
        let out = pipeline(tmp.path(), extra);
        assert!(out.status.success(), "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
