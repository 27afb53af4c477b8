use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use triage_cli::config::validate_config;
use triage_cli::manifest::{RunManifest, ERROR_FILE, MANIFEST_FILE};
use triage_cli::{run, Command, RunError};
use triage_core::classifiers::{load_checkpoint, FusionModel};
use triage_core::seeds::{rng, Stream};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn default_config() -> PathBuf {
    root().join("configs/default.toml")
}

/// Copies the default config into `dir` with absolute paths and `edit` applied.
fn config_with(dir: &Path, edit: impl FnOnce(&mut toml::Table)) -> PathBuf {
    let text = fs::read_to_string(default_config()).unwrap();
    let mut t: toml::Table = text.parse().unwrap();
    let base = root().join("configs");
    if let Some(paths) = t.get_mut("paths").and_then(|p| p.as_table_mut()) {
        for (_, v) in paths.iter_mut() {
            let abs = base.join(v.as_str().unwrap());
            *v = toml::Value::String(abs.to_string_lossy().into_owned());
        }
    }
    edit(&mut t);
    let path = dir.join("run.toml");
    fs::write(&path, toml::to_string(&t).unwrap()).unwrap();
    path
}

fn set(t: &mut toml::Table, section: &str, key: &str, v: impl Into<toml::Value>) {
    t.entry(section)
        .or_insert_with(|| toml::Value::Table(Default::default()))
        .as_table_mut()
        .unwrap()
        .insert(key.into(), v.into());
}

fn violations(path: &Path) -> Vec<String> {
    validate_config(path)
        .expect_err("config should be rejected")
        .iter()
        .map(|v| v.to_string())
        .collect()
}

#[test]
fn shipped_default_config_is_valid() {
    validate_config(&default_config()).expect("default config validates");
}

#[test]
fn out_of_range_dropout_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = config_with(dir.path(), |t| set(t, "model", "dropout", 1.5));
    let v = violations(&p);
    assert!(v.iter().any(|s| s.starts_with("model.dropout:")), "{v:?}");
}

#[test]
fn unknown_fusion_lists_allowed_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = config_with(dir.path(), |t| set(t, "model", "fusion", "bilstm"));
    let v = violations(&p);
    assert_eq!(v.len(), 1, "{v:?}");
    for allowed in ["transformer", "concat", "cross_attention"] {
        assert!(v[0].contains(allowed), "{}", v[0]);
    }
}

#[test]
fn unknown_field_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let p = config_with(dir.path(), |t| set(t, "train", "epoch", 3));
    let v = violations(&p);
    assert!(v[0].starts_with("epoch:"), "{v:?}");
}

#[test]
fn missing_input_path_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let p = config_with(dir.path(), |t| set(t, "paths", "gazetteer", "/nonexistent/gaz.csv"));
    let v = violations(&p);
    assert!(v.iter().any(|s| s.starts_with("paths.gazetteer:")), "{v:?}");
}

#[test]
fn unknown_command_is_a_usage_error() {
    let status = Proc::new(env!("CARGO_BIN_EXE_triage"))
        .args(["bogus", "--config"])
        .arg(default_config())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn schema_violation_exits_one_with_error_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = config_with(dir.path(), |t| set(t, "model", "dropout", 1.5));
    let out = dir.path().join("out");
    let status = Proc::new(env!("CARGO_BIN_EXE_triage"))
        .args(["train", "--config"])
        .arg(&p)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(ERROR_FILE)).unwrap()).unwrap();
    assert_eq!(err["kind"], "config");
    assert_eq!(err["violations"][0]["field"], "model.dropout");
    assert!(!out.join(MANIFEST_FILE).exists());
}

#[test]
fn zero_epoch_training_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let p = config_with(dir.path(), |t| set(t, "train", "epochs", 0));
    let out = dir.path().join("out");
    let m = run(Command::Train, &p, Some(12), &out).unwrap();
    assert_eq!(m.seeds, vec![12]);
    let (saved, ckpt) = load_checkpoint(&out.join("model.ckpt")).unwrap();
    let init = FusionModel::new(ckpt.model.clone(), &mut rng(12, Stream::Init)).unwrap();
    assert_eq!(saved, init);
}

#[test]
fn agree_writes_the_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run(Command::Agree, &config_with(dir.path(), |_| {}), None, &out).unwrap();
    let got: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("agreement.json")).unwrap()).unwrap();
    let golden: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root().join("fixtures/agreement.golden.json")).unwrap()).unwrap();
    let rows = got["rows"].as_array().unwrap();
    let want = golden["rows"].as_array().unwrap();
    assert_eq!(rows.len(), want.len());
    for (g, w) in rows.iter().zip(want) {
        assert_eq!(g["metric"], w["metric"]);
        let (a, b) = (g["value"].as_f64().unwrap(), w["value"].as_f64().unwrap());
        assert!((a - b).abs() < 1e-12, "{}: {a} vs {b}", w["metric"]);
    }
}

#[test]
fn eval_aggregates_three_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    let fx = root().join("fixtures/eval");
    let text = format!(
        "[paths]\nlabels = \"{l}\"\n\n{runs}",
        l = fx.join("labels.jsonl").display(),
        runs = [8, 12, 14]
            .iter()
            .map(|s| format!("[[eval.runs]]\nseed = {s}\npredictions = \"{}\"\n\n", fx.join(format!("seed{s}.jsonl")).display()))
            .collect::<String>()
    );
    let p = dir.path().join("eval.toml");
    fs::write(&p, text).unwrap();
    let out = dir.path().join("out");
    let m = run(Command::Eval, &p, None, &out).unwrap();
    assert_eq!(m.seeds, vec![8, 12, 14]);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(doc["std_estimator"], "population");
    let cells = &doc["columns"]["predictions"]["cells"];
    // Per-run F1: Evacuees 1, 2/3, 4/5; Other 1, 4/5, 0; weighted 1, 11/15, 2/5.
    assert_eq!(cells["per_class"]["Evacuees"], "82.22±13.70");
    assert_eq!(cells["per_class"]["Other"], "60.00±43.20");
    assert_eq!(cells["per_class"]["Political"], "00.00±0.00");
    assert_eq!(cells["weighted"], "71.11±24.55");
    let md = fs::read_to_string(out.join("results.md")).unwrap();
    assert!(md.contains("| F1 Weighted Average | 71.11±24.55 |"), "{md}");
}

#[test]
fn input_inside_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    let labels = out.join("labels.jsonl");
    fs::copy(root().join("fixtures/eval/labels.jsonl"), &labels).unwrap();
    let p = config_with(dir.path(), |t| set(t, "paths", "labels", labels.to_string_lossy().into_owned()));
    match run(Command::Trends, &p, None, &out) {
        Err(RunError::Failed(e)) => assert!(e.to_string().contains("inside the output directory")),
        other => panic!("expected refusal, got {other:?}"),
    }
    assert!(out.join(ERROR_FILE).exists());
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let m = run(Command::Trends, &config_with(dir.path(), |_| {}), None, &out).unwrap();
    let on_disk: RunManifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m, on_disk);
    assert!(m.inputs.keys().any(|k| k.ends_with("posts.jsonl")));
    assert!(m.outputs.contains_key("trends.json"));
    assert!(!m.outputs.contains_key(MANIFEST_FILE));
}
