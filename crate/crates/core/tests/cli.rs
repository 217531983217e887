use std::path::Path;
use std::process::{Command, Output};

use ddstn::data::BimodalDataset;
use ddstn::eval::{predict, EvalReport};
use ddstn::experiment::{cmd_eval, cmd_train, ExperimentConfig};

fn ddstn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddstn")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SEPARABLE: &str = r#"{
  "dataset": {"generate": {"separation_s": 4.0, "separation_t": 4.0, "noise_s": 0.3, "noise_t": 0.3, "seed": 11}},
  "algorithms": ["ddstn"],
  "train": {"epochs": 200},
  "seeds": [0]
}"#;

#[test]
fn generate_default_profile() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ddstn(&["generate", "--out", out.to_str().unwrap(), "--seed", "4"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(a.join("dataset.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",paired,")).count(), 106);
    assert_eq!(text.lines().filter(|l| l.contains(",unpaired,")).count(), 159);
    assert_eq!(text, std::fs::read_to_string(b.join("dataset.csv")).unwrap());
}

#[test]
fn invalid_config_exits_2_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad_value = write_config(dir.path(), "v.json", r#"{"dataset": {"generate": {"noise_t": -1.0}}}"#);
    let o = ddstn(&["generate", "--config", &bad_value, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise_t"));

    let unknown = write_config(dir.path(), "u.json", r#"{"train": {"epochz": 3}}"#);
    let o = ddstn(&["compare", "--config", &unknown]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"));

    let algo = write_config(dir.path(), "a.json", r#"{"algorithms": ["cnn_svm", "resnet"]}"#);
    let o = ddstn(&["compare", "--config", &algo]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resnet"));

    let o = ddstn(&["compare", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_single_algorithm_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"algorithms": ["cnn_svm"], "k": 3, "train": {"epochs": 5}}"#);
    let out = dir.path().join("out");
    let o = ddstn(&["compare", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "algorithm,ACC,SEN,SPE,YI");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells.len(), 5);
    assert_eq!(cells[0], "CNN-SVM");
    for c in &cells[1..] {
        let (m, s) = c.split_once('±').unwrap();
        assert_eq!(m.split('.').nth(1).unwrap().len(), 2);
        assert_eq!(s.split('.').nth(1).unwrap().len(), 2);
    }
    assert!(out.join("roc_cnn_svm.csv").exists());
    assert!(std::fs::read_to_string(out.join("roc.svg")).unwrap().contains("<polyline"));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([2]));
    assert_eq!(manifest["runs"][0]["folds"].as_array().unwrap().len(), 3);
}

#[test]
fn training_failure_exits_1_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"algorithms": ["dan"], "seeds": [0], "train": {"epochs": 3, "optimizer": {"method": "sgd", "lr": 1e300}}}"#,
    );
    let o = ddstn(&["compare", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("dan") && err.contains("fold 0"), "{err}");
}

#[test]
fn train_then_eval_separable_toy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SEPARABLE);
    let d = dir.path().to_str().unwrap();
    for cmd in ["generate", "train"] {
        let o = ddstn(&[cmd, "--config", &cfg, "--out", d]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 201);
    let model = dir.path().join("model.json");
    let data = dir.path().join("dataset.csv");
    let o = ddstn(&["eval", "--config", &cfg, "--out", d, "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(report.folds[0].metrics.acc, 1.0);
    assert_eq!(report.folds[0].test_ids.len(), 265);
}

#[test]
fn eval_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"algorithms": ["cnn_svm"], "seeds": [0], "train": {"epochs": 1}}"#);
    let d = dir.path().to_str().unwrap();
    assert!(ddstn(&["train", "--config", &cfg, "--out", d]).status.success());
    let model = dir.path().join("model.json");

    let no_label = dir.path().join("nolabel.csv");
    std::fs::write(&no_label, "id,kind,s0,t0\n0,paired,1.0,2.0\n").unwrap();
    let o = ddstn(&["eval", "--out", d, "--model", model.to_str().unwrap(), "--data", no_label.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let narrow = dir.path().join("narrow.csv");
    std::fs::write(&narrow, "id,kind,label,t0,t1\n0,unpaired,1,0.5,0.1\n1,unpaired,-1,0.2,0.3\n").unwrap();
    let o = ddstn(&["eval", "--out", d, "--model", model.to_str().unwrap(), "--data", narrow.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("[2, 2]") && err.contains("[8]"), "{err}");
}

#[test]
fn evaluated_checkpoint_matches_in_memory_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        algorithms: vec!["ddstn".into()],
        seeds: vec![3],
        train: ddstn::train::TrainConfig {
            epochs: 5,
            ..Default::default()
        },
        out: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let model = cmd_train(&cfg).unwrap();
    let ds = cfg.dataset(3).unwrap();
    let data = dir.path().join("data.csv");
    ds.save_csv(&data).unwrap();
    let report = cmd_eval(&cfg, &dir.path().join("model.json"), &data).unwrap();
    let reloaded = BimodalDataset::load_csv(&data).unwrap();
    let (rows, _) = reloaded.all_targets();
    let x = reloaded.batch(rows.into_iter(), false).unwrap();
    assert_eq!(report.folds[0].test_scores, predict(&model, &x).unwrap().scores);
}
