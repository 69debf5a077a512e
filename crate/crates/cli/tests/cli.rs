use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use stm_core::audio_io::write_wav_i16;
use stm_core::dataset::{self, ClassLabel, Dataset, FeatureKind, LabelEntry, Record, Split};
use stm_core::mlp::{save_model, Mlp, MlpArch, ModelHeader};
use stm_core::synth::{am_noise, ripple_noise};

fn stm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stm"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = stm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes `clips` WAVs per (class, group) and the matching labels CSV.
fn corpus(dir: &Path, groups: usize, clips: usize, seconds: f64) -> std::path::PathBuf {
    let mut entries = Vec::new();
    let classes = [ClassLabel::NontonalSpeech, ClassLabel::NonvocalMusic, ClassLabel::UrbanEnv];
    for (c, label) in classes.into_iter().enumerate() {
        for g in 0..groups {
            for k in 0..clips {
                let seed = (c * 1000 + g * 10 + k) as u64;
                let wave = match c {
                    0 => am_noise(4.0, 0.8, seconds, 16000, seed),
                    1 => ripple_noise(3.0, 12.0, seconds, 16000, seed),
                    _ => am_noise(0.0, 0.0, seconds, 16000, seed),
                }
                .unwrap();
                let path = format!("{label}_{g}_{k}.wav");
                write_wav_i16(dir.join(&path), &wave).unwrap();
                entries.push(LabelEntry {
                    path,
                    label,
                    group: format!("{label}_{g}"),
                });
            }
        }
    }
    let labels = dir.join("labels.csv");
    dataset::write_labels(&labels, &entries).unwrap();
    labels
}

#[test]
fn extract_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let labels = corpus(dir.path(), 1, 1, 8.0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["extract", "--input", s(dir.path()), "--labels", s(&labels), "--kind", "stm", "--out", s(&a)]);
    ok(&["extract", "--input", s(dir.path()), "--labels", s(&labels), "--kind", "stm", "--out", s(&b), "--jobs", "2"]);
    let ds = dataset::read_store(&a).unwrap();
    assert_eq!((ds.len(), ds.n_features), (3, 2420));
    assert!(ds.records.iter().all(|r| r.n_chunks == 2));
    let (pa, pb) = (dataset::store_paths(&a), dataset::store_paths(&b));
    assert_eq!(fs::read(pa.0).unwrap(), fs::read(pb.0).unwrap());
    assert_eq!(fs::read(pa.1).unwrap(), fs::read(pb.1).unwrap());
}

#[test]
fn failed_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let labels = corpus(dir.path(), 1, 1, 8.0);
    let mut text = fs::read_to_string(&labels).unwrap();
    text.push_str("missing.wav,urban_env,urban_env_9\nempty.wav,urban_env,urban_env_8\n");
    fs::write(&labels, text).unwrap();
    fs::write(dir.path().join("empty.wav"), b"").unwrap();
    let store = dir.path().join("store");
    ok(&["extract", "--input", s(dir.path()), "--labels", s(&labels), "--kind", "mel", "--out", s(&store)]);
    let ds = dataset::read_store(&store).unwrap();
    assert_eq!((ds.len(), ds.n_features), (3, 2016));
}

#[test]
fn eval_on_perfect_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let classes = [ClassLabel::NontonalSpeech, ClassLabel::NonvocalMusic, ClassLabel::UrbanEnv];
    let mut ds = Dataset::new(FeatureKind::Mel, 3);
    let mut split = Split {
        seed: 0,
        ratios: [0.8, 0.1, 0.1],
        assignment: Default::default(),
    };
    for i in 0..12 {
        let c = i % 3;
        let mut features = vec![0.0f32; 3];
        features[c] = 1.0;
        let id = format!("r{i}");
        split.assignment.insert(id.clone(), dataset::Partition::Test);
        ds.push(Record {
            id: id.clone(),
            source_path: format!("{id}.wav"),
            label: classes[c],
            group: id,
            features,
            n_chunks: 1,
        })
        .unwrap();
    }
    let store = dir.path().join("store");
    let split_path = dir.path().join("split.json");
    dataset::write_store(&store, &ds).unwrap();
    split.write(&split_path).unwrap();

    // Identity PCA and an MLP whose argmax copies the input's argmax.
    let base = dir.path().join("model");
    let mut pca = Vec::new();
    for v in [0.0f32; 3].iter().chain(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]) {
        pca.extend(v.to_le_bytes());
    }
    fs::write(dir.path().join("model.pca.f32"), pca).unwrap();
    fs::write(dir.path().join("model.pca.json"), r#"{"k": 3, "d": 3, "explained_variance": [1, 1, 1]}"#).unwrap();
    let arch = MlpArch {
        input_dim: 3,
        hidden_units: vec![3],
        output_dim: 3,
        l1: 0.0,
        dropout_rate: 0.0,
        learning_rate: 1e-3,
    };
    let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 10.0 } else { 0.0 }).collect();
    let params: Vec<f64> = [eye.clone(), vec![0.0; 3], eye, vec![0.0; 3]].concat();
    let header = ModelHeader {
        arch: arch.clone(),
        seed: 0,
        metrics: Value::Null,
        classes: classes.iter().map(|c| c.to_string()).collect(),
        feature_mask: None,
        config: Value::Null,
    };
    save_model(&base, &Mlp::from_flat_params(arch, &params).unwrap(), &header).unwrap();

    let report = dir.path().join("report.json");
    ok(&["eval", "--model", s(&base), "--store", s(&store), "--split", s(&split_path), "--out", s(&report)]);
    let r = read_json(&report);
    assert_eq!(r["partition"], "test");
    assert_eq!(r["report"]["f1_macro"], 1.0);
    assert_eq!(r["report"]["f1_per_class"], serde_json::json!([1.0, 1.0, 1.0]));
    assert_eq!(r["report"]["roc_auc_macro"], 1.0);
}

#[test]
fn errors_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = stm(&["extract", "--input", s(dir.path()), "--labels", s(&missing), "--kind", "stm", "--out", "x"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    let line = stderr.trim_end();
    assert!(line.starts_with("error kind="), "{line}");
    let message = line.split_once(" message=").unwrap().1;
    assert!(serde_json::from_str::<String>(message).is_ok());

    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"budgett": 3}"#).unwrap();
    let out = stm(&["split", "--store", "x", "--out", "y", "--config", s(&config)]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind=config "));
}

#[test]
fn small_recipe_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let labels = corpus(d, 5, 2, 4.0);
    let config = d.join("config.json");
    fs::write(
        &config,
        r#"{"pca_k": 8, "budget": 2, "arch": {"hidden_units": [16], "learning_rate": 0.001},
            "train": {"max_epochs": 10, "batch_size": 8},
            "search": {"max_layers": 1, "max_units": 32, "learning_rate": [0.0001, 0.001]}}"#,
    )
    .unwrap();
    let (store, split, c) = (d.join("stm"), d.join("split.json"), s(&config));
    ok(&["extract", "--input", s(d), "--labels", s(&labels), "--kind", "stm", "--out", s(&store), "--config", c]);
    ok(&["split", "--store", s(&store), "--seed", "4", "--out", s(&split), "--config", c]);
    ok(&["train", "--store", s(&store), "--split", s(&split), "--config", c, "--out", s(&d.join("fixed"))]);
    ok(&["tune", "--store", s(&store), "--split", s(&split), "--config", c, "--out", s(&d.join("tuned"))]);
    ok(&["eval", "--model", s(&d.join("tuned")), "--store", s(&store), "--split", s(&split), "--out", s(&d.join("eval.json"))]);
    let sweep = d.join("sweep.csv");
    ok(&[
        "ablate", "--store", s(&store), "--split", s(&split), "--cutoffs", "4:6,1:0.75", "--mode", "both",
        "--model", s(&d.join("tuned")), "--config", c, "--out", s(&sweep),
    ]);
    ok(&["export-maps", "--store", s(&store), "--out-dir", s(&d.join("maps"))]);
    ok(&["undersample", "--store", s(&store), "--class", "urban_env", "--cap", "4", "--out", s(&d.join("small"))]);

    let eval = read_json(&d.join("eval.json"));
    assert_eq!(eval["split_seed"], 4);
    assert_eq!(eval["config"]["run"]["pca_k"], 8);
    assert_eq!(eval["config"]["protocol"]["search"]["budget"], 2);
    for f in ["fixed.json", "fixed.f32", "tuned.pca.f32", "tuned.trials.json", "tuned.final.csv", "sweep.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let rows: Vec<String> = fs::read_to_string(&sweep).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("lowpass,4,6,561,"));
    assert_eq!(read_json(&d.join("maps").join("maps.json"))["files"].as_array().unwrap().len(), 3);
    assert_eq!(dataset::read_store(d.join("small")).unwrap().len(), 24);
    let json = read_json(&split);
    assert_eq!(json["assignment"].as_object().unwrap().len(), 30);
}
