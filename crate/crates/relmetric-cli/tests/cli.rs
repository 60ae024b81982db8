//! End-to-end tests of the binary: file outputs, reproducibility from the
//! echoed config, pipeline consistency, and exit codes.

use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_relmetric");

const CORPUS: &str = r#"{"id":"s1","text":"Anna lives in Oslo.","entities":[{"type":"Peop","char_start":0,"char_end":4},{"type":"Loc","char_start":14,"char_end":18}],"relations":[{"subject":0,"object":1,"predicate":"Live_In"}]}
{"id":"s2","text":"Marta works for Acme.","entities":[{"type":"Peop","char_start":0,"char_end":5},{"type":"Org","char_start":16,"char_end":20}],"relations":[{"subject":0,"object":1,"predicate":"Work_For"}]}
{"id":"s3","text":"Oslo is quiet.","entities":[{"type":"Loc","char_start":0,"char_end":4}],"relations":[]}
{"id":"s4","text":"Anna met Marta in Oslo.","entities":[{"type":"Peop","char_start":0,"char_end":4},{"type":"Peop","char_start":9,"char_end":14},{"type":"Loc","char_start":18,"char_end":22}],"relations":[{"subject":0,"object":2,"predicate":"Live_In"}]}
"#;

fn tiny_flags() -> Vec<&'static str> {
    vec![
        "--epochs",
        "2",
        "--channels",
        "3",
        "--layers",
        "2",
        "--context-size",
        "8",
        "--word-emb-size",
        "6",
        "--char-emb-size",
        "3",
        "--char-repr-size",
        "4",
        "--pos-emb-size",
        "3",
        "--dep-emb-size",
        "3",
        "--seed",
        "9",
    ]
}

fn run(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn write_corpus(dir: &Path) {
    std::fs::write(dir.join("corpus.jsonl"), CORPUS).unwrap();
}

#[test]
fn train_writes_outputs_and_is_reproducible_from_echoed_config() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());

    let mut args = vec!["train", "--corpus", "corpus.jsonl", "--out", "run"];
    args.extend(tiny_flags());
    let (code, _, err) = run(&args, dir.path());
    assert_eq!(code, 0, "{}", err);

    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "one record per epoch");
    assert!(dir.path().join("run/model.ckpt").exists());
    assert!(dir.path().join("run/config.toml").exists());
    let echoed = std::fs::read_to_string(dir.path().join("run/config.toml")).unwrap();
    assert!(echoed.contains("epochs = 2"));
    assert!(echoed.contains("seed = 9"));

    // Re-running purely from the echoed config reproduces the metrics
    // (wall-clock fields aside) bit for bit.
    let (code, _, err) = run(
        &[
            "train",
            "--corpus",
            "corpus.jsonl",
            "--config",
            "run/config.toml",
            "--out",
            "rerun",
        ],
        dir.path(),
    );
    assert_eq!(code, 0, "{}", err);
    let metrics2 = std::fs::read_to_string(dir.path().join("rerun/metrics.jsonl")).unwrap();
    let strip = |text: &str| -> Vec<serde_json::Value> {
        text.lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("train_seconds");
                v.as_object_mut().unwrap().remove("eval_seconds");
                v
            })
            .collect()
    };
    assert_eq!(strip(&metrics), strip(&metrics2));
}

#[test]
fn predict_then_evaluate_matches_train_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let mut args = vec!["train", "--corpus", "corpus.jsonl", "--out", "run"];
    args.extend(tiny_flags());
    let (code, _, err) = run(&args, dir.path());
    assert_eq!(code, 0, "{}", err);

    let (code, out, err) = run(
        &[
            "predict",
            "--checkpoint",
            "run/model.ckpt",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "pred",
        ],
        dir.path(),
    );
    assert_eq!(code, 0, "{}", err);
    assert!(out.contains("predicted 4 sentences"));

    // Timing field present and positive.
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pred/summary.json")).unwrap())
            .unwrap();
    assert!(summary["wall_clock_seconds"].as_f64().unwrap() > 0.0);

    let (code, out, err) = run(
        &[
            "evaluate",
            "--gold",
            "corpus.jsonl",
            "--pred",
            "pred/predictions.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code, 0, "{}", err);

    // The scorer output reproduces the train-set scores the harness
    // reported for the same checkpoint.
    let train_summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/summary.json")).unwrap())
            .unwrap();
    let ner = &train_summary["train_report"]["ner"];
    let expect = format!(
        "NER counts: tp {} fp {} fn {}",
        ner["tp"], ner["fp"], ner["fn"]
    );
    assert!(
        out.contains(&expect),
        "evaluate output {:?} missing {:?}",
        out,
        expect
    );
}

#[test]
fn predict_rejects_mismatched_label_space() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let mut args = vec!["train", "--corpus", "corpus.jsonl", "--out", "run"];
    args.extend(tiny_flags());
    let (code, _, err) = run(&args, dir.path());
    assert_eq!(code, 0, "{}", err);

    std::fs::write(
        dir.path().join("other.jsonl"),
        r#"{"id":"x1","text":"The drug causes rash.","entities":[{"type":"Drug","char_start":4,"char_end":8}],"relations":[]}"#,
    )
    .unwrap();
    let (code, _, err) = run(
        &[
            "predict",
            "--checkpoint",
            "run/model.ckpt",
            "--corpus",
            "other.jsonl",
            "--out",
            "pred2",
        ],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("label spaces do not match"), "{}", err);
    assert!(err.contains("Drug") && err.contains("Peop"), "{}", err);
}

#[test]
fn inspect_emits_one_grid_per_layer_plus_prediction() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let mut args = vec!["train", "--corpus", "corpus.jsonl", "--out", "run"];
    args.extend(tiny_flags());
    let (code, _, err) = run(&args, dir.path());
    assert_eq!(code, 0, "{}", err);

    let (code, _, err) = run(
        &[
            "inspect",
            "--checkpoint",
            "run/model.ckpt",
            "--sentence",
            "Anna lives in Oslo.",
            "--out",
            "heat",
        ],
        dir.path(),
    );
    assert_eq!(code, 0, "{}", err);
    // layers = 2 in the tiny config: two hidden grids plus the prediction.
    assert!(dir.path().join("heat/layer_1.csv").exists());
    assert!(dir.path().join("heat/layer_2.csv").exists());
    assert!(dir.path().join("heat/prediction.csv").exists());
    assert!(!dir.path().join("heat/layer_3.csv").exists());

    // Token-headed 5×5 grid: header plus five rows; prediction values are
    // probabilities.
    let pred_grid = std::fs::read_to_string(dir.path().join("heat/prediction.csv")).unwrap();
    let lines: Vec<&str> = pred_grid.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with(",Anna,lives,in,Oslo"));
    for line in &lines[1..] {
        for cell in line.split(',').skip(1) {
            let v: f64 = cell.parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "probability {} out of range", v);
        }
    }
}

#[test]
fn folds_driver_writes_per_fold_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let mut args = vec![
        "folds",
        "--corpus",
        "corpus.jsonl",
        "--folds",
        "2",
        "--out",
        "cv",
    ];
    args.extend(tiny_flags());
    let (code, out, err) = run(&args, dir.path());
    assert_eq!(code, 0, "{}", err);
    assert!(out.contains("mean RE F1"), "{}", out);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cv/summary.json")).unwrap())
            .unwrap();
    assert!(summary["folds"].as_array().unwrap().len() <= 2);
}

#[test]
fn error_paths_use_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());

    // Missing corpus: data error naming the path.
    let (code, _, err) = run(
        &["train", "--corpus", "nope.jsonl", "--out", "x"],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("nope.jsonl"), "{}", err);

    // Unknown config key: usage error listing valid keys.
    std::fs::write(dir.path().join("bad.toml"), "bananas = 3\n").unwrap();
    let (code, _, err) = run(
        &[
            "train",
            "--corpus",
            "corpus.jsonl",
            "--config",
            "bad.toml",
            "--out",
            "x",
        ],
        dir.path(),
    );
    assert_eq!(code, 1);
    assert!(err.contains("unknown field `bananas`"), "{}", err);
    assert!(err.contains("learning_rate"), "{}", err);

    // Unknown flag: usage error from the parser.
    let (code, _, _) = run(&["train", "--corpus", "corpus.jsonl", "--frobnicate"], dir.path());
    assert_eq!(code, 1);

    // Empty sentence for inspect: data error.
    let mut args = vec!["train", "--corpus", "corpus.jsonl", "--out", "run"];
    args.extend(tiny_flags());
    let (code, _, _) = run(&args, dir.path());
    assert_eq!(code, 0);
    let (code, _, err) = run(
        &[
            "inspect",
            "--checkpoint",
            "run/model.ckpt",
            "--sentence",
            "  ",
            "--out",
            "h",
        ],
        dir.path(),
    );
    assert_eq!(code, 2);
    assert!(err.contains("empty sentence"), "{}", err);
}
