use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_admelabel");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Tiny encoder so training finishes in a second or two.
const TINY: &str = r#"
seed = 3
[encoder]
vocab_size = 150
[encoder.architecture]
num_layers = 2
num_heads = 2
hidden_size = 8
ffn_size = 16
max_seq_len = 24
[encoder.pretrain]
epochs = 1
batch_size = 8
[encoder.finetune]
epochs = 1
batch_size = 8
learning_rate = 0.001
[eval]
k = 3
holdout_per_class = 4
sizes = [4, 8]
[drift]
per_class = 2
[synth]
paragraphs = 120
unlabeled = 30
"#;

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(w.path("tiny.toml"), TINY).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Synthetic corpus written by the binary.
    fn corpus(&self) -> PathBuf {
        let out = self.path("synth.jsonl");
        if !out.exists() {
            let o = run(&[
                "synth",
                "--config",
                p(&self.path("tiny.toml")),
                "--out",
                p(&out),
                "--unlabeled-out",
                p(&self.path("unlabeled.txt")),
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        out
    }
}

#[test]
fn ingest_keeps_nda_labels_only() {
    let w = Work::new();
    let out = w.path("m.jsonl");
    let o = run(&["ingest", "--input", p(&fixtures().join("spl")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = jsonl(&out);
    assert_eq!(m.len(), 2);
    assert!(m.iter().all(|e| e["application_number"].as_str().unwrap().starts_with("NDA")));
    assert!(w.path("m.segments.jsonl").exists());
    assert!(w.path("m.jsonl.meta.json").exists());
}

#[test]
fn ingest_from_local_index() {
    let w = Work::new();
    let out = w.path("m.jsonl");
    let o = run(&[
        "ingest",
        "--index",
        p(&fixtures().join("index.jsonl")),
        "--documents",
        p(&fixtures().join("spl")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(jsonl(&out).len(), 2);
}

#[test]
fn ingest_empty_dir() {
    let w = Work::new();
    let empty = w.path("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = w.path("m.jsonl");
    let o = run(&["ingest", "--input", p(&empty), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out).unwrap(), "");
}

#[test]
fn ingest_bad_xml_names_file() {
    let w = Work::new();
    let o = run(&["ingest", "--input", p(&fixtures().join("bad")), "--out", p(&w.path("m.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("truncated.xml"), "{}", stderr(&o));
}

#[test]
fn ingest_needs_a_source() {
    let w = Work::new();
    let o = run(&["ingest", "--out", p(&w.path("m.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn ingest_and_annotate(w: &Work, dir: &str) -> Vec<Value> {
    let m = w.path(&format!("{dir}.jsonl"));
    let c = w.path(&format!("{dir}.corpus.jsonl"));
    assert!(run(&["ingest", "--input", p(&fixtures().join(dir)), "--out", p(&m)]).status.success());
    let o = run(&["annotate", "--manifest", p(&m), "--out", p(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    jsonl(&c)
}

#[test]
fn annotate_titled_fixtures() {
    let w = Work::new();
    let rows = ingest_and_annotate(&w, "spl");
    assert_eq!(rows.len(), 8);
    for t in ["Absorption", "Distribution", "Metabolism", "Excretion"] {
        assert_eq!(rows.iter().filter(|r| r["topic"] == t).count(), 2, "{t}");
    }
}

#[test]
fn annotate_untitled_fixture() {
    let w = Work::new();
    let rows = ingest_and_annotate(&w, "untitled");
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r["topic"] == "Other" && r["source"] == "regex_outside"));
}

#[test]
fn annotate_corrupt_manifest_names_line() {
    let w = Work::new();
    let m = w.path("m.jsonl");
    assert!(run(&["ingest", "--input", p(&fixtures().join("spl")), "--out", p(&m)]).status.success());
    let mut text = std::fs::read_to_string(&m).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&m, text).unwrap();
    let o = run(&["annotate", "--manifest", p(&m), "--out", p(&w.path("c.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_model_is_usage_error() {
    let w = Work::new();
    let o = run(&["train", "--model", "bert", "--corpus", p(&w.corpus()), "--out", p(&w.path("m.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn top_n_beyond_depth_is_usage_error() {
    let w = Work::new();
    let cfg = w.path("tiny.toml");
    let o = run(&[
        "ablate", "--config", p(&cfg), "--mode", "freeze", "--top-n", "0..3", "--corpus", p(&w.corpus()), "--out",
        p(&w.path("a.json")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&[
        "ablate", "--config", p(&cfg), "--mode", "reinit", "--init", "pretrained", "--top-n", "1", "--corpus",
        p(&w.corpus()), "--out", p(&w.path("a.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_fails() {
    let w = Work::new();
    let o = run(&[
        "evaluate",
        "--config",
        p(&w.path("tiny.toml")),
        "--model",
        "encoder",
        "--pretrained",
        p(&w.path("nope.json")),
        "--corpus",
        p(&w.corpus()),
        "--out",
        p(&w.path("r.json")),
    ]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn bad_config_is_usage_error() {
    let w = Work::new();
    std::fs::write(w.path("bad.toml"), "[eval]\nk = 1\n").unwrap();
    let o = run(&["synth", "--config", p(&w.path("bad.toml")), "--out", p(&w.path("s.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_is_reproducible_and_embeds_config() {
    let w = Work::new();
    let corpus = w.corpus();
    let cfg = w.path("tiny.toml");
    let eval = |out: &Path| {
        let o = run(&[
            "evaluate",
            "--config",
            p(&cfg),
            "--model",
            "logreg",
            "--corpus",
            p(&corpus),
            "--unseen",
            p(&fixtures().join("manual.jsonl")),
            "--out",
            p(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let (a, b) = (eval(&w.path("a.json")), eval(&w.path("b.json")));
    assert_eq!(a, b);
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert_eq!(report["unseen"]["size"], 5);
    let meta: Value = serde_json::from_slice(&std::fs::read(w.path("a.json.meta.json")).unwrap()).unwrap();
    assert!(meta["started_unix"].as_f64().unwrap() > 0.0);
    assert_eq!(meta["command"], "evaluate");
}

#[test]
fn train_then_predict() {
    let w = Work::new();
    let corpus = w.corpus();
    let model = w.path("rule.json");
    assert!(run(&["train", "--model", "rule", "--corpus", p(&corpus), "--out", p(&model)]).status.success());
    let preds = w.path("preds.jsonl");
    let o = run(&["predict", "--model-file", p(&model), "--corpus", p(&corpus), "--out", p(&preds)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = jsonl(&preds);
    assert_eq!(rows.len(), 120);
    assert!(rows.iter().all(|r| r["predicted"].is_string()));
}

#[test]
fn learning_curve_csv() {
    let w = Work::new();
    let out = w.path("curve.csv");
    let o = run(&[
        "learning-curve",
        "--config",
        p(&w.path("tiny.toml")),
        "--models",
        "rule,logreg",
        "--corpus",
        p(&w.corpus()),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "size,model,f1");
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(w.path("curve.json").exists());
}

#[test]
fn encoder_pipeline() {
    let w = Work::new();
    let cfg = w.path("tiny.toml");
    let corpus = w.corpus();
    let pre = w.path("pre.json");
    let o = run(&[
        "pretrain",
        "--config",
        p(&cfg),
        "--unlabeled",
        p(&w.path("unlabeled.txt")),
        "--corpus",
        p(&corpus),
        "--out",
        p(&pre),
        "--metrics",
        p(&w.path("pre.metrics.jsonl")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!jsonl(&w.path("pre.metrics.jsonl")).is_empty());

    let model = w.path("enc.json");
    let o = run(&[
        "train", "--config", p(&cfg), "--model", "encoder", "--pretrained", p(&pre), "--corpus", p(&corpus), "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let diff = w.path("drift.json");
    let o = run(&[
        "attention-diff", "--config", p(&cfg), "--before", p(&pre), "--after", p(&model), "--corpus", p(&corpus),
        "--out", p(&diff),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d: Value = serde_json::from_slice(&std::fs::read(&diff).unwrap()).unwrap();
    assert_eq!(d["view"]["drift"]["samples"], 10);

    // Self-comparison: every head is unchanged.
    let o = run(&[
        "attention-diff", "--config", p(&cfg), "--before", p(&pre), "--after", p(&pre), "--corpus", p(&corpus),
        "--out", p(&diff),
    ]);
    assert!(o.status.success());
    let d: Value = serde_json::from_slice(&std::fs::read(&diff).unwrap()).unwrap();
    assert!((d["view"]["drift"]["min_value"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let o = run(&[
        "ablate", "--config", p(&cfg), "--mode", "reinit", "--top-n", "0,2", "--pretrained", p(&pre), "--corpus",
        p(&corpus), "--out", p(&w.path("ablate.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a: Value = serde_json::from_slice(&std::fs::read(w.path("ablate.json")).unwrap()).unwrap();
    assert_eq!(a["rows"].as_array().unwrap().len(), 2);
    assert_eq!(a["init"], "truncated_normal");
}
