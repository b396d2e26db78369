mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use ngtm_cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use ngtm_core::data::clique_path_corpus;
use ngtm_core::{GenerationTrace, Graph, MetricReport, SweepReport};

fn ngtm(args: &[&str]) -> i32 {
    run(std::iter::once("ngtm").chain(args.iter().copied()))
}

fn save_checkpoint(dir: &Path, k: usize) -> String {
    let path = dir.join("model.ckpt");
    common::tiny_checkpoint(k).save(&path).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_with_one_hot_theta() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = save_checkpoint(dir.path(), 5);
    let out = dir.path().join("gen");
    let code = ngtm(&["generate", "--checkpoint", &ckpt, "--count", "3", "--theta", "1,0,0,0,0", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.starts_with("graph_")).count(), 3);
    assert_eq!(names.iter().filter(|n| n.starts_with("trace_")).count(), 3);
    for i in 0..3 {
        let trace = GenerationTrace::from_json(&fs::read_to_string(out.join(format!("trace_{i:05}.json"))).unwrap()).unwrap();
        assert!(trace.steps.iter().all(|st| st.topic == 0));
        let g: Graph = serde_json::from_str(&fs::read_to_string(out.join(format!("graph_{i:05}.json"))).unwrap()).unwrap();
        assert_eq!(g, trace.final_graph);
    }
}

#[test]
fn eval_of_identical_sets() {
    let dir = tempfile::tempdir().unwrap();
    let graphs = dir.path().join("graphs.jsonl");
    clique_path_corpus(10, 5, 8, 1).unwrap().save_json_lines(&graphs).unwrap();
    let out = dir.path().join("report.json");
    assert_eq!(ngtm(&["eval", "--ref", s(&graphs), "--gen", s(&graphs), "--out", s(&out)]), EXIT_OK);
    let report: MetricReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    for v in [report.deg, report.clus, report.orbit, report.spect, report.diam, report.mmd_rbf] {
        assert!(v <= 1e-9);
    }
    assert_eq!(report.f1_pr, 100.0);
    assert_eq!((report.n_ref, report.n_gen), (20, 20));
}

#[test]
fn eval_reads_generated_directories() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = save_checkpoint(dir.path(), 2);
    let gen = dir.path().join("gen");
    assert_eq!(ngtm(&["generate", "--checkpoint", &ckpt, "--count", "8", "--out", s(&gen)]), EXIT_OK);
    let out = dir.path().join("r.json");
    assert_eq!(ngtm(&["eval", "--ref", s(&gen), "--gen", s(&gen), "--out", s(&out)]), EXIT_OK);
    let report: MetricReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.n_gen, 8);
}

#[test]
fn sweep_topic_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = save_checkpoint(dir.path(), 3);
    let out = dir.path().join("sweep.json");
    let code = ngtm(&["sweep-topic", "--checkpoint", &ckpt, "--topic", "2", "--per-setting", "4", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let values: Vec<f64> = report.settings.iter().map(|st| st.value).collect();
    assert_eq!(values, vec![-0.30, -0.15, 0.0, 0.15, 0.30, 0.45]);
    assert!(report.settings.iter().all(|st| st.graphs == 4));

    let code = ngtm(&["sweep-topic", "--checkpoint", &ckpt, "--topic", "0", "--deltas", "-0.3,0.3", "--per-setting", "3", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.settings.len(), 2);
}

#[test]
fn probe_and_class_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = save_checkpoint(dir.path(), 2);
    let graphs = dir.path().join("graphs.jsonl");
    clique_path_corpus(6, 5, 7, 2).unwrap().save_json_lines(&graphs).unwrap();
    let probe = dir.path().join("probe.json");
    assert_eq!(ngtm(&["train-probe", "--data", s(&graphs), "--out", s(&probe), "--epochs", "10"]), EXIT_OK);
    let out = dir.path().join("class.json");
    let code = ngtm(&["class-sweep", "--checkpoint", &ckpt, "--probe", s(&probe), "--topic", "1", "--per-setting", "2", "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.settings.len(), 21);
    for st in &report.settings {
        let p = st.class_probs.as_ref().unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn train_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.toml");
    fs::write(
        &config,
        r#"
dataset = "clique-path"
epochs = 2
batch_size = 8
val_every = 1
lr = 0.001

[net]
k = 2
w = 2
n_sub = 4
n_max = 8
latent_dim = 4
hidden_dim = 8
encoder_layers = 1
attention_heads = 1
"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    assert_eq!(ngtm(&["train", "--config", s(&config), "--out", s(&out)]), EXIT_OK);
    for f in ["best.ckpt", "last.ckpt", "metrics.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let gen = dir.path().join("gen");
    let best = out.join("best.ckpt");
    assert_eq!(ngtm(&["generate", "--checkpoint", s(&best), "--count", "2", "--out", s(&gen)]), EXIT_OK);
}

#[test]
fn usage_and_runtime_errors() {
    assert_eq!(ngtm(&[]), EXIT_USAGE);
    assert_eq!(ngtm(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(ngtm(&["generate", "--count", "x", "--checkpoint", "a", "--out", "b"]), EXIT_USAGE);
    assert_eq!(ngtm(&["--help"]), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = dir.path().join("o");
    assert_eq!(ngtm(&["generate", "--checkpoint", s(&missing), "--count", "1", "--out", s(&out)]), EXIT_RUNTIME);
    let ckpt = save_checkpoint(dir.path(), 2);
    assert_eq!(
        ngtm(&["generate", "--checkpoint", &ckpt, "--count", "1", "--theta", "0.9,0.9", "--out", s(&out)]),
        EXIT_RUNTIME
    );
}

#[test]
fn binary_uses_checkpoint_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = save_checkpoint(dir.path(), 2);
    let out = dir.path().join("gen");
    let status = Command::new(env!("CARGO_BIN_EXE_ngtm"))
        .args(["generate", "--count", "2", "--out", s(&out)])
        .env("NGTM_CHECKPOINT", &ckpt)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    assert!(out.join("graph_00001.json").exists());

    let output = Command::new(env!("CARGO_BIN_EXE_ngtm"))
        .args(["generate", "--count", "2"])
        .env_remove("NGTM_CHECKPOINT")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&output.stderr).contains("Usage"));
}
