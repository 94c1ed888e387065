use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use onset_tcn::harness::{CorpusSource, ExperimentConfig, PretrainConfig, SnippetConfig};
use onset_tcn::model::{FreezeConfig, Variant};
use onset_tcn::train::FinetuneConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onset-tcn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn f1_of(line: &str) -> f64 {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix("F1="))
        .and_then(|v| v.parse().ok())
        .expect("F1 field")
}

#[test]
fn eval_of_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.onsets");
    std::fs::write(&f, "0.5\n1.25\n2.0\n").unwrap();
    let o = run(&["eval", p(&f), p(&f)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "TP=3 FP=0 FN=0 P=1.000 R=1.000 F1=1.000");
}

#[test]
fn eval_counts_misses_and_false_alarms() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("est.onsets");
    let reference = dir.path().join("ref.onsets");
    std::fs::write(&est, "0.51\n3.0\n").unwrap();
    std::fs::write(&reference, "0.5\n1.0\n").unwrap();
    let o = run(&["eval", p(&est), p(&reference)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "TP=1 FP=1 FN=1 P=0.500 R=0.500 F1=0.500");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["eval", "--bogus-flag", "a", "b"])), 1);
    assert_eq!(code(&run(&["eval", "a", "b", "--tolerance", "0"])), 1);
    assert_eq!(code(&run(&["synth"])), 1);
}

#[test]
fn missing_input_exits_2() {
    let o = run(&["eval", "/nonexistent/a.onsets", "/nonexistent/b.onsets"]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn malformed_annotation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.onsets");
    std::fs::write(&f, "0.5\nnot-a-number\n").unwrap();
    assert_eq!(code(&run(&["eval", p(&f), p(&f)])), 2);
}

fn small_corpus(dir: &Path) {
    let o = run(&[
        "synth", "--files", "3", "--duration", "6", "--instruments", "tarol,cuica", "--seed", "5", "--out", p(dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    small_corpus(&corpus);
    assert!(corpus.join("tarol_01.wav").exists());
    assert!(corpus.join("cuica_03.onsets").exists());
    let again = run(&["synth", "--files", "3", "--duration", "6", "--instruments", "tarol,cuica", "--out", p(&corpus)]);
    assert_ne!(code(&again), 0);
}

#[test]
fn divergent_pretraining_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    small_corpus(&corpus);
    let model = dir.path().join("m.model");
    let o = run(&[
        "pretrain", "--corpus", p(&corpus), "--epochs", "1", "--lr", "1e300", "--out", p(&model),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pretrain_finetune_detect_eval_flow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    small_corpus(&corpus);
    let base = dir.path().join("base.model");
    let o = run(&["pretrain", "--corpus", p(&corpus), "--epochs", "1", "--exclude", "cuica", "--out", p(&base)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let adapted = dir.path().join("adapted.model");
    let o = run(&[
        "finetune",
        "--model", p(&base),
        "--audio", p(&corpus.join("cuica_01.wav")),
        "--onsets", p(&corpus.join("cuica_01.onsets")),
        "--duration", "3",
        "--epochs", "3",
        "--freeze", "ft_Conv3",
        "--out", p(&adapted),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_ne!(std::fs::read(&base).unwrap(), std::fs::read(&adapted).unwrap());

    let est = dir.path().join("est.onsets");
    let o = run(&["detect", "--model", p(&adapted), p(&corpus.join("cuica_02.wav")), "--out", p(&est)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let on_stdout = stdout(&run(&["detect", "--model", p(&adapted), p(&corpus.join("cuica_02.wav"))]));
    assert_eq!(on_stdout, std::fs::read_to_string(&est).unwrap());

    let o = run(&["eval", p(&est), p(&corpus.join("cuica_02.onsets"))]);
    assert_eq!(code(&o), 0);
    let f1 = f1_of(&stdout(&o));
    assert!((0.0..=1.0).contains(&f1));
}

#[test]
fn features_command_writes_one_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    small_corpus(&corpus);
    let o = run(&["features", p(&corpus.join("tarol_01.wav"))]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# frames=600 bands=81 frame_rate=100");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 600);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 81));
}

#[test]
fn grid_then_report_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    small_corpus(&corpus);
    let base = dir.path().join("base.model");
    let o = run(&["pretrain", "--model", "TCNv2", "--corpus", p(&corpus), "--epochs", "1", "--out", p(&base)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let config = ExperimentConfig {
        corpus: CorpusSource::Manifest(corpus.clone()),
        models: vec![Variant::TcnV2],
        freeze_configs: vec![FreezeConfig::none(), FreezeConfig::parse_extended("ft_Conv3").unwrap()],
        snippet: SnippetConfig { duration: 2.0, ..SnippetConfig::default() },
        finetune: FinetuneConfig { epochs: 1, ..FinetuneConfig::default() },
        base_models: BTreeMap::from([(Variant::TcnV2, base.clone())]),
        pretrain: PretrainConfig::default(),
        seed: 11,
        ..ExperimentConfig::default()
    };
    let cfg_path = dir.path().join("grid.json");
    std::fs::write(&cfg_path, config.to_json()).unwrap();
    let out = dir.path().join("results");
    let o = run(&["grid", "--config", p(&cfg_path), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert_eq!(std::fs::read_to_string(out.join("journal.jsonl")).unwrap().lines().count(), 4);
    assert!(!out.join("failures.txt").exists());

    let rebuilt = stdout(&run(&["report", p(&out.join("results.csv"))]));
    assert_eq!(rebuilt, std::fs::read_to_string(out.join("summary.md")).unwrap());

    let again = run(&["grid", "--config", p(&cfg_path), "--out", p(&out)]);
    assert_eq!(code(&again), 1, "existing results are not replaced without --force");
}
