use std::collections::BTreeMap;

use onset_tcn::annotations::{save_annotations, OnsetAnnotations};
use onset_tcn::audio::{save_wav_pcm16, AudioClip, SAMPLE_RATE};
use onset_tcn::eval::delta_pp_f1;
use onset_tcn::exec;
use onset_tcn::features::{FeatureMatrix, N_BANDS};
use onset_tcn::harness::*;
use onset_tcn::model::{build_model, FreezeConfig, Model, Variant};
use onset_tcn::synth::{CorpusSpec, InstrumentProfile};
use onset_tcn::train::FinetuneConfig;
use onset_tcn::Error;
use proptest::prelude::*;

fn data_file(index: usize, seconds: usize, onsets: &[f64]) -> DataFile {
    DataFile {
        instrument: "tarol".into(),
        index,
        features: FeatureMatrix::zeros(seconds * 100, N_BANDS),
        onsets: OnsetAnnotations::from_times(onsets.to_vec()).unwrap(),
        beats: None,
    }
}

fn cfg(offset: Option<f64>) -> SnippetConfig {
    SnippetConfig { offset, ..SnippetConfig::default() }
}

#[test]
fn snippet_examples() {
    let files = [data_file(1, 30, &[0.3, 2.0, 12.0]), data_file(2, 30, &[1.0])];
    let s = extract_snippet(files.iter(), &cfg(Some(0.0))).unwrap();
    assert_eq!(s.example.features.n_frames(), 500);
    assert_eq!(s.source, "tarol_01");
    assert_eq!(s.example.targets[30], 1.0);

    let s = extract_snippet(files.iter(), &cfg(None)).unwrap();
    assert_eq!(s.offset, 0.0);

    assert!(matches!(extract_snippet(files.iter(), &cfg(Some(20.0))), Err(Error::Snippet(_))));
    assert!(matches!(extract_snippet(files.iter(), &cfg(Some(27.0))), Err(Error::Range(_))));

    // the default window is the earliest one that contains an annotation
    let late = [data_file(1, 30, &[9.0, 20.0])];
    let s = extract_snippet(late.iter(), &cfg(None)).unwrap();
    assert!((s.offset - 4.01).abs() < 1e-9, "{}", s.offset);
    assert_eq!(s.example.targets.iter().filter(|&&v| v == 1.0).count(), 1);
}

fn small_spec() -> CorpusSpec {
    let full = CorpusSpec::standard(4);
    let keep = |n: &str| -> InstrumentProfile { full.instrument(n).unwrap().clone() };
    CorpusSpec {
        instruments: vec![keep("tarol"), keep("cuica")],
        files_per_instrument: 3,
        file_duration: 6.0,
        ..full
    }
}

fn small_experiment() -> ExperimentConfig {
    ExperimentConfig {
        corpus: CorpusSource::Synthetic(small_spec()),
        models: vec![Variant::TcnV1],
        freeze_configs: vec![FreezeConfig::parse("ft").unwrap(), FreezeConfig::parse("ft_Conv3").unwrap()],
        finetune: FinetuneConfig { epochs: 2, ..FinetuneConfig::default() },
        seed: 13,
        ..ExperimentConfig::default()
    }
}

fn bases() -> BTreeMap<Variant, Model> {
    Variant::ALL.iter().map(|&v| (v, build_model(v, 1))).collect()
}

#[test]
fn small_grid_rows() {
    let config = small_experiment();
    let dataset = config.corpus.load().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("rows.jsonl");
    let out = run_grid(&config, &dataset, &bases(), Some(&journal)).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    assert_eq!(out.rows.len(), 4);
    assert_eq!(std::fs::read_to_string(&journal).unwrap().lines().count(), 4);

    let order: Vec<(String, String)> = out.rows.iter().map(|r| (r.instrument.clone(), r.freeze_id.clone())).collect();
    assert_eq!(
        order,
        [("tarol", "ft"), ("tarol", "ft_Conv3"), ("cuica", "ft"), ("cuica", "ft_Conv3")]
            .map(|(a, b)| (a.to_string(), b.to_string()))
    );
    for r in &out.rows {
        assert!(!r.eval_files.contains(&r.snippet_source));
        assert_eq!(r.snippet_source, format!("{}_01", r.instrument));
        assert_eq!(r.n_files, 2);
        assert!(r.frozen_intact);
        assert!((r.delta_pp - delta_pp_f1(r.mean_f1, r.baseline_f1)).abs() < 1e-9);
        assert_eq!(r.seed, row_seed(13, r.model, &r.instrument, &r.freeze_id));
        let base = &out.baselines[&(r.model, r.instrument.clone())];
        assert_eq!(r.baseline_f1, base.f1);
    }
    // baseline independent of the freeze id
    assert_eq!(out.rows[0].baseline_f1, out.rows[1].baseline_f1);
}

#[test]
fn grid_is_deterministic_across_execution_modes() {
    let config = small_experiment();
    let dataset = config.corpus.load().unwrap();
    let run = || rows_to_csv(&run_grid(&config, &dataset, &bases(), None).unwrap().rows, false).unwrap();
    let first = run();
    exec::set_parallel(false);
    let sequential = run();
    exec::set_parallel(true);
    assert_eq!(first, sequential);
    assert_eq!(first, run());
}

#[test]
fn grid_reports_failures_and_continues() {
    let mut config = small_experiment();
    config.snippet.offset = Some(5.5);
    config.snippet.duration = 0.3;
    let dataset = config.corpus.load().unwrap();
    let out = run_grid(&config, &dataset, &bases(), None).unwrap();
    assert_eq!(out.rows.len() + out.failures.len(), 4);

    config.models = vec![Variant::TcnV2];
    let only_v1: BTreeMap<_, _> = [(Variant::TcnV1, build_model(Variant::TcnV1, 0))].into();
    assert!(matches!(run_grid(&config, &dataset, &only_v1, None), Err(Error::Config(_))));
}

fn row(model: Variant, inst: &str, id: &str, f1: f64, base: f64) -> ResultRow {
    ResultRow {
        model,
        instrument: inst.into(),
        freeze_id: id.into(),
        mean_f1: f1,
        baseline_f1: base,
        delta_pp: delta_pp_f1(f1, base),
        n_files: 2,
        seed: 99,
        wall_s: 1.25,
        per_file_f1: vec![f1, f1],
        eval_files: vec![],
        snippet_source: String::new(),
        frozen_intact: true,
    }
}

#[test]
fn best_configs_join_ties() {
    let rows = vec![
        row(Variant::TcnV1, "tarol", "ft", 0.7, 0.5),
        row(Variant::TcnV1, "tarol", "ft_Tcn2", 0.9, 0.5),
        row(Variant::TcnV1, "tarol", "ft_Tcn4", 0.9, 0.5),
        row(Variant::TcnV1, "tarol", "ft_Tcn16", 0.9, 0.5),
        row(Variant::TcnV2, "tarol", "ft", 0.4, 0.6),
    ];
    let best = best_configs(&rows);
    assert_eq!(best.len(), 2);
    assert_eq!(joined_ids(&best[0].freeze_ids), "ft_Tcn2/ft_Tcn4/ft_Tcn16");
    assert_eq!(best[1].freeze_ids, vec!["ft".to_string()]);
    let md = summary_markdown(&rows);
    assert!(md.contains("ft_Tcn2/ft_Tcn4/ft_Tcn16"));
    assert!(md.contains("+40.0"));

    let single = best_configs(&rows[..1]);
    assert_eq!(single[0].freeze_ids, vec!["ft".to_string()]);
}

#[test]
fn csv_round_trip_and_report_files() {
    let rows = vec![row(Variant::TcnV1, "cuica", "ft", 1.0 / 3.0, 0.1), row(Variant::TcnV2, "gonge-lo", "ft_Conv3", 0.25, 0.5)];
    let text = rows_to_csv(&rows, true).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let back = rows_from_csv(&text).unwrap();
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!((a.model, &a.instrument, &a.freeze_id), (b.model, &b.instrument, &b.freeze_id));
        assert_eq!(a.mean_f1, b.mean_f1);
        assert_eq!(a.delta_pp, b.delta_pp);
        assert_eq!(a.per_file_f1, b.per_file_f1);
        assert!((b.delta_pp - delta_pp_f1(b.mean_f1, b.baseline_f1)).abs() < 1e-9);
    }
    assert!(!rows_to_csv(&rows, false).unwrap().contains("1.250"));

    let dir = tempfile::tempdir().unwrap();
    let (csv, md) = write_report(&rows, dir.path()).unwrap();
    assert!(csv.ends_with(CSV_NAME) && md.ends_with(SUMMARY_NAME));
    assert!(matches!(write_report(&[], dir.path()), Err(Error::Config(_))));
}

#[test]
fn config_json_round_trip() {
    let c = small_experiment();
    let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
    assert_eq!(back.to_json(), c.to_json());
    assert!(matches!(ExperimentConfig::from_json("{\"models\": []}"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_json("{\"freeze_configs\": [\"ft_Out\"]}"), Err(Error::Config(_))));
}

#[test]
fn dataset_layout_skips_file_34() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("Caixa");
    std::fs::create_dir(&inst).unwrap();
    let clip = AudioClip::silence(SAMPLE_RATE as usize, SAMPLE_RATE);
    for i in [1, 2, 34] {
        save_wav_pcm16(&clip, inst.join(format!("Caixa_{i:02}.wav"))).unwrap();
        save_annotations(&OnsetAnnotations::from_times(vec![0.5]).unwrap(), inst.join(format!("Caixa_{i:02}.onsets"))).unwrap();
    }
    let ds = Dataset::from_layout(dir.path()).unwrap();
    let ids: Vec<String> = ds.files.iter().map(|f| f.id()).collect();
    assert_eq!(ids, vec!["Caixa_01", "Caixa_02"]);
    assert_eq!(ds.files[0].features.n_frames(), 100);
}

#[test]
fn manifest_and_synthesis_agree() {
    let spec = small_spec();
    let dir = tempfile::tempdir().unwrap();
    onset_tcn::synth::generate_corpus(&spec, dir.path(), false).unwrap();
    let a = Dataset::from_manifest(dir.path()).unwrap();
    let b = Dataset::synthesize(&spec).unwrap();
    assert_eq!(a.files.len(), 6);
    for (x, y) in a.files.iter().zip(&b.files) {
        assert_eq!(x.id(), y.id());
        assert_eq!(x.features.values(), y.features.values());
        for (s, t) in x.onsets.times().iter().zip(y.onsets.times()) {
            assert!((s - t).abs() <= 1e-4);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_selection_is_the_argmax(f1s in prop::collection::vec(0u8..5, 1..15)) {
        let rows: Vec<ResultRow> = f1s
            .iter()
            .enumerate()
            .map(|(i, &f)| row(Variant::TcnV1, "x", &format!("c{i}"), f as f64 / 4.0, 0.0))
            .collect();
        let best = &best_configs(&rows)[0];
        let max = rows.iter().map(|r| r.mean_f1).fold(f64::MIN, f64::max);
        let expected: Vec<String> = rows.iter().filter(|r| r.mean_f1 == max).map(|r| r.freeze_id.clone()).collect();
        prop_assert_eq!(best.mean_f1, max);
        prop_assert_eq!(&best.freeze_ids, &expected);
    }
}
