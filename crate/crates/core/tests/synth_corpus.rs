use onset_tcn::annotations::load_annotations;
use onset_tcn::audio::{load_audio, SAMPLE_RATE};
use onset_tcn::features::extract_features;
use onset_tcn::synth::*;
use onset_tcn::train::make_targets;
use onset_tcn::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn standard(name: &str) -> InstrumentProfile {
    CorpusSpec::standard(3).instrument(name).unwrap().clone()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn iois(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

#[test]
fn profiles_are_deterministic() {
    for (name, role) in STANDARD_INSTRUMENTS {
        assert_eq!(make_profile(name, role, 5), make_profile(name, role, 5));
        assert!(make_profile(name, role, 5).validate().is_ok());
    }
    let a = make_profile("agogo", Role::Voicing, 1);
    assert_eq!(a, make_profile("agogo", Role::Voicing, 1));
    assert_ne!(a, make_profile("agogo", Role::Voicing, 2));
}

#[test]
fn time_keeping_hits_sit_on_the_beat_grid() {
    let p = standard("cuica");
    let hits = hit_times(&p, 30.0, 180.0, 0.1, &mut ChaCha8Rng::seed_from_u64(4));
    let period = 60.0 / 180.0;
    for d in iois(&hits) {
        let beats = d / period;
        assert!((beats - beats.round()).abs() * period < 1e-4, "ioi {d}");
        assert!(beats.round() >= 1.0);
    }
    assert!((median(iois(&hits)) - 0.333).abs() < 0.001);
}

#[test]
fn voicing_hit_count_matches_density() {
    let p = standard("tarol");
    let expected = VOICING_DENSITY * 30.0;
    let mut total = 0.0;
    for seed in 0..10 {
        let n = hit_times(&p, 30.0, 172.0, 0.1, &mut ChaCha8Rng::seed_from_u64(seed)).len() as f64;
        assert!((n - expected).abs() / expected < 0.2, "seed {seed}: {n}");
        total += n;
    }
    assert!((total / 10.0 - expected).abs() / expected < 0.1);
}

#[test]
fn voicing_jitter_is_bounded() {
    let p = standard("mineiro");
    let (tempo, offset) = (170.0, 0.2);
    let step = 60.0 / tempo / 4.0;
    for &t in &hit_times(&p, 20.0, tempo, offset, &mut ChaCha8Rng::seed_from_u64(8)) {
        let k = ((t - offset) / step).round();
        assert!((t - offset - k * step).abs() <= MAX_JITTER + 1.0 / SAMPLE_RATE as f64);
    }
}

#[test]
fn zero_density_renders_silence() {
    let p = InstrumentProfile { onset_density: 0.0, ..standard("tarol") };
    let f = render_file(&p, 6.0, 170.0, 1).unwrap();
    assert!(f.onsets.is_empty());
    assert!(f.clip.samples().iter().all(|&s| s == 0.0));
}

#[test]
fn single_hit_starts_on_time() {
    for (name, _) in STANDARD_INSTRUMENTS {
        let clip = render_hits(&standard(name), &[1.0], 5.0, 2);
        let first = clip.samples().iter().position(|s| s.abs() > 1e-4).unwrap();
        let t = first as f64 / SAMPLE_RATE as f64;
        assert!((0.998..=1.002).contains(&t), "{name}: {t}");
        let peak = clip.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
        assert!(peak <= 1.0);
    }
}

#[test]
fn render_rejects_short_files() {
    assert!(matches!(render_file(&standard("cuica"), 4.0, 170.0, 0), Err(Error::Config(_))));
}

#[test]
fn targets_carry_one_peak_frame_per_hit() {
    for (name, _) in STANDARD_INSTRUMENTS {
        let f = render_file(&standard(name), 8.0, 175.0, 12).unwrap();
        let feats = extract_features(&f.clip).unwrap();
        let y = make_targets(&f.onsets, feats.n_frames()).unwrap();
        assert_eq!(y.iter().filter(|&&v| v == 1.0).count(), f.onsets.len(), "{name}");
    }
}

#[test]
fn per_role_density_is_realistic() {
    let spec = CorpusSpec { file_duration: 30.0, files_per_instrument: 4, ..CorpusSpec::standard(21) };
    for (name, role) in STANDARD_INSTRUMENTS {
        let plan: Vec<_> = spec.plan().into_iter().filter(|e| e.instrument == name).collect();
        let mut hits = 0;
        for e in &plan {
            let p = spec.instrument(name).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
            hits += hit_times(p, spec.file_duration, e.tempo, e.beat_offset, &mut rng).len();
        }
        let density = hits as f64 / (plan.len() as f64 * spec.file_duration);
        let expected = role.default_density();
        assert!((density - expected).abs() / expected < 0.2, "{name}: {density}");
    }
}

#[test]
fn time_keeping_at_165_bpm_has_363_ms_median_ioi() {
    let spec = CorpusSpec {
        file_duration: 30.0,
        files_per_instrument: 2,
        tempo_range: (165.0, 165.0),
        instruments: vec![standard("gonge-lo")],
        seed: 5,
    };
    let entry = &spec.plan()[0];
    let f = spec.render(entry).unwrap();
    let m = median(iois(f.onsets.times()));
    assert!((m - 0.363).abs() <= 0.005, "median {m}");
}

#[test]
fn corpus_layout_and_regeneration() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { file_duration: 5.0, files_per_instrument: 10, ..CorpusSpec::standard(9) };
    let manifest = generate_corpus(&spec, dir.path(), false).unwrap();
    let mut wav = 0;
    let mut onsets = 0;
    let mut other = Vec::new();
    for e in std::fs::read_dir(dir.path()).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        if name.ends_with(".wav") {
            wav += 1;
        } else if name.ends_with(".onsets") {
            onsets += 1;
        } else {
            other.push(name);
        }
    }
    assert_eq!((wav, onsets), (50, 50));
    assert_eq!(other, vec![MANIFEST_NAME.to_string()]);
    assert!(dir.path().join("tambor-hi_10.wav").exists());
    assert_eq!(read_manifest(dir.path().join(MANIFEST_NAME)).unwrap(), manifest);

    // ground truth round trip: annotations on disk equal the synthesized hits
    let entry = &manifest.files[13];
    let rendered = spec.render(entry).unwrap();
    let stored = load_annotations(dir.path().join(&entry.onsets)).unwrap();
    assert_eq!(stored.len(), rendered.onsets.len());
    for (a, b) in stored.times().iter().zip(rendered.onsets.times()) {
        assert!((a - b).abs() <= 1e-4);
        assert!(((a * SAMPLE_RATE as f64).round() / SAMPLE_RATE as f64 - a).abs() < 1e-4);
    }
    let audio = load_audio(dir.path().join(&entry.audio), false).unwrap();
    assert_eq!(audio.samples(), rendered.clip.samples());

    assert!(matches!(generate_corpus(&spec, dir.path(), false), Err(Error::Config(_))));
    let before: Vec<Vec<u8>> = manifest.files.iter().map(|f| std::fs::read(dir.path().join(&f.audio)).unwrap()).collect();
    generate_corpus(&spec, dir.path(), true).unwrap();
    for (f, old) in manifest.files.iter().zip(&before) {
        assert_eq!(&std::fs::read(dir.path().join(&f.audio)).unwrap(), old, "{}", f.audio);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hits_are_sample_exact_and_sorted(seed in any::<u64>(), tempo in 150.0f64..200.0, voicing in any::<bool>()) {
        let p = standard(if voicing { "tambor-hi" } else { "cuica" });
        let f = render_file(&p, 6.0, tempo, seed).unwrap();
        let t = f.onsets.times();
        prop_assert!(t.windows(2).all(|w| w[0] < w[1]));
        for &x in t {
            let s = x * SAMPLE_RATE as f64;
            prop_assert!((s - s.round()).abs() < 1e-6);
            prop_assert!(x < 6.0);
        }
    }
}
