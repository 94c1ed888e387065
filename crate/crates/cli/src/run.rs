use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use onset_tcn::annotations::{format_annotations, load_annotations, save_annotations};
use onset_tcn::audio::load_audio;
use onset_tcn::eval::{compute_prf, match_onsets, peak_pick, PeakPickParams};
use onset_tcn::features::extract_features;
use onset_tcn::harness::{
    pretrain, run_grid, write_report, rows_from_csv, summary_markdown, CorpusSource, DataFile, Dataset,
    ExperimentConfig, SnippetConfig, TargetKind, SUMMARY_NAME,
};
use onset_tcn::model::{load_model, save_model, FreezeConfig, Model, Variant};
use onset_tcn::synth::{generate_corpus, make_profile, CorpusSpec, STANDARD_INSTRUMENTS};
use onset_tcn::train::{finetune, FinetuneConfig};
use onset_tcn::{Error, Result};

use crate::{Cli, Command, CorpusArgs, PeakArgs};

pub enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn need_out(cli: &Cli, what: &str) -> std::result::Result<PathBuf, Failure> {
    cli.out.clone().ok_or_else(|| usage(format!("--out is required ({what})")))
}

fn refuse_overwrite(path: &Path, force: bool) -> Outcome {
    if path.exists() && !force {
        return Err(usage(format!("{} exists; pass --force to replace it", path.display())));
    }
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str, force: bool) -> Outcome {
    match path {
        Some(p) => {
            refuse_overwrite(p, force)?;
            std::fs::write(p, text).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    cli.config.as_ref().map(ExperimentConfig::load).transpose()
}

pub fn execute(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Synth {
            files,
            duration,
            instruments,
        } => synth(&cli, *files, *duration, instruments),
        Command::Features { audio, resample } => {
            let clip = load_audio(audio, *resample)?;
            let fm = extract_features(&clip)?;
            let mut text = format!("# frames={} bands={} frame_rate=100\n", fm.n_frames(), fm.n_bands());
            for t in 0..fm.n_frames() {
                let row: Vec<String> = fm.frame(t).iter().map(|v| format!("{v:.6}")).collect();
                text.push_str(&row.join(" "));
                text.push('\n');
            }
            write_text(cli.out.as_deref(), &text, cli.force)
        }
        Command::Pretrain {
            model,
            corpus,
            epochs,
            lr,
            exclude,
            targets,
        } => pretrain_cmd(&cli, model, corpus, *epochs, *lr, exclude, targets.as_deref()),
        Command::Finetune {
            model,
            audio,
            onsets,
            offset,
            duration,
            freeze,
            epochs,
            lr_scale,
            base_lr,
        } => {
            let out = need_out(&cli, "adapted model file")?;
            refuse_overwrite(&out, cli.force)?;
            let base = load_model(model)?;
            let clip = load_audio(audio, true)?;
            let file = DataFile {
                instrument: "input".into(),
                index: 1,
                features: extract_features(&clip)?,
                onsets: load_annotations(onsets)?,
                beats: None,
            };
            let snippet = onset_tcn::harness::extract_snippet(
                [&file],
                &SnippetConfig {
                    file_index: 1,
                    offset: *offset,
                    duration: *duration,
                },
            )?;
            let freeze = FreezeConfig::parse_extended(freeze)?;
            let cfg = FinetuneConfig {
                epochs: *epochs,
                lr_scale: *lr_scale,
                base_lr: *base_lr,
                freeze,
                seed: cli.seed.unwrap_or(0),
                dropout_active: true,
            };
            let adapted = finetune(&base, &snippet.example, &cfg)?;
            save_model(&adapted, &out)?;
            log::info!("adapted model written to {}", out.display());
            Ok(())
        }
        Command::Detect { model, audio, peaks } => {
            let m = load_model(model)?;
            let clip = load_audio(audio, true)?;
            let act = m.infer(&extract_features(&clip)?)?;
            let params = peak_params(peaks)?;
            let est = peak_pick(&act, &params);
            match &cli.out {
                Some(p) => {
                    refuse_overwrite(p, cli.force)?;
                    save_annotations(&est, p)?;
                }
                None => print!("{}", format_annotations(&est)),
            }
            Ok(())
        }
        Command::Eval {
            estimates,
            reference,
            tolerance,
        } => {
            if !(*tolerance > 0.0) {
                return Err(usage("--tolerance must be positive"));
            }
            let est = load_annotations(estimates)?;
            let reff = load_annotations(reference)?;
            let c = match_onsets(&est, &reff, *tolerance).counts;
            let (p, r, f) = compute_prf(c);
            println!("TP={} FP={} FN={} P={p:.3} R={r:.3} F1={f:.3}", c.tp, c.fp, c.fn_);
            Ok(())
        }
        Command::Grid => grid(&cli),
        Command::Report { csv } => {
            let text = std::fs::read_to_string(csv).map_err(|e| Error::Io {
                path: csv.clone(),
                source: e,
            })?;
            let rows = rows_from_csv(&text)?;
            let md = summary_markdown(&rows);
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                        path: dir.clone(),
                        source: e,
                    })?;
                    write_text(Some(&dir.join(SUMMARY_NAME)), &md, cli.force)
                }
                None => write_text(None, &md, cli.force),
            }
        }
    }
}

fn peak_params(a: &PeakArgs) -> std::result::Result<PeakPickParams, Failure> {
    let p = PeakPickParams {
        threshold: a.threshold,
        w_max: a.w_max,
        w_avg: a.w_avg,
        delta: a.delta,
        min_gap: a.min_gap,
    };
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn synth(cli: &Cli, files: usize, duration: f64, instruments: &[String]) -> Outcome {
    let out = need_out(cli, "corpus directory")?;
    let seed = cli.seed.unwrap_or(0);
    let mut spec = CorpusSpec::standard(seed);
    if !instruments.is_empty() {
        spec.instruments = instruments
            .iter()
            .map(|name| {
                let role = STANDARD_INSTRUMENTS
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, r)| *r)
                    .ok_or_else(|| usage(format!("unknown instrument {name}")))?;
                Ok(make_profile(name, role, seed))
            })
            .collect::<std::result::Result<_, Failure>>()?;
    }
    spec.files_per_instrument = files;
    spec.file_duration = duration;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = generate_corpus(&spec, &out, cli.force)?;
    log::info!("{} files written to {}", manifest.files.len(), out.display());
    Ok(())
}

fn corpus_source(args: &CorpusArgs, cfg: Option<&ExperimentConfig>) -> std::result::Result<CorpusSource, Failure> {
    match (&args.corpus, &args.dataset, cfg) {
        (Some(dir), _, _) => Ok(CorpusSource::Manifest(dir.clone())),
        (_, Some(root), _) => Ok(CorpusSource::Dataset(root.clone())),
        (None, None, Some(c)) => Ok(c.corpus.clone()),
        (None, None, None) => Err(usage("give --corpus, --dataset or --config")),
    }
}

fn pretrain_cmd(
    cli: &Cli,
    model: &str,
    corpus: &CorpusArgs,
    epochs: Option<usize>,
    lr: Option<f64>,
    exclude: &[String],
    targets: Option<&str>,
) -> Outcome {
    let out = need_out(cli, "model file")?;
    refuse_overwrite(&out, cli.force)?;
    let variant: Variant = model.parse().map_err(|e: Error| usage(e.to_string()))?;
    let cfg = load_config(cli)?;
    let mut pc = cfg.as_ref().map(|c| c.pretrain.clone()).unwrap_or_default();
    if let Some(e) = epochs {
        pc.epochs = e;
    }
    if let Some(l) = lr {
        pc.learning_rate = l;
    }
    if !exclude.is_empty() {
        pc.exclude = exclude.to_vec();
    }
    if let Some(t) = targets {
        pc.targets = match t {
            "onsets" => TargetKind::Onsets,
            "beats" => TargetKind::Beats,
            other => return Err(usage(format!("unknown target kind {other}"))),
        };
    }
    if let Some(s) = cli.seed {
        pc.seed = s;
    }
    let dataset = corpus_source(corpus, cfg.as_ref())?.load()?;
    let trained = pretrain(&dataset, variant, &pc)?;
    log::info!("loss per epoch: {:?}", trained.loss_history);
    save_model(&trained.model, &out)?;
    Ok(())
}

fn grid(cli: &Cli) -> Outcome {
    let mut cfg = load_config(cli)?.unwrap_or_default();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| usage("--out or output_dir is required for grid"))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let results = out.join(onset_tcn::harness::CSV_NAME);
    refuse_overwrite(&results, cli.force)?;
    let dataset: Dataset = cfg.corpus.load()?;
    let mut bases: BTreeMap<Variant, Model> = BTreeMap::new();
    for &v in &cfg.models {
        let model = match cfg.base_models.get(&v) {
            Some(path) => load_model(path)?,
            None => {
                log::info!("pretraining {v}");
                let trained = pretrain(&dataset, v, &cfg.pretrain)?;
                let path = out.join(format!("base_{v}.model"));
                save_model(&trained.model, &path)?;
                trained.model
            }
        };
        bases.insert(v, model);
    }
    let journal = out.join("journal.jsonl");
    if journal.exists() {
        std::fs::remove_file(&journal).map_err(|e| Error::Io {
            path: journal.clone(),
            source: e,
        })?;
    }
    let outcome = run_grid(&cfg, &dataset, &bases, Some(&journal))?;
    if !outcome.failures.is_empty() {
        let mut text = String::new();
        for f in &outcome.failures {
            let _ = writeln!(text, "{}/{}/{}: {}", f.model, f.instrument, f.freeze_id, f.error);
            log::warn!("{}/{}/{} failed: {}", f.model, f.instrument, f.freeze_id, f.error);
        }
        let p = out.join("failures.txt");
        std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })?;
    }
    if outcome.rows.is_empty() {
        return Err(Error::Config("every grid cycle failed".into()).into());
    }
    let (csv, md) = write_report(&outcome.rows, &out)?;
    log::info!("{} rows written to {} and {}", outcome.rows.len(), csv.display(), md.display());
    Ok(())
}
