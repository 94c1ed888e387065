//! Snippet extraction, base-model pretraining and the fine-tuning grid.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PretrainConfig, SnippetConfig, TargetKind};
use super::dataset::{DataFile, Dataset};
use crate::error::{Error, Result};
use crate::eval::{aggregate, delta_pp_f1, match_onsets, peak_pick, Counts, EvalResult, PeakPickParams};
use crate::exec;
use crate::features::FRAME_RATE;
use crate::model::{build_model, FreezeConfig, Model, Variant};
use crate::seeds::derive_seed;
use crate::train::{finetune, train, Example, FinetuneConfig, TrainConfig, Trained};

/// Adaptation material cut from one file of an instrument.
#[derive(Debug, Clone)]
pub struct Snippet {
    pub example: Example,
    /// Id of the source file, which is withheld from evaluation.
    pub source: String,
    pub offset: f64,
}

/// Cuts the snippet window out of file `config.file_index`.
pub fn extract_snippet<'a>(
    files: impl IntoIterator<Item = &'a DataFile>,
    config: &SnippetConfig,
) -> Result<Snippet> {
    let file = files
        .into_iter()
        .find(|f| f.index == config.file_index)
        .ok_or_else(|| Error::Snippet(format!("file {:02} is missing", config.file_index)))?;
    let frames = (config.duration * FRAME_RATE).round() as usize;
    let length = file.features.n_frames() as f64 / FRAME_RATE;
    let offset = match config.offset {
        Some(o) => o,
        None => {
            let first = *file.onsets.times().first().ok_or_else(|| {
                Error::Snippet(format!("{} has no annotations", file.id()))
            })?;
            // earliest frame-aligned window whose end lies past the first onset
            (((first - config.duration) * FRAME_RATE).floor() + 1.0).max(0.0) / FRAME_RATE
        }
    };
    if !(offset >= 0.0) || offset + config.duration > length + 1e-9 {
        return Err(Error::Range(format!(
            "{}: window {offset:.2}+{:.2} s exceeds the {length:.2} s file",
            file.id(),
            config.duration
        )));
    }
    let start = (offset * FRAME_RATE).round() as usize;
    let window = file.onsets.window(offset, offset + config.duration);
    if window.is_empty() {
        return Err(Error::Snippet(format!(
            "{}: no annotations in [{offset:.2}, {:.2}) s; choose another offset",
            file.id(),
            offset + config.duration
        )));
    }
    Ok(Snippet {
        example: Example::from_onsets(file.features.slice(start, frames), &window)?,
        source: file.id(),
        offset,
    })
}

/// Cuts every file of the included instruments into training sequences.
pub fn pretraining_examples(dataset: &Dataset, config: &PretrainConfig) -> Result<Vec<Example>> {
    let seg = (config.segment_seconds * FRAME_RATE).round() as usize;
    if seg == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let mut out = Vec::new();
    for file in dataset.files.iter().filter(|f| !config.exclude.contains(&f.instrument)) {
        let truth = match config.targets {
            TargetKind::Onsets => &file.onsets,
            TargetKind::Beats => file
                .beats
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} carries no beat grid", file.id())))?,
        };
        let n = file.features.n_frames();
        let y = crate::train::make_targets(truth, n)?;
        let mut s = 0;
        while s < n {
            let len = seg.min(n - s);
            // trailing pieces shorter than a second carry little context
            if len >= seg.min(100) {
                out.push(Example::new(file.features.slice(s, len), y[s..s + len].to_vec())?);
            }
            s += seg;
        }
    }
    if out.is_empty() {
        return Err(Error::Config("pretraining selection is empty".into()));
    }
    Ok(out)
}

pub fn pretrain(dataset: &Dataset, variant: Variant, config: &PretrainConfig) -> Result<Trained> {
    let examples = pretraining_examples(dataset, config)?;
    let init = build_model(variant, derive_seed(config.seed, &["init", variant.as_str()]));
    train(
        &init,
        &examples,
        &TrainConfig {
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            seed: config.seed,
        },
    )
}

/// Peak-picks the model's activation on each file and scores it.
pub fn evaluate_model(
    model: &Model,
    files: &[&DataFile],
    peak_pick_params: &PeakPickParams,
    tolerance: f64,
) -> Result<EvalResult> {
    let per_file = files
        .iter()
        .map(|f| -> Result<(String, Counts)> {
            let act = model.infer(&f.features)?;
            let est = peak_pick(&act, peak_pick_params);
            Ok((f.id(), match_onsets(&est, &f.onsets, tolerance).counts))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&per_file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: Variant,
    pub instrument: String,
    pub freeze_id: String,
    pub mean_f1: f64,
    pub baseline_f1: f64,
    pub delta_pp: f64,
    pub n_files: usize,
    pub seed: u64,
    pub wall_s: f64,
    pub per_file_f1: Vec<f64>,
    /// Ids of the evaluated files, aligned with `per_file_f1`.
    pub eval_files: Vec<String>,
    pub snippet_source: String,
    /// Every tensor of a frozen layer matched the base model after adaptation.
    pub frozen_intact: bool,
}

/// Everything one cycle needs besides the base model.
pub struct CycleInput<'a> {
    pub instrument: &'a str,
    pub snippet: &'a Snippet,
    pub eval_files: &'a [&'a DataFile],
    pub baseline: &'a EvalResult,
}

/// Freeze, fine-tune on the snippet, evaluate on the held-out files.
pub fn run_cycle(
    base: &Model,
    input: &CycleInput,
    freeze: &FreezeConfig,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(ResultRow, Model)> {
    let started = Instant::now();
    if input.eval_files.iter().any(|f| f.id() == input.snippet.source) {
        return Err(Error::Config("snippet source listed for evaluation".into()));
    }
    let ft = FinetuneConfig {
        freeze: freeze.clone(),
        seed,
        ..config.finetune.clone()
    };
    let adapted = finetune(base, &input.snippet.example, &ft)?;
    let frozen_intact = base
        .layers()
        .iter()
        .zip(adapted.layers())
        .filter(|(_, a)| freeze.is_frozen(a.name))
        .all(|(b, a)| b.params == a.params);
    let result = evaluate_model(&adapted, input.eval_files, &config.peak_pick, config.tolerance)?;
    let row = ResultRow {
        model: base.variant(),
        instrument: input.instrument.to_string(),
        freeze_id: freeze.id(),
        mean_f1: result.f1,
        baseline_f1: input.baseline.f1,
        delta_pp: delta_pp_f1(result.f1, input.baseline.f1),
        n_files: result.per_file.len(),
        seed,
        wall_s: started.elapsed().as_secs_f64(),
        per_file_f1: result.per_file.values().map(|s| s.f1).collect(),
        eval_files: result.per_file.keys().cloned().collect(),
        snippet_source: input.snippet.source.clone(),
        frozen_intact,
    };
    Ok((row, adapted))
}

pub fn row_seed(seed: u64, model: Variant, instrument: &str, freeze_id: &str) -> u64 {
    derive_seed(seed, &[model.as_str(), instrument, freeze_id])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleFailure {
    pub model: Variant,
    pub instrument: String,
    pub freeze_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    /// Completed rows in model, instrument, freeze order.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CycleFailure>,
    pub baselines: BTreeMap<(Variant, String), EvalResult>,
}

struct Prepared<'a> {
    instrument: String,
    snippet: Snippet,
    eval_files: Vec<&'a DataFile>,
}

/// Runs every (model, instrument, freeze) cycle. Cycles that fail are
/// reported in `failures` and the rest of the grid still runs. Completed
/// rows are appended to `journal` as JSON lines when given.
pub fn run_grid(
    config: &ExperimentConfig,
    dataset: &Dataset,
    bases: &BTreeMap<Variant, Model>,
    journal: Option<&Path>,
) -> Result<GridOutcome> {
    config.validate()?;
    for v in &config.models {
        if !bases.contains_key(v) {
            return Err(Error::Config(format!("no base model for {v}")));
        }
    }
    let instruments = config.instruments.clone().unwrap_or_else(|| dataset.instruments());
    let mut outcome = GridOutcome::default();
    let mut prepared: Vec<Option<Prepared>> = Vec::new();
    for inst in &instruments {
        let files: Vec<&DataFile> = dataset.files_of(inst).collect();
        if files.is_empty() {
            return Err(Error::Config(format!("instrument {inst} not in corpus")));
        }
        match extract_snippet(files.iter().copied(), &config.snippet) {
            Ok(snippet) => {
                let eval_files: Vec<&DataFile> = files.into_iter().filter(|f| f.id() != snippet.source).collect();
                if eval_files.is_empty() {
                    return Err(Error::Config(format!("{inst}: no files left for evaluation")));
                }
                prepared.push(Some(Prepared {
                    instrument: inst.clone(),
                    snippet,
                    eval_files,
                }));
            }
            Err(e) => {
                for v in &config.models {
                    for fz in &config.freeze_configs {
                        outcome.failures.push(CycleFailure {
                            model: *v,
                            instrument: inst.clone(),
                            freeze_id: fz.id(),
                            error: e.to_string(),
                        });
                    }
                }
                prepared.push(None);
            }
        }
    }

    // baselines, once per (model, instrument)
    let pairs: Vec<(Variant, usize)> = config
        .models
        .iter()
        .flat_map(|&v| (0..prepared.len()).filter(|&i| prepared[i].is_some()).map(move |i| (v, i)))
        .collect();
    let baselines = exec::map_slice(&pairs, |&(v, i)| {
        let p = prepared[i].as_ref().expect("filtered");
        evaluate_model(&bases[&v], &p.eval_files, &config.peak_pick, config.tolerance)
    });
    for (&(v, i), b) in pairs.iter().zip(baselines) {
        let inst = prepared[i].as_ref().expect("filtered").instrument.clone();
        outcome.baselines.insert((v, inst), b?);
    }

    let cycles: Vec<(Variant, usize, &FreezeConfig)> = pairs
        .iter()
        .flat_map(|&(v, i)| config.freeze_configs.iter().map(move |f| (v, i, f)))
        .collect();
    let journal_file = match journal {
        Some(p) => Some(Mutex::new(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    let results = exec::map_slice(&cycles, |&(v, i, fz)| {
        let p = prepared[i].as_ref().expect("filtered");
        let input = CycleInput {
            instrument: &p.instrument,
            snippet: &p.snippet,
            eval_files: &p.eval_files,
            baseline: &outcome.baselines[&(v, p.instrument.clone())],
        };
        let seed = row_seed(config.seed, v, &p.instrument, &fz.id());
        let res = run_cycle(&bases[&v], &input, fz, config, seed)
            .map(|(row, _)| row)
            .map_err(|e| e.context(format!("{v}/{}/{}", p.instrument, fz.id())));
        if let (Ok(row), Some(j)) = (&res, &journal_file) {
            let line = serde_json::to_string(row).expect("row serializes");
            let mut f = j.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                log::warn!("journal write failed: {e}");
            }
        }
        res
    });
    for (&(v, i, fz), res) in cycles.iter().zip(results) {
        match res {
            Ok(row) => outcome.rows.push(row),
            Err(e) => outcome.failures.push(CycleFailure {
                model: v,
                instrument: prepared[i].as_ref().expect("filtered").instrument.clone(),
                freeze_id: fz.id(),
                error: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}
