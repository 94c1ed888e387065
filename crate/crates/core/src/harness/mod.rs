//! The experiment protocol: corpora, snippets, the fine-tuning grid and
//! its reports.

mod config;
mod dataset;
mod grid;
mod report;

pub use config::{CorpusSource, ExperimentConfig, PretrainConfig, SnippetConfig, TargetKind};
pub use dataset::{DataFile, Dataset, EXCLUDED_FILE_INDEX};
pub use grid::{
    evaluate_model, extract_snippet, pretrain, pretraining_examples, row_seed, run_cycle, run_grid,
    CycleFailure, CycleInput, GridOutcome, ResultRow, Snippet,
};
pub use report::{
    best_configs, joined_ids, rows_from_csv, rows_to_csv, summary_markdown, write_report, BestEntry,
    CSV_COLUMNS, CSV_NAME, SUMMARY_NAME,
};

use crate::error::Result;

impl CorpusSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            CorpusSource::Synthetic(spec) => Dataset::synthesize(spec),
            CorpusSource::Manifest(dir) => Dataset::from_manifest(dir),
            CorpusSource::Dataset(root) => Dataset::from_layout(root),
        }
    }
}
