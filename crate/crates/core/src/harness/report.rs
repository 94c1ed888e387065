//! Result tables: the per-cycle CSV and the best-configuration summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::grid::ResultRow;
use crate::error::{Error, Result};
use crate::model::Variant;

/// Fixed CSV column order.
pub const CSV_COLUMNS: [&str; 10] = [
    "model",
    "instrument",
    "freeze_id",
    "mean_f1",
    "baseline_f1",
    "delta_pp",
    "n_files",
    "seed",
    "wall_s",
    "per_file_f1",
];
pub const CSV_NAME: &str = "results.csv";
pub const SUMMARY_NAME: &str = "summary.md";
/// Mean F1 values closer than this count as tied.
const TIE_EPS: f64 = 1e-12;

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(CSV_NAME, io),
        other => Error::Format(format!("results table: {other:?}")),
    }
}

/// Serializes rows; `with_wall` false blanks the wall-time column.
pub fn rows_to_csv(rows: &[ResultRow], with_wall: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_error)?;
    for r in rows {
        let per_file = serde_json::to_string(&r.per_file_f1).expect("floats serialize");
        w.write_record([
            r.model.to_string(),
            r.instrument.clone(),
            r.freeze_id.clone(),
            r.mean_f1.to_string(),
            r.baseline_f1.to_string(),
            r.delta_pp.to_string(),
            r.n_files.to_string(),
            r.seed.to_string(),
            if with_wall { format!("{:.3}", r.wall_s) } else { String::new() },
            per_file,
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Parses a table written by [`rows_to_csv`]. Columns absent from the CSV
/// (evaluated file ids, snippet source, freeze check) are left empty.
pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format(format!("unexpected columns {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        let bad = |col: &str| Error::Parse {
            line,
            message: format!("bad {col} value"),
        };
        let f = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[k]));
        rows.push(ResultRow {
            model: rec[0].parse().map_err(|_| bad("model"))?,
            instrument: rec[1].to_string(),
            freeze_id: rec[2].to_string(),
            mean_f1: f(3)?,
            baseline_f1: f(4)?,
            delta_pp: f(5)?,
            n_files: rec[6].parse().map_err(|_| bad("n_files"))?,
            seed: rec[7].parse().map_err(|_| bad("seed"))?,
            wall_s: if rec[8].is_empty() { 0.0 } else { f(8)? },
            per_file_f1: serde_json::from_str(&rec[9]).map_err(|_| bad("per_file_f1"))?,
            eval_files: Vec::new(),
            snippet_source: String::new(),
            frozen_intact: true,
        });
    }
    Ok(rows)
}

/// Best adaptation for one (model, instrument) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BestEntry {
    pub model: Variant,
    pub instrument: String,
    /// All freeze ids reaching the best mean F1, in row order.
    pub freeze_ids: Vec<String>,
    pub mean_f1: f64,
    pub baseline_f1: f64,
    pub delta_pp: f64,
}

pub fn best_configs(rows: &[ResultRow]) -> Vec<BestEntry> {
    let mut out: Vec<BestEntry> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|b| b.model == r.model && b.instrument == r.instrument) {
            None => out.push(BestEntry {
                model: r.model,
                instrument: r.instrument.clone(),
                freeze_ids: vec![r.freeze_id.clone()],
                mean_f1: r.mean_f1,
                baseline_f1: r.baseline_f1,
                delta_pp: r.delta_pp,
            }),
            Some(b) => {
                if r.mean_f1 > b.mean_f1 + TIE_EPS {
                    b.freeze_ids = vec![r.freeze_id.clone()];
                    b.mean_f1 = r.mean_f1;
                    b.delta_pp = r.delta_pp;
                } else if (r.mean_f1 - b.mean_f1).abs() <= TIE_EPS {
                    b.freeze_ids.push(r.freeze_id.clone());
                }
            }
        }
    }
    out
}

/// `ft_Tcn2/ft_Tcn4` style joint label.
pub fn joined_ids(ids: &[String]) -> String {
    ids.join("/")
}

pub fn summary_markdown(rows: &[ResultRow]) -> String {
    let mut s = String::from("| Model | Instrument | Best config | Adapted (best) | Baseline | Delta (p.p.) |\n");
    s.push_str("|---|---|---|---:|---:|---:|\n");
    for b in best_configs(rows) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.3} | {:.3} | {:+.1} |",
            b.model,
            b.instrument,
            joined_ids(&b.freeze_ids),
            b.mean_f1,
            b.baseline_f1,
            b.delta_pp
        );
    }
    s
}

/// Writes `results.csv` and `summary.md` into `out_dir`.
pub fn write_report(rows: &[ResultRow], out_dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return Err(Error::Config("no rows to report".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(CSV_NAME);
    std::fs::write(&csv_path, rows_to_csv(rows, true)?).map_err(|e| Error::io(&csv_path, e))?;
    let md_path = dir.join(SUMMARY_NAME);
    std::fs::write(&md_path, summary_markdown(rows)).map_err(|e| Error::io(&md_path, e))?;
    Ok((csv_path, md_path))
}
