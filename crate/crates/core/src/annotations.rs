use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Minimum spacing between distinct onsets, in seconds.
pub const MIN_SEPARATION: f64 = 0.001;

/// Onset times in seconds, strictly ascending with at least 1 ms spacing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnsetAnnotations {
    times: Vec<f64>,
}

impl OnsetAnnotations {
    /// Sorts `times` and collapses entries closer than 1 ms to the one
    /// before them.
    pub fn from_times(mut times: Vec<f64>) -> Result<Self> {
        if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::Range(format!("onset time {t} is negative or not finite")));
        }
        times.sort_by(f64::total_cmp);
        let mut kept: Vec<f64> = Vec::with_capacity(times.len());
        for t in times {
            match kept.last() {
                // allow for decimal round-off at exactly 1 ms
                Some(&prev) if t - prev < MIN_SEPARATION - 1e-9 => {}
                _ => kept.push(t),
            }
        }
        Ok(OnsetAnnotations { times: kept })
    }

    pub fn empty() -> Self {
        OnsetAnnotations::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Onsets in `[start, end)`, shifted so `start` becomes zero.
    pub fn window(&self, start: f64, end: f64) -> OnsetAnnotations {
        OnsetAnnotations {
            times: self
                .times
                .iter()
                .filter(|&&t| t >= start && t < end)
                .map(|&t| t - start)
                .collect(),
        }
    }

    pub fn shifted(&self, offset: f64) -> Result<OnsetAnnotations> {
        OnsetAnnotations::from_times(self.times.iter().map(|t| t + offset).collect())
    }
}

/// Parses one onset time per line; blank lines and `#` comments are skipped.
pub fn parse_annotations(text: &str) -> Result<OnsetAnnotations> {
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: f64 = line.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("not a number: {line:?}"),
        })?;
        if !t.is_finite() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("not a finite number: {line:?}"),
            });
        }
        if t < 0.0 {
            return Err(Error::Range(format!("line {}: negative onset time {t}", i + 1)));
        }
        times.push(t);
    }
    OnsetAnnotations::from_times(times)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<OnsetAnnotations> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text).map_err(|e| e.context(path.display().to_string()))
}

/// One time per line with four decimals.
pub fn format_annotations(onsets: &OnsetAnnotations) -> String {
    let mut out = String::with_capacity(onsets.len() * 8);
    for t in &onsets.times {
        let _ = writeln!(out, "{t:.4}");
    }
    out
}

pub fn save_annotations(onsets: &OnsetAnnotations, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_annotations(onsets)).map_err(|e| Error::io(path, e))
}
