//! Evaluation corpora held as features plus ground truth.

use std::path::{Path, PathBuf};

use crate::annotations::{load_annotations, OnsetAnnotations};
use crate::audio::{load_audio, AudioClip};
use crate::error::{Error, Result};
use crate::exec;
use crate::features::{extract_features, FeatureMatrix};
use crate::synth::{beats_of, read_manifest, CorpusSpec, FileEntry, MANIFEST_NAME};

/// File number the real dataset drops from every experiment.
pub const EXCLUDED_FILE_INDEX: usize = 34;

#[derive(Debug, Clone)]
pub struct DataFile {
    pub instrument: String,
    /// 1-based file number within the instrument.
    pub index: usize,
    pub features: FeatureMatrix,
    pub onsets: OnsetAnnotations,
    /// Beat grid, known only for synthetic files.
    pub beats: Option<OnsetAnnotations>,
}

impl DataFile {
    /// `<instrument>_<nn>`.
    pub fn id(&self) -> String {
        format!("{}_{:02}", self.instrument, self.index)
    }

    fn from_clip(instrument: &str, index: usize, clip: &AudioClip, onsets: OnsetAnnotations, beats: Option<OnsetAnnotations>) -> Result<Self> {
        Ok(DataFile {
            instrument: instrument.to_string(),
            index,
            features: extract_features(clip)?,
            onsets,
            beats,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub files: Vec<DataFile>,
}

impl Dataset {
    /// Instrument names in order of first appearance.
    pub fn instruments(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for f in &self.files {
            if !names.contains(&f.instrument) {
                names.push(f.instrument.clone());
            }
        }
        names
    }

    pub fn files_of<'a>(&'a self, instrument: &'a str) -> impl Iterator<Item = &'a DataFile> + 'a {
        self.files.iter().filter(move |f| f.instrument == instrument)
    }

    /// Renders a synthetic corpus in memory. Audio is dropped once its
    /// features are extracted.
    pub fn synthesize(spec: &CorpusSpec) -> Result<Dataset> {
        spec.validate()?;
        let plan = spec.plan();
        let files = exec::map_slice(&plan, |entry| -> Result<DataFile> {
            let r = spec.render(entry)?;
            let beats = r.beats();
            DataFile::from_clip(&entry.instrument, entry.index, &r.clip, r.onsets, Some(beats))
        });
        Ok(Dataset {
            files: files.into_iter().collect::<Result<_>>()?,
        })
    }

    /// Loads a corpus written by `generate_corpus`.
    pub fn from_manifest(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir.join(MANIFEST_NAME))?;
        let duration = manifest.spec.file_duration;
        let files = exec::map_slice(&manifest.files, |e: &FileEntry| -> Result<DataFile> {
            let clip = load_audio(dir.join(&e.audio), true)?;
            let onsets = load_annotations(dir.join(&e.onsets))?;
            let beats = beats_of(duration, e.tempo, e.beat_offset);
            DataFile::from_clip(&e.instrument, e.index, &clip, onsets, Some(beats))
        });
        Ok(Dataset {
            files: files.into_iter().collect::<Result<_>>()?,
        })
    }

    /// Loads `<root>/<Instrument>/<Instrument>_<nn>.wav` with a matching
    /// `.onsets` (or `.txt`) annotation file, skipping file 34.
    pub fn from_layout(root: impl AsRef<Path>) -> Result<Dataset> {
        let root = root.as_ref();
        let mut jobs: Vec<(String, usize, PathBuf, PathBuf)> = Vec::new();
        let mut dirs: Vec<PathBuf> = read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()).collect();
        dirs.sort();
        for dir in dirs {
            let instrument = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            for path in read_dir_sorted(&dir)? {
                let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
                if path.extension().and_then(|e| e.to_str()) != Some("wav") {
                    continue;
                }
                let Some(index) = stem
                    .strip_prefix(&format!("{instrument}_"))
                    .and_then(|n| n.parse::<usize>().ok())
                else {
                    continue;
                };
                if index == EXCLUDED_FILE_INDEX {
                    continue;
                }
                let ann = ["onsets", "txt"]
                    .iter()
                    .map(|ext| path.with_extension(ext))
                    .find(|p| p.exists())
                    .ok_or_else(|| Error::Config(format!("no annotation file next to {}", path.display())))?;
                jobs.push((instrument.clone(), index, path, ann));
            }
        }
        if jobs.is_empty() {
            return Err(Error::EmptyInput(format!("no <Instrument>/<Instrument>_<nn>.wav files under {}", root.display())));
        }
        let files = exec::map_slice(&jobs, |(inst, index, wav, ann)| -> Result<DataFile> {
            let clip = load_audio(wav, true)?;
            let onsets = load_annotations(ann)?;
            DataFile::from_clip(inst, *index, &clip, onsets, None)
        });
        Ok(Dataset {
            files: files.into_iter().collect::<Result<_>>()?,
        })
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}
