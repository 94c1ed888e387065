//! WAV ingestion and the mono sample buffer the feature extractor consumes.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every clip is brought to on ingestion.
pub const SAMPLE_RATE: u32 = 44_100;

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Range("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Range(format!("non-finite sample at index {i}")));
        }
        let mut clip = AudioClip {
            samples,
            sample_rate,
        };
        clip.normalize();
        Ok(clip)
    }

    pub fn silence(n_samples: usize, sample_rate: u32) -> Self {
        AudioClip {
            samples: vec![0.0; n_samples],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Scales the clip down if any sample exceeds unit magnitude.
    fn normalize(&mut self) {
        let peak = self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak > 1.0 {
            self.samples.iter_mut().for_each(|s| *s /= peak);
        }
    }

    /// Samples in `[start, start + len)`, zero-padded past the end.
    pub fn segment(&self, start: usize, len: usize) -> AudioClip {
        let samples = (start..start + len)
            .map(|i| self.samples.get(i).copied().unwrap_or(0.0))
            .collect();
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Rounds every sample to the 16-bit PCM grid, as a round trip through
    /// a PCM16 file would.
    pub fn quantized_pcm16(&self) -> AudioClip {
        AudioClip {
            samples: self
                .samples
                .iter()
                .map(|&s| to_pcm16(s) as f64 / 32768.0)
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn to_pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a PCM16, PCM24 or float32 WAV file with one or two channels,
/// averaging channels to mono. With `resample` set, other sample rates are
/// brought to 44.1 kHz by linear interpolation.
pub fn load_audio(path: impl AsRef<Path>, resample: bool) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Format(format!(
            "{}: {} channels (mono or stereo supported)",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Int, 24) => reader
            .into_samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    }
    .map_err(|e| map_hound(path, e))?;

    let channels = spec.channels as usize;
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if mono.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no samples", path.display())));
    }
    let mono = if spec.sample_rate == SAMPLE_RATE {
        mono
    } else if resample {
        resample_linear(&mono, spec.sample_rate, SAMPLE_RATE)
    } else {
        return Err(Error::Rate {
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    };
    AudioClip::new(mono, SAMPLE_RATE)
}

/// Linear-interpolation resampling. Output sample `j` sits at source
/// position `j * from / to`; positions past the last source sample hold
/// its value.
pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let n_out = ((samples.len() as u64 * to as u64 + from as u64 / 2) / from as u64).max(1) as usize;
    let last = samples.len() - 1;
    (0..n_out)
        .map(|j| {
            // exact rational position j*from/to
            let num = j as u64 * from as u64;
            let i = (num / to as u64) as usize;
            let frac = (num % to as u64) as f64 / to as f64;
            if i >= last {
                samples[last]
            } else {
                samples[i] + (samples[i + 1] - samples[i]) * frac
            }
        })
        .collect()
}

/// Writes the clip as 16-bit PCM mono.
pub fn save_wav_pcm16(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(to_pcm16(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
