//! Log-filtered magnitude spectrogram at 100 frames per second.
//!
//! STFT with a 2048-sample Hann window and a hop of 441 samples, centred
//! so frame `t` covers sample `t * 441`; magnitudes go through 81
//! triangular filters spaced evenly in log-frequency over 30–17000 Hz, each
//! normalised to unit area, and are compressed with `ln(1 + x)`.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::Tensor;

pub const FRAME_SIZE: usize = 2048;
pub const HOP_SIZE: usize = 441;
pub const FRAME_RATE: f64 = 100.0;
pub const N_BANDS: usize = 81;
pub const F_MIN: f64 = 30.0;
pub const F_MAX: f64 = 17_000.0;

const N_BINS: usize = FRAME_SIZE / 2 + 1;
const FRAME_BLOCK: usize = 64;

/// `frames × bands` matrix of non-negative features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_frames: usize,
    n_bands: usize,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, n_frames: usize, n_bands: usize) -> Result<Self> {
        if values.len() != n_frames * n_bands {
            return Err(Error::Shape(format!(
                "{n_frames} frames x {n_bands} bands needs {} values, got {}",
                n_frames * n_bands,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Range("features must be finite and non-negative".into()));
        }
        Ok(FeatureMatrix {
            values,
            n_frames,
            n_bands,
        })
    }

    pub fn zeros(n_frames: usize, n_bands: usize) -> Self {
        FeatureMatrix {
            values: vec![0.0; n_frames * n_bands],
            n_frames,
            n_bands,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn frame_rate(&self) -> f64 {
        FRAME_RATE
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bands..(t + 1) * self.n_bands]
    }

    pub fn get(&self, t: usize, band: usize) -> f64 {
        self.values[t * self.n_bands + band]
    }

    /// Frames `[start, start + len)`, zero-padded past the end.
    pub fn slice(&self, start: usize, len: usize) -> FeatureMatrix {
        let mut values = vec![0.0; len * self.n_bands];
        for t in 0..len {
            if start + t < self.n_frames {
                values[t * self.n_bands..(t + 1) * self.n_bands].copy_from_slice(self.frame(start + t));
            }
        }
        FeatureMatrix {
            values,
            n_frames: len,
            n_bands: self.n_bands,
        }
    }

    /// The matrix as a `frames × bands × 1` network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n_frames.max(1), self.n_bands, 1], {
            let mut v = self.values.clone();
            if self.n_frames == 0 {
                v = vec![0.0; self.n_bands];
            }
            v
        })
        .expect("feature matrix dimensions are consistent")
    }
}

/// Number of frames produced for a clip of `n_samples` samples.
pub fn n_frames_for(n_samples: usize) -> usize {
    n_samples.div_ceil(HOP_SIZE)
}

/// A triangular filter over FFT bins `start..start + weights.len()`.
#[derive(Debug, Clone)]
pub struct Filter {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl Filter {
    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// The 83 log-spaced frequencies whose consecutive triples define the
/// filters (lower edge, centre, upper edge).
pub fn log_grid() -> Vec<f64> {
    let n = N_BANDS + 2;
    (0..n)
        .map(|i| F_MIN * (F_MAX / F_MIN).powf(i as f64 / (n - 1) as f64))
        .collect()
}

pub fn band_centers() -> Vec<f64> {
    log_grid()[1..=N_BANDS].to_vec()
}

fn bin_frequency(k: usize) -> f64 {
    k as f64 * SAMPLE_RATE as f64 / FRAME_SIZE as f64
}

fn build_filterbank() -> Vec<Filter> {
    let grid = log_grid();
    (0..N_BANDS)
        .map(|b| {
            let (lo, mid, hi) = (grid[b], grid[b + 1], grid[b + 2]);
            let weights: Vec<f64> = (0..N_BINS)
                .map(|k| {
                    let f = bin_frequency(k);
                    if f > lo && f < mid {
                        (f - lo) / (mid - lo)
                    } else if f >= mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect();
            let first = weights.iter().position(|&w| w > 0.0);
            let mut filter = match first {
                Some(start) => {
                    let end = weights.iter().rposition(|&w| w > 0.0).unwrap() + 1;
                    Filter {
                        start,
                        weights: weights[start..end].to_vec(),
                    }
                }
                // narrower than the bin spacing: fall back to the nearest bin
                None => Filter {
                    start: (mid * FRAME_SIZE as f64 / SAMPLE_RATE as f64).round() as usize,
                    weights: vec![1.0],
                },
            };
            let area = filter.area();
            filter.weights.iter_mut().for_each(|w| *w /= area);
            filter
        })
        .collect()
}

pub fn filterbank() -> &'static [Filter] {
    static BANK: OnceLock<Vec<Filter>> = OnceLock::new();
    BANK.get_or_init(build_filterbank)
}

fn hann_window() -> &'static [f64] {
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        (0..FRAME_SIZE)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (FRAME_SIZE - 1) as f64).cos())
            .collect()
    })
}

fn fft_plan() -> Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(FRAME_SIZE))
        .clone()
}

/// Computes the feature matrix of a 44.1 kHz clip.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureMatrix> {
    if clip.sample_rate() != SAMPLE_RATE {
        return Err(Error::Rate {
            found: clip.sample_rate(),
            expected: SAMPLE_RATE,
        });
    }
    if clip.is_empty() {
        return Err(Error::EmptyInput("clip has no samples".into()));
    }
    let x = clip.samples();
    let n_frames = n_frames_for(x.len());
    let window = hann_window();
    let bank = filterbank();
    let fft = fft_plan();
    let mut values = vec![0.0; n_frames * N_BANDS];

    exec::for_each_chunk_mut(&mut values, FRAME_BLOCK * N_BANDS, |block, chunk| {
        let mut buf = vec![Complex::new(0.0, 0.0); FRAME_SIZE];
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut mag = vec![0.0; N_BINS];
        for (r, row) in chunk.chunks_mut(N_BANDS).enumerate() {
            let t = block * FRAME_BLOCK + r;
            let start = (t * HOP_SIZE) as isize - (FRAME_SIZE / 2) as isize;
            for (n, c) in buf.iter_mut().enumerate() {
                let i = start + n as isize;
                let s = if i >= 0 && (i as usize) < x.len() {
                    x[i as usize]
                } else {
                    0.0
                };
                *c = Complex::new(s * window[n], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (m, c) in mag.iter_mut().zip(&buf[..N_BINS]) {
                *m = c.norm();
            }
            for (out, f) in row.iter_mut().zip(bank) {
                let e: f64 = f
                    .weights
                    .iter()
                    .zip(&mag[f.start..f.start + f.weights.len()])
                    .map(|(w, m)| w * m)
                    .sum();
                *out = e.ln_1p();
            }
        }
    });

    FeatureMatrix::new(values, n_frames, N_BANDS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_count() {
        let clip = AudioClip::silence(220_500, SAMPLE_RATE);
        let f = extract_features(&clip).unwrap();
        assert_eq!((f.n_frames(), f.n_bands()), (500, 81));
        assert!(f.values().iter().all(|&v| v == 0.0));
        assert_eq!(n_frames_for(1), 1);
        assert_eq!(n_frames_for(441), 1);
        assert_eq!(n_frames_for(442), 2);
    }

    #[test]
    fn filters_have_unit_area() {
        for (b, f) in filterbank().iter().enumerate() {
            assert!((f.area() - 1.0).abs() < 1e-6, "band {b}");
            assert!(f.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn wrong_rate_rejected() {
        let clip = AudioClip::silence(100, 22_050);
        assert!(matches!(extract_features(&clip), Err(Error::Rate { .. })));
    }
}
