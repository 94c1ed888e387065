//! Deterministic synthetic percussion: single-instrument recordings with
//! exact onset ground truth, written as WAV + `.onsets` pairs.

use std::f64::consts::{LN_10, PI};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotations::{save_annotations, OnsetAnnotations};
use crate::audio::{save_wav_pcm16, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::exec;
use crate::seeds::derive_seed;

pub const TIME_KEEPING_DENSITY: f64 = 2.5;
pub const VOICING_DENSITY: f64 = 8.9;
/// Largest timing deviation of a voicing hit from its grid position.
pub const MAX_JITTER: f64 = 0.005;
pub const MIN_DURATION: f64 = 5.0;
pub const MANIFEST_NAME: &str = "manifest.txt";
pub const MANIFEST_FORMAT: u32 = 1;
/// Peak level after global normalization.
const PEAK: f64 = 0.9;
/// Hits are not placed in the last stretch of a file.
const TAIL: f64 = 0.05;
/// Amplitude-beat frequency of the detuned partial pairs.
const BEAT_HZ: f64 = 11.0;
/// Swell time of the atypical instrument's hits.
pub const ATYPICAL_ATTACK_MS: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    TimeKeeping,
    Voicing,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::TimeKeeping => "time-keeping",
            Role::Voicing => "voicing",
        }
    }

    pub fn default_density(self) -> f64 {
        match self {
            Role::TimeKeeping => TIME_KEEPING_DENSITY,
            Role::Voicing => VOICING_DENSITY,
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time-keeping" => Ok(Role::TimeKeeping),
            "voicing" => Ok(Role::Voicing),
            _ => Err(Error::Config(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralMode {
    NoiseBurst,
    DampedTone,
    Mixed,
}

impl SpectralMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectralMode::NoiseBurst => "noise-burst",
            SpectralMode::DampedTone => "damped-tone",
            SpectralMode::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for SpectralMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise-burst" => Ok(SpectralMode::NoiseBurst),
            "damped-tone" => Ok(SpectralMode::DampedTone),
            "mixed" => Ok(SpectralMode::Mixed),
            _ => Err(Error::Config(format!("unknown spectral mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentProfile {
    pub name: String,
    pub role: Role,
    /// Range of the time, in ms, for a hit to decay by 60 dB.
    pub decay_span: (f64, f64),
    pub spectral_mode: SpectralMode,
    pub center_freq: f64,
    /// Mean hits per second.
    pub onset_density: f64,
    /// Relative standard deviation of hit amplitudes.
    pub amplitude_jitter: f64,
    /// Tone partials come in detuned pairs that beat against each other.
    #[serde(default)]
    pub inharmonic: bool,
    /// Linear rise time of each hit, 0 for an instantaneous attack.
    #[serde(default)]
    pub attack_ms: f64,
}

impl InstrumentProfile {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.decay_span;
        if !(50.0..=450.0).contains(&lo) || !(50.0..=450.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "{}: decay span {lo}-{hi} ms outside [50, 450]",
                self.name
            )));
        }
        if !(self.onset_density >= 0.0 && self.onset_density.is_finite()) {
            return Err(Error::Config(format!("{}: negative onset density", self.name)));
        }
        if !(self.center_freq > 20.0 && self.center_freq < SAMPLE_RATE as f64 / 2.0) {
            return Err(Error::Config(format!("{}: center frequency out of range", self.name)));
        }
        if !(0.0..=50.0).contains(&self.attack_ms) {
            return Err(Error::Config(format!("{}: attack must be within 0-50 ms", self.name)));
        }
        if !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::Config(format!("{}: amplitude jitter must be in [0, 1)", self.name)));
        }
        Ok(())
    }
}

/// Stock acoustic settings for the five ensemble roles; other names get
/// settings drawn from the seed.
pub fn make_profile(name: &str, role: Role, seed: u64) -> InstrumentProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["profile", name, role.as_str()]));
    let (decay_span, spectral_mode, center_freq, inharmonic, attack_ms) = match name {
        "cuica" => ((384.0, 428.0), SpectralMode::Mixed, 620.0, false, 0.0),
        "gonge-lo" => ((376.0, 400.0), SpectralMode::DampedTone, 950.0, true, ATYPICAL_ATTACK_MS),
        "tarol" => ((77.0, 107.0), SpectralMode::NoiseBurst, 2500.0, false, 0.0),
        "mineiro" => ((90.0, 180.0), SpectralMode::NoiseBurst, 7000.0, false, 0.0),
        "tambor-hi" => ((120.0, 230.0), SpectralMode::Mixed, 190.0, false, 0.0),
        _ => {
            let lo = match role {
                Role::TimeKeeping => rng.gen_range(300.0..380.0),
                Role::Voicing => rng.gen_range(60.0..150.0),
            };
            let modes = [SpectralMode::NoiseBurst, SpectralMode::DampedTone, SpectralMode::Mixed];
            (
                (lo, lo + rng.gen_range(20.0..60.0)),
                modes[rng.gen_range(0..3)],
                rng.gen_range(150.0..4000.0),
                false,
                0.0,
            )
        }
    };
    // small seeded perturbations so different seeds give different voices
    let detune = 1.0 + rng.gen_range(-0.03..0.03);
    InstrumentProfile {
        name: name.to_string(),
        role,
        decay_span,
        spectral_mode,
        center_freq: center_freq * detune,
        onset_density: role.default_density(),
        amplitude_jitter: 0.15,
        inharmonic,
        attack_ms,
    }
}

/// Beat times `offset + k * 60 / tempo` inside the hit region of a file.
pub fn beat_grid(duration: f64, tempo: f64, offset: f64) -> Vec<f64> {
    let period = 60.0 / tempo;
    (0..)
        .map(|k| offset + k as f64 * period)
        .take_while(|&t| t < duration - TAIL)
        .collect()
}

fn snap(t: f64) -> f64 {
    (t * SAMPLE_RATE as f64).round() / SAMPLE_RATE as f64
}

/// Hit times of one file, each on the sample grid.
pub fn hit_times<R: Rng + ?Sized>(
    profile: &InstrumentProfile,
    duration: f64,
    tempo: f64,
    offset: f64,
    rng: &mut R,
) -> Vec<f64> {
    if profile.onset_density <= 0.0 {
        return Vec::new();
    }
    let beats = beat_grid(duration, tempo, offset);
    match profile.role {
        Role::TimeKeeping => {
            let p = (profile.onset_density * 60.0 / tempo).min(1.0);
            beats
                .into_iter()
                .filter(|_| rng.gen::<f64>() < p)
                .map(snap)
                .collect()
        }
        Role::Voicing => {
            let step = 60.0 / tempo / 4.0;
            let p = (profile.onset_density * step).min(1.0);
            let patterns: Vec<[bool; 16]> = (0..4)
                .map(|_| std::array::from_fn(|_| rng.gen::<f64>() < p))
                .collect();
            let mut out = Vec::new();
            let mut bar = 0;
            loop {
                let pattern = &patterns[rng.gen_range(0..patterns.len())];
                for (s, &on) in pattern.iter().enumerate() {
                    let grid = offset + (bar * 16 + s) as f64 * step;
                    if grid >= duration - TAIL {
                        return out;
                    }
                    if on {
                        let t = grid + rng.gen_range(-MAX_JITTER..=MAX_JITTER);
                        out.push(snap(t.max(0.0)));
                    }
                }
                bar += 1;
            }
        }
    }
}

struct Bandpass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Bandpass {
    fn new(freq: f64, q: f64) -> Self {
        let w = 2.0 * PI * freq / SAMPLE_RATE as f64;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Bandpass {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// (frequency ratio, relative amplitude) of the tone partials.
fn partials(inharmonic: bool) -> &'static [(f64, f64)] {
    if inharmonic {
        &[(1.0, 1.0), (2.76, 0.7), (5.40, 0.4)]
    } else {
        &[(1.0, 1.0), (2.0, 0.4), (3.0, 0.15)]
    }
}

/// Adds one hit starting at sample `start` into `buf`.
fn add_hit<R: Rng + ?Sized>(buf: &mut [f64], start: usize, profile: &InstrumentProfile, rng: &mut R) {
    let sr = SAMPLE_RATE as f64;
    let z: f64 = StandardNormal.sample(rng);
    let amp = (1.0 + profile.amplitude_jitter * z).clamp(0.3, 2.0);
    let (lo, hi) = profile.decay_span;
    let span = if hi > lo { rng.gen_range(lo..=hi) } else { lo } / 1000.0;
    // exp(-t / tau) reaches -60 dB at the span
    let tau = span / (3.0 * LN_10);
    let len = ((1.5 * span * sr) as usize).min(buf.len().saturating_sub(start));
    let f0 = profile.center_freq * (1.0 + 0.01 * rng.gen_range(-1.0..1.0));
    let attack = profile.attack_ms / 1000.0 * sr;
    let ramp = |n: usize| if attack > 0.0 { (n as f64 / attack).min(1.0) } else { 1.0 };
    let env = |n: usize| (-(n as f64) / sr / tau).exp() * ramp(n);

    let tone = |buf: &mut [f64], rng: &mut R, gain: f64| {
        for &(ratio, a) in partials(profile.inharmonic) {
            let phase = rng.gen_range(0.0..2.0 * PI);
            let mut comps = vec![f0 * ratio];
            if profile.inharmonic {
                comps.push(f0 * ratio + BEAT_HZ);
            }
            for freq in comps {
                if freq >= sr / 2.0 {
                    continue;
                }
                let w = 2.0 * PI * freq / sr;
                for n in 0..len {
                    buf[start + n] += gain * a * env(n) * (w * n as f64 + phase).cos();
                }
            }
        }
    };
    let noise = |buf: &mut [f64], rng: &mut R, gain: f64, tau: f64| {
        let mut bp = Bandpass::new(profile.center_freq.min(sr / 2.5), 1.2);
        for n in 0..len {
            let env = (-(n as f64) / sr / tau).exp() * ramp(n);
            let x: f64 = StandardNormal.sample(rng);
            buf[start + n] += gain * env * bp.process(x);
        }
    };
    match profile.spectral_mode {
        SpectralMode::DampedTone => tone(buf, rng, amp),
        SpectralMode::NoiseBurst => noise(buf, rng, 2.0 * amp, tau),
        SpectralMode::Mixed => {
            tone(buf, rng, 0.7 * amp);
            noise(buf, rng, 1.2 * amp, tau.min(0.008));
        }
    }
}

/// Renders hits at the given times (seconds) into a clip of `duration`
/// seconds, normalized to a fixed peak and quantized to 16-bit PCM.
pub fn render_hits(profile: &InstrumentProfile, hits: &[f64], duration: f64, seed: u64) -> AudioClip {
    let n = (duration * SAMPLE_RATE as f64).round() as usize;
    let mut buf = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["hits"]));
    for &t in hits {
        let start = (t * SAMPLE_RATE as f64).round() as usize;
        if start < n {
            add_hit(&mut buf, start, profile, &mut rng);
        }
    }
    let peak = buf.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        buf.iter_mut().for_each(|s| *s *= PEAK / peak);
    }
    AudioClip::new(buf, SAMPLE_RATE)
        .expect("rendered samples are finite")
        .quantized_pcm16()
}

/// One rendered recording with its ground truth.
#[derive(Debug, Clone)]
pub struct RenderedFile {
    pub clip: AudioClip,
    pub onsets: OnsetAnnotations,
    pub tempo: f64,
    pub beat_offset: f64,
}

impl RenderedFile {
    pub fn beats(&self) -> OnsetAnnotations {
        beats_of(self.clip.duration(), self.tempo, self.beat_offset)
    }
}

pub fn beats_of(duration: f64, tempo: f64, offset: f64) -> OnsetAnnotations {
    OnsetAnnotations::from_times(beat_grid(duration, tempo, offset).into_iter().map(snap).collect())
        .expect("beat grid is ascending and non-negative")
}

fn render_with(profile: &InstrumentProfile, duration: f64, tempo: f64, offset: f64, seed: u64) -> RenderedFile {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["times"]));
    let times = hit_times(profile, duration, tempo, offset, &mut rng);
    let clip = render_hits(profile, &times, duration, seed);
    RenderedFile {
        clip,
        onsets: OnsetAnnotations::from_times(times).expect("grid hits are well separated"),
        tempo,
        beat_offset: offset,
    }
}

/// Renders one file; the beat offset is drawn from the seed.
pub fn render_file(profile: &InstrumentProfile, duration: f64, tempo: f64, seed: u64) -> Result<RenderedFile> {
    profile.validate()?;
    if duration < MIN_DURATION {
        return Err(Error::Config(format!("duration {duration} s is below {MIN_DURATION} s")));
    }
    if !(tempo > 0.0) {
        return Err(Error::Config("tempo must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["offset"]));
    let offset = rng.gen_range(0.05..0.05 + 60.0 / tempo);
    Ok(render_with(profile, duration, tempo, offset, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub instruments: Vec<InstrumentProfile>,
    pub files_per_instrument: usize,
    pub file_duration: f64,
    pub tempo_range: (f64, f64),
    pub seed: u64,
}

/// The five ensemble instruments; gonge-lo carries the atypical envelope.
pub const STANDARD_INSTRUMENTS: [(&str, Role); 5] = [
    ("cuica", Role::TimeKeeping),
    ("gonge-lo", Role::TimeKeeping),
    ("tarol", Role::Voicing),
    ("mineiro", Role::Voicing),
    ("tambor-hi", Role::Voicing),
];

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::standard(0)
    }
}

impl CorpusSpec {
    pub fn standard(seed: u64) -> Self {
        CorpusSpec {
            instruments: STANDARD_INSTRUMENTS
                .iter()
                .map(|&(name, role)| make_profile(name, role, seed))
                .collect(),
            files_per_instrument: 10,
            file_duration: 30.0,
            tempo_range: (165.0, 180.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruments.is_empty() {
            return Err(Error::Config("corpus has no instruments".into()));
        }
        if self.files_per_instrument < 2 {
            return Err(Error::Config("need at least two files per instrument".into()));
        }
        if self.file_duration < MIN_DURATION {
            return Err(Error::Config(format!("file duration below {MIN_DURATION} s")));
        }
        let (lo, hi) = self.tempo_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("invalid tempo range".into()));
        }
        let mut names = std::collections::HashSet::new();
        for p in &self.instruments {
            p.validate()?;
            if !names.insert(&p.name) {
                return Err(Error::Config(format!("instrument {} listed twice", p.name)));
            }
        }
        Ok(())
    }

    pub fn instrument(&self, name: &str) -> Option<&InstrumentProfile> {
        self.instruments.iter().find(|p| p.name == name)
    }

    /// Per-file tempo, beat offset and seed, in manifest order.
    pub fn plan(&self) -> Vec<FileEntry> {
        let mut out = Vec::new();
        for p in &self.instruments {
            for index in 1..=self.files_per_instrument {
                let seed = derive_seed(self.seed, &["file", &p.name, &index.to_string()]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (lo, hi) = self.tempo_range;
                let tempo = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                let beat_offset = rng.gen_range(0.05..0.05 + 60.0 / tempo);
                let stem = format!("{}_{index:02}", p.name);
                out.push(FileEntry {
                    instrument: p.name.clone(),
                    index,
                    audio: format!("{stem}.wav"),
                    onsets: format!("{stem}.onsets"),
                    tempo,
                    beat_offset,
                    seed,
                    n_onsets: None,
                });
            }
        }
        out
    }

    pub fn render(&self, entry: &FileEntry) -> Result<RenderedFile> {
        let profile = self
            .instrument(&entry.instrument)
            .ok_or_else(|| Error::Config(format!("unknown instrument {}", entry.instrument)))?;
        Ok(render_with(profile, self.file_duration, entry.tempo, entry.beat_offset, entry.seed))
    }
}

/// One row of the manifest file table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub instrument: String,
    /// 1-based file number.
    pub index: usize,
    pub audio: String,
    pub onsets: String,
    pub tempo: f64,
    pub beat_offset: f64,
    pub seed: u64,
    pub n_onsets: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub spec: CorpusSpec,
    pub files: Vec<FileEntry>,
}

const FILE_COLUMNS: &str = "instrument index audio onsets tempo beat_offset seed n_onsets";

impl Manifest {
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut t = String::from("# synthetic percussion corpus\n");
        let _ = writeln!(t, "format = {MANIFEST_FORMAT}");
        let _ = writeln!(t, "seed = {}", s.seed);
        let _ = writeln!(t, "files_per_instrument = {}", s.files_per_instrument);
        let _ = writeln!(t, "file_duration = {}", s.file_duration);
        let _ = writeln!(t, "tempo_min = {}", s.tempo_range.0);
        let _ = writeln!(t, "tempo_max = {}", s.tempo_range.1);
        let _ = writeln!(t, "sample_rate = {SAMPLE_RATE}");
        for p in &s.instruments {
            let _ = writeln!(t, "\n[instrument {}]", p.name);
            let _ = writeln!(t, "role = {}", p.role.as_str());
            let _ = writeln!(t, "spectral_mode = {}", p.spectral_mode.as_str());
            let _ = writeln!(t, "decay_min_ms = {}", p.decay_span.0);
            let _ = writeln!(t, "decay_max_ms = {}", p.decay_span.1);
            let _ = writeln!(t, "center_freq = {}", p.center_freq);
            let _ = writeln!(t, "onset_density = {}", p.onset_density);
            let _ = writeln!(t, "amplitude_jitter = {}", p.amplitude_jitter);
            let _ = writeln!(t, "inharmonic = {}", p.inharmonic);
            let _ = writeln!(t, "attack_ms = {}", p.attack_ms);
        }
        let _ = writeln!(t, "\n[files]\n{FILE_COLUMNS}");
        for f in &self.files {
            let _ = writeln!(
                t,
                "{} {} {} {} {} {} {} {}",
                f.instrument,
                f.index,
                f.audio,
                f.onsets,
                f.tempo,
                f.beat_offset,
                f.seed,
                f.n_onsets.map_or("-".to_string(), |n| n.to_string())
            );
        }
        t
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        enum Section {
            Top,
            Instrument(usize),
            Files,
        }
        let mut spec = CorpusSpec {
            instruments: Vec::new(),
            ..CorpusSpec::standard(0)
        };
        let mut files = Vec::new();
        let mut section = Section::Top;
        let mut seen_columns = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            let perr = |m: String| Error::Parse { line: lineno, message: m };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(head) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = if head == "files" {
                    Section::Files
                } else if let Some(name) = head.strip_prefix("instrument ") {
                    spec.instruments.push(InstrumentProfile {
                        name: name.trim().to_string(),
                        ..make_profile(name.trim(), Role::Voicing, 0)
                    });
                    Section::Instrument(spec.instruments.len() - 1)
                } else {
                    return Err(perr(format!("unknown section [{head}]")));
                };
                continue;
            }
            match section {
                Section::Files => {
                    if !seen_columns {
                        if line.split_whitespace().collect::<Vec<_>>().join(" ") != FILE_COLUMNS {
                            return Err(perr("unexpected file table columns".into()));
                        }
                        seen_columns = true;
                        continue;
                    }
                    let c: Vec<&str> = line.split_whitespace().collect();
                    if c.len() != 8 {
                        return Err(perr(format!("expected 8 columns, found {}", c.len())));
                    }
                    let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad number {s:?}")));
                    files.push(FileEntry {
                        instrument: c[0].to_string(),
                        index: c[1].parse().map_err(|_| perr("bad index".into()))?,
                        audio: c[2].to_string(),
                        onsets: c[3].to_string(),
                        tempo: num(c[4])?,
                        beat_offset: num(c[5])?,
                        seed: c[6].parse().map_err(|_| perr("bad seed".into()))?,
                        n_onsets: if c[7] == "-" {
                            None
                        } else {
                            Some(c[7].parse().map_err(|_| perr("bad onset count".into()))?)
                        },
                    });
                }
                _ => {
                    let (key, value) = line
                        .split_once('=')
                        .map(|(k, v)| (k.trim(), v.trim()))
                        .ok_or_else(|| perr(format!("expected key = value, found {line:?}")))?;
                    let num = || value.parse::<f64>().map_err(|_| perr(format!("bad value for {key}")));
                    match (&section, key) {
                        (Section::Top, "format") => {
                            if value != MANIFEST_FORMAT.to_string() {
                                return Err(perr(format!("unsupported manifest format {value}")));
                            }
                        }
                        (Section::Top, "seed") => spec.seed = value.parse().map_err(|_| perr("bad seed".into()))?,
                        (Section::Top, "files_per_instrument") => {
                            spec.files_per_instrument = value.parse().map_err(|_| perr("bad count".into()))?
                        }
                        (Section::Top, "file_duration") => spec.file_duration = num()?,
                        (Section::Top, "tempo_min") => spec.tempo_range.0 = num()?,
                        (Section::Top, "tempo_max") => spec.tempo_range.1 = num()?,
                        (Section::Top, "sample_rate") => {}
                        (Section::Instrument(k), _) => {
                            let p = &mut spec.instruments[*k];
                            match key {
                                "role" => p.role = value.parse()?,
                                "spectral_mode" => p.spectral_mode = value.parse()?,
                                "decay_min_ms" => p.decay_span.0 = num()?,
                                "decay_max_ms" => p.decay_span.1 = num()?,
                                "center_freq" => p.center_freq = num()?,
                                "onset_density" => p.onset_density = num()?,
                                "amplitude_jitter" => p.amplitude_jitter = num()?,
                                "inharmonic" => p.inharmonic = value == "true",
                                "attack_ms" => p.attack_ms = num()?,
                                _ => return Err(perr(format!("unknown instrument key {key}"))),
                            }
                        }
                        _ => return Err(perr(format!("unknown key {key}"))),
                    }
                }
            }
        }
        Ok(Manifest { spec, files })
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(&text).map_err(|e| e.context(path.display().to_string()))
}

/// Writes every file of the corpus plus the manifest into `out_dir`.
/// Existing outputs are only replaced with `force`.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>, force: bool) -> Result<Manifest> {
    spec.validate()?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plan = spec.plan();
    if !force {
        let mut targets: Vec<PathBuf> = vec![dir.join(MANIFEST_NAME)];
        for f in &plan {
            targets.push(dir.join(&f.audio));
            targets.push(dir.join(&f.onsets));
        }
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(Error::Config(format!(
                "{} already exists; pass force to overwrite",
                p.display()
            )));
        }
    }
    let written = exec::map_slice(&plan, |entry| -> Result<FileEntry> {
        let file = spec.render(entry)?;
        save_wav_pcm16(&file.clip, dir.join(&entry.audio))?;
        save_annotations(&file.onsets, dir.join(&entry.onsets))?;
        Ok(FileEntry {
            n_onsets: Some(file.onsets.len()),
            ..entry.clone()
        })
    });
    let manifest = Manifest {
        spec: spec.clone(),
        files: written.into_iter().collect::<Result<_>>()?,
    };
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
