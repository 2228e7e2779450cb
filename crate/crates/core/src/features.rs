//! Acoustic front-end: WAV decoding, log mel filterbanks, regression deltas,
//! per-utterance normalization, and an on-disk feature cache.
//!
//! The default recipe is 40 log-mel filterbanks over 25 ms Hamming windows
//! with a 10 ms hop, extended with first and second order deltas (120
//! coefficients) and normalized per utterance.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const TARGET_SAMPLE_RATE: u32 = 16_000;
/// Floor applied to filterbank energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Environment variable overriding the feature cache directory.
pub const CACHE_DIR_ENV: &str = "CAPSLU_CACHE_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Data("audio clip has no samples".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    /// Linear-interpolation resampling. Output length is
    /// `round(len * target / rate)`.
    pub fn resample(&self, target: u32) -> AudioClip {
        if target == self.sample_rate {
            return self.clone();
        }
        let ratio = self.sample_rate as f64 / target as f64;
        let out_len = ((self.samples.len() as f64) * target as f64 / self.sample_rate as f64)
            .round() as usize;
        let last = self.samples.len() - 1;
        let samples = (0..out_len.max(1))
            .map(|k| {
                let pos = k as f64 * ratio;
                let i = (pos.floor() as usize).min(last);
                let j = (i + 1).min(last);
                let frac = pos - i as f64;
                self.samples[i] * (1.0 - frac) + self.samples[j] * frac
            })
            .collect();
        AudioClip {
            samples,
            sample_rate: target,
        }
    }
}

/// Per-utterance features, frames × coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    values: Matrix,
}

impl FeatureMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::Data(
                "feature matrix must have at least one frame".into(),
            ));
        }
        if !values.is_finite() {
            return Err(Error::Data(
                "feature matrix contains non-finite values".into(),
            ));
        }
        Ok(FeatureMatrix { values })
    }

    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self> {
        let dim = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::Shape("ragged feature frames".into()));
        }
        let data = frames.iter().flatten().copied().collect();
        Self::new(Matrix::from_vec(frames.len(), dim, data)?)
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Text serialization: a `T F` header line, then `T` rows of `F` reals.
    /// Values are written in shortest round-trip form, so reading back is exact.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.frames(), self.dim());
        for t in 0..self.frames() {
            let row = self.frame(t);
            for (c, v) in row.iter().enumerate() {
                if c > 0 {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty feature file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("bad feature header {header:?}: {e}")))?;
        let [frames, dim] = dims[..] else {
            return Err(Error::Format(format!(
                "feature header must be `T F`, got {header:?}"
            )));
        };
        let mut data = Vec::with_capacity(frames * dim);
        for (t, line) in lines.by_ref().take(frames).enumerate() {
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::Format(format!("row {t}: bad value {tok:?}: {e}")))?,
                );
            }
            if data.len() - before != dim {
                return Err(Error::Format(format!(
                    "row {t} has {} values, expected {dim}",
                    data.len() - before
                )));
            }
        }
        if data.len() != frames * dim {
            return Err(Error::Format(format!("expected {frames} rows of features")));
        }
        Self::new(Matrix::from_vec(frames, dim, data)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Writes via a temporary file and an atomic rename.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}

/// Decodes a PCM WAV file, downmixes to mono and resamples to 16 kHz.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let fmt_err = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(fmt_err)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(fmt_err)?,
        (format, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported encoding {format:?} with {bits} bits",
                path.display()
            )))
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if mono.is_empty() {
        return Err(Error::Data(format!("{}: no audio samples", path.display())));
    }
    Ok(AudioClip::new(mono, spec.sample_rate)?.resample(TARGET_SAMPLE_RATE))
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters on the HTK scale between 20 Hz and Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `(left, center, right)` edges in Hz for each filter.
    pub edges: Vec<(f64, f64, f64)>,
    weights: Vec<Vec<(usize, f64)>>,
}

impl MelFilterbank {
    pub const LOW_HZ: f64 = 20.0;

    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let (lo, hi) = (hz_to_mel(Self::LOW_HZ), hz_to_mel(nyquist));
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let n_bins = fft_size / 2 + 1;
        let mut edges = Vec::with_capacity(n_mels);
        let mut weights = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            let w: Vec<(usize, f64)> = (0..n_bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            edges.push((l, c, r));
            weights.push(w);
        }
        MelFilterbank { edges, weights }
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().map(|&(k, wk)| wk * power[k]).sum())
            .collect()
    }
}

/// Log mel filterbank energies.
///
/// Frame count is `1 + floor((len − win) / hop)` where window and hop are
/// rounded to whole samples.
pub fn compute_fbank(
    clip: &AudioClip,
    n_mels: usize,
    win_ms: f64,
    hop_ms: f64,
) -> Result<FeatureMatrix> {
    if n_mels == 0 {
        return Err(Error::Usage("n_mels must be at least 1".into()));
    }
    if !(win_ms > hop_ms && hop_ms > 0.0) {
        return Err(Error::Usage(format!(
            "need win_ms > hop_ms > 0, got win {win_ms} hop {hop_ms}"
        )));
    }
    let sr = clip.sample_rate as f64;
    let win = (win_ms * sr / 1000.0).round() as usize;
    let hop = ((hop_ms * sr / 1000.0).round() as usize).max(1);
    if clip.samples.len() < win || win == 0 {
        return Err(Error::Data(format!(
            "clip of {} samples is shorter than one {win}-sample window",
            clip.samples.len()
        )));
    }
    let frames = 1 + (clip.samples.len() - win) / hop;
    let fft_size = win.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let window: Vec<f64> = (0..win)
        .map(|n| {
            if win == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (win - 1) as f64).cos()
            }
        })
        .collect();
    let bank = MelFilterbank::new(n_mels, fft_size, clip.sample_rate);

    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut power = vec![0.0; fft_size / 2 + 1];
    let mut data = Vec::with_capacity(frames * n_mels);
    for t in 0..frames {
        let seg = &clip.samples[t * hop..t * hop + win];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < win { seg[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        data.extend(
            bank.apply(&power)
                .into_iter()
                .map(|e| e.max(LOG_FLOOR).ln()),
        );
    }
    FeatureMatrix::new(Matrix::from_vec(frames, n_mels, data)?)
}

fn regression_deltas(m: &Matrix) -> Matrix {
    const N: isize = 2;
    let denom = 2.0 * (1..=N).map(|n| (n * n) as f64).sum::<f64>();
    let (frames, dim) = m.shape();
    let clamp = |t: isize| t.clamp(0, frames as isize - 1) as usize;
    let mut out = Matrix::zeros(frames, dim);
    for t in 0..frames as isize {
        for n in 1..=N {
            let ahead = m.row(clamp(t + n));
            let behind = m.row(clamp(t - n));
            let row = out.row_mut(t as usize);
            for c in 0..dim {
                row[c] += n as f64 * (ahead[c] - behind[c]);
            }
        }
    }
    out.scale(1.0 / denom);
    out
}

/// Appends delta and delta-delta coefficients (±2-frame regression, edge
/// frames replicated). Output dimension is `3F`.
pub fn add_deltas(f: &FeatureMatrix) -> FeatureMatrix {
    let d1 = regression_deltas(f.values());
    let d2 = regression_deltas(&d1);
    let (frames, dim) = f.values().shape();
    let mut out = Matrix::zeros(frames, 3 * dim);
    for t in 0..frames {
        let row = out.row_mut(t);
        row[..dim].copy_from_slice(f.frame(t));
        row[dim..2 * dim].copy_from_slice(d1.row(t));
        row[2 * dim..].copy_from_slice(d2.row(t));
    }
    FeatureMatrix { values: out }
}

/// Per-coefficient mean and variance normalization over the utterance.
pub fn normalize(f: &FeatureMatrix) -> FeatureMatrix {
    let (frames, dim) = f.values().shape();
    let n = frames as f64;
    let mut out = f.values().clone();
    for c in 0..dim {
        let mean = (0..frames).map(|t| f.values().get(t, c)).sum::<f64>() / n;
        let var = (0..frames)
            .map(|t| (f.values().get(t, c) - mean).powi(2))
            .sum::<f64>()
            / n;
        let inv = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
        for t in 0..frames {
            out.set(t, c, (f.values().get(t, c) - mean) * inv);
        }
    }
    FeatureMatrix { values: out }
}

/// The fixed feature extraction recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureRecipe {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub deltas: bool,
    pub normalize: bool,
}

impl Default for FeatureRecipe {
    fn default() -> Self {
        FeatureRecipe {
            n_mels: 40,
            win_ms: 25.0,
            hop_ms: 10.0,
            deltas: true,
            normalize: true,
        }
    }
}

impl FeatureRecipe {
    pub fn output_dim(&self) -> usize {
        if self.deltas {
            3 * self.n_mels
        } else {
            self.n_mels
        }
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let mut f = compute_fbank(clip, self.n_mels, self.win_ms, self.hop_ms)?;
        if self.deltas {
            f = add_deltas(&f);
        }
        if self.normalize {
            f = normalize(&f);
        }
        Ok(f)
    }

    pub fn hash(&self) -> String {
        let canon = format!(
            "fbank;sr={TARGET_SAMPLE_RATE};n_mels={};win_ms={};hop_ms={};deltas={};normalize={}",
            self.n_mels, self.win_ms, self.hop_ms, self.deltas, self.normalize
        );
        hex(&Sha256::digest(canon.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Computed,
}

/// Feature files keyed by `(audio file hash, recipe hash)`.
///
/// Safe under concurrent writers: entries are written to a temporary file and
/// renamed into place.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
    recipe: FeatureRecipe,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, recipe: FeatureRecipe) -> Self {
        FeatureCache {
            dir: dir.into(),
            recipe,
        }
    }

    /// Uses `$CAPSLU_CACHE_DIR` when set, else `default_dir`.
    pub fn from_env_or(default_dir: impl Into<PathBuf>, recipe: FeatureRecipe) -> Self {
        let dir = std::env::var_os(CACHE_DIR_ENV).map_or_else(|| default_dir.into(), PathBuf::from);
        Self::new(dir, recipe)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn recipe(&self) -> &FeatureRecipe {
        &self.recipe
    }

    pub fn entry_path(&self, audio_bytes: &[u8]) -> PathBuf {
        let file_hash = hex(&Sha256::digest(audio_bytes));
        let recipe_hash = self.recipe.hash();
        self.dir
            .join(&recipe_hash[..16])
            .join(format!("{file_hash}.feat"))
    }

    /// Loads cached features for `audio`, computing and storing them on a miss.
    pub fn get_or_compute(&self, audio: &Path) -> Result<(FeatureMatrix, CacheStatus)> {
        let bytes = fs::read(audio).map_err(|e| Error::io(audio, e))?;
        let entry = self.entry_path(&bytes);
        if entry.is_file() {
            if let Ok(f) = FeatureMatrix::read(&entry) {
                return Ok((f, CacheStatus::Hit));
            }
        }
        let clip = load_wav(audio)?;
        let f = self.recipe.extract(&clip)?;
        f.write_atomic(&entry)?;
        Ok((f, CacheStatus::Computed))
    }
}
