//! ASR feature transform: log-mel filterbanks, superframe stacking and global
//! mean-variance normalization (GMVN).
//!
//! `GMV1` layout (little-endian): magic `GMV1` | u32 dim | f64 mean[dim] | f64 var[dim] |
//! u64 frame_count.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Cursor, Raster};
use crate::stft::{MultichannelSpectrogram, StftConfig};

pub const GMV1_MAGIC: &[u8; 4] = b"GMV1";
const FORMAT: &str = "GMV1";
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    /// Upper edge; `None` means 8 kHz or Nyquist, whichever is lower.
    pub f_max: Option<f64>,
    /// Added to the mel power before the logarithm.
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            f_min: 0.0,
            f_max: None,
            floor: 1e-10,
        }
    }
}

/// Settings for the whole transform from a single-channel spectrogram to stacked frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub mel: MelConfig,
    /// Frames per superframe.
    pub stack: usize,
    /// Frame advance between superframes; `None` uses `stack`.
    pub stride: Option<usize>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            stack: 3,
            stride: None,
        }
    }
}

impl FeatureConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.stack)
    }

    pub fn output_dim(&self) -> usize {
        self.stack * self.mel.n_mels
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters over the STFT bins, unit peak, with adjacent filters
/// crossing at half height.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    config: MelConfig,
}

impl MelFilterbank {
    pub fn new(stft: &StftConfig, config: &MelConfig) -> Result<Self> {
        stft.validate()?;
        let nyquist = stft.sample_rate as f64 / 2.0;
        let f_max = config.f_max.unwrap_or(nyquist.min(8000.0));
        if config.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be positive".into()));
        }
        if !(config.f_min >= 0.0 && config.f_min < f_max && f_max <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "mel band {}..{} Hz invalid for Nyquist {} Hz",
                config.f_min, f_max, nyquist
            )));
        }
        if !(config.floor > 0.0) {
            return Err(Error::InvalidConfig("log floor must be positive".into()));
        }
        let (lo, hi) = (hz_to_mel(config.f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let bins = stft.num_bins();
        let weights = Array2::from_shape_fn((config.n_mels, bins), |(m, k)| {
            let f = stft.bin_frequency(k);
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            rise.min(fall).max(0.0)
        });
        Ok(Self {
            weights,
            config: *config,
        })
    }

    /// `(n_mels, bins)`.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn num_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }
}

/// Per frame `log(W |O|^2 + floor)` for a single-channel spectrogram; `(T, n_mels)`.
pub fn log_mel(spec: &MultichannelSpectrogram, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if spec.num_channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "log-mel expects one channel, got {}",
            spec.num_channels()
        )));
    }
    if spec.num_bins() != fb.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, filterbank {}",
            spec.num_bins(),
            fb.num_bins()
        )));
    }
    let power = spec.data().index_axis(Axis(0), 0).mapv(|z| z.norm_sqr());
    let mel = power.dot(&fb.weights.t());
    Ok(mel.mapv(|v| (v + fb.config.floor).ln()))
}

/// Concatenates `stack` consecutive frames starting every `stride` frames. Frame indices
/// past the end repeat the last frame; output is `(ceil(T / stride), stack * D)`.
pub fn frame2superframe(feat: ArrayView2<f64>, stack: usize, stride: usize) -> Result<Array2<f64>> {
    if stack == 0 || stride == 0 {
        return Err(Error::InvalidConfig("stack and stride must be positive".into()));
    }
    let (t, d) = feat.dim();
    if t == 0 || d == 0 {
        return Err(Error::EmptyInput("feature frames"));
    }
    let out_frames = t.div_ceil(stride);
    Ok(Array2::from_shape_fn((out_frames, stack * d), |(i, j)| {
        let src = (i * stride + j / d).min(t - 1);
        feat[[src, j % d]]
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmvnStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frame_count: u64,
    /// Identifies the corpus the statistics came from; not stored in `GMV1`.
    pub source_tag: String,
}

impl GmvnStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
            frame_count: 0,
            source_tag: "identity".into(),
        }
    }

    /// Statistics of a single feature matrix.
    pub fn from_features(feat: ArrayView2<f64>, source_tag: impl Into<String>) -> Result<Self> {
        let mut acc = GmvnAccumulator::new(feat.ncols());
        acc.push(feat)?;
        acc.finish(source_tag)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 * self.dim());
        out.extend_from_slice(GMV1_MAGIC);
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.mean.iter().chain(&self.variance) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.frame_count.to_le_bytes());
        out
    }

    /// Parses `GMV1` bytes; the source tag is left empty.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes, FORMAT);
        if cur.take(4, "magic")? != GMV1_MAGIC {
            return Err(Error::Format {
                format: FORMAT,
                message: "bad magic".into(),
            });
        }
        let dim = cur.u32("dimension")? as usize;
        let mut read = |section| -> Result<Vec<f64>> {
            let raw = cur.take(dim.checked_mul(8).ok_or(Error::Truncated { format: FORMAT, section })?, section)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let mean = read("mean")?;
        let variance = read("variance")?;
        let frame_count = cur.u64("frame count")?;
        if !cur.is_empty() {
            return Err(Error::Format {
                format: FORMAT,
                message: format!("{} trailing bytes", cur.remaining()),
            });
        }
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Format {
                format: FORMAT,
                message: format!("non-positive variance {v}"),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GMVN mean"));
        }
        Ok(Self {
            mean,
            variance,
            frame_count,
            source_tag: String::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Reads a `GMV1` file; the source tag becomes the file path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut stats = Self::from_bytes(&std::fs::read(path)?)?;
        stats.source_tag = path.display().to_string();
        Ok(stats)
    }
}

/// Streaming mean and variance (Welford updates, Chan merges).
#[derive(Debug, Clone, PartialEq)]
pub struct GmvnAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl GmvnAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, feat: ArrayView2<f64>) -> Result<()> {
        if feat.ncols() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature dim {} vs accumulator {}",
                feat.ncols(),
                self.mean.len()
            )));
        }
        for row in feat.rows() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature frame"));
            }
            self.count += 1;
            let n = self.count as f64;
            for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
                let delta = x - *mean;
                *mean += delta / n;
                *m2 += delta * (x - *mean);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.mean.len() != self.mean.len() {
            return Err(Error::ShapeMismatch("accumulator dims differ".into()));
        }
        if other.count == 0 {
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Population variance floored at [`VARIANCE_FLOOR`].
    pub fn finish(self, source_tag: impl Into<String>) -> Result<GmvnStats> {
        if self.count == 0 {
            return Err(Error::EmptyInput("feature corpus"));
        }
        let n = self.count as f64;
        Ok(GmvnStats {
            variance: self.m2.iter().map(|m2| (m2 / n).max(VARIANCE_FLOOR)).collect(),
            mean: self.mean,
            frame_count: self.count,
            source_tag: source_tag.into(),
        })
    }
}

/// `(x - mean) / sqrt(variance)` per dimension.
pub fn gmvn(feat: ArrayView2<f64>, stats: &GmvnStats) -> Result<Array2<f64>> {
    if feat.ncols() != stats.dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} dims, GMVN stats {}",
            feat.ncols(),
            stats.dim()
        )));
    }
    let scale: Vec<f64> = stats.variance.iter().map(|v| v.sqrt().recip()).collect();
    let mut out = feat.to_owned();
    for mut row in out.rows_mut() {
        for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&scale) {
            *x = (*x - m) * s;
        }
    }
    Ok(out)
}

/// Reads a 2-D `(frames, dim)` raster feature file.
pub fn read_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let arr = match Raster::read(path)? {
        Raster::F32(a) => a.mapv(f64::from),
        Raster::F64(a) => a,
        Raster::Complex64(_) => {
            return Err(Error::Format {
                format: "RST1",
                message: format!("{} holds complex data, expected features", path.display()),
            })
        }
    };
    arr.into_dimensionality()
        .map_err(|_| Error::ShapeMismatch(format!("{} is not a 2-D feature matrix", path.display())))
}

/// Writes features as a float32 raster.
pub fn write_features(path: impl AsRef<Path>, feat: ArrayView2<f64>) -> Result<()> {
    Raster::F32(feat.mapv(|v| v as f32).into_dyn()).write(path)
}

/// Corpus statistics over raster feature files. Files are accumulated in parallel and
/// merged in path order; the tag names the file count and a digest of the sorted paths.
pub fn compute_gmvn_stats<P: AsRef<Path> + Sync>(files: &[P]) -> Result<GmvnStats> {
    if files.is_empty() {
        return Err(Error::EmptyInput("feature corpus"));
    }
    let parts: Vec<GmvnAccumulator> = files
        .par_iter()
        .map(|p| {
            let feat = read_features(p)?;
            let mut acc = GmvnAccumulator::new(feat.ncols());
            acc.push(feat.view())?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = GmvnAccumulator::new(parts[0].mean.len());
    for part in &parts {
        total.merge(part)?;
    }
    let mut names: Vec<String> = files.iter().map(|p| p.as_ref().display().to_string()).collect();
    names.sort();
    // FNV-1a over the sorted names
    let mut digest: u64 = 0xcbf2_9ce4_8422_2325;
    for b in names.iter().flat_map(|n| n.bytes().chain([0])) {
        digest = (digest ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    total.finish(format!("{} files, {digest:016x}", files.len()))
}

/// log-mel, stacking and normalization in one call.
pub fn transform(
    spec: &MultichannelSpectrogram,
    fb: &MelFilterbank,
    cfg: &FeatureConfig,
    stats: &GmvnStats,
) -> Result<Array2<f64>> {
    let mel = log_mel(spec, fb)?;
    let stacked = frame2superframe(mel.view(), cfg.stack, cfg.stride())?;
    gmvn(stacked.view(), stats)
}
