//! Short-time Fourier analysis and overlap-add synthesis for multichannel signals.
//!
//! Spectrograms are stored as `(channel, frame, frequency)` complex arrays in 64-bit
//! precision. With centre padding enabled, frame `t` is centred on sample `t * hop`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis/synthesis window shape. Hann and Hamming are the periodic variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Hamming,
    SqrtHann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::SqrtHann => (0.5 - 0.5 * phase.cos()).sqrt(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    pub center_padding: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            fft_size: 512,
            hop: 160,
            window: Window::Hann,
            center_padding: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "hop {} must lie in [1, fft_size={}]",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins, `fft_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    /// Frame count produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if self.center_padding {
            1 + len / self.hop
        } else if len < self.fft_size {
            0
        } else {
            1 + (len - self.fft_size) / self.hop
        }
    }
}

/// Real-valued multichannel audio, `(channel, sample)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelPcm {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl MultichannelPcm {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pcm samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let num_channels = channels.len();
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::ShapeMismatch(
                "channels have unequal lengths".into(),
            ));
        }
        let flat: Vec<f64> = channels.iter().flatten().copied().collect();
        let samples = Array2::from_shape_vec((num_channels, len), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::from_channels(&[samples], sample_rate)
    }

    pub fn zeros(num_channels: usize, len: usize, sample_rate: u32) -> Self {
        Self {
            samples: Array2::zeros((num_channels, len)),
            sample_rate,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn samples_mut(&mut self) -> ndarray::ArrayViewMut2<'_, f64> {
        self.samples.view_mut()
    }

    pub fn channel(&self, m: usize) -> ArrayView1<'_, f64> {
        self.samples.row(m)
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Mean power over all channels and samples.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scale(&mut self, gain: f64) {
        self.samples.mapv_inplace(|v| v * gain);
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.num_channels()) {
            return Err(Error::ShapeMismatch(format!("channel {bad} out of range")));
        }
        Ok(Self {
            samples: self.samples.select(Axis(0), channels),
            sample_rate: self.sample_rate,
        })
    }
}

/// Complex STFT tensor indexed `(channel, frame, frequency)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrogram {
    data: Array3<Complex64>,
    config: StftConfig,
    signal_len: usize,
}

impl MultichannelSpectrogram {
    /// Wraps raw STFT data. `signal_len` is the time-domain length `istft` restores.
    pub fn new(data: Array3<Complex64>, config: StftConfig, signal_len: usize) -> Result<Self> {
        config.validate()?;
        let (m, t, f) = data.dim();
        if m == 0 || t == 0 {
            return Err(Error::EmptyInput("spectrogram"));
        }
        if f != config.num_bins() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram has {f} bins, config implies {}",
                config.num_bins()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            data,
            config,
            signal_len,
        })
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().2
    }

    /// `(M, T, F)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Single-channel spectrogram of channel `m`.
    pub fn channel(&self, m: usize) -> Self {
        let data = self.data.select(Axis(0), &[m]);
        Self {
            data,
            config: self.config,
            signal_len: self.signal_len,
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            data: self.data.mapv(|v| v * gain),
            config: self.config,
            signal_len: self.signal_len,
        }
    }

    /// Total energy `sum |x|^2` per channel.
    pub fn channel_energy(&self) -> Vec<f64> {
        self.data
            .outer_iter()
            .map(|ch| ch.iter().map(|v| v.norm_sqr()).sum())
            .collect()
    }
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }
}

/// Forward STFT of every channel.
pub fn stft(pcm: &MultichannelPcm, cfg: &StftConfig) -> Result<MultichannelSpectrogram> {
    cfg.validate()?;
    if pcm.is_empty() {
        return Err(Error::EmptyInput("pcm"));
    }
    if pcm.sample_rate() != cfg.sample_rate {
        return Err(Error::SampleRateMismatch {
            signal: pcm.sample_rate(),
            config: cfg.sample_rate,
        });
    }
    let n = cfg.fft_size;
    let len = pcm.len();
    let frames = cfg.num_frames(len);
    if frames == 0 {
        return Err(Error::EmptyInput("signal shorter than one frame"));
    }
    let bins = cfg.num_bins();
    let window = cfg.window.coefficients(n);
    let ffts = FftPair::new(n);
    let offset = if cfg.center_padding { n / 2 } else { 0 };

    let mut data = Array3::<Complex64>::zeros((pcm.num_channels(), frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (m, channel) in pcm.samples().outer_iter().enumerate() {
        for t in 0..frames {
            let start = (t * cfg.hop) as isize - offset as isize;
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = start + k as isize;
                let x = if idx >= 0 && (idx as usize) < len {
                    channel[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(x * window[k], 0.0);
            }
            ffts.forward.process(&mut buf);
            for f in 0..bins {
                data[[m, t, f]] = buf[f];
            }
            // Real input: DC and Nyquist are real up to rounding.
            data[[m, t, 0]].im = 0.0;
            data[[m, t, bins - 1]].im = 0.0;
        }
    }
    MultichannelSpectrogram::new(data, *cfg, len)
}

/// Weighted overlap-add inverse STFT, restoring the original signal length.
pub fn istft(spec: &MultichannelSpectrogram) -> Result<MultichannelPcm> {
    let cfg = spec.config();
    let n = cfg.fft_size;
    let (channels, frames, bins) = spec.dim();
    let len = spec.signal_len();
    let window = cfg.window.coefficients(n);
    let offset = if cfg.center_padding { n / 2 } else { 0 };
    let padded_len = (frames - 1) * cfg.hop + n;

    let mut norm = vec![0.0; padded_len];
    for t in 0..frames {
        for k in 0..n {
            norm[t * cfg.hop + k] += window[k] * window[k];
        }
    }
    let span = offset..(offset + len).min(padded_len);
    let peak_norm = norm.iter().fold(0.0_f64, |a, &b| a.max(b));
    let min_norm = norm[span.clone()]
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if len > 0 && !(min_norm > 1e-8 * peak_norm.max(f64::MIN_POSITIVE)) {
        return Err(Error::Reconstruction { min_norm });
    }

    let ffts = FftPair::new(n);
    let mut out = Array2::<f64>::zeros((channels, len));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut acc = vec![0.0; padded_len];
    for m in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..frames {
            for f in 0..bins {
                buf[f] = spec.data[[m, t, f]];
            }
            for f in bins..n {
                buf[f] = spec.data[[m, t, n - f]].conj();
            }
            ffts.inverse.process(&mut buf);
            let base = t * cfg.hop;
            for k in 0..n {
                acc[base + k] += buf[k].re / n as f64 * window[k];
            }
        }
        for (i, idx) in span.clone().enumerate() {
            out[[m, i]] = acc[idx] / norm[idx];
        }
    }
    MultichannelPcm::new(out, cfg.sample_rate)
}
