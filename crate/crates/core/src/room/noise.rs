use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use num_complex::Complex64;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::spatial::ArrayGeometry;
use crate::stft::MultichannelPcm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpectrum {
    #[default]
    White,
    /// Power falling 3 dB per octave.
    Pink,
    /// Power falling 6 dB per octave.
    Brown,
}

impl NoiseSpectrum {
    fn amplitude(self, freq: f64) -> f64 {
        let f = freq.max(20.0);
        match self {
            NoiseSpectrum::White => 1.0,
            NoiseSpectrum::Pink => (1000.0 / f).sqrt(),
            NoiseSpectrum::Brown => 1000.0 / f,
        }
    }
}

/// Spherically isotropic noise for an array: independent Gaussian sources are mixed per
/// frequency by a Cholesky factor of the coherence matrix `sin(k d_ij) / (k d_ij)`,
/// `k = 2 pi f / c`. Output is scaled to unit mean power.
pub fn diffuse_noise(
    geom: &ArrayGeometry,
    len: usize,
    sample_rate: u32,
    spectrum: NoiseSpectrum,
    seed: u64,
) -> Result<MultichannelPcm> {
    geom.validate()?;
    if len == 0 {
        return Err(Error::EmptyInput("noise duration"));
    }
    let m = geom.num_mics();
    let n = len.next_power_of_two().max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut spectra: Vec<Vec<Complex64>> = (0..m)
        .map(|_| {
            let mut buf: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
                .collect();
            fwd.process(&mut buf);
            buf
        })
        .collect();

    let dist = Array2::from_shape_fn((m, m), |(i, j)| geom.distance(i, j));
    let mut mixed = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..=n / 2 {
        let freq = k as f64 * sample_rate as f64 / n as f64;
        let wave = 2.0 * std::f64::consts::PI * freq / geom.speed_of_sound;
        let coherence = Array2::from_shape_fn((m, m), |(i, j)| {
            let x = wave * dist[[i, j]];
            let v = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
            Complex64::new(if i == j { v + 1e-9 } else { v }, 0.0)
        });
        let l = linalg::cholesky(coherence.view())
            .ok_or_else(|| Error::InvalidGeometry("coherence matrix not positive definite".into()))?;
        let gain = spectrum.amplitude(freq);
        // Real mixing commutes with conjugation, so bins k and n - k share the factor.
        for &bin in &[k, (n - k) % n] {
            for i in 0..m {
                mixed[i] = (0..=i).map(|j| l[[i, j]] * spectra[j][bin]).sum::<Complex64>() * gain;
            }
            for i in 0..m {
                spectra[i][bin] = mixed[i];
            }
            if k == 0 || 2 * k == n {
                break;
            }
        }
    }

    let mut channels: Vec<Vec<f64>> = spectra
        .into_iter()
        .map(|mut buf| {
            inv.process(&mut buf);
            buf[..len].iter().map(|v| v.re / n as f64).collect()
        })
        .collect();
    let power = channels.iter().flatten().map(|v| v * v).sum::<f64>() / (m * len) as f64;
    if power > 0.0 {
        let g = power.sqrt().recip();
        channels.iter_mut().flatten().for_each(|v| *v *= g);
    }
    MultichannelPcm::from_channels(&channels, sample_rate)
}
