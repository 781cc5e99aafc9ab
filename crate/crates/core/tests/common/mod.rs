//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use arrayfront::stft::{MultichannelPcm, MultichannelSpectrogram};
use num_complex::Complex64;

/// Reverberation time from Schroeder backward integration, fitting the energy decay
/// curve between -5 and -25 dB and extrapolating to -60 dB.
pub fn schroeder_t60(rir: &[f64], sample_rate: f64) -> f64 {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for i in (0..rir.len()).rev() {
        acc += rir[i] * rir[i];
        edc[i] = acc;
    }
    let total = edc[0];
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0).unwrap();
    let end = db.iter().position(|&d| d <= -25.0).unwrap();
    // least-squares slope in dB per sample
    let n = (end - start + 1) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &d) in db.iter().enumerate().take(end + 1).skip(start) {
        let x = i as f64;
        sx += x;
        sy += d;
        sxx += x * x;
        sxy += x * d;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    -60.0 / slope / sample_rate
}

/// Two-sided one-sample Kolmogorov-Smirnov test against U(lo, hi); returns the
/// asymptotic p-value.
pub fn ks_uniform_p(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut xs: Vec<f64> = samples.iter().map(|&v| (v - lo) / (hi - lo)).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i + 1) as f64 / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Scale-invariant SNR with the projection written out independently.
pub fn si_snr_oracle(estimate: &[f64], reference: &[f64]) -> f64 {
    let dot: f64 = estimate.iter().zip(reference).map(|(a, b)| a * b).sum();
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    let target: Vec<f64> = reference.iter().map(|v| v * dot / rr).collect();
    let t_pow: f64 = target.iter().map(|v| v * v).sum();
    let e_pow: f64 = estimate.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (t_pow / e_pow).log10()
}

/// Real part of the Welch coherence between two channels at bin `f`.
pub fn coherence(spec: &MultichannelSpectrogram, i: usize, j: usize, f: usize) -> f64 {
    let x = spec.data();
    let (mut pij, mut pii, mut pjj) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for t in 0..spec.num_frames() {
        pij += x[[i, t, f]] * x[[j, t, f]].conj();
        pii += x[[i, t, f]].norm_sqr();
        pjj += x[[j, t, f]].norm_sqr();
    }
    pij.re / (pii * pjj).sqrt()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn channel_vec(pcm: &MultichannelPcm, m: usize) -> Vec<f64> {
    pcm.channel(m).to_vec()
}
