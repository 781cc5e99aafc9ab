use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Speech-like test signal: voiced syllables with a gliding pitch and formant-shaped
/// harmonics, occasional fricative noise bursts, and pauses between syllables.
/// Output has unit RMS. Each seed yields a different voice (pitch range and formants).
pub fn synth_speech(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let base_f0 = rng.random_range(95.0..230.0);
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(0.02..0.12) * fs) as usize;
    let mut phase = 0.0;
    while pos < len {
        let syllable = (rng.random_range(0.12..0.32) * fs) as usize;
        let end = (pos + syllable).min(len);
        let formants = [
            rng.random_range(300.0..850.0),
            rng.random_range(900.0..2300.0),
            rng.random_range(2400.0..3300.0),
        ];
        let f0_start = base_f0 * rng.random_range(0.85..1.2);
        let f0_end = base_f0 * rng.random_range(0.8..1.15);
        let fricative = rng.random_bool(0.3);
        let amp = rng.random_range(0.5..1.0);
        let n = (end - pos).max(1) as f64;
        for i in pos..end {
            let r = (i - pos) as f64 / n;
            let env = (PI * r).sin().powf(0.6) * amp;
            let f0 = f0_start + (f0_end - f0_start) * r;
            phase += 2.0 * PI * f0 / fs;
            if phase > 2.0 * PI * 1000.0 {
                phase -= 2.0 * PI * 1000.0;
            }
            let mut v = 0.0;
            let mut h = 1;
            while (h as f64) * f0 < 4000.0_f64.min(fs / 2.0 - 200.0) {
                let hf = h as f64 * f0;
                let shape: f64 = formants
                    .iter()
                    .enumerate()
                    .map(|(k, &fc)| {
                        let bw = 80.0 + 60.0 * k as f64;
                        (-(hf - fc).powi(2) / (2.0 * bw * bw)).exp() / (1.0 + k as f64)
                    })
                    .sum();
                v += (0.05 + shape) / (h as f64).sqrt() * (h as f64 * phase).sin();
                h += 1;
            }
            if fricative && r > 0.6 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += 0.3 * z;
            }
            out[i] = v * env;
        }
        pos = end + (rng.random_range(0.03..0.2) * fs) as usize;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}
