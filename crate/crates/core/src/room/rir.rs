use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::RoomConfig;
use crate::error::{Error, Result};
use crate::spatial::{distance, DEFAULT_SPEED_OF_SOUND};

/// Reverberation formula inverted to obtain the wall reflection coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RoomAbsorption {
    Sabine,
    Eyring,
    /// Reflection coefficient tuned so the energy decay of the image set at the
    /// first microphone has the requested T60.
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RirOptions {
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    pub absorption: RoomAbsorption,
    /// RIR duration as a multiple of RT60.
    pub length_factor: f64,
    pub max_images: usize,
    /// Half-width in samples of the windowed-sinc fractional delay.
    pub sinc_half_width: usize,
    /// Removes the DC build-up of the all-positive image sum with a 100 Hz high-pass.
    pub high_pass: bool,
}

impl Default for RirOptions {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            absorption: RoomAbsorption::Calibrated,
            length_factor: 1.0,
            max_images: 8_000_000,
            sinc_half_width: 16,
            high_pass: true,
        }
    }
}

/// Uniform pressure reflection coefficient giving `rt60` in a shoebox room from the
/// closed-form reverberation formula; `Calibrated` uses Eyring here.
/// An RT60 of 0 yields 0 (anechoic).
pub fn reflection_coefficient(dims: [f64; 3], rt60: f64, model: RoomAbsorption, c: f64) -> Result<f64> {
    if rt60 == 0.0 {
        return Ok(0.0);
    }
    if !(rt60 > 0.0) {
        return Err(Error::InvalidConfig(format!("rt60 {rt60} must be non-negative")));
    }
    let [l, w, h] = dims;
    let volume = l * w * h;
    let surface = 2.0 * (l * w + l * h + w * h);
    let sabine = 24.0 * 10f64.ln() * volume / (c * surface * rt60);
    let alpha = match model {
        RoomAbsorption::Sabine => sabine,
        RoomAbsorption::Eyring | RoomAbsorption::Calibrated => 1.0 - (-sabine).exp(),
    };
    if alpha >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "rt60 {rt60} s is too short for a {l:.2}x{w:.2}x{h:.2} m room"
        )));
    }
    Ok((1.0 - alpha).sqrt())
}

pub fn image_rir(room: &RoomConfig, src: [f64; 3], mic: [f64; 3], opts: &RirOptions) -> Result<Vec<f64>> {
    Ok(image_rirs(room, src, &[mic], opts)?.remove(0))
}

/// Image-method impulse responses from one source to several microphones.
///
/// Image sources are enumerated over mirror orders until their path length exceeds
/// the response duration. Each arrival has amplitude `beta^reflections / (4 pi d)` and
/// is placed with a Hann-windowed sinc at delay `d / c`.
pub fn image_rirs(room: &RoomConfig, src: [f64; 3], mics: &[[f64; 3]], opts: &RirOptions) -> Result<Vec<Vec<f64>>> {
    if !room.contains(src) {
        return Err(Error::OutsideRoom(src));
    }
    for &m in mics {
        if !room.contains(m) {
            return Err(Error::OutsideRoom(m));
        }
        if distance(m, src) < 1e-9 {
            return Err(Error::CoincidentPositions);
        }
    }
    let c = opts.speed_of_sound;
    let fs = opts.sample_rate as f64;
    let half = opts.sinc_half_width as isize;

    let max_direct = mics.iter().map(|&m| distance(m, src)).fold(0.0, f64::max);
    let direct_len = (max_direct / c * fs).ceil() as usize + opts.sinc_half_width + 1;
    let len = direct_len.max((room.rt60 * opts.length_factor * fs).ceil() as usize + opts.sinc_half_width);
    let max_dist = len as f64 / fs * c;

    let orders: Vec<isize> = room
        .dims
        .iter()
        .map(|&d| (max_dist / (2.0 * d)).ceil() as isize + 1)
        .collect();
    let count = orders.iter().map(|&n| (2 * n + 1) as usize).product::<usize>() * 8;
    if count > opts.max_images {
        return Err(Error::TooManyImages {
            count,
            cap: opts.max_images,
        });
    }

    // One axis of the lattice: (coordinate, reflection count) for every mirror order.
    let axis = |k: usize| -> Vec<(f64, i32)> {
        let n = orders[k];
        let mut out = Vec::with_capacity((2 * n + 1) as usize * 2);
        for m in -n..=n {
            for q in 0..2 {
                let pos = (1 - 2 * q) as f64 * src[k] + 2.0 * m as f64 * room.dims[k];
                let refl = ((m - q as isize).abs() + m.abs()) as i32;
                out.push((pos, refl));
            }
        }
        out
    };
    let (xs, ys, zs) = (axis(0), axis(1), axis(2));

    let beta = match opts.absorption {
        RoomAbsorption::Calibrated if room.rt60 > 0.0 => {
            let mic = mics.first().ok_or(Error::EmptyInput("microphones"))?;
            calibrate(&xs, &ys, &zs, *mic, len, max_dist, room.rt60, fs, c)
        }
        model => reflection_coefficient(room.dims, room.rt60, model, c)?,
    };

    let mut rirs = vec![vec![0.0; len]; mics.len()];
    for &(x, rx) in &xs {
        for &(y, ry) in &ys {
            for &(z, rz) in &zs {
                let gain = beta.powi(rx + ry + rz);
                if gain == 0.0 {
                    continue;
                }
                for (mic, rir) in mics.iter().zip(rirs.iter_mut()) {
                    let d = ((x - mic[0]).powi(2) + (y - mic[1]).powi(2) + (z - mic[2]).powi(2)).sqrt();
                    if d > max_dist {
                        continue;
                    }
                    let delay = d / c * fs;
                    let amp = gain / (4.0 * PI * d);
                    let center = delay.round() as isize;
                    let frac = center as f64 - delay;
                    if frac.abs() < 1e-12 {
                        if (center as usize) < len {
                            rir[center as usize] += amp;
                        }
                        continue;
                    }
                    // sin(pi (k + frac)) alternates sign with k; the window cosine is
                    // advanced by a fixed rotation.
                    let sin_frac = (PI * frac).sin();
                    let step = PI / (half + 1) as f64;
                    let (step_sin, step_cos) = step.sin_cos();
                    let start = -half as f64 + frac;
                    let (mut wsin, mut wcos) = (step * start).sin_cos();
                    for k in -half..=half {
                        let n = center + k;
                        if n >= 0 && (n as usize) < len {
                            let offset = k as f64 + frac;
                            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                            let s = sign * sin_frac / (PI * offset);
                            rir[n as usize] += amp * 0.5 * (1.0 + wcos) * s;
                        }
                        let next_cos = wcos * step_cos - wsin * step_sin;
                        wsin = wsin * step_cos + wcos * step_sin;
                        wcos = next_cos;
                    }
                }
            }
        }
    }
    if opts.high_pass {
        for rir in &mut rirs {
            high_pass(rir, fs);
        }
    }
    Ok(rirs)
}

/// Decay time from Schroeder backward integration: a line fitted to the energy decay
/// curve between -5 and -25 dB, extrapolated to -60 dB. `None` when the curve does not
/// reach -25 dB.
pub fn schroeder_t60(rir: &[f64], sample_rate: f64) -> Option<f64> {
    let mut edc: Vec<f64> = rir.iter().map(|v| v * v).collect();
    decay_time(&mut edc, sample_rate)
}

/// Same as [`schroeder_t60`] for a per-sample energy sequence, overwritten by its EDC.
fn decay_time(energy: &mut [f64], sample_rate: f64) -> Option<f64> {
    let mut acc = 0.0;
    for e in energy.iter_mut().rev() {
        acc += *e;
        *e = acc;
    }
    let total = *energy.first()?;
    if !(total > 0.0) {
        return None;
    }
    let start = energy.iter().position(|&e| e <= total * 10f64.powf(-0.5))?;
    let end = energy.iter().position(|&e| e <= total * 10f64.powf(-2.5))?;
    if end <= start {
        return None;
    }
    let n = (end - start + 1) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &e) in energy[start..=end].iter().enumerate() {
        let (x, y) = (i as f64, 10.0 * (e / total).log10());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope / sample_rate)
}

/// Bisection on the reflection coefficient so that the image energy arriving at `mic`
/// decays with the requested T60.
#[allow(clippy::too_many_arguments)]
fn calibrate(
    xs: &[(f64, i32)],
    ys: &[(f64, i32)],
    zs: &[(f64, i32)],
    mic: [f64; 3],
    len: usize,
    max_dist: f64,
    rt60: f64,
    fs: f64,
    c: f64,
) -> f64 {
    // (arrival sample, reflection count, squared spreading gain) per audible image
    let mut images = Vec::new();
    let mut max_refl = 0;
    for &(x, rx) in xs {
        for &(y, ry) in ys {
            for &(z, rz) in zs {
                let d2 = (x - mic[0]).powi(2) + (y - mic[1]).powi(2) + (z - mic[2]).powi(2);
                let d = d2.sqrt();
                let idx = (d / c * fs).round() as usize;
                if d > max_dist || idx >= len {
                    continue;
                }
                let refl = (rx + ry + rz) as usize;
                max_refl = max_refl.max(refl);
                images.push((idx, refl, 1.0 / d2));
            }
        }
    }
    let mut energy = vec![0.0; len];
    let mut powers = vec![0.0; max_refl + 1];
    let mut t60 = |beta: f64| {
        let b2 = beta * beta;
        let mut p = 1.0;
        for v in powers.iter_mut() {
            *v = p;
            p *= b2;
        }
        energy.iter_mut().for_each(|e| *e = 0.0);
        for &(idx, refl, g) in &images {
            energy[idx] += powers[refl] * g;
        }
        decay_time(&mut energy, fs).unwrap_or(f64::INFINITY)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if t60(mid) < rt60 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Second-order 100 Hz high-pass of Allen and Berkley.
fn high_pass(x: &mut [f64], fs: f64) {
    let w = 2.0 * PI * 100.0 / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y0, mut y1) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y2 = y1;
        y1 = y0;
        y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
    }
}
