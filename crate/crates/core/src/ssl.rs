//! Grid-search sound source localization.
//!
//! Each azimuth on a fixed grid is scored by the steered response power of the
//! phase-transform weighted spectrum, `sum_{t,f} |e(f)^H y(t,f)|^2` with
//! `y_i = x_i / |x_i|`. The per-frequency spatial covariance of `y` is accumulated
//! once, so scoring a grid point costs `O(F M^2)`.

use ndarray::Array3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{steering_vector, ArrayGeometry};
use crate::stft::MultichannelSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SslOptions {
    /// Grid spacing in degrees; must divide 360.
    pub resolution: f64,
    pub phase_transform: bool,
    /// Scored band in Hz; `None` scores every bin.
    pub band: Option<(f64, f64)>,
}

impl Default for SslOptions {
    fn default() -> Self {
        Self {
            resolution: 3.0,
            phase_transform: true,
            band: Some((125.0, 7600.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub azimuth: f64,
    pub score: f64,
    /// `(azimuth, score)` for every grid point.
    pub score_curve: Vec<(f64, f64)>,
}

impl DoaEstimate {
    /// Peak score over mean score. Values near 1 indicate no dominant direction.
    pub fn peak_to_mean(&self) -> f64 {
        let mean = self.score_curve.iter().map(|p| p.1).sum::<f64>() / self.score_curve.len() as f64;
        if mean > 0.0 {
            self.score / mean
        } else {
            1.0
        }
    }

    pub fn is_flat(&self, threshold: f64) -> bool {
        self.peak_to_mean() < threshold
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("azimuth,score\n");
        for (az, s) in &self.score_curve {
            out.push_str(&format!("{az},{s}\n"));
        }
        out
    }
}

/// Frames below this fraction of a bin's peak frame power are left out of the covariance.
pub const SILENCE_FLOOR: f64 = 1e-6;

pub fn azimuth_grid(resolution: f64) -> Result<Vec<f64>> {
    let steps = 360.0 / resolution;
    if !(resolution > 0.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "resolution {resolution} does not divide 360"
        )));
    }
    Ok((0..steps.round() as usize).map(|k| k as f64 * resolution).collect())
}

/// Localizes the dominant source. Ties go to the smallest azimuth.
pub fn localize(spec: &MultichannelSpectrogram, geom: &ArrayGeometry, opts: &SslOptions) -> Result<DoaEstimate> {
    let (m, t, f) = spec.dim();
    if m < 2 {
        return Err(Error::ShapeMismatch("localization needs at least two channels".into()));
    }
    if m != geom.num_mics() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {m} channels, geometry has {} microphones",
            geom.num_mics()
        )));
    }
    let grid = azimuth_grid(opts.resolution)?;
    let cfg = spec.config();
    let bins: Vec<usize> = (0..f)
        .filter(|&k| match opts.band {
            Some((lo, hi)) => (lo..=hi).contains(&cfg.bin_frequency(k)),
            None => true,
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::InvalidConfig("frequency band contains no bins".into()));
    }

    // Per-frequency covariance of the (optionally phase-normalized) observations.
    let x = spec.data();
    let mut cov = Array3::<Complex64>::zeros((bins.len(), m, m));
    let mut y = vec![Complex64::new(0.0, 0.0); m];
    for (b, &k) in bins.iter().enumerate() {
        let power: Vec<f64> = (0..t).map(|ti| (0..m).map(|i| x[[i, ti, k]].norm_sqr()).sum()).collect();
        let floor = power.iter().fold(0.0f64, |a, &p| a.max(p)) * SILENCE_FLOOR;
        for ti in 0..t {
            // phase normalization would give round-off noise in silent frames full weight
            if power[ti] <= floor {
                continue;
            }
            for i in 0..m {
                let v = x[[i, ti, k]];
                y[i] = if opts.phase_transform {
                    let mag = v.norm();
                    if mag > 0.0 {
                        v / mag
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                } else {
                    v
                };
            }
            for i in 0..m {
                for j in 0..m {
                    cov[[b, i, j]] += y[i] * y[j].conj();
                }
            }
        }
    }
    let norm = (bins.len() * t * m * m) as f64;

    let mut curve = Vec::with_capacity(grid.len());
    for &az in &grid {
        let sf = steering_vector(geom, az, cfg)?;
        let mut score = 0.0;
        for (b, &k) in bins.iter().enumerate() {
            for i in 0..m {
                let ei = sf.vectors[[i, k]].conj();
                for j in 0..m {
                    score += (ei * cov[[b, i, j]] * sf.vectors[[j, k]]).re;
                }
            }
        }
        curve.push((az, score / norm));
    }
    let (azimuth, score) = curve
        .iter()
        .copied()
        .fold((grid[0], f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best });
    Ok(DoaEstimate {
        azimuth,
        score,
        score_curve: curve,
    })
}
