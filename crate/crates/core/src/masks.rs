//! Two-head (speech/noise) time-frequency masks: oracle ratio masks, channel
//! averaging and the `TFM1` file format used to exchange masks with external
//! estimators.
//!
//! `TFM1` layout (little-endian): magic `TFM1` | u32 M | u32 T | u32 F | u8 averaged |
//! speech head f32[M*T*F] row-major `(m, t, f)` | noise head f32[M*T*F].

use std::path::Path;

use ndarray::{Array3, Axis};

use crate::error::{Error, Result};
use crate::raster::Cursor;
use crate::stft::MultichannelSpectrogram;

pub const TFM1_MAGIC: &[u8; 4] = b"TFM1";
const FORMAT: &str = "TFM1";
const RANGE_TOLERANCE: f32 = 1e-6;
const IRM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoHeadMask {
    speech: Array3<f32>,
    noise: Array3<f32>,
    averaged: bool,
}

impl TwoHeadMask {
    pub fn new(speech: Array3<f32>, noise: Array3<f32>, averaged: bool) -> Result<Self> {
        if speech.dim() != noise.dim() {
            return Err(Error::ShapeMismatch(format!(
                "speech head {:?} vs noise head {:?}",
                speech.dim(),
                noise.dim()
            )));
        }
        if averaged && speech.dim().0 != 1 {
            return Err(Error::ShapeMismatch(
                "averaged mask must have one channel".into(),
            ));
        }
        for (index, &value) in speech.iter().chain(noise.iter()).enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::MaskRange { value, index });
            }
        }
        Ok(Self {
            speech,
            noise,
            averaged,
        })
    }

    pub fn speech(&self) -> &Array3<f32> {
        &self.speech
    }

    pub fn noise(&self) -> &Array3<f32> {
        &self.noise
    }

    pub fn is_averaged(&self) -> bool {
        self.averaged
    }

    /// `(M, T, F)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.speech.dim()
    }

    /// Serializes to `TFM1` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (m, t, f) = self.dim();
        let mut out = Vec::with_capacity(17 + 8 * m * t * f);
        out.extend_from_slice(TFM1_MAGIC);
        for d in [m, t, f] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(u8::from(self.averaged));
        for head in [&self.speech, &self.noise] {
            for v in head.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes, FORMAT);
        if cur.take(4, "magic")? != TFM1_MAGIC {
            return Err(format_error("bad magic"));
        }
        let m = cur.u32("header dimensions")? as usize;
        let t = cur.u32("header dimensions")? as usize;
        let f = cur.u32("header dimensions")? as usize;
        let averaged = match cur.take(1, "averaged flag")?[0] {
            0 => false,
            1 => true,
            other => return Err(format_error(&format!("averaged flag {other} is not 0/1"))),
        };
        let count = m
            .checked_mul(t)
            .and_then(|v| v.checked_mul(f))
            .filter(|&c| c.checked_mul(8).is_some())
            .ok_or_else(|| format_error("dimension overflow"))?;
        let speech = read_head(&mut cur, count, "speech head")?;
        let noise = read_head(&mut cur, count, "noise head")?;
        if !cur.is_empty() {
            return Err(format_error("trailing bytes after noise head"));
        }
        let shape = (m, t, f);
        let speech = Array3::from_shape_vec(shape, speech).map_err(|e| format_error(&e.to_string()))?;
        let noise = Array3::from_shape_vec(shape, noise).map_err(|e| format_error(&e.to_string()))?;
        Self::new(speech, noise, averaged)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn format_error(msg: &str) -> Error {
    Error::Format {
        format: FORMAT,
        message: msg.to_string(),
    }
}

/// Reads one head. Values within the tolerance of [0, 1] are snapped onto the
/// interval; anything further out is an error.
fn read_head(cur: &mut Cursor<'_>, count: usize, section: &'static str) -> Result<Vec<f32>> {
    let bytes = cur.take(count * 4, section)?;
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(index, c)| {
            let value = f32::from_le_bytes(c.try_into().unwrap());
            if !value.is_finite() || !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&value) {
                Err(Error::MaskRange { value, index })
            } else {
                Ok(value.clamp(0.0, 1.0))
            }
        })
        .collect()
}

/// Ideal ratio masks from separated components. With `exponent = 1` the speech head is
/// `|S| / (|S| + |N| + eps)`; the noise head is the complementary ratio.
pub fn oracle_irm(
    clean: &MultichannelSpectrogram,
    interference: &MultichannelSpectrogram,
    exponent: f64,
) -> Result<TwoHeadMask> {
    if clean.dim() != interference.dim() {
        return Err(Error::ShapeMismatch(format!(
            "clean {:?} vs interference {:?}",
            clean.dim(),
            interference.dim()
        )));
    }
    let s = clean.data();
    let n = interference.data();
    let mut speech = Array3::<f32>::zeros(clean.dim());
    let mut noise = Array3::<f32>::zeros(clean.dim());
    ndarray::Zip::from(&mut speech)
        .and(&mut noise)
        .and(s)
        .and(n)
        .for_each(|ms, mn, sv, nv| {
            let a = sv.norm().powf(exponent);
            let b = nv.norm().powf(exponent);
            let denom = a + b + IRM_EPS;
            *ms = (a / denom) as f32;
            *mn = (b / denom) as f32;
        });
    TwoHeadMask::new(speech, noise, false)
}

/// Arithmetic mean of each head over the channel axis.
pub fn average_masks(mask: &TwoHeadMask) -> Result<TwoHeadMask> {
    if mask.averaged {
        return Err(Error::AlreadyAveraged);
    }
    let mean = |head: &Array3<f32>| -> Array3<f32> {
        let m = head.dim().0 as f64;
        let sum = head.mapv(f64::from).sum_axis(Axis(0));
        sum.mapv(|v| ((v / m) as f32).clamp(0.0, 1.0)).insert_axis(Axis(0))
    };
    TwoHeadMask::new(mean(&mask.speech), mean(&mask.noise), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::{stft, MultichannelPcm, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(channels: usize, seed: u64, gain: f64) -> MultichannelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chans: Vec<Vec<f64>> = (0..channels)
            .map(|_| (0..3200).map(|_| gain * rng.random_range(-1.0..1.0)).collect())
            .collect();
        stft(
            &MultichannelPcm::from_channels(&chans, 16_000).unwrap(),
            &StftConfig::default(),
        )
        .unwrap()
    }

    fn random_mask(m: usize, t: usize, f: usize, seed: u64) -> TwoHeadMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let speech = Array3::from_shape_fn((m, t, f), |_| rng.random_range(0.0..=1.0f32));
        let noise = speech.mapv(|v| 1.0 - v);
        TwoHeadMask::new(speech, noise, false).unwrap()
    }

    #[test]
    fn no_interference_gives_full_speech() {
        let clean = random_spec(2, 1, 1.0);
        let zero = clean.scaled(0.0);
        let mask = oracle_irm(&clean, &zero, 1.0).unwrap();
        for (&s, (&n, c)) in mask
            .speech()
            .iter()
            .zip(mask.noise().iter().zip(clean.data().iter()))
        {
            if c.norm() > 1e-6 {
                assert!((s - 1.0).abs() < 1e-6);
            }
            assert_eq!(n, 0.0);
        }
    }

    #[test]
    fn equal_magnitudes_give_half() {
        let clean = random_spec(1, 2, 1.0);
        let mask = oracle_irm(&clean, &clean.scaled(-1.0), 1.0).unwrap();
        for ((&s, &n), c) in mask.speech().iter().zip(mask.noise().iter()).zip(clean.data().iter()) {
            if c.norm() > 1e-6 {
                assert!((s - 0.5).abs() < 1e-6 && (n - 0.5).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn heads_sum_to_one() {
        let mask = oracle_irm(&random_spec(3, 3, 1.0), &random_spec(3, 4, 0.3), 1.0).unwrap();
        for (&s, &n) in mask.speech().iter().zip(mask.noise().iter()) {
            let total = s + n;
            assert!((1.0 - 1e-6..=1.0 + 1e-6).contains(&total), "{total}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(oracle_irm(&random_spec(2, 1, 1.0), &random_spec(3, 1, 1.0), 1.0).is_err());
    }

    #[test]
    fn averaging_matches_loop() {
        let mask = random_mask(7, 6, 9, 10);
        let avg = average_masks(&mask).unwrap();
        assert!(avg.is_averaged());
        assert_eq!(avg.dim(), (1, 6, 9));
        for t in 0..6 {
            for f in 0..9 {
                let mut acc = 0.0f64;
                for m in 0..7 {
                    acc += f64::from(mask.speech()[[m, t, f]]);
                }
                assert_eq!(avg.speech()[[0, t, f]], (acc / 7.0) as f32);
            }
        }
        assert!(matches!(average_masks(&avg), Err(Error::AlreadyAveraged)));
    }

    #[test]
    fn averaging_simple_cases() {
        let mut speech = Array3::<f32>::zeros((2, 1, 1));
        speech[[1, 0, 0]] = 1.0;
        let mask = TwoHeadMask::new(speech.clone(), speech, false).unwrap();
        assert_eq!(average_masks(&mask).unwrap().speech()[[0, 0, 0]], 0.5);
        let same = Array3::from_elem((4, 2, 3), 0.3f32);
        let mask = TwoHeadMask::new(same.clone(), same, false).unwrap();
        assert!(average_masks(&mask)
            .unwrap()
            .speech()
            .iter()
            .all(|&v| (v - 0.3).abs() < 1e-7));
    }

    #[test]
    fn tfm1_round_trip_is_bit_identical() {
        let mask = random_mask(3, 5, 7, 11);
        let bytes = mask.to_bytes();
        let back = TwoHeadMask::from_bytes(&bytes).unwrap();
        assert_eq!(back, mask);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tfm1_truncation_names_section() {
        let bytes = random_mask(2, 2, 2, 12).to_bytes();
        let cases = [(3, "magic"), (10, "header dimensions"), (16, "averaged flag"), (20, "speech head"), (bytes.len() - 1, "noise head")];
        for (len, section) in cases {
            match TwoHeadMask::from_bytes(&bytes[..len]) {
                Err(Error::Truncated { section: got, .. }) => assert_eq!(got, section),
                other => panic!("len {len}: {other:?}"),
            }
        }
    }

    #[test]
    fn tfm1_rejects_bad_input() {
        let mut bytes = random_mask(1, 1, 2, 13).to_bytes();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"TFM2");
        assert!(matches!(TwoHeadMask::from_bytes(&bad), Err(Error::Format { .. })));

        let mut huge = bytes.clone();
        huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(TwoHeadMask::from_bytes(&huge).is_err());

        bytes[17..21].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(TwoHeadMask::from_bytes(&bytes), Err(Error::MaskRange { .. })));
    }

    #[test]
    fn tfm1_independent_writer() {
        // Hand-assembled file following the documented layout.
        let (m, t, f) = (2u32, 1u32, 3u32);
        let speech = [0.0f32, 0.25, 0.5, 0.75, 1.0, 0.125];
        let noise = [1.0f32, 0.75, 0.5, 0.25, 0.0, 0.875];
        let mut bytes = b"TFM1".to_vec();
        for d in [m, t, f] {
            bytes.extend(d.to_le_bytes());
        }
        bytes.push(0);
        for v in speech.iter().chain(noise.iter()) {
            bytes.extend(v.to_le_bytes());
        }
        let mask = TwoHeadMask::from_bytes(&bytes).unwrap();
        assert_eq!(mask.dim(), (2, 1, 3));
        assert_eq!(mask.speech()[[1, 0, 0]], 0.75);
        assert_eq!(mask.noise()[[1, 0, 2]], 0.875);
        assert!(!mask.is_averaged());
    }
}
