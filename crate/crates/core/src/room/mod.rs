//! Meeting-room simulation: room sampling, image-method impulse responses, spherically
//! isotropic noise, session rendering and overlapped-segment generation.

mod noise;
mod overlap;
mod rir;
mod session;
mod source;

pub use noise::{diffuse_noise, NoiseSpectrum};
pub use overlap::{mix_overlap, OverlapPlacement};
pub use rir::{image_rir, image_rirs, reflection_coefficient, schroeder_t60, RirOptions, RoomAbsorption};
pub use session::{simulate_session, speaker_label, SessionOptions, SimSegment, SimSession, SourceSegment};
pub use source::synth_speech;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{distance, relative_delays, ArrayGeometry};
use crate::stft::MultichannelPcm;

/// Sampling ranges for rooms, in metres and seconds.
pub const ROOM_LENGTH: (f64, f64) = (4.0, 10.0);
pub const ROOM_WIDTH: (f64, f64) = (4.0, 10.0);
pub const ROOM_HEIGHT: (f64, f64) = (2.0, 5.0);
pub const RT60_RANGE: (f64, f64) = (0.15, 0.6);
pub const ARRAY_HEIGHT: (f64, f64) = (1.0, 1.5);
pub const MIN_SPEAKER_DISTANCE: f64 = 1.0;
const SPEAKER_HEIGHT: (f64, f64) = (1.2, 1.8);
const WALL_MARGIN: f64 = 0.5;
const PLACEMENT_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    /// Length, width, height.
    pub dims: [f64; 3],
    /// Reverberation time in seconds; 0 renders an anechoic room.
    pub rt60: f64,
    /// Horizontal array centre `(x, y)`.
    pub array_center: [f64; 2],
    pub array_height: f64,
    pub speaker_positions: Vec<[f64; 3]>,
    pub seed: u64,
}

impl RoomConfig {
    pub fn array_origin(&self) -> [f64; 3] {
        [self.array_center[0], self.array_center[1], self.array_height]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] > 0.0 && p[k] < self.dims[k])
    }

    /// Azimuth of each speaker as seen from the array centre, degrees in [0, 360).
    pub fn speaker_azimuths(&self) -> Vec<f64> {
        let o = self.array_origin();
        self.speaker_positions
            .iter()
            .map(|p| crate::spatial::wrap_degrees((p[1] - o[1]).atan2(p[0] - o[0]).to_degrees()))
            .collect()
    }

    /// Checks the placement invariants for a given array geometry.
    pub fn validate(&self, geom: &ArrayGeometry) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0)) || self.rt60 < 0.0 {
            return Err(Error::InvalidConfig("room dimensions and rt60 must be positive".into()));
        }
        for p in geom.placed_at(self.array_origin()) {
            if !self.contains(p) {
                return Err(Error::OutsideRoom(p));
            }
        }
        for &p in &self.speaker_positions {
            if !self.contains(p) {
                return Err(Error::OutsideRoom(p));
            }
            if distance(p, self.array_origin()) < MIN_SPEAKER_DISTANCE {
                return Err(Error::Infeasible(format!(
                    "speaker at {p:?} is closer than {MIN_SPEAKER_DISTANCE} m to the array"
                )));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

/// Draws a random room: dimensions, RT60, array position and speaker positions,
/// deterministically from `seed`.
pub fn sample_room(num_speakers: usize, seed: u64) -> Result<RoomConfig> {
    if num_speakers == 0 {
        return Err(Error::InvalidConfig("need at least one speaker".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [
        uniform(&mut rng, ROOM_LENGTH),
        uniform(&mut rng, ROOM_WIDTH),
        uniform(&mut rng, ROOM_HEIGHT),
    ];
    let rt60 = uniform(&mut rng, RT60_RANGE);
    let array_center = [
        uniform(&mut rng, (WALL_MARGIN, dims[0] - WALL_MARGIN)),
        uniform(&mut rng, (WALL_MARGIN, dims[1] - WALL_MARGIN)),
    ];
    let array_height = uniform(&mut rng, ARRAY_HEIGHT);
    let origin = [array_center[0], array_center[1], array_height];
    let mut speaker_positions = Vec::with_capacity(num_speakers);
    for s in 0..num_speakers {
        let placed = (0..PLACEMENT_RETRIES).find_map(|_| {
            let p = [
                uniform(&mut rng, (WALL_MARGIN, dims[0] - WALL_MARGIN)),
                uniform(&mut rng, (WALL_MARGIN, dims[1] - WALL_MARGIN)),
                uniform(&mut rng, SPEAKER_HEIGHT).min(dims[2] - 0.1),
            ];
            (distance(p, origin) >= MIN_SPEAKER_DISTANCE).then_some(p)
        });
        match placed {
            Some(p) => speaker_positions.push(p),
            None => {
                return Err(Error::Infeasible(format!(
                    "could not place speaker {s} after {PLACEMENT_RETRIES} attempts"
                )))
            }
        }
    }
    Ok(RoomConfig {
        dims,
        rt60,
        array_center,
        array_height,
        speaker_positions,
        seed,
    })
}

/// Linear convolution via a single zero-padded FFT. Output length `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|v| v.re / n as f64).collect()
}

/// Far-field free-field rendering of a mono signal arriving from azimuth `doa`:
/// each microphone gets the band-limited fractional delay relative to microphone 0.
pub fn plane_wave(signal: &[f64], geom: &ArrayGeometry, doa: f64, sample_rate: u32) -> Result<MultichannelPcm> {
    geom.validate()?;
    if signal.is_empty() {
        return Err(Error::EmptyInput("signal"));
    }
    let delays = relative_delays(geom, doa, 0.0);
    let max_shift = delays.iter().fold(0.0_f64, |a, d| a.max(d.abs())) * sample_rate as f64;
    let n = (signal.len() + 2 * (max_shift.ceil() as usize + 64)).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spectrum: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    spectrum.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut spectrum);
    let channels: Vec<Vec<f64>> = delays
        .iter()
        .map(|&tau| {
            let mut buf: Vec<Complex64> = spectrum
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    // signed bin index; Nyquist bin gets a real (cosine) phase factor
                    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                    let phase = -2.0 * std::f64::consts::PI * kk * tau * sample_rate as f64 / n as f64;
                    if k == n / 2 {
                        v * phase.cos()
                    } else {
                        v * Complex64::from_polar(1.0, phase)
                    }
                })
                .collect();
            inv.process(&mut buf);
            buf[..signal.len()].iter().map(|v| v.re / n as f64).collect()
        })
        .collect();
    MultichannelPcm::from_channels(&channels, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::DEFAULT_CIRCULAR_RADIUS;

    #[test]
    fn sampled_rooms_respect_invariants() {
        let geom = ArrayGeometry::circular_7(DEFAULT_CIRCULAR_RADIUS);
        for seed in 0..200 {
            let room = sample_room(4, seed).unwrap();
            room.validate(&geom).unwrap();
            assert!((4.0..=10.0).contains(&room.dims[0]));
            assert!((4.0..=10.0).contains(&room.dims[1]));
            assert!((2.0..=5.0).contains(&room.dims[2]));
            assert!((0.15..=0.6).contains(&room.rt60));
            assert!((1.0..=1.5).contains(&room.array_height));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_room(3, 42).unwrap(), sample_room(3, 42).unwrap());
        assert_ne!(sample_room(3, 42).unwrap(), sample_room(3, 43).unwrap());
        assert!(sample_room(0, 1).is_err());
    }

    #[test]
    fn many_speakers_in_small_room_never_violate() {
        let geom = ArrayGeometry::circular_7(DEFAULT_CIRCULAR_RADIUS);
        for seed in 0..50 {
            match sample_room(17, seed) {
                Ok(room) => {
                    assert_eq!(room.speaker_positions.len(), 17);
                    room.validate(&geom).unwrap();
                }
                Err(Error::Infeasible(_)) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        // Forced minimum-size room: placement is still checked against every constraint.
        let mut room = sample_room(17, 7).unwrap();
        room.dims = [4.0, 4.0, 2.0];
        room.array_center = [2.0, 2.0];
        room.speaker_positions = vec![[2.5, 2.0, 1.5]; 17];
        assert!(room.validate(&geom).is_err());
    }

    #[test]
    fn convolution_matches_direct() {
        let a = [1.0, 2.0, -1.0, 0.5];
        let b = [0.5, -0.25, 2.0];
        let got = fft_convolve(&a, &b);
        let mut want = vec![0.0; 6];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                want[i + j] += x * y;
            }
        }
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_reference_channel_is_input() {
        let geom = ArrayGeometry::circular_7(DEFAULT_CIRCULAR_RADIUS);
        let x: Vec<f64> = (0..1000).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let pcm = plane_wave(&x, &geom, 45.0, 16_000).unwrap();
        for (a, b) in pcm.channel(0).iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
