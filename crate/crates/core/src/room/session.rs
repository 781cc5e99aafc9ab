use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{diffuse_noise, fft_convolve, image_rirs, NoiseSpectrum, RirOptions, RoomConfig};
use crate::error::{Error, Result};
use crate::spatial::ArrayGeometry;
use crate::stft::MultichannelPcm;

/// One close-talk utterance to be rendered into the room.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSegment {
    /// Index into `RoomConfig::speaker_positions`.
    pub speaker: usize,
    pub audio: Vec<f64>,
    pub transcript: String,
    /// Start time on the session timeline, seconds.
    pub start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionOptions {
    pub session_id: String,
    pub sample_rate: u32,
    pub add_noise: bool,
    pub snr_range_db: (f64, f64),
    /// Overrides the sampled SNR for every segment.
    pub fixed_snr_db: Option<f64>,
    pub noise_spectrum: NoiseSpectrum,
    /// Session peak level after normalization; `None` leaves levels untouched.
    pub peak_dbfs: Option<f64>,
    pub rir: RirOptions,
    pub seed: u64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            session_id: "session".into(),
            sample_rate: 16_000,
            add_noise: true,
            snr_range_db: (-5.0, 10.0),
            fixed_snr_db: None,
            noise_spectrum: NoiseSpectrum::Pink,
            peak_dbfs: Some(-3.0),
            rir: RirOptions::default(),
            seed: 0,
        }
    }
}

/// A rendered multichannel segment with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSegment {
    pub audio: MultichannelPcm,
    /// Reverberant target image alone, on the same scale as `audio`, when known.
    pub image: Option<MultichannelPcm>,
    pub transcript: String,
    pub speaker_id: String,
    pub session_id: String,
    pub start: f64,
    pub end: f64,
    pub overlap_ratio: f64,
    pub doa_truth: Option<f64>,
    pub snr_db: Option<f64>,
    pub interferer_id: Option<String>,
}

impl SimSegment {
    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }

    /// `audio - image`, i.e. everything that is not the target.
    pub fn interference(&self) -> Option<MultichannelPcm> {
        let image = self.image.as_ref()?;
        let diff = &self.audio.samples() - &image.samples();
        MultichannelPcm::new(diff, self.audio.sample_rate()).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSession {
    pub room: RoomConfig,
    pub segments: Vec<SimSegment>,
    /// `(source index, reason)` for segments that could not be rendered.
    pub skipped: Vec<(usize, String)>,
    pub normalization_gain: f64,
}

pub fn speaker_label(index: usize) -> String {
    format!("spk{index}")
}

/// Deterministic per-segment seed derived from the session seed.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders every source segment through its speaker's impulse responses, adds diffuse
/// noise at a per-segment SNR and normalizes the session to a common peak level.
/// Segments are independent jobs seeded from `(seed, index)`, so parallel rendering
/// is identical to serial rendering.
pub fn simulate_session(
    room: &RoomConfig,
    sources: &[SourceSegment],
    geom: &ArrayGeometry,
    opts: &SessionOptions,
) -> Result<SimSession> {
    room.validate(geom)?;
    if let Some(s) = sources.iter().find(|s| s.speaker >= room.speaker_positions.len()) {
        return Err(Error::Session(format!(
            "segment refers to speaker {} but the room has {}",
            s.speaker,
            room.speaker_positions.len()
        )));
    }
    let rir_opts = RirOptions {
        sample_rate: opts.sample_rate,
        speed_of_sound: geom.speed_of_sound,
        ..opts.rir
    };
    let mics = geom.placed_at(room.array_origin());
    let rirs: Vec<Vec<Vec<f64>>> = room
        .speaker_positions
        .par_iter()
        .map(|&p| image_rirs(room, p, &mics, &rir_opts))
        .collect::<Result<_>>()?;
    let azimuths = room.speaker_azimuths();

    let rendered: Vec<std::result::Result<SimSegment, String>> = sources
        .par_iter()
        .enumerate()
        .map(|(idx, src)| render(idx, src, &rirs[src.speaker], azimuths[src.speaker], geom, opts))
        .collect();

    let mut segments = Vec::new();
    let mut skipped = Vec::new();
    for (idx, r) in rendered.into_iter().enumerate() {
        match r {
            Ok(seg) => segments.push(seg),
            Err(reason) => {
                log::warn!("skipping segment {idx}: {reason}");
                skipped.push((idx, reason));
            }
        }
    }

    let peak = segments.iter().map(|s| s.audio.peak()).fold(0.0, f64::max);
    let gain = match opts.peak_dbfs {
        Some(db) if peak > 0.0 => 10f64.powf(db / 20.0) / peak,
        _ => 1.0,
    };
    for seg in &mut segments {
        seg.audio.scale(gain);
        if let Some(img) = seg.image.as_mut() {
            img.scale(gain);
        }
    }
    Ok(SimSession {
        room: room.clone(),
        segments,
        skipped,
        normalization_gain: gain,
    })
}

fn render(
    idx: usize,
    src: &SourceSegment,
    rirs: &[Vec<f64>],
    doa: f64,
    geom: &ArrayGeometry,
    opts: &SessionOptions,
) -> std::result::Result<SimSegment, String> {
    let len = src.audio.len();
    if len == 0 {
        return Err("empty source audio".into());
    }
    if src.audio.iter().any(|v| !v.is_finite()) {
        return Err("non-finite source audio".into());
    }
    let m = rirs.len();
    let mut image = Array2::<f64>::zeros((m, len));
    for (ch, rir) in rirs.iter().enumerate() {
        let wet = fft_convolve(&src.audio, rir);
        image.row_mut(ch).assign(&ndarray::ArrayView1::from(&wet[..len]));
    }
    let image = MultichannelPcm::new(image, opts.sample_rate).map_err(|e| e.to_string())?;
    let speech_power = image.power();
    if !(speech_power > 0.0) {
        return Err("silent source segment, SNR undefined".into());
    }

    let seed = derive_seed(opts.seed, idx as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snr_db = opts
        .fixed_snr_db
        .unwrap_or_else(|| rng.random_range(opts.snr_range_db.0..=opts.snr_range_db.1));
    let mut audio = image.clone();
    let mut applied_snr = None;
    if opts.add_noise {
        let mut noise = diffuse_noise(geom, len, opts.sample_rate, opts.noise_spectrum, rng.random())
            .map_err(|e| e.to_string())?;
        let noise_power = noise.power();
        noise.scale((speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt());
        audio = MultichannelPcm::new(&audio.samples() + &noise.samples(), opts.sample_rate)
            .map_err(|e| e.to_string())?;
        applied_snr = Some(snr_db);
    }
    let sr = opts.sample_rate as f64;
    Ok(SimSegment {
        audio,
        image: Some(image),
        transcript: src.transcript.clone(),
        speaker_id: speaker_label(src.speaker),
        session_id: opts.session_id.clone(),
        start: src.start,
        end: src.start + len as f64 / sr,
        overlap_ratio: 0.0,
        doa_truth: Some(doa),
        snr_db: applied_snr,
        interferer_id: None,
    })
}
