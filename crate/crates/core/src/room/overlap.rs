use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimSegment;
use crate::error::{Error, Result};
use crate::stft::MultichannelPcm;

/// Where the trimmed interference is placed inside the base segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPlacement {
    /// Interference ends together with the base segment.
    #[default]
    End,
    Random,
}

/// Adds a trimmed piece of another speaker's segment to `base`, covering
/// `ratio * len(base)` samples (at least one). The base transcript and target image
/// are kept; the achieved ratio is recorded in `overlap_ratio`.
pub fn mix_overlap(
    base: &SimSegment,
    interferer: &SimSegment,
    ratio: f64,
    placement: OverlapPlacement,
    seed: u64,
) -> Result<SimSegment> {
    if interferer.speaker_id == base.speaker_id {
        return Err(Error::SameSpeaker(base.speaker_id.clone()));
    }
    if interferer.session_id != base.session_id {
        return Err(Error::Session(format!(
            "interferer from session {} mixed into session {}",
            interferer.session_id, base.session_id
        )));
    }
    if interferer.audio.num_channels() != base.audio.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "base has {} channels, interferer {}",
            base.audio.num_channels(),
            interferer.audio.num_channels()
        )));
    }
    if interferer.audio.sample_rate() != base.audio.sample_rate() {
        return Err(Error::SampleRateMismatch {
            signal: interferer.audio.sample_rate(),
            config: base.audio.sample_rate(),
        });
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("overlap ratio {ratio} outside (0, 1]")));
    }
    let n = base.len();
    if n == 0 || interferer.is_empty() {
        return Err(Error::EmptyInput("segment audio"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = ((ratio * n as f64).round() as usize).clamp(1, n).min(interferer.len());
    let src_offset = rng.random_range(0..=interferer.len() - span);
    let dst_offset = match placement {
        OverlapPlacement::End => n - span,
        OverlapPlacement::Random => rng.random_range(0..=n - span),
    };

    let mut mixed = base.audio.samples().to_owned();
    let piece = interferer.audio.samples();
    let mut target = mixed.slice_mut(s![.., dst_offset..dst_offset + span]);
    target += &piece.slice(s![.., src_offset..src_offset + span]);

    Ok(SimSegment {
        audio: MultichannelPcm::new(mixed, base.audio.sample_rate())?,
        image: base.image.clone(),
        transcript: base.transcript.clone(),
        speaker_id: base.speaker_id.clone(),
        session_id: base.session_id.clone(),
        start: base.start,
        end: base.end,
        overlap_ratio: span as f64 / n as f64,
        doa_truth: base.doa_truth,
        snr_db: base.snr_db,
        interferer_id: Some(interferer.speaker_id.clone()),
    })
}
