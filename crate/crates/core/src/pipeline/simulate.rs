use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Manifest, ManifestSegment, ManifestSpeaker, SessionMetadata};
use crate::error::{Error, Result};
use crate::room::{
    mix_overlap, sample_room, simulate_session, speaker_label, synth_speech, OverlapPlacement, SessionOptions,
    SimSegment, SimSession, SourceSegment,
};
use crate::spatial::ArrayGeometry;
use crate::wav::{read_wav, write_wav, WavEncoding};

const WORDS: &[&str] = &[
    "meeting", "agenda", "budget", "schedule", "review", "design", "release", "question", "answer", "update",
    "team", "project", "report", "plan", "issue", "deadline", "customer", "feature", "test", "result",
];

/// Shape of a simulated conversation: speakers take turns without overlapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConversationPlan {
    pub num_speakers: usize,
    pub segments_per_speaker: usize,
    /// Segment duration range, seconds.
    pub segment_seconds: (f64, f64),
    /// Silence between consecutive turns, seconds.
    pub gap_seconds: (f64, f64),
    /// Overrides the sampled reverberation time.
    pub rt60: Option<f64>,
}

impl Default for ConversationPlan {
    fn default() -> Self {
        Self {
            num_speakers: 3,
            segments_per_speaker: 2,
            segment_seconds: (1.0, 2.0),
            gap_seconds: (0.1, 0.4),
            rt60: None,
        }
    }
}

/// Samples a room and renders a turn-taking conversation in it.
pub fn simulate_conversation(plan: &ConversationPlan, geom: &ArrayGeometry, opts: &SessionOptions) -> Result<SimSession> {
    let (lo, hi) = plan.segment_seconds;
    if !(lo > 0.0 && hi >= lo) || plan.gap_seconds.0 < 0.0 || plan.gap_seconds.1 < plan.gap_seconds.0 {
        return Err(Error::InvalidConfig("invalid segment or gap durations".into()));
    }
    let mut room = sample_room(plan.num_speakers, opts.seed)?;
    if let Some(rt) = plan.rt60 {
        room.rt60 = rt;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED_CAFE);
    let sr = opts.sample_rate as f64;
    // speakers take turns in index order
    let order = (0..plan.segments_per_speaker).flat_map(|_| 0..plan.num_speakers);
    let mut t = 0.0;
    let mut sources = Vec::new();
    for (i, speaker) in order.enumerate() {
        let dur = rng.random_range(lo..=hi);
        let len = (dur * sr).round() as usize;
        let words = rng.random_range(3..8);
        let transcript = (0..words).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
        sources.push(SourceSegment {
            speaker,
            audio: synth_speech(len, opts.sample_rate, opts.seed.wrapping_mul(1000).wrapping_add(i as u64)),
            transcript,
            start: t,
        });
        t += len as f64 / sr + rng.random_range(plan.gap_seconds.0..=plan.gap_seconds.1);
    }
    simulate_session(&room, &sources, geom, opts)
}

/// Writes mixtures, target images, `room.json` and `manifest.json` into `dir`.
pub fn write_simulated_session(session: &SimSession, session_id: &str, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut segments = Vec::with_capacity(session.segments.len());
    for (i, seg) in session.segments.iter().enumerate() {
        let id = format!("{session_id}-{i:04}");
        let wav = PathBuf::from(format!("{id}.wav"));
        write_wav(dir.join(&wav), &seg.audio, WavEncoding::Float32)?;
        let target_wav = match &seg.image {
            Some(img) => {
                let p = PathBuf::from(format!("{id}.target.wav"));
                write_wav(dir.join(&p), img, WavEncoding::Float32)?;
                Some(p)
            }
            None => None,
        };
        segments.push(ManifestSegment {
            id: Some(id),
            wav,
            speaker_id: seg.speaker_id.clone(),
            start: seg.start,
            end: seg.end,
            transcript: seg.transcript.clone(),
            overlap_ratio: seg.overlap_ratio,
            doa_truth: seg.doa_truth,
            target_wav,
            mask_file: None,
        });
    }
    let speakers = (0..session.room.speaker_positions.len())
        .map(|i| ManifestSpeaker {
            id: speaker_label(i),
            embedding: None,
        })
        .collect();
    let manifest = Manifest {
        session_id: session_id.to_string(),
        speakers,
        segments,
    };
    std::fs::write(dir.join("room.json"), serde_json::to_string_pretty(&session.room)? + "\n")?;
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// For every segment, mixes in a piece of a different speaker's segment with an overlap
/// ratio drawn uniformly from `ratio_range`, writing the new mixtures and manifest into
/// `out_dir`. Segments without a possible interferer are copied unchanged.
pub fn mix_manifest_overlaps(
    manifest_path: &Path,
    out_dir: &Path,
    ratio_range: (f64, f64),
    placement: OverlapPlacement,
    seed: u64,
) -> Result<Manifest> {
    if !(ratio_range.0 > 0.0 && ratio_range.1 <= 1.0 && ratio_range.0 <= ratio_range.1) {
        return Err(Error::InvalidConfig(format!("overlap ratio range {ratio_range:?} outside (0, 1]")));
    }
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let meta = SessionMetadata::from_manifest(&manifest, base, 0.0)?;
    std::fs::create_dir_all(out_dir)?;
    let load = |m: &super::SegmentMeta| -> Result<SimSegment> {
        Ok(SimSegment {
            audio: read_wav(&m.wav)?,
            image: m.target_wav.as_ref().map(read_wav).transpose()?,
            transcript: m.transcript.clone(),
            speaker_id: m.speaker_id.clone(),
            session_id: meta.session_id.clone(),
            start: m.start,
            end: m.end,
            overlap_ratio: m.overlap_ratio,
            doa_truth: m.doa_truth,
            snr_db: None,
            interferer_id: None,
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::with_capacity(meta.segments.len());
    for seg in &meta.segments {
        let base_seg = load(seg)?;
        let others: Vec<&super::SegmentMeta> = meta.segments.iter().filter(|s| s.speaker_id != seg.speaker_id).collect();
        let mixed = match others.choose(&mut rng) {
            Some(other) => {
                let ratio = rng.random_range(ratio_range.0..=ratio_range.1);
                mix_overlap(&base_seg, &load(other)?, ratio, placement, rng.random())?
            }
            None => base_seg,
        };
        let wav = PathBuf::from(format!("{}.wav", seg.id));
        write_wav(out_dir.join(&wav), &mixed.audio, WavEncoding::Float32)?;
        let target_wav = match &mixed.image {
            Some(img) => {
                let p = PathBuf::from(format!("{}.target.wav", seg.id));
                write_wav(out_dir.join(&p), img, WavEncoding::Float32)?;
                Some(p)
            }
            None => None,
        };
        segments.push(ManifestSegment {
            id: Some(seg.id.clone()),
            wav,
            speaker_id: seg.speaker_id.clone(),
            start: seg.start,
            end: seg.end,
            transcript: mixed.transcript,
            overlap_ratio: mixed.overlap_ratio,
            doa_truth: seg.doa_truth,
            target_wav,
            mask_file: None,
        });
    }
    let out = Manifest {
        session_id: manifest.session_id.clone(),
        speakers: manifest.speakers.clone(),
        segments,
    };
    out.save(out_dir.join("manifest.json"))?;
    Ok(out)
}
