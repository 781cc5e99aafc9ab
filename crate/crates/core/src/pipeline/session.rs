use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Frontend, MaskInput, MaskMode, PipelineConfig, SegmentDiagnostics, SegmentMeta, SessionMetadata};
use crate::error::{Error, Result};
use crate::features::{gmvn, write_features, GmvnAccumulator, GmvnStats};
use crate::masks::TwoHeadMask;
use crate::spatial::{angular_distance, SpeakerEmbedding};
use crate::ssl::{localize, DoaEstimate};
use crate::stft::{stft, MultichannelPcm};
use crate::wav::{read_wav, write_wav, WavEncoding};

/// Source of segment audio.
pub trait AudioStore: Sync {
    fn mixture(&self, segment: &SegmentMeta) -> Result<MultichannelPcm>;
    fn target(&self, segment: &SegmentMeta) -> Result<Option<MultichannelPcm>>;
}

/// Reads the WAV files named in the segment metadata.
#[derive(Debug, Clone, Copy, Default)]
pub struct FileStore;

impl AudioStore for FileStore {
    fn mixture(&self, segment: &SegmentMeta) -> Result<MultichannelPcm> {
        read_wav(&segment.wav)
    }

    fn target(&self, segment: &SegmentMeta) -> Result<Option<MultichannelPcm>> {
        segment.target_wav.as_ref().map(read_wav).transpose()
    }
}

/// In-memory audio keyed by segment id.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    pub mixtures: HashMap<String, MultichannelPcm>,
    pub targets: HashMap<String, MultichannelPcm>,
}

impl AudioStore for MemoryStore {
    fn mixture(&self, segment: &SegmentMeta) -> Result<MultichannelPcm> {
        self.mixtures
            .get(&segment.id)
            .cloned()
            .ok_or_else(|| Error::Session(format!("no audio for segment {}", segment.id)))
    }

    fn target(&self, segment: &SegmentMeta) -> Result<Option<MultichannelPcm>> {
        Ok(self.targets.get(&segment.id).cloned())
    }
}

/// Per-speaker location and identity bias for a session.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasInfo {
    pub doa: DoaEstimate,
    pub embedding: Option<SpeakerEmbedding>,
    /// Segment the DOA was estimated from.
    pub segment_id: String,
    /// The speaker had no non-overlapped segment and an overlapped one was used.
    pub fallback: bool,
}

/// Localizes every speaker on their longest non-overlapped segment (earliest start on
/// ties), moving down that order when a segment cannot be read, and loads embedding
/// sidecars. Returns the biases and any warnings; speakers
/// whose bias cannot be estimated are left out.
pub fn estimate_session_bias(
    session: &SessionMetadata,
    store: &dyn AudioStore,
    frontend: &Frontend,
) -> (BTreeMap<String, BiasInfo>, Vec<String>) {
    let speakers: Vec<(&String, &Option<PathBuf>)> = session.speakers.iter().collect();
    let results: Vec<(String, std::result::Result<BiasInfo, String>, Vec<String>)> = speakers
        .par_iter()
        .map(|(speaker, embedding_path)| {
            let mut warnings = Vec::new();
            let outcome = speaker_bias(session, store, frontend, speaker, embedding_path.as_deref(), &mut warnings);
            ((*speaker).clone(), outcome.map_err(|e| e.to_string()), warnings)
        })
        .collect();
    let mut biases = BTreeMap::new();
    let mut warnings = Vec::new();
    for (speaker, outcome, w) in results {
        warnings.extend(w);
        match outcome {
            Ok(b) => {
                biases.insert(speaker, b);
            }
            Err(e) => warnings.push(format!("no bias for speaker {speaker}: {e}")),
        }
    }
    (biases, warnings)
}

fn speaker_bias(
    session: &SessionMetadata,
    store: &dyn AudioStore,
    frontend: &Frontend,
    speaker: &str,
    embedding_path: Option<&Path>,
    warnings: &mut Vec<String>,
) -> Result<BiasInfo> {
    // preference: non-overlapped first, then longest, earliest, smallest id
    let mut candidates: Vec<&SegmentMeta> = session.segments_of(speaker).collect();
    if candidates.is_empty() {
        return Err(Error::Session(format!("speaker {speaker} has no segments")));
    }
    candidates.sort_by(|a, b| {
        a.overlapped
            .cmp(&b.overlapped)
            .then(b.duration().total_cmp(&a.duration()))
            .then(a.start.total_cmp(&b.start))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut last_error = None;
    let mut found = None;
    for segment in candidates {
        let estimate = store
            .mixture(segment)
            .and_then(|audio| stft(&audio, &frontend.config.stft))
            .and_then(|spec| localize(&spec, &frontend.config.geometry, &frontend.config.ssl));
        match estimate {
            Ok(doa) => {
                found = Some((segment, doa));
                break;
            }
            Err(e) => {
                warnings.push(format!("speaker {speaker}: segment {} unusable for bias ({e})", segment.id));
                last_error = Some(e);
            }
        }
    }
    let Some((segment, doa)) = found else {
        return Err(last_error.unwrap_or_else(|| Error::Session(format!("speaker {speaker} has no usable segment"))));
    };
    let fallback = segment.overlapped;
    if fallback {
        warnings.push(format!(
            "speaker {speaker} has no usable non-overlapped segment; bias taken from overlapped segment {}",
            segment.id
        ));
    }
    let embedding = match embedding_path {
        Some(p) => match SpeakerEmbedding::load(p) {
            Ok(e) => Some(e),
            Err(e) => {
                warnings.push(format!("speaker {speaker}: embedding unavailable ({e})"));
                None
            }
        },
        None => None,
    };
    Ok(BiasInfo {
        doa,
        embedding,
        segment_id: segment.id.clone(),
        fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub doa: f64,
    pub peak_to_mean: f64,
    pub segment_id: String,
    pub fallback: bool,
    pub embedding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFiles {
    pub wav: String,
    pub mask: String,
    pub features: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub id: String,
    pub speaker_id: String,
    pub start: f64,
    pub end: f64,
    pub overlapped: bool,
    pub overlap_ratio: f64,
    pub transcript: String,
    pub ok: bool,
    pub error: Option<String>,
    /// Angular distance between the speaker's bias DOA and the segment's true DOA.
    pub doa_error: Option<f64>,
    pub diagnostics: Option<SegmentDiagnostics>,
    pub outputs: Option<OutputFiles>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub segments: usize,
    pub failed: usize,
    /// Segments with a target reference.
    pub scored: usize,
    pub mean_si_snr_in: Option<f64>,
    pub mean_si_snr_out: Option<f64>,
    pub mean_si_snr_gain: Option<f64>,
}

impl ConditionSummary {
    fn from_segments<'a>(segments: impl Iterator<Item = &'a SegmentReport>) -> Self {
        let mut out = Self::default();
        let (mut sin, mut sout) = (0.0, 0.0);
        for s in segments {
            out.segments += 1;
            if !s.ok {
                out.failed += 1;
            }
            if let Some(d) = &s.diagnostics {
                if let (Some(i), Some(o)) = (d.si_snr_in, d.si_snr_out) {
                    out.scored += 1;
                    sin += i;
                    sout += o;
                }
            }
        }
        if out.scored > 0 {
            let n = out.scored as f64;
            out.mean_si_snr_in = Some(sin / n);
            out.mean_si_snr_out = Some(sout / n);
            out.mean_si_snr_gain = Some((sout - sin) / n);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub non_overlap: ConditionSummary,
    pub overlap: ConditionSummary,
    pub overall: ConditionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub bias: BTreeMap<String, BiasSummary>,
    pub segments: Vec<SegmentReport>,
    pub summary: SessionSummary,
    pub gmvn_source: Option<String>,
    pub warnings: Vec<String>,
}

impl SessionReport {
    pub fn failed(&self) -> usize {
        self.summary.overall.failed
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// File-system safe version of a segment id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Runs bias estimation and enhancement for every segment of a session and writes
/// `enhanced/*.wav`, `masks/*.tfm1`, `features/*.rst`, `gmvn.gmv1` and `report.json`
/// under `out_dir`. Segment failures are recorded in the report; the returned error is
/// reserved for problems that stop the whole run.
pub fn run_session(manifest: &Path, config: &PipelineConfig, out_dir: &Path) -> Result<SessionReport> {
    let session = SessionMetadata::load(manifest, config.overlap_guard)?;
    run_session_with(&session, &FileStore, config, out_dir)
}

pub fn run_session_with(
    session: &SessionMetadata,
    store: &dyn AudioStore,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<SessionReport> {
    let frontend = Frontend::new(config.clone())?;
    let corpus_stats = config.gmvn_stats.as_ref().map(GmvnStats::load).transpose()?;
    if let Some(s) = &corpus_stats {
        if s.dim() != frontend.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "GMVN stats have {} dims, features {}",
                s.dim(),
                frontend.feature_dim()
            )));
        }
    }
    for sub in ["enhanced", "masks", "features"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }

    let (biases, mut warnings) = estimate_session_bias(session, store, &frontend);
    let processed: Vec<Result<super::SegmentOutput>> = session
        .segments
        .par_iter()
        .map(|seg| process_one(seg, session, store, &frontend, &biases))
        .collect();

    let stats = match corpus_stats {
        Some(s) => Some(s),
        None => {
            let mut acc = GmvnAccumulator::new(frontend.feature_dim());
            for out in processed.iter().flatten() {
                acc.push(out.raw_features.view())?;
            }
            (acc.count() > 0).then(|| acc.finish(format!("session {}", session.session_id))).transpose()?
        }
    };
    if let Some(s) = &stats {
        s.save(out_dir.join("gmvn.gmv1"))?;
    }

    let mut segments = Vec::with_capacity(session.segments.len());
    for (seg, result) in session.segments.iter().zip(processed) {
        let bias_doa = biases.get(&seg.speaker_id).map(|b| b.doa.azimuth);
        let doa_error = match (bias_doa, seg.doa_truth) {
            (Some(a), Some(b)) => Some(angular_distance(a, b)),
            _ => None,
        };
        let written = result.and_then(|out| {
            let stem = file_stem(&seg.id);
            let files = OutputFiles {
                wav: format!("enhanced/{stem}.wav"),
                mask: format!("masks/{stem}.tfm1"),
                features: format!("features/{stem}.rst"),
            };
            let feats = match &stats {
                Some(s) => gmvn(out.raw_features.view(), s)?,
                None => out.raw_features.clone(),
            };
            write_wav(out_dir.join(&files.wav), &out.enhanced, WavEncoding::Float32)?;
            out.masks.save(out_dir.join(&files.mask))?;
            write_features(out_dir.join(&files.features), feats.view())?;
            Ok((out.diagnostics, files))
        });
        let (ok, error, diagnostics, outputs) = match written {
            Ok((d, f)) => (true, None, Some(d), Some(f)),
            Err(e) => {
                log::warn!("segment {} failed: {e}", seg.id);
                warnings.push(format!("segment {} failed", seg.id));
                (false, Some(e.to_string()), None, None)
            }
        };
        segments.push(SegmentReport {
            id: seg.id.clone(),
            speaker_id: seg.speaker_id.clone(),
            start: seg.start,
            end: seg.end,
            overlapped: seg.overlapped,
            overlap_ratio: seg.overlap_ratio,
            transcript: seg.transcript.clone(),
            ok,
            error,
            doa_error,
            diagnostics,
            outputs,
        });
    }

    let summary = SessionSummary {
        non_overlap: ConditionSummary::from_segments(segments.iter().filter(|s| !s.overlapped)),
        overlap: ConditionSummary::from_segments(segments.iter().filter(|s| s.overlapped)),
        overall: ConditionSummary::from_segments(segments.iter()),
    };
    let bias = biases
        .iter()
        .map(|(k, b)| {
            (
                k.clone(),
                BiasSummary {
                    doa: b.doa.azimuth,
                    peak_to_mean: b.doa.peak_to_mean(),
                    segment_id: b.segment_id.clone(),
                    fallback: b.fallback,
                    embedding: b.embedding.as_ref().map(|e| e.source_id.clone()),
                },
            )
        })
        .collect();
    let report = SessionReport {
        session_id: session.session_id.clone(),
        bias,
        segments,
        summary,
        gmvn_source: stats.map(|s| s.source_tag),
        warnings,
    };
    std::fs::write(out_dir.join("report.json"), report.to_json()?)?;
    Ok(report)
}

fn process_one(
    seg: &SegmentMeta,
    session: &SessionMetadata,
    store: &dyn AudioStore,
    frontend: &Frontend,
    biases: &BTreeMap<String, BiasInfo>,
) -> Result<super::SegmentOutput> {
    let bias = biases
        .get(&seg.speaker_id)
        .ok_or_else(|| Error::Session(format!("no bias for speaker {}", seg.speaker_id)))?;
    let competitors: Vec<f64> = biases
        .iter()
        .filter(|(k, _)| **k != seg.speaker_id && session.speakers.contains_key(*k))
        .map(|(_, b)| b.doa.azimuth)
        .collect();
    let audio = store.mixture(seg)?;
    let target = store.target(seg)?;
    let mode = match frontend.config.mask_mode {
        MaskMode::Auto if seg.mask_file.is_some() => MaskMode::File,
        MaskMode::Auto if target.is_some() => MaskMode::Oracle,
        MaskMode::Auto => MaskMode::Spatial,
        m => m,
    };
    let masks = match mode {
        MaskMode::File => {
            let path = seg
                .mask_file
                .as_ref()
                .ok_or_else(|| Error::Session(format!("segment {} names no mask file", seg.id)))?;
            MaskInput::Given(TwoHeadMask::load(path)?)
        }
        MaskMode::Oracle => MaskInput::Oracle(
            target
                .as_ref()
                .ok_or_else(|| Error::Session(format!("segment {} has no target image for oracle masks", seg.id)))?,
        ),
        _ => MaskInput::Spatial,
    };
    frontend.process_segment(&audio, bias.doa.azimuth, &competitors, masks, target.as_ref(), None)
}
