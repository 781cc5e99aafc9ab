use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Session description on disk (JSON). Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session_id: String,
    #[serde(default)]
    pub speakers: Vec<ManifestSpeaker>,
    pub segments: Vec<ManifestSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSpeaker {
    pub id: String,
    /// Sidecar with 128 float32 values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSegment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub wav: PathBuf,
    pub speaker_id: String,
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub transcript: String,
    #[serde(default)]
    pub overlap_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doa_truth: Option<f64>,
    /// Reverberant target image alone, enabling oracle masks and SI-SNR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_wav: Option<PathBuf>,
    /// `TFM1` masks from an external estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<PathBuf>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// One segment with resolved paths and its overlap condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub id: String,
    pub speaker_id: String,
    pub start: f64,
    pub end: f64,
    pub overlapped: bool,
    pub transcript: String,
    pub overlap_ratio: f64,
    pub doa_truth: Option<f64>,
    pub wav: PathBuf,
    pub target_wav: Option<PathBuf>,
    pub mask_file: Option<PathBuf>,
}

impl SegmentMeta {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetadata {
    pub session_id: String,
    /// Ordered by start time, then id.
    pub segments: Vec<SegmentMeta>,
    /// Speaker id to optional embedding sidecar path.
    pub speakers: BTreeMap<String, Option<PathBuf>>,
}

impl SessionMetadata {
    /// Resolves paths against `base`, assigns ids `<session>-<index>` where absent,
    /// sorts by time and derives overlap flags.
    pub fn from_manifest(manifest: &Manifest, base: &Path, guard: f64) -> Result<Self> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut segments = Vec::with_capacity(manifest.segments.len());
        for (i, s) in manifest.segments.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite() && s.end >= s.start) {
                return Err(Error::Session(format!("segment {i} has invalid times {}..{}", s.start, s.end)));
            }
            if !(0.0..=1.0).contains(&s.overlap_ratio) {
                return Err(Error::Session(format!("segment {i} overlap ratio {} outside [0, 1]", s.overlap_ratio)));
            }
            segments.push(SegmentMeta {
                id: s.id.clone().unwrap_or_else(|| format!("{}-{i:04}", manifest.session_id)),
                speaker_id: s.speaker_id.clone(),
                start: s.start,
                end: s.end,
                overlapped: false,
                transcript: s.transcript.clone(),
                overlap_ratio: s.overlap_ratio,
                doa_truth: s.doa_truth,
                wav: resolve(&s.wav),
                target_wav: s.target_wav.as_deref().map(resolve),
                mask_file: s.mask_file.as_deref().map(resolve),
            });
        }
        let mut ids: Vec<&str> = segments.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Session(format!("duplicate segment id {}", w[0])));
        }
        segments.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.id.cmp(&b.id)));
        flag_overlaps(&mut segments, guard);

        let mut speakers: BTreeMap<String, Option<PathBuf>> = BTreeMap::new();
        for sp in &manifest.speakers {
            speakers.insert(sp.id.clone(), sp.embedding.as_deref().map(resolve));
        }
        for s in &segments {
            speakers.entry(s.speaker_id.clone()).or_insert(None);
        }
        Ok(Self {
            session_id: manifest.session_id.clone(),
            segments,
            speakers,
        })
    }

    pub fn load(manifest_path: impl AsRef<Path>, guard: f64) -> Result<Self> {
        let path = manifest_path.as_ref();
        let manifest = Manifest::load(path)?;
        Self::from_manifest(&manifest, path.parent().unwrap_or(Path::new(".")), guard)
    }

    pub fn segments_of<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a SegmentMeta> + 'a {
        self.segments.iter().filter(move |s| s.speaker_id == speaker)
    }
}

/// Marks a segment overlapped when another speaker's segment intersects it (after
/// widening both by `guard` seconds) or when mixed-in interference was recorded.
pub fn flag_overlaps(segments: &mut [SegmentMeta], guard: f64) {
    let spans: Vec<(String, f64, f64)> = segments
        .iter()
        .map(|s| (s.speaker_id.clone(), s.start - guard, s.end + guard))
        .collect();
    for (i, seg) in segments.iter_mut().enumerate() {
        let (ref spk, a0, a1) = spans[i];
        let crossed = spans
            .iter()
            .enumerate()
            .any(|(j, (other, b0, b1))| j != i && other != spk && a0 < *b1 && *b0 < a1);
        seg.overlapped = crossed || seg.overlap_ratio > 0.0;
    }
}
