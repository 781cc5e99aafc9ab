//! Segment- and session-level orchestration: location bias, pre-masking, mask-based
//! MVDR enhancement, ASR features and SI-SNR diagnostics.

mod manifest;
mod session;
mod simulate;

pub use manifest::{
    flag_overlaps, Manifest, ManifestSegment, ManifestSpeaker, SegmentMeta, SessionMetadata,
};
pub use session::{
    estimate_session_bias, run_session, run_session_with, AudioStore, BiasInfo, ConditionSummary, FileStore, MemoryStore,
    BiasSummary, OutputFiles, SegmentReport, SessionReport, SessionSummary,
};
pub use simulate::{mix_manifest_overlaps, simulate_conversation, write_simulated_session, ConversationPlan};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::beamformer::{
    apply_beamformer, estimate_psd, mvdr_weights, select_reference_max_snr, BeamformerWeights, MvdrOptions,
    ReferenceSelection,
};
use crate::error::{Error, Result};
use crate::features::{frame2superframe, gmvn, log_mel, FeatureConfig, GmvnStats, MelFilterbank};
use crate::masks::{average_masks, oracle_irm, TwoHeadMask};
use crate::spatial::{angle_feature, pre_mask, steering_vector, AngleFeature, ArrayGeometry};
use crate::ssl::SslOptions;
use crate::stft::{istft, stft, MultichannelPcm, StftConfig};

pub const SI_SNR_CAP_DB: f64 = 60.0;

/// How the speech/noise masks of a segment are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// File masks when the manifest names one, else oracle masks when a target image
    /// exists, else spatial masks.
    #[default]
    Auto,
    Oracle,
    File,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub geometry: ArrayGeometry,
    pub stft: StftConfig,
    /// Competitors within this many degrees of the target are not pre-masked.
    pub theta: f64,
    pub pre_mask: bool,
    pub mask_mode: MaskMode,
    /// Exponent applied to the clipped angle feature for spatial masks.
    pub spatial_sharpness: f64,
    pub irm_exponent: f64,
    pub mvdr: MvdrOptions,
    pub ssl: SslOptions,
    pub features: FeatureConfig,
    /// Corpus GMVN statistics (`GMV1`); without them the session's own features are used.
    pub gmvn_stats: Option<std::path::PathBuf>,
    /// Seconds added around each segment when deriving overlap flags.
    pub overlap_guard: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            geometry: ArrayGeometry::circular_7(crate::spatial::DEFAULT_CIRCULAR_RADIUS),
            stft: StftConfig::default(),
            theta: 30.0,
            pre_mask: true,
            mask_mode: MaskMode::Auto,
            spatial_sharpness: 4.0,
            irm_exponent: 1.0,
            mvdr: MvdrOptions::default(),
            ssl: SslOptions::default(),
            features: FeatureConfig::default(),
            gmvn_stats: None,
            overlap_guard: 0.0,
        }
    }
}

impl PipelineConfig {
    /// Reads TOML or JSON by file extension.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.stft.validate()?;
        if !(0.0..=180.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("theta {} outside [0, 180]", self.theta)));
        }
        if !(self.spatial_sharpness > 0.0) || !(self.irm_exponent > 0.0) {
            return Err(Error::InvalidConfig("mask exponents must be positive".into()));
        }
        if !(self.overlap_guard >= 0.0) {
            return Err(Error::InvalidConfig("overlap guard must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where a segment's masks come from.
#[derive(Debug, Clone)]
pub enum MaskInput<'a> {
    /// Ideal ratio masks from the target image; the rest of the mixture is interference.
    Oracle(&'a MultichannelPcm),
    /// Externally estimated masks, per channel or already averaged.
    Given(TwoHeadMask),
    /// Masks derived from the (pre-masked) target angle feature.
    Spatial,
}

impl MaskInput<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            MaskInput::Oracle(_) => "oracle",
            MaskInput::Given(_) => "file",
            MaskInput::Spatial => "spatial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDiagnostics {
    pub mask_source: String,
    pub target_doa: f64,
    pub frames: usize,
    pub reference_channel: usize,
    /// Competitors farther than theta from the target.
    pub masked_competitors: usize,
    /// Fraction of time-frequency bins zeroed by pre-masking.
    pub pre_mask_zeroed: f64,
    pub mean_speech_mask: f64,
    pub beamformer_fallbacks: usize,
    /// Reference-channel energy of the input spectrogram.
    pub input_energy: f64,
    pub output_energy: f64,
    pub si_snr_in: Option<f64>,
    pub si_snr_best_input: Option<f64>,
    pub si_snr_out: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub enhanced: MultichannelPcm,
    /// Normalized stacked features `(T', stack * n_mels)`.
    pub features: Array2<f64>,
    /// Un-normalized stacked features, the input of GMVN.
    pub raw_features: Array2<f64>,
    /// Channel-averaged masks that drove the beamformer.
    pub masks: TwoHeadMask,
    pub weights: BeamformerWeights,
    pub diagnostics: SegmentDiagnostics,
}

/// Objects shared by every segment of a run.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub config: PipelineConfig,
    pub filterbank: MelFilterbank,
}

impl Frontend {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let filterbank = MelFilterbank::new(&config.stft, &config.features.mel)?;
        Ok(Self { config, filterbank })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.features.output_dim()
    }

    /// Log-mel and superframe stacking of a single-channel signal.
    pub fn raw_features(&self, mono: &MultichannelPcm) -> Result<Array2<f64>> {
        let spec = stft(mono, &self.config.stft)?;
        let mel = log_mel(&spec, &self.filterbank)?;
        let f = &self.config.features;
        frame2superframe(mel.view(), f.stack, f.stride())
    }

    /// Enhances one segment for the speaker at `target_doa`.
    ///
    /// `reference` is the clean target image, used for SI-SNR when present. With
    /// `stats = None` the features are left un-normalized.
    pub fn process_segment(
        &self,
        audio: &MultichannelPcm,
        target_doa: f64,
        competitor_doas: &[f64],
        masks: MaskInput<'_>,
        reference: Option<&MultichannelPcm>,
        stats: Option<&GmvnStats>,
    ) -> Result<SegmentOutput> {
        let cfg = &self.config;
        let m = cfg.geometry.num_mics();
        if audio.num_channels() != m {
            return Err(Error::ShapeMismatch(format!(
                "segment has {} channels, geometry {m}",
                audio.num_channels()
            )));
        }
        let spec = stft(audio, &cfg.stft)?;
        let (_, t, f) = spec.dim();
        expect_shape("spectrogram bins", f, cfg.stft.num_bins())?;

        let target = angle_feature(&spec, &steering_vector(&cfg.geometry, target_doa, &cfg.stft)?)?;
        let competitors: Vec<AngleFeature> = competitor_doas
            .iter()
            .map(|&doa| angle_feature(&spec, &steering_vector(&cfg.geometry, doa, &cfg.stft)?))
            .collect::<Result<_>>()?;
        let masked_competitors = competitors
            .iter()
            .filter(|c| crate::spatial::angular_distance(c.doa, target.doa) > cfg.theta)
            .count();
        let target_masked = if cfg.pre_mask {
            pre_mask(&target, &competitors, cfg.theta)?
        } else {
            target.clone()
        };
        let zeroed = target_masked
            .values
            .iter()
            .zip(target.values.iter())
            .filter(|(a, b)| **a == 0.0 && **b != 0.0)
            .count();

        let mask_source = masks.label().to_string();
        let raw_mask = match masks {
            MaskInput::Oracle(image) => {
                if image.num_channels() != m || image.len() != audio.len() {
                    return Err(Error::ShapeMismatch("target image does not match the mixture".into()));
                }
                let clean = stft(image, &cfg.stft)?;
                let rest = MultichannelPcm::new(&audio.samples() - &image.samples(), audio.sample_rate())?;
                oracle_irm(&clean, &stft(&rest, &cfg.stft)?, cfg.irm_exponent)?
            }
            MaskInput::Given(mask) => mask,
            MaskInput::Spatial => spatial_mask(&target_masked, cfg.spatial_sharpness)?,
        };
        let (mm, mt, mf) = raw_mask.dim();
        if (mt, mf) != (t, f) || !(mm == m || mm == 1) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} does not fit spectrogram ({m}, {t}, {f})",
                raw_mask.dim()
            )));
        }
        let mask = if raw_mask.is_averaged() {
            raw_mask
        } else {
            average_masks(&raw_mask)?
        };
        expect_shape("averaged mask frames", mask.dim().1, t)?;

        let psd = estimate_psd(&spec, &mask, cfg.mvdr.normalize_psd)?;
        let reference_channel = match cfg.mvdr.reference {
            ReferenceSelection::Fixed(r) => r,
            ReferenceSelection::MaxSnr => select_reference_max_snr(&psd, cfg.mvdr.diag_load),
        };
        let weights = mvdr_weights(&psd, reference_channel, cfg.mvdr.diag_load)?;
        expect_shape("weight rows", weights.w.nrows(), f)?;
        expect_shape("weight columns", weights.w.ncols(), m)?;
        let out_spec = apply_beamformer(&spec, &weights)?;
        expect_shape("beamformer output channels", out_spec.num_channels(), 1)?;
        expect_shape("beamformer output frames", out_spec.num_frames(), t)?;
        let enhanced = istft(&out_spec)?;

        let mel = log_mel(&out_spec, &self.filterbank)?;
        expect_shape("mel dims", mel.ncols(), cfg.features.mel.n_mels)?;
        let raw_features = frame2superframe(mel.view(), cfg.features.stack, cfg.features.stride())?;
        expect_shape("stacked dims", raw_features.ncols(), self.feature_dim())?;
        let features = match stats {
            Some(s) => gmvn(raw_features.view(), s)?,
            None => raw_features.clone(),
        };

        let (si_snr_in, si_snr_best_input, si_snr_out) = match reference {
            Some(image) => {
                if image.num_channels() != m || image.len() != audio.len() {
                    return Err(Error::ShapeMismatch("reference image does not match the mixture".into()));
                }
                let target_ref = image.channel(reference_channel).to_vec();
                let per_channel: Vec<f64> = (0..m)
                    .map(|c| si_snr(&audio.channel(c).to_vec(), &image.channel(c).to_vec()))
                    .collect::<Result<_>>()?;
                let best = per_channel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let out = si_snr(&enhanced.channel(0).to_vec(), &target_ref)?;
                (Some(per_channel[reference_channel]), Some(best), Some(out))
            }
            None => (None, None, None),
        };

        let diagnostics = SegmentDiagnostics {
            mask_source,
            target_doa: target.doa,
            frames: t,
            reference_channel,
            masked_competitors,
            pre_mask_zeroed: zeroed as f64 / (t * f) as f64,
            mean_speech_mask: mask.speech().iter().map(|&v| f64::from(v)).sum::<f64>() / (t * f) as f64,
            beamformer_fallbacks: weights.num_fallbacks(),
            input_energy: spec.channel_energy()[reference_channel],
            output_energy: out_spec.channel_energy()[0],
            si_snr_in,
            si_snr_best_input,
            si_snr_out,
        };
        Ok(SegmentOutput {
            enhanced,
            features,
            raw_features,
            masks: mask,
            weights,
            diagnostics,
        })
    }
}

fn expect_shape(stage: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{stage}: expected {want}, got {got}")))
    }
}

/// Averaged two-head mask from an angle feature: speech `max(a, 0)^sharpness`, noise
/// its complement.
pub fn spatial_mask(angle: &AngleFeature, sharpness: f64) -> Result<TwoHeadMask> {
    let speech: Array3<f32> = angle
        .values
        .mapv(|a| a.clamp(0.0, 1.0).powf(sharpness) as f32)
        .insert_axis(Axis(0));
    let noise = speech.mapv(|s| 1.0 - s);
    TwoHeadMask::new(speech, noise, true)
}

/// Scale-invariant SNR `10 log10(|a s|^2 / |x - a s|^2)` with `a = <x, s> / |s|^2`,
/// limited to +-60 dB.
pub fn si_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroReference);
    }
    let alpha = estimate.iter().zip(reference).map(|(x, s)| x * s).sum::<f64>() / energy;
    let target = alpha * alpha * energy;
    let error: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(x, s)| (x - alpha * s).powi(2))
        .sum();
    let db = if target == 0.0 {
        -SI_SNR_CAP_DB
    } else if error == 0.0 {
        SI_SNR_CAP_DB
    } else {
        10.0 * (target / error).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{plane_wave, synth_speech};

    #[test]
    fn si_snr_edge_cases() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(si_snr(&s, &s).unwrap(), SI_SNR_CAP_DB);
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_snr(&doubled, &s).unwrap(), SI_SNR_CAP_DB);
        assert_eq!(si_snr(&vec![0.0; 100], &s).unwrap(), -SI_SNR_CAP_DB);
        assert!(matches!(si_snr(&s, &vec![0.0; 100]), Err(Error::ZeroReference)));
        assert!(si_snr(&s[..50], &s).is_err());
    }

    #[test]
    fn orthogonal_noise_gives_zero_db() {
        let n = 1000;
        let s: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / n as f64).sin()).collect();
        let e: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 9.0 * i as f64 / n as f64).sin()).collect();
        let x: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + b).collect();
        assert!(si_snr(&x, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn spatial_mask_clips_and_complements() {
        let angle = AngleFeature {
            values: ndarray::array![[-0.5, 0.5, 1.0]],
            doa: 0.0,
        };
        let m = spatial_mask(&angle, 2.0).unwrap();
        assert!(m.is_averaged());
        assert_eq!(m.speech().iter().copied().collect::<Vec<_>>(), vec![0.0, 0.25, 1.0]);
        assert_eq!(m.noise().iter().copied().collect::<Vec<_>>(), vec![1.0, 0.75, 0.0]);
    }

    #[test]
    fn pre_mask_is_identity_without_distant_competitors() {
        let fe = Frontend::new(PipelineConfig {
            mask_mode: MaskMode::Spatial,
            ..Default::default()
        })
        .unwrap();
        let x = plane_wave(&synth_speech(8000, 16_000, 1), &fe.config.geometry, 40.0, 16_000).unwrap();
        let with = fe.process_segment(&x, 39.0, &[50.0], MaskInput::Spatial, None, None).unwrap();
        let mut cfg = fe.config.clone();
        cfg.pre_mask = false;
        let without = Frontend::new(cfg)
            .unwrap()
            .process_segment(&x, 39.0, &[50.0], MaskInput::Spatial, None, None)
            .unwrap();
        assert_eq!(with.enhanced, without.enhanced);
        assert_eq!(with.diagnostics.masked_competitors, 0);
        assert_eq!(with.diagnostics.pre_mask_zeroed, 0.0);
    }

    #[test]
    fn shapes_follow_the_front_end() {
        let fe = Frontend::new(PipelineConfig::default()).unwrap();
        let x = plane_wave(&synth_speech(16_000, 16_000, 2), &fe.config.geometry, 90.0, 16_000).unwrap();
        let out = fe
            .process_segment(&x, 90.0, &[], MaskInput::Oracle(&x), Some(&x), None)
            .unwrap();
        assert_eq!(out.enhanced.num_channels(), 1);
        assert_eq!(out.enhanced.len(), 16_000);
        assert_eq!(out.weights.w.dim(), (257, 7));
        assert_eq!(out.masks.dim(), (1, 101, 257));
        assert_eq!(out.features.dim(), (34, 240));
        assert!(out.diagnostics.si_snr_out.unwrap() > 20.0);
    }

    #[test]
    fn channel_count_checked() {
        let fe = Frontend::new(PipelineConfig::default()).unwrap();
        let mono = MultichannelPcm::mono(vec![0.1; 1000], 16_000).unwrap();
        assert!(fe.process_segment(&mono, 0.0, &[], MaskInput::Spatial, None, None).is_err());
    }
}
