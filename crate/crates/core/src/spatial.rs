//! Array geometry, far-field steering vectors and the spatial features derived from them:
//! inter-microphone phase differences, direction-conditioned angle features, pre-masking
//! of the angle feature against competing directions, and the per-channel feature
//! assembly handed to a mask estimator.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::{MultichannelSpectrogram, StftConfig};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_CIRCULAR_RADIUS: f64 = 0.0425;
pub const EMBEDDING_DIM: usize = 128;

/// Microphone positions in metres. Index 0 is the reference microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<[f64; 3]>,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
}

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, speed_of_sound: f64) -> Result<Self> {
        let geom = Self {
            mic_positions,
            speed_of_sound,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mic_positions.is_empty() {
            return Err(Error::InvalidGeometry("no microphones".into()));
        }
        if self.mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite position".into()));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::InvalidGeometry("speed of sound must be positive".into()));
        }
        Ok(())
    }

    /// Seven-channel preset: centre microphone at index 0 followed by six microphones
    /// on a circle at 0°, 60°, ..., 300°.
    pub fn circular_7(radius: f64) -> Self {
        Self::circular(6, radius, true)
    }

    pub fn circular(ring: usize, radius: f64, with_center: bool) -> Self {
        let mut mics = Vec::with_capacity(ring + 1);
        if with_center {
            mics.push([0.0, 0.0, 0.0]);
        }
        for k in 0..ring {
            let phi = 2.0 * PI * k as f64 / ring as f64;
            mics.push([radius * phi.cos(), radius * phi.sin(), 0.0]);
        }
        Self {
            mic_positions: mics,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    /// Geometry rotated about the vertical axis by `degrees`.
    pub fn rotated(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Self {
            mic_positions: self
                .mic_positions
                .iter()
                .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
                .collect(),
            speed_of_sound: self.speed_of_sound,
        }
    }

    /// Absolute microphone positions for an array centred at `center`.
    pub fn placed_at(&self, center: [f64; 3]) -> Vec<[f64; 3]> {
        self.mic_positions
            .iter()
            .map(|p| [p[0] + center[0], p[1] + center[1], p[2] + center[2]])
            .collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance(self.mic_positions[i], self.mic_positions[j])
    }

    pub fn select(&self, mics: &[usize]) -> Self {
        Self {
            mic_positions: mics.iter().map(|&m| self.mic_positions[m]).collect(),
            speed_of_sound: self.speed_of_sound,
        }
    }

    /// Loads a geometry from a TOML or JSON file (chosen by extension).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let geom: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        geom.validate()?;
        Ok(geom)
    }
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Wraps an angle in degrees into [0, 360).
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Smallest absolute difference between two azimuths, in [0, 180].
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_degrees(a - b);
    d.min(360.0 - d)
}

/// Unit vector pointing from the array towards a far-field source.
fn look_direction(azimuth_deg: f64, elevation_deg: f64) -> [f64; 3] {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    [az.cos() * el.cos(), az.sin() * el.cos(), el.sin()]
}

/// Per-frequency plane-wave steering vectors for one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringField {
    pub doa: f64,
    pub elevation: f64,
    /// `(mic, frequency)`, unit modulus, row 0 identically one.
    pub vectors: Array2<Complex64>,
}

impl SteeringField {
    pub fn num_mics(&self) -> usize {
        self.vectors.nrows()
    }
}

/// Arrival delay of each microphone relative to microphone 0, in seconds.
pub fn relative_delays(geom: &ArrayGeometry, doa: f64, elevation: f64) -> Vec<f64> {
    let k = look_direction(doa, elevation);
    let p0 = geom.mic_positions[0];
    geom.mic_positions
        .iter()
        .map(|p| {
            let proj = (p[0] - p0[0]) * k[0] + (p[1] - p0[1]) * k[1] + (p[2] - p0[2]) * k[2];
            -proj / geom.speed_of_sound
        })
        .collect()
}

/// Far-field steering field, entry `exp(-j 2 pi f tau_i)` at elevation 0.
pub fn steering_vector(geom: &ArrayGeometry, doa: f64, cfg: &StftConfig) -> Result<SteeringField> {
    steering_vector_at(geom, doa, 0.0, cfg)
}

pub fn steering_vector_at(
    geom: &ArrayGeometry,
    doa: f64,
    elevation: f64,
    cfg: &StftConfig,
) -> Result<SteeringField> {
    geom.validate()?;
    let doa = wrap_degrees(doa);
    let delays = relative_delays(geom, doa, elevation);
    let bins = cfg.num_bins();
    let vectors = Array2::from_shape_fn((geom.num_mics(), bins), |(i, f)| {
        if i == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::from_polar(1.0, -2.0 * PI * cfg.bin_frequency(f) * delays[i])
        }
    });
    Ok(SteeringField {
        doa,
        elevation,
        vectors,
    })
}

/// Inter-microphone phase differences against microphone 0.
#[derive(Debug, Clone, PartialEq)]
pub struct IpdFeature {
    /// Raw: `(M-1, T, F)` angles in (-pi, pi]. Normalized: `(2(M-1), T, F)` with the
    /// mean-removed cosine and sine of each pair interleaved.
    pub values: Array3<f64>,
    pub normalized: bool,
    /// Bins whose reference magnitude is zero; their IPD is set to 0.
    pub zero_reference: Array2<bool>,
}

impl IpdFeature {
    pub fn num_pairs(&self) -> usize {
        if self.normalized {
            self.values.dim().0 / 2
        } else {
            self.values.dim().0
        }
    }
}

fn wrap_pi(x: f64) -> f64 {
    // atan2 returns [-pi, pi]; fold -pi onto pi
    if x <= -PI {
        x + 2.0 * PI
    } else {
        x
    }
}

pub fn compute_ipd(spec: &MultichannelSpectrogram, normalize: bool) -> Result<IpdFeature> {
    let (m, t, f) = spec.dim();
    if m < 2 {
        return Err(Error::ShapeMismatch("IPD needs at least two channels".into()));
    }
    let x = spec.data();
    let zero_reference = Array2::from_shape_fn((t, f), |(ti, fi)| x[[0, ti, fi]].norm() == 0.0);
    let raw = Array3::from_shape_fn((m - 1, t, f), |(p, ti, fi)| {
        if zero_reference[[ti, fi]] {
            0.0
        } else {
            let z = x[[p + 1, ti, fi]] * x[[0, ti, fi]].conj();
            if z.norm() == 0.0 {
                wrap_pi(x[[p + 1, ti, fi]].arg() - x[[0, ti, fi]].arg())
            } else {
                wrap_pi(z.arg())
            }
        }
    });
    if !normalize {
        return Ok(IpdFeature {
            values: raw,
            normalized: false,
            zero_reference,
        });
    }
    let mut values = Array3::<f64>::zeros((2 * (m - 1), t, f));
    for p in 0..m - 1 {
        for fi in 0..f {
            let (mut mc, mut ms) = (0.0, 0.0);
            for ti in 0..t {
                let v = raw[[p, ti, fi]];
                mc += v.cos();
                ms += v.sin();
            }
            mc /= t as f64;
            ms /= t as f64;
            for ti in 0..t {
                let v = raw[[p, ti, fi]];
                values[[2 * p, ti, fi]] = v.cos() - mc;
                values[[2 * p + 1, ti, fi]] = v.sin() - ms;
            }
        }
    }
    Ok(IpdFeature {
        values,
        normalized: true,
        zero_reference,
    })
}

/// Direction-conditioned angle feature, values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AngleFeature {
    /// `(T, F)`.
    pub values: Array2<f64>,
    pub doa: f64,
}

/// Mean over microphone pairs `(i, 0)` of `cos(angle(x_i) - angle(x_0) - angle(e_i))`.
/// Pairs with a zero-magnitude bin are skipped; bins with no valid pair are 0.
pub fn angle_feature(spec: &MultichannelSpectrogram, sf: &SteeringField) -> Result<AngleFeature> {
    let (m, t, f) = spec.dim();
    if m != sf.num_mics() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {m} channels, steering field has {}",
            sf.num_mics()
        )));
    }
    if f != sf.vectors.ncols() {
        return Err(Error::ShapeMismatch("frequency bins differ".into()));
    }
    if m < 2 {
        return Err(Error::ShapeMismatch("angle feature needs at least two channels".into()));
    }
    let x = spec.data();
    let values = Array2::from_shape_fn((t, f), |(ti, fi)| {
        let reference = x[[0, ti, fi]];
        if reference.norm() == 0.0 {
            return 0.0;
        }
        let (mut acc, mut count) = (0.0, 0usize);
        for i in 1..m {
            let z = x[[i, ti, fi]] * reference.conj() * sf.vectors[[i, fi]].conj();
            let mag = z.norm();
            if mag > 0.0 {
                acc += (z.re / mag).clamp(-1.0, 1.0);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            acc / count as f64
        }
    });
    Ok(AngleFeature {
        values,
        doa: sf.doa,
    })
}

/// Pointwise maximum of the competitor features lying more than `theta` degrees away
/// from the target direction, or `None` when no competitor qualifies.
pub fn interference_envelope(
    target: &AngleFeature,
    competitors: &[AngleFeature],
    theta: f64,
) -> Result<Option<Array2<f64>>> {
    let mut envelope: Option<Array2<f64>> = None;
    for c in competitors {
        if c.values.dim() != target.values.dim() {
            return Err(Error::ShapeMismatch(format!(
                "competitor shape {:?} vs target {:?}",
                c.values.dim(),
                target.values.dim()
            )));
        }
        if angular_distance(c.doa, target.doa) <= theta {
            continue;
        }
        envelope = Some(match envelope {
            None => c.values.clone(),
            Some(mut env) => {
                env.zip_mut_with(&c.values, |e, &v| *e = e.max(v));
                env
            }
        });
    }
    Ok(envelope)
}

/// Keeps the target feature only where it strictly exceeds every competitor beyond
/// `theta`; all other bins (including ties) become 0.
pub fn pre_mask(target: &AngleFeature, competitors: &[AngleFeature], theta: f64) -> Result<AngleFeature> {
    let Some(envelope) = interference_envelope(target, competitors, theta)? else {
        return Ok(target.clone());
    };
    let mut values = target.values.clone();
    values.zip_mut_with(&envelope, |v, &n| {
        if *v <= n {
            *v = 0.0;
        }
    });
    Ok(AngleFeature {
        values,
        doa: target.doa,
    })
}

/// Fixed-size speaker embedding supplied by an external extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f32>,
    pub source_id: String,
}

impl SpeakerEmbedding {
    pub fn new(vector: Vec<f32>, source_id: impl Into<String>) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::ShapeMismatch(format!(
                "embedding has {} dims, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Self {
            vector,
            source_id: source_id.into(),
        })
    }

    /// Reads a sidecar file: exactly 128 little-endian float32 values.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        if bytes.len() != 4 * EMBEDDING_DIM {
            return Err(Error::Format {
                format: "embedding sidecar",
                message: format!("expected {} bytes, found {}", 4 * EMBEDDING_DIM, bytes.len()),
            });
        }
        let vector = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(vector, path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.vector.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Per-channel mask-estimator input, `(M, T, width)`:
/// `[ |x_m| (F) | IPD block | angle (F)? | embedding (128)? ]`, with the same IPD,
/// angle and embedding blocks appended to every channel.
pub fn assemble_mask_input(
    spec: &MultichannelSpectrogram,
    ipd: &IpdFeature,
    angle: Option<&AngleFeature>,
    emb: Option<&SpeakerEmbedding>,
) -> Result<Array3<f32>> {
    let (m, t, f) = spec.dim();
    let (blocks, it, iff) = ipd.values.dim();
    if (it, iff) != (t, f) {
        return Err(Error::ShapeMismatch(format!(
            "IPD shape ({it}, {iff}) vs spectrogram ({t}, {f})"
        )));
    }
    if let Some(a) = angle {
        if a.values.dim() != (t, f) {
            return Err(Error::ShapeMismatch("angle feature shape".into()));
        }
    }
    let emb_dim = emb.map_or(0, |e| e.vector.len());
    let width = f + blocks * f + angle.map_or(0, |_| f) + emb_dim;
    let mut out = Array3::<f32>::zeros((m, t, width));
    let x = spec.data();
    for ch in 0..m {
        for ti in 0..t {
            let mut row = out.slice_mut(s![ch, ti, ..]);
            for fi in 0..f {
                row[fi] = x[[ch, ti, fi]].norm() as f32;
            }
            let mut off = f;
            for b in 0..blocks {
                for fi in 0..f {
                    row[off + fi] = ipd.values[[b, ti, fi]] as f32;
                }
                off += f;
            }
            if let Some(a) = angle {
                for fi in 0..f {
                    row[off + fi] = a.values[[ti, fi]] as f32;
                }
                off += f;
            }
            if let Some(e) = emb {
                for (k, &v) in e.vector.iter().enumerate() {
                    row[off + k] = v;
                }
            }
        }
    }
    Ok(out)
}
