//! Mask-driven spatial covariance estimation and time-invariant MVDR beamforming.
//!
//! For every frequency the weights are `w = (Phi_N^-1 Phi_S / tr(Phi_N^-1 Phi_S)) u`,
//! where `u` selects the reference microphone. `Phi_N^-1 Phi_S` is formed with
//! Cholesky solves against the diagonally loaded noise covariance.

use ndarray::{s, Array2, Array3, ArrayD, ArrayView2, Axis, IxDyn};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::masks::TwoHeadMask;
use crate::raster::Raster;
use crate::stft::MultichannelSpectrogram;

/// Speech and noise spatial covariance matrices, each `(F, M, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdPair {
    pub speech: Array3<Complex64>,
    pub noise: Array3<Complex64>,
}

impl PsdPair {
    pub fn num_bins(&self) -> usize {
        self.speech.dim().0
    }

    pub fn num_channels(&self) -> usize {
        self.speech.dim().1
    }

    pub fn speech_at(&self, f: usize) -> ArrayView2<'_, Complex64> {
        self.speech.slice(s![f, .., ..])
    }

    pub fn noise_at(&self, f: usize) -> ArrayView2<'_, Complex64> {
        self.noise.slice(s![f, .., ..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSelection {
    Fixed(usize),
    /// Picks the channel maximizing the output speech-to-noise power ratio.
    MaxSnr,
}

impl Default for ReferenceSelection {
    fn default() -> Self {
        ReferenceSelection::Fixed(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvdrOptions {
    pub reference: ReferenceSelection,
    /// Loading is `diag_load * tr(Phi_N) / M` added to the noise diagonal.
    pub diag_load: f64,
    /// Divide each covariance by the summed mask weight of its head.
    pub normalize_psd: bool,
}

impl Default for MvdrOptions {
    fn default() -> Self {
        Self {
            reference: ReferenceSelection::default(),
            diag_load: 1e-6,
            normalize_psd: false,
        }
    }
}

/// Per-frequency beamforming weights `(F, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    pub w: Array2<Complex64>,
    pub reference: usize,
    /// Frequencies where the solve failed and pass-through weights were used.
    pub fallback: Vec<bool>,
}

impl BeamformerWeights {
    /// Weights equal to the one-hot reference selector at every frequency.
    pub fn pass_through(num_bins: usize, num_channels: usize, reference: usize) -> Self {
        let mut w = Array2::zeros((num_bins, num_channels));
        w.column_mut(reference).fill(Complex64::new(1.0, 0.0));
        Self {
            w,
            reference,
            fallback: vec![false; num_bins],
        }
    }

    pub fn num_fallbacks(&self) -> usize {
        self.fallback.iter().filter(|&&b| b).count()
    }

    /// Weights as a complex64 raster of shape `(F, M)`.
    pub fn to_raster(&self) -> Raster {
        let data: Vec<Complex32> = self
            .w
            .iter()
            .map(|v| Complex32::new(v.re as f32, v.im as f32))
            .collect();
        Raster::Complex64(ArrayD::from_shape_vec(IxDyn(&[self.w.nrows(), self.w.ncols()]), data).unwrap())
    }

    pub fn from_raster(raster: Raster, reference: usize) -> Result<Self> {
        let arr = raster.into_complex64()?;
        if arr.ndim() != 2 {
            return Err(Error::ShapeMismatch("weights raster must be 2-D (F, M)".into()));
        }
        let (f, m) = (arr.shape()[0], arr.shape()[1]);
        if reference >= m {
            return Err(Error::ShapeMismatch("reference channel out of range".into()));
        }
        let w = Array2::from_shape_fn((f, m), |(i, j)| {
            let v = arr[[i, j]];
            Complex64::new(f64::from(v.re), f64::from(v.im))
        });
        Ok(Self {
            w,
            reference,
            fallback: vec![false; f],
        })
    }
}

/// `Phi_v(f) = sum_t M_v(t, f) x(t, f) x(t, f)^H` for the speech and noise heads of a
/// channel-averaged mask.
pub fn estimate_psd(spec: &MultichannelSpectrogram, mask: &TwoHeadMask, normalize: bool) -> Result<PsdPair> {
    let (m, t, f) = spec.dim();
    let (mm, mt, mf) = mask.dim();
    if mm != 1 || (mt, mf) != (t, f) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} must be channel-averaged with shape (1, {t}, {f})",
            mask.dim()
        )));
    }
    let x = spec.data();
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("spectrogram"));
    }
    let accumulate = |head: &Array3<f32>| -> Array3<Complex64> {
        let mut phi = Array3::<Complex64>::zeros((f, m, m));
        for fi in 0..f {
            let mut weight_sum = 0.0;
            for ti in 0..t {
                let w = f64::from(head[[0, ti, fi]]);
                weight_sum += w;
                for i in 0..m {
                    let xi = x[[i, ti, fi]];
                    for j in i..m {
                        phi[[fi, i, j]] += w * xi * x[[j, ti, fi]].conj();
                    }
                }
            }
            if normalize && weight_sum > 0.0 {
                phi.slice_mut(s![fi, .., ..]).mapv_inplace(|v| v / weight_sum);
            }
            for i in 0..m {
                phi[[fi, i, i]].im = 0.0;
                for j in 0..i {
                    phi[[fi, i, j]] = phi[[fi, j, i]].conj();
                }
            }
        }
        phi
    };
    Ok(PsdPair {
        speech: accumulate(mask.speech()),
        noise: accumulate(mask.noise()),
    })
}

/// `Phi_N^-1 Phi_S` for one frequency, or `None` when the loaded noise covariance is
/// not positive definite.
fn noise_whitened_speech(psd: &PsdPair, f: usize, diag_load: f64) -> Option<Array2<Complex64>> {
    let m = psd.num_channels();
    let mut noise = psd.noise_at(f).to_owned();
    let load = diag_load * linalg::trace(noise.view()).re / m as f64;
    for i in 0..m {
        noise[[i, i]] += load;
    }
    let l = linalg::cholesky(noise.view())?;
    let x = linalg::cholesky_solve(&l, psd.speech_at(f));
    x.iter().all(|v| v.re.is_finite() && v.im.is_finite()).then_some(x)
}

/// MVDR weights for reference channel `reference`. Frequencies with a singular noise
/// covariance or a vanishing trace fall back to pass-through weights and are flagged.
pub fn mvdr_weights(psd: &PsdPair, reference: usize, diag_load: f64) -> Result<BeamformerWeights> {
    let (bins, m) = (psd.num_bins(), psd.num_channels());
    if reference >= m {
        return Err(Error::ShapeMismatch(format!(
            "reference {reference} out of range for {m} channels"
        )));
    }
    let mut out = BeamformerWeights::pass_through(bins, m, reference);
    let mut flagged = 0;
    for f in 0..bins {
        let solved = noise_whitened_speech(psd, f, diag_load).and_then(|x| {
            let tr = linalg::trace(x.view());
            let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
            (tr.norm() > 1e-12 * scale && tr.norm().is_finite()).then(|| x.column(reference).mapv(|v| v / tr))
        });
        match solved {
            Some(w) if w.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => {
                out.w.row_mut(f).assign(&w);
            }
            _ => {
                out.fallback[f] = true;
                flagged += 1;
            }
        }
    }
    if flagged > 0 {
        log::warn!("MVDR fell back to pass-through weights at {flagged} of {bins} frequencies");
    }
    Ok(out)
}

/// Reference channel maximizing `sum_f w^H Phi_S w / sum_f w^H Phi_N w`.
pub fn select_reference_max_snr(psd: &PsdPair, diag_load: f64) -> usize {
    let m = psd.num_channels();
    let solved: Vec<Option<(Array2<Complex64>, Complex64)>> = (0..psd.num_bins())
        .map(|f| noise_whitened_speech(psd, f, diag_load).map(|x| {
            let tr = linalg::trace(x.view());
            (x, tr)
        }))
        .collect();
    let quad = |phi: ArrayView2<'_, Complex64>, w: &ndarray::Array1<Complex64>| -> f64 {
        let pw = phi.dot(w);
        w.iter().zip(pw.iter()).map(|(a, b)| (a.conj() * b).re).sum()
    };
    let mut best = (0, f64::NEG_INFINITY);
    for r in 0..m {
        let (mut num, mut den) = (0.0, 0.0);
        for (f, entry) in solved.iter().enumerate() {
            let Some((x, tr)) = entry else { continue };
            if tr.norm() == 0.0 {
                continue;
            }
            let w = x.column(r).mapv(|v| v / tr);
            num += quad(psd.speech_at(f), &w);
            den += quad(psd.noise_at(f), &w);
        }
        let snr = if den > 0.0 { num / den } else { f64::NEG_INFINITY };
        if snr > best.1 {
            best = (r, snr);
        }
    }
    best.0
}

/// `o(t, f) = w(f)^H x(t, f)`, a single-channel spectrogram.
pub fn apply_beamformer(spec: &MultichannelSpectrogram, weights: &BeamformerWeights) -> Result<MultichannelSpectrogram> {
    let (m, t, f) = spec.dim();
    if weights.w.dim() != (f, m) {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} vs spectrogram (F={f}, M={m})",
            weights.w.dim()
        )));
    }
    let x = spec.data();
    let mut out = Array3::<Complex64>::zeros((1, t, f));
    for fi in 0..f {
        let w = weights.w.row(fi);
        for ti in 0..t {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, wi) in w.iter().enumerate() {
                acc += wi.conj() * x[[i, ti, fi]];
            }
            out[[0, ti, fi]] = acc;
        }
    }
    MultichannelSpectrogram::new(out, *spec.config(), spec.signal_len())
}

/// Principal eigenvector of a Hermitian matrix by power iteration (diagnostics only).
pub fn principal_eigenvector(a: ArrayView2<'_, Complex64>) -> ndarray::Array1<Complex64> {
    let n = a.nrows();
    let mut v = ndarray::Array1::from_elem(n, Complex64::new(1.0, 0.0));
    for i in 0..n {
        v[i] += Complex64::new(0.01 * i as f64, 0.0);
    }
    for _ in 0..500 {
        let next = a.dot(&v);
        let norm = next.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v = next.mapv(|z| z / norm);
    }
    v
}

/// Sum of `|x|^2` over all bins of channel `m`.
pub fn channel_power(spec: &MultichannelSpectrogram, m: usize) -> f64 {
    spec.data()
        .index_axis(Axis(0), m)
        .iter()
        .map(|v| v.norm_sqr())
        .sum()
}
