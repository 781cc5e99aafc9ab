use std::f64::consts::PI;

use arrayfront::room::{plane_wave, synth_speech};
use arrayfront::spatial::{
    angle_feature, assemble_mask_input, compute_ipd, pre_mask, steering_vector, AngleFeature, ArrayGeometry,
    SpeakerEmbedding, DEFAULT_CIRCULAR_RADIUS,
};
use arrayfront::stft::{stft, StftConfig};
use ndarray::Array2;
use proptest::prelude::*;

fn geometry() -> ArrayGeometry {
    ArrayGeometry::circular_7(DEFAULT_CIRCULAR_RADIUS)
}

#[test]
fn steering_matches_circular_closed_form() {
    // ring mic i sits at angle 60(i-1) deg; its lead over the centre for a wave from
    // azimuth a is r cos(phi_i - a) / c
    let cfg = StftConfig::default();
    let r = DEFAULT_CIRCULAR_RADIUS;
    for doa in [0.0, 17.0, 90.0, 222.0, 359.0] {
        let sf = steering_vector(&geometry(), doa, &cfg).unwrap();
        for i in 1..7 {
            let phi = (60.0 * (i - 1) as f64).to_radians();
            let tau = -r * (phi - f64::to_radians(doa)).cos() / 343.0;
            for f in [1, 64, 200, 256] {
                let freq = f as f64 * 16_000.0 / 512.0;
                let want = num_complex::Complex64::from_polar(1.0, -2.0 * PI * freq * tau);
                assert!((sf.vectors[[i, f]] - want).norm() < 1e-12);
            }
        }
    }
}

fn wrap(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

fn frame_weights(spec: &arrayfront::stft::MultichannelSpectrogram) -> ndarray::Array2<f64> {
    spec.data().index_axis(ndarray::Axis(0), 0).mapv(|z| z.norm_sqr())
}

#[test]
fn plane_wave_ipd_follows_steering_phase() {
    // the power-weighted circular mean of the IPD over frames matches the steering phase
    let cfg = StftConfig::default();
    let geom = geometry();
    let doa = 75.0;
    let x = plane_wave(&synth_speech(16_000, 16_000, 3), &geom, doa, 16_000).unwrap();
    let spec = stft(&x, &cfg).unwrap();
    let ipd = compute_ipd(&spec, false).unwrap();
    let sf = steering_vector(&geom, doa, &cfg).unwrap();
    let w = frame_weights(&spec);
    for f in 8..250 {
        for p in 0..6 {
            let mean: num_complex::Complex64 = (0..spec.num_frames())
                .map(|t| num_complex::Complex64::from_polar(w[[t, f]], ipd.values[[p, t, f]]))
                .sum();
            let expected = sf.vectors[[p + 1, f]].arg();
            assert!(wrap(mean.arg() - expected).abs() < 0.03, "f {f} pair {p}: {} vs {expected}", mean.arg());
        }
    }
}

#[test]
fn angle_feature_peaks_at_source_direction() {
    let cfg = StftConfig::default();
    let geom = geometry();
    let x = plane_wave(&synth_speech(16_000, 16_000, 4), &geom, 150.0, 16_000).unwrap();
    let spec = stft(&x, &cfg).unwrap();
    let w = frame_weights(&spec);
    let score = |doa: f64| {
        let a = angle_feature(&spec, &steering_vector(&geom, doa, &cfg).unwrap()).unwrap();
        (&a.values * &w).sum() / w.sum()
    };
    let at = score(150.0);
    assert!(at > 0.99, "{at}");
    for other in [60.0, 100.0, 140.0, 200.0, 330.0] {
        assert!(score(other) < at);
    }
}

fn feature(values: Vec<f64>, doa: f64) -> AngleFeature {
    let n = values.len();
    AngleFeature {
        values: Array2::from_shape_vec((1, n), values).unwrap(),
        doa,
    }
}

proptest! {
    #[test]
    fn pre_mask_zero_set_is_dominated_bins(
        target in prop::collection::vec(-1.0f64..1.0, 40),
        c1 in prop::collection::vec(-1.0f64..1.0, 40),
        c2 in prop::collection::vec(-1.0f64..1.0, 40),
        d1 in 0.0f64..360.0,
        d2 in 0.0f64..360.0,
        theta in 0.0f64..90.0,
    ) {
        let t = feature(target.clone(), 0.0);
        let comps = [feature(c1.clone(), d1), feature(c2.clone(), d2)];
        let out = pre_mask(&t, &comps, theta).unwrap();
        let far = |d: f64| d.min(360.0 - d) > theta;
        for i in 0..40 {
            let mut env = f64::NEG_INFINITY;
            if far(d1) { env = env.max(c1[i]); }
            if far(d2) { env = env.max(c2[i]); }
            let want = if target[i] <= env { 0.0 } else { target[i] };
            prop_assert_eq!(out.values[[0, i]], want);
        }
    }
}

#[test]
fn mask_input_with_angle_and_embedding() {
    let cfg = StftConfig::default();
    let geom = geometry();
    let x = plane_wave(&synth_speech(3200, 16_000, 5), &geom, 10.0, 16_000).unwrap();
    let spec = stft(&x, &cfg).unwrap();
    let raw = compute_ipd(&spec, false).unwrap();
    let angle = angle_feature(&spec, &steering_vector(&geom, 10.0, &cfg).unwrap()).unwrap();
    let emb = SpeakerEmbedding::new((0..128).map(|i| i as f32).collect(), "test").unwrap();
    let full = assemble_mask_input(&spec, &raw, Some(&angle), Some(&emb)).unwrap();
    assert_eq!(full.dim(), (7, spec.num_frames(), 1799 + 257 + 128));
    // magnitude block of channel 3 and the shared embedding tail
    let t = 5;
    assert!((f64::from(full[[3, t, 20]]) - spec.data()[[3, t, 20]].norm()).abs() < 1e-5);
    assert_eq!(full[[6, t, 1799 + 257 + 127]], 127.0);
    let normalized = compute_ipd(&spec, true).unwrap();
    assert_eq!(assemble_mask_input(&spec, &normalized, None, None).unwrap().dim().2, 257 + 12 * 257);
}
