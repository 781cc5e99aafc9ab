mod common;

use arrayfront::room::{diffuse_noise, plane_wave, synth_speech, NoiseSpectrum};
use arrayfront::spatial::{angular_distance, ArrayGeometry, DEFAULT_CIRCULAR_RADIUS};
use arrayfront::ssl::{localize, SslOptions};
use arrayfront::stft::{stft, MultichannelPcm, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn errors_at_snr(snr_db: Option<f64>) -> Vec<f64> {
    let geom = ArrayGeometry::circular_7(DEFAULT_CIRCULAR_RADIUS);
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    (0..30)
        .map(|trial| {
            let doa = rng.random_range(0.0..360.0);
            let mut x = plane_wave(&synth_speech(16_000, 16_000, trial), &geom, doa, 16_000).unwrap();
            if let Some(snr) = snr_db {
                let mut noise = diffuse_noise(&geom, 16_000, 16_000, NoiseSpectrum::Pink, 100 + trial).unwrap();
                noise.scale((x.power() / noise.power() / 10f64.powf(snr / 10.0)).sqrt());
                x = MultichannelPcm::new(&x.samples() + &noise.samples(), 16_000).unwrap();
            }
            let est = localize(&stft(&x, &cfg).unwrap(), &geom, &SslOptions::default()).unwrap();
            assert_eq!(est.azimuth % 3.0, 0.0);
            angular_distance(est.azimuth, doa)
        })
        .collect()
}

#[test]
fn off_grid_plane_waves_snap_to_nearest_grid_point() {
    for err in errors_at_snr(None) {
        // half a grid step plus the fractional-delay error of the renderer
        assert!(err <= 1.6, "{err}");
    }
}

#[test]
fn off_grid_plane_waves_in_diffuse_noise() {
    let mut errors = errors_at_snr(Some(10.0));
    let worst = errors.iter().fold(0.0f64, |m, &e| m.max(e));
    assert!(worst <= 7.5, "worst error {worst}");
    let median = common::median(&mut errors);
    assert!(median <= 2.0, "median error {median}");
}

#[test]
fn diffuse_field_is_flatter_than_a_point_source() {
    let geom = ArrayGeometry::circular_7(DEFAULT_CIRCULAR_RADIUS);
    let cfg = StftConfig::default();
    let opts = SslOptions::default();
    let noise = diffuse_noise(&geom, 16_000, 16_000, NoiseSpectrum::White, 1).unwrap();
    let point = plane_wave(&synth_speech(16_000, 16_000, 1), &geom, 45.0, 16_000).unwrap();
    let flat = localize(&stft(&noise, &cfg).unwrap(), &geom, &opts).unwrap();
    let sharp = localize(&stft(&point, &cfg).unwrap(), &geom, &opts).unwrap();
    assert!(sharp.peak_to_mean() > flat.peak_to_mean() * 1.5, "{} vs {}", sharp.peak_to_mean(), flat.peak_to_mean());
    let mut scores: Vec<f64> = flat.score_curve.iter().map(|p| p.1).collect();
    assert!(common::median(&mut scores) > 0.0);
}
