//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use arrayfront::beamformer::{estimate_psd, mvdr_weights, PsdPair};
use arrayfront::features::{frame2superframe, gmvn, log_mel, GmvnStats, MelConfig, MelFilterbank};
use arrayfront::masks::TwoHeadMask;
use arrayfront::pipeline::{run_session, simulate_conversation, write_simulated_session, ConversationPlan, Frontend, MaskInput, PipelineConfig};
use arrayfront::room::{
    image_rirs, mix_overlap, sample_room, simulate_session, synth_speech, OverlapPlacement, RirOptions, SessionOptions,
    SimSegment, SourceSegment, ARRAY_HEIGHT, ROOM_HEIGHT, ROOM_LENGTH, ROOM_WIDTH, RT60_RANGE,
};
use arrayfront::spatial::{
    angle_feature, angular_distance, assemble_mask_input, compute_ipd, interference_envelope, pre_mask,
    steering_vector, ArrayGeometry, DEFAULT_CIRCULAR_RADIUS,
};
use arrayfront::ssl::{localize, SslOptions};
use arrayfront::stft::{istft, stft, MultichannelPcm, MultichannelSpectrogram, StftConfig};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(u8, &str, Check); 10] = [
        (1, "STFT round trip", c1_stft_round_trip),
        (2, "MVDR distortionless", c2_mvdr_distortionless),
        (3, "PSD oracle equivalence", c3_psd_oracle),
        (4, "oracle-mask MVDR gain", c4_mvdr_gain),
        (5, "pre-masking benefit", c5_pre_masking),
        (6, "SSL accuracy", c6_ssl),
        (7, "simulator fidelity", c7_simulator),
        (8, "overlap generator", c8_overlap),
        (9, "feature-transform shape law", c9_shapes),
        (10, "session determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("{what} took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn geometry() -> ArrayGeometry {
    ArrayGeometry::circular_7(DEFAULT_CIRCULAR_RADIUS)
}

fn c1_stft_round_trip() -> Result<String, String> {
    let start = Instant::now();
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let chans: Vec<Vec<f64>> = (0..7).map(|_| (0..48_000).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pcm = MultichannelPcm::from_channels(&chans, 16_000).unwrap();
        let back = istft(&stft(&pcm, &cfg).unwrap()).unwrap();
        let peak = pcm.peak();
        // interior: one frame away from either end
        for m in 0..7 {
            for i in cfg.fft_size..48_000 - cfg.fft_size {
                worst = worst.max((back.channel(m)[i] - pcm.channel(m)[i]).abs() / peak);
            }
        }
    }
    within(start.elapsed(), 5.0, "round trip")?;
    if worst <= 1e-6 {
        Ok(format!("max interior error {worst:.2e} of peak"))
    } else {
        Err(format!("max interior error {worst:.2e} of peak exceeds 1e-6"))
    }
}

fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn c2_mvdr_distortionless() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let m = 2 + k % 7;
        let d: Vec<Complex64> = (0..m).map(|_| random_complex(&mut rng)).collect();
        let power = rng.random_range(0.1..10.0);
        let a = Array2::from_shape_fn((m, m), |_| random_complex(&mut rng));
        let mut speech = Array3::<Complex64>::zeros((1, m, m));
        let mut noise = Array3::<Complex64>::zeros((1, m, m));
        for i in 0..m {
            for j in 0..m {
                speech[[0, i, j]] = power * d[i] * d[j].conj();
                let mut acc: Complex64 = (0..m).map(|l| a[[i, l]] * a[[j, l]].conj()).sum();
                if i == j {
                    acc += 0.01;
                }
                noise[[0, i, j]] = acc;
            }
        }
        let reference = rng.random_range(0..m);
        let w = mvdr_weights(&PsdPair { speech, noise }, reference, 1e-6).map_err(|e| e.to_string())?;
        if w.fallback[0] {
            return Err(format!("instance {k} fell back to pass-through"));
        }
        let response: Complex64 = (0..m).map(|i| w.w[[0, i]].conj() * d[i]).sum();
        worst = worst.max((response - d[reference]).norm());
    }
    within(start.elapsed(), 5.0, "200 instances")?;
    if worst <= 1e-10 {
        Ok(format!("max |w^H d - u^H d| = {worst:.2e} over 200 instances"))
    } else {
        Err(format!("max |w^H d - u^H d| = {worst:.2e} exceeds 1e-10"))
    }
}

fn c3_psd_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = StftConfig {
        fft_size: 16,
        hop: 4,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (m, t) = (rng.random_range(1..6), rng.random_range(1..12));
        let f = cfg.num_bins();
        let data = Array3::from_shape_fn((m, t, f), |_| random_complex(&mut rng));
        let spec = MultichannelSpectrogram::new(data.clone(), cfg, (t - 1) * cfg.hop).unwrap();
        let speech = Array3::from_shape_fn((1, t, f), |_| rng.random_range(0.0..1.0f32));
        let noise = Array3::from_shape_fn((1, t, f), |_| rng.random_range(0.0..1.0f32));
        let mask = TwoHeadMask::new(speech.clone(), noise.clone(), true).unwrap();
        let psd = estimate_psd(&spec, &mask, false).map_err(|e| e.to_string())?;
        for (head, est) in [(&speech, &psd.speech), (&noise, &psd.noise)] {
            for fi in 0..f {
                for i in 0..m {
                    for j in 0..m {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for ti in 0..t {
                            acc += f64::from(head[[0, ti, fi]]) * data[[i, ti, fi]] * data[[j, ti, fi]].conj();
                        }
                        let err = (est[[fi, i, j]] - acc).norm() / acc.norm().max(1e-300);
                        worst = worst.max(err);
                    }
                }
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max relative deviation {worst:.2e} over 50 toys"))
    } else {
        Err(format!("max relative deviation {worst:.2e} exceeds 1e-12"))
    }
}

fn render(room: &arrayfront::room::RoomConfig, speaker: usize, audio: Vec<f64>) -> MultichannelPcm {
    let opts = SessionOptions {
        add_noise: false,
        peak_dbfs: None,
        ..Default::default()
    };
    let src = [SourceSegment {
        speaker,
        audio,
        transcript: String::new(),
        start: 0.0,
    }];
    simulate_session(room, &src, &geometry(), &opts).unwrap().segments.remove(0).audio
}

/// Two-speaker 0 dB SIR mixture at RT60 0.3 s; returns target image, mixture and the
/// speaker azimuths.
fn two_speaker_mixture(seed: u64) -> (MultichannelPcm, MultichannelPcm, [f64; 2]) {
    let mut room = sample_room(2, seed).unwrap();
    room.rt60 = 0.3;
    let az = room.speaker_azimuths();
    let target = render(&room, 0, synth_speech(48_000, 16_000, 2 * seed));
    let mut interferer = render(&room, 1, synth_speech(48_000, 16_000, 2 * seed + 1));
    interferer.scale((target.power() / interferer.power()).sqrt());
    let mix = MultichannelPcm::new(&target.samples() + &interferer.samples(), 16_000).unwrap();
    (target, mix, [az[0], az[1]])
}

fn c4_mvdr_gain() -> Result<String, String> {
    let start = Instant::now();
    let fe = Frontend::new(PipelineConfig::default()).unwrap();
    let mut gains: Vec<f64> = (1..=20)
        .map(|seed| {
            let (target, mix, az) = two_speaker_mixture(seed);
            let out = fe
                .process_segment(&mix, az[0], &[az[1]], MaskInput::Oracle(&target), Some(&target), None)
                .unwrap();
            let d = out.diagnostics;
            d.si_snr_out.unwrap() - d.si_snr_best_input.unwrap()
        })
        .collect();
    let median = common::median(&mut gains);
    within(start.elapsed(), 120.0, "20 seeds")?;
    if median >= 5.0 {
        Ok(format!("median SI-SNR gain over best input channel {median:.2} dB"))
    } else {
        Err(format!("median SI-SNR gain {median:.2} dB below 5 dB"))
    }
}

fn c5_pre_masking() -> Result<String, String> {
    let cfg = PipelineConfig::default();
    let with = Frontend::new(cfg.clone()).unwrap();
    let without = Frontend::new(PipelineConfig {
        pre_mask: false,
        ..cfg.clone()
    })
    .unwrap();
    let (mut on, mut off) = (Vec::new(), Vec::new());
    let mut seed = 100;
    while on.len() < 20 {
        seed += 1;
        let room = sample_room(2, seed).unwrap();
        let az = room.speaker_azimuths();
        if angular_distance(az[0], az[1]) < 60.0 {
            continue;
        }
        let (target, mix, az) = two_speaker_mixture(seed);

        // zeroed bins are exactly those where the target does not exceed the envelope
        let spec = stft(&mix, &cfg.stft).unwrap();
        let a = angle_feature(&spec, &steering_vector(&cfg.geometry, az[0], &cfg.stft).unwrap()).unwrap();
        let n = angle_feature(&spec, &steering_vector(&cfg.geometry, az[1], &cfg.stft).unwrap()).unwrap();
        let masked = pre_mask(&a, std::slice::from_ref(&n), cfg.theta).unwrap();
        let env = interference_envelope(&a, std::slice::from_ref(&n), cfg.theta).unwrap().unwrap();
        for ((&orig, &out), (&comp, &e)) in a.values.iter().zip(masked.values.iter()).zip(n.values.iter().zip(env.iter())) {
            if comp != e {
                return Err("envelope differs from the single competitor".into());
            }
            if orig != 0.0 && (out == 0.0) != (orig <= comp) {
                return Err(format!("bin with A={orig} A_n={comp} zeroed={}", out == 0.0));
            }
            if out != 0.0 && out != orig {
                return Err("kept bin altered".into());
            }
        }

        let run = |fe: &Frontend| {
            fe.process_segment(&mix, az[0], &[az[1]], MaskInput::Spatial, Some(&target), None)
                .unwrap()
                .diagnostics
                .si_snr_out
                .unwrap()
        };
        on.push(run(&with));
        off.push(run(&without));
    }
    let (m_on, m_off) = (common::median(&mut on), common::median(&mut off));
    if m_on >= m_off {
        Ok(format!(
            "median SI-SNR {m_on:.2} dB with pre-masking vs {m_off:.2} dB without (20 rooms, separation >= 60 deg); zeroed set exact"
        ))
    } else {
        Err(format!("median SI-SNR {m_on:.2} dB with pre-masking below {m_off:.2} dB without"))
    }
}

fn c6_ssl() -> Result<String, String> {
    let start = Instant::now();
    let geom = geometry();
    let ssl = SslOptions::default();
    let cfg = StftConfig::default();
    let mut worst_anechoic: f64 = 0.0;
    for seed in 0..50 {
        let mut room = sample_room(1, 1000 + seed).unwrap();
        room.rt60 = 0.0;
        let x = render(&room, 0, synth_speech(16_000, 16_000, seed));
        let est = localize(&stft(&x, &cfg).unwrap(), &geom, &ssl).unwrap();
        worst_anechoic = worst_anechoic.max(angular_distance(est.azimuth, room.speaker_azimuths()[0]));
    }
    let mut errors: Vec<f64> = (0..20)
        .map(|seed| {
            let mut room = sample_room(1, 2000 + seed).unwrap();
            room.rt60 = 0.3;
            let opts = SessionOptions {
                fixed_snr_db: Some(10.0),
                seed,
                ..Default::default()
            };
            let src = [SourceSegment {
                speaker: 0,
                audio: synth_speech(32_000, 16_000, 50 + seed),
                transcript: String::new(),
                start: 0.0,
            }];
            let seg = simulate_session(&room, &src, &geom, &opts).unwrap().segments.remove(0);
            let est = localize(&stft(&seg.audio, &cfg).unwrap(), &geom, &ssl).unwrap();
            angular_distance(est.azimuth, seg.doa_truth.unwrap())
        })
        .collect();
    let median = common::median(&mut errors);
    within(start.elapsed(), 60.0, "localization trials")?;
    if worst_anechoic <= 3.0 && median <= 10.0 {
        Ok(format!(
            "anechoic max error {worst_anechoic:.2} deg over 50 trials; reverberant median error {median:.2} deg"
        ))
    } else {
        Err(format!(
            "anechoic max error {worst_anechoic:.2} deg (limit 3), reverberant median {median:.2} deg (limit 10)"
        ))
    }
}

fn c7_simulator() -> Result<String, String> {
    let geom = geometry();
    let mut ratios = Vec::new();
    for &rt in &[0.2, 0.4, 0.6] {
        for seed in 0..5 {
            let mut room = sample_room(1, 300 + seed).unwrap();
            room.rt60 = rt;
            let mic = geom.placed_at(room.array_origin())[0];
            let rir = image_rirs(&room, room.speaker_positions[0], &[mic], &RirOptions::default())
                .map_err(|e| e.to_string())?
                .remove(0);
            ratios.push((rt, common::schroeder_t60(&rir, 16_000.0) / rt));
        }
    }
    let bad_t60: Vec<_> = ratios.iter().filter(|(_, r)| (r - 1.0).abs() > 0.25).collect();

    let room = sample_room(2, 77).unwrap();
    let sources: Vec<SourceSegment> = (0..10)
        .map(|i| SourceSegment {
            speaker: i % 2,
            audio: synth_speech(16_000, 16_000, 500 + i as u64),
            transcript: format!("utterance {i}"),
            start: i as f64 * 1.2,
        })
        .collect();
    let sess = simulate_session(&room, &sources, &geom, &SessionOptions { seed: 77, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut snr_err: f64 = 0.0;
    for seg in &sess.segments {
        let image = seg.image.as_ref().unwrap();
        let rest = &seg.audio.samples() - &image.samples();
        let p_img = image.samples().iter().map(|v| v * v).sum::<f64>();
        let p_rest = rest.iter().map(|v| v * v).sum::<f64>();
        snr_err = snr_err.max((10.0 * (p_img / p_rest).log10() - seg.snr_db.unwrap()).abs());
    }

    let rooms: Vec<_> = (0..10_000u64).map(|s| sample_room(1, 1_000_000 + s).unwrap()).collect();
    let ks = [
        ("length", rooms.iter().map(|r| r.dims[0]).collect::<Vec<_>>(), ROOM_LENGTH),
        ("width", rooms.iter().map(|r| r.dims[1]).collect(), ROOM_WIDTH),
        ("height", rooms.iter().map(|r| r.dims[2]).collect(), ROOM_HEIGHT),
        ("rt60", rooms.iter().map(|r| r.rt60).collect(), RT60_RANGE),
        ("array height", rooms.iter().map(|r| r.array_height).collect(), ARRAY_HEIGHT),
    ];
    let p_values: Vec<(&str, f64)> = ks.iter().map(|(n, v, r)| (*n, common::ks_uniform_p(v, r.0, r.1))).collect();
    let min_p = p_values.iter().map(|p| p.1).fold(1.0, f64::min);

    let t60_range = ratios.iter().map(|r| r.1).fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let detail = format!(
        "T60/requested in [{:.2}, {:.2}] over 15 RIRs; max SNR error {snr_err:.3} dB; min KS p {min_p:.3}",
        t60_range.0, t60_range.1
    );
    if bad_t60.is_empty() && snr_err <= 0.5 && min_p > 0.01 {
        Ok(detail)
    } else {
        Err(format!("{detail}; T60 outliers {bad_t60:?}; KS {p_values:?}"))
    }
}

fn c8_overlap() -> Result<String, String> {
    let geom = geometry();
    let room = sample_room(3, 88).unwrap();
    let sources: Vec<SourceSegment> = (0..6)
        .map(|i| SourceSegment {
            speaker: i % 3,
            audio: synth_speech(16_000, 16_000, 800 + i as u64),
            transcript: format!("segment {i} words \u{00e9}t\u{00e9}"),
            start: i as f64 * 1.5,
        })
        .collect();
    let sess = simulate_session(&room, &sources, &geom, &SessionOptions { seed: 88, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let segs: &[SimSegment] = &sess.segments;
    let hop = 160.0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let b = rng.random_range(0..segs.len());
        let mut o = rng.random_range(0..segs.len());
        while segs[o].speaker_id == segs[b].speaker_id {
            o = rng.random_range(0..segs.len());
        }
        let ratio = rng.random_range(0.01..=1.0);
        let placement = if k % 2 == 0 { OverlapPlacement::End } else { OverlapPlacement::Random };
        let before = segs[b].transcript.clone().into_bytes();
        let mixed = mix_overlap(&segs[b], &segs[o], ratio, placement, k).map_err(|e| e.to_string())?;
        if mixed.transcript.as_bytes() != before.as_slice() || segs[b].transcript.as_bytes() != before.as_slice() {
            return Err(format!("transcript changed in mix {k}"));
        }
        let n = segs[b].len();
        let diff = &mixed.audio.samples() - &segs[b].audio.samples();
        let touched: Vec<usize> = (0..n).filter(|&i| diff.column(i).iter().any(|v| *v != 0.0)).collect();
        let span = touched.last().map_or(0, |l| l - touched[0] + 1) as f64;
        worst = worst.max((span - ratio * n as f64).abs() / hop);
    }
    if worst <= 1.0 {
        Ok(format!("max overlap deviation {worst:.3} frames over 1000 mixes; transcripts byte-identical"))
    } else {
        Err(format!("overlap deviation {worst:.3} frames exceeds 1"))
    }
}

fn c9_shapes() -> Result<String, String> {
    let cfg = StftConfig::default();
    let geom = geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let chans: Vec<Vec<f64>> = (0..7).map(|_| (0..32_000).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let pcm = MultichannelPcm::from_channels(&chans, 16_000).unwrap();
    let spec = stft(&pcm, &cfg).unwrap();
    let bins = spec.num_bins();
    let fb = MelFilterbank::new(&cfg, &MelConfig::default()).unwrap();
    let mel = log_mel(&spec.channel(0), &fb).unwrap();
    let stacked = frame2superframe(mel.view(), 3, 3).unwrap();
    let stats = GmvnStats::from_features(stacked.view(), "self").unwrap();
    let normed = gmvn(stacked.view(), &stats).unwrap();
    let n = normed.nrows() as f64;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for col in normed.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        worst_mean = worst_mean.max(mean.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    let ipd = compute_ipd(&spec, false).unwrap();
    let input = assemble_mask_input(&spec, &ipd, None, None).unwrap();
    let width = input.dim().2;
    let shapes = (cfg.fft_size, bins, mel.ncols(), stacked.ncols(), width, geom.num_mics());
    let detail = format!(
        "512 -> {bins} bins -> {} mels -> {} stacked; GMVN max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e}; mask input width {width}",
        mel.ncols(),
        stacked.ncols()
    );
    if shapes == (512, 257, 80, 240, 1799, 7) && worst_mean <= 1e-6 && worst_var <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn files_equal(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a).map_err(|e| e.to_string())?.flatten().map(|e| e.file_name()).collect();
    names.sort();
    for name in &names {
        let (x, y) = (std::fs::read(a.join(name)), std::fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => return Err(format!("{} differs between runs", name.to_string_lossy())),
        }
    }
    Ok(names.len())
}

fn c10_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let plan = ConversationPlan {
        num_speakers: 3,
        segments_per_speaker: 2,
        segment_seconds: (0.8, 1.2),
        ..Default::default()
    };
    let opts = SessionOptions {
        seed: 10,
        ..Default::default()
    };
    let sess = simulate_conversation(&plan, &geometry(), &opts).map_err(|e| e.to_string())?;
    write_simulated_session(&sess, "det", &dir.path().join("data")).map_err(|e| e.to_string())?;
    let manifest = dir.path().join("data/manifest.json");
    let cfg = PipelineConfig::default();
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    let first = run_session(&manifest, &cfg, &a).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| run_session(&manifest, &cfg, &b)).map_err(|e| e.to_string())?;
    if first.failed() > 0 {
        return Err(format!("{} segments failed", first.failed()));
    }
    let report_equal = std::fs::read(a.join("report.json")).unwrap() == std::fs::read(b.join("report.json")).unwrap();
    if !report_equal {
        return Err("report.json differs between runs".into());
    }
    let masks = files_equal(&a.join("masks"), &b.join("masks"))?;
    let feats = files_equal(&a.join("features"), &b.join("features"))?;
    Ok(format!(
        "report, {masks} TFM1 files and {feats} feature files byte-identical across a parallel and a serial rerun"
    ))
}
