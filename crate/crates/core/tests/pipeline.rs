//! End-to-end runs through every module on synthetic digits.

use spc_core::classify::{
    assemble_frames, calibrate, classify_stream, differential, estimate_calibration, score, CalibrationInfo,
    GainSource, TruthRule,
};
use spc_core::data::{decode_model, encode_model};
use spc_core::nn::{
    argmax, forward_from_features, init_params, FeatureVector, Image28, ModelParams, IMAGE_PIXELS, NUM_KERNELS,
};
use spc_core::optics::{
    build_disk_scene, decode_stream, encode_stream, frame_truth, pattern_measurements, run_acquisition,
    run_reference_acquisition, AdcConfig, DiskGeometry, NoiseConfig, PatternIntegrals, TimingModel, NUM_DIGITS,
};
use spc_core::patterns::{build_pattern_pack, decode_pack, encode_pack, pattern_features, PatternPack};

fn digit(seed: usize) -> Image28 {
    let px = (0..IMAGE_PIXELS)
        .map(|i| {
            let (x, y) = (i % 28, i / 28);
            let ring = ((x as f64 - 13.5).powi(2) + (y as f64 - 13.5).powi(2)).sqrt();
            if (5.0..10.0 + (seed % 3) as f64).contains(&ring) && (x + 2 * y + seed) % 5 != 0 {
                ((x + y + seed) % 4 + 1) as f64 / 4.0
            } else {
                0.0
            }
        })
        .collect();
    Image28::new(px).unwrap()
}

fn digits() -> Vec<Image28> {
    (0..NUM_DIGITS).map(digit).collect()
}

fn setup(k: usize) -> (ModelParams, PatternPack) {
    let model = decode_model(&encode_model(&init_params(11))).unwrap();
    let pack = decode_pack(&encode_pack(&build_pattern_pack(&model, k).unwrap()).unwrap()).unwrap();
    (model, pack)
}

fn static_geometry() -> DiskGeometry {
    DiskGeometry { initial_angle: 0.0, ..DiskGeometry::default() }
}

#[test]
fn noiseless_static_measurements_equal_the_pattern_oracle() {
    let (_, pack) = setup(5);
    let scene = build_disk_scene(digits(), None, static_geometry(), 0.0).unwrap();
    let m = pattern_measurements(&scene, &PatternIntegrals::new(&pack), 0.0);
    assert_eq!(m.len(), 2 * NUM_KERNELS);
    let oracle = pattern_features(&pack, &scene.digits[0].image);
    for i in 0..NUM_KERNELS {
        let measured = pack.pairs[i].scale * IMAGE_PIXELS as f64 * (m[2 * i] - m[2 * i + 1]);
        assert!(
            (measured - oracle[i]).abs() <= 1e-9 * (1.0 + oracle[i].abs()),
            "kernel {i}: {measured} vs {}",
            oracle[i]
        );
    }
}

#[test]
fn quantized_static_stream_calibrates_to_the_oracle() {
    let (model, pack) = setup(5);
    let scene = build_disk_scene(digits(), None, static_geometry(), 0.0).unwrap();
    let timing = TimingModel { loops: 3, ..TimingModel::default() };
    let noise = NoiseConfig::noiseless();
    let adc = AdcConfig::default();
    let stream = run_acquisition(&scene, &pack, &timing, &noise, &adc).unwrap();
    let stream = decode_stream(&encode_stream(&stream)).unwrap();
    let cal = CalibrationInfo::new(noise.alpha, noise.dark, &pack, adc.lsb()).unwrap();
    let frames = assemble_frames(&stream);
    assert_eq!(frames.len(), 3);
    assert!(frames.windows(2).all(|w| w[0].values == w[1].values));

    let oracle = pattern_features(&pack, &scene.digits[0].image);
    let f = calibrate(&differential(&frames[0]), &cal).unwrap();
    for i in 0..NUM_KERNELS {
        // Each slot mean is off by at most half a code step, a differential by one.
        let bound = cal.scales[i] * IMAGE_PIXELS as f64 * adc.lsb() / noise.alpha;
        let measured = f.0[i] - pack.biases[i];
        assert!((measured - oracle[i]).abs() <= bound, "kernel {i}: {measured} vs {} (bound {bound})", oracle[i]);
    }
    let events = classify_stream(&stream, &model, &cal, None).unwrap();
    assert_eq!(events.len(), 3);
    assert!(events.iter().all(|e| e.bytes == 1680 && e.label == events[0].label));
}

#[test]
fn moving_run_detects_transits_and_scores() {
    let (model, pack) = setup(4);
    let labels: Vec<u8> = (0..NUM_DIGITS as u8).collect();
    let scene = build_disk_scene(digits(), Some(labels), DiskGeometry::default(), 24.05).unwrap();
    let timing = TimingModel { loops: 300, ..TimingModel::default() };
    let noise = NoiseConfig::default();
    let adc = AdcConfig::default();
    let stream = run_acquisition(&scene, &pack, &timing, &noise, &adc).unwrap();
    let reference = run_reference_acquisition(&pack, &timing, &noise, &adc).unwrap();
    let cal = estimate_calibration(&stream, &pack, GainSource::Reference(&reference), None).unwrap();
    assert!((cal.alpha_hat - noise.alpha).abs() < 1e-3 * noise.alpha, "gain {}", cal.alpha_hat);
    assert!((cal.dark - noise.dark).abs() < 1e-3, "dark {}", cal.dark);

    let truth = frame_truth(&scene, &timing);
    let events = classify_stream(&stream, &model, &cal, None).unwrap();
    let s = score(&events, &truth, TruthRule::default(), &timing);
    assert_eq!(s.frames, 300);
    assert!(s.truth_frames > 0);
    assert!(s.presence_events > s.truth_frames);
    // Truth is taken at the frame midpoint, so a digit edge can still light
    // the first part of the frame after the one that ends its transit.
    let lit = |f: usize| truth.get(f).is_some_and(|t| t.label.is_some());
    for e in &events {
        assert!(lit(e.frame) || lit(e.frame.wrapping_sub(1)) || lit(e.frame + 1), "stray event at frame {}", e.frame);
    }
    assert!(s.false_events <= s.presence_events / 10);
    // Every fully visible frame is detected.
    let detected: std::collections::HashSet<usize> = events.iter().map(|e| e.frame).collect();
    for t in truth.iter().filter(|t| t.visible_ink >= 1.0) {
        assert!(detected.contains(&t.frame), "frame {} missed", t.frame);
    }
}

#[test]
fn seeded_runs_are_byte_identical() {
    let (_, pack) = setup(3);
    let scene = build_disk_scene(digits(), None, DiskGeometry::default(), 48.34).unwrap();
    let timing = TimingModel { loops: 40, ..TimingModel::default() };
    let noise = NoiseConfig { seed: 9, ..NoiseConfig::default() };
    let adc = AdcConfig::default();
    let a = encode_stream(&run_acquisition(&scene, &pack, &timing, &noise, &adc).unwrap());
    let b = encode_stream(&run_acquisition(&scene, &pack, &timing, &noise, &adc).unwrap());
    assert_eq!(a, b);
    let other = NoiseConfig { seed: 10, ..noise };
    assert_ne!(a, encode_stream(&run_acquisition(&scene, &pack, &timing, &other, &adc).unwrap()));
}

#[test]
fn static_labels_match_the_pattern_oracle() {
    let (model, pack) = setup(5);
    let noise = NoiseConfig::noiseless();
    let adc = AdcConfig::default();
    let cal = CalibrationInfo::new(noise.alpha, noise.dark, &pack, adc.lsb()).unwrap();
    let timing = TimingModel { loops: 1, ..TimingModel::default() };
    let mut agree = 0;
    for s in 0..NUM_DIGITS {
        let mut ds = digits();
        ds.rotate_left(s);
        let scene = build_disk_scene(ds, None, static_geometry(), 0.0).unwrap();
        let stream = run_acquisition(&scene, &pack, &timing, &noise, &adc).unwrap();
        let events = classify_stream(&stream, &model, &cal, None).unwrap();
        let mut f = pattern_features(&pack, &scene.digits[0].image);
        for (v, b) in f.iter_mut().zip(&pack.biases) {
            *v += b;
        }
        let expected = argmax(&forward_from_features(&model, &FeatureVector::new(&f).unwrap()).unwrap()) as u8;
        agree += (events[0].label == expected) as usize;
    }
    assert_eq!(agree, NUM_DIGITS);
}
