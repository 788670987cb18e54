use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use spc_core::classify::{
    self, classify_stream, estimate_calibration, events_to_csv, parse_truth_csv, score, throughput_report,
    truth_to_csv, CalibrationInfo, ClassifyError, GainSource, TruthRule,
};
use spc_core::data::{load_mnist, load_model, save_model, AugmentConfig, LabeledDataset, Split};
use spc_core::nn::{
    argmax, evaluate_accuracy, forward, forward_from_features, init_params, AdamConfig, TrainConfig, NUM_KERNELS,
};
use spc_core::optics::{
    build_disk_scene, frame_truth, load_stream, motor_voltage_to_omega, run_acquisition, run_reference_acquisition,
    save_stream, AdcConfig, DiskGeometry, NoiseConfig, TimingModel, NUM_DIGITS,
};
use spc_core::patterns::{
    build_pattern_pack, dither_floyd_steinberg, extract_kernels, fidelity_error, load_pack, normalize_kernel,
    pattern_features, save_pack, upsample_bicubic, write_pgm, PatternPack,
};
use spc_core::FeatureVector;

use crate::{BenchArgs, ClassifyArgs, ExportArgs, SimulateArgs, TestArgs, TrainArgs};

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn limited(data: LabeledDataset, limit: Option<u64>) -> LabeledDataset {
    match limit {
        Some(n) => data.truncated(n as usize),
        None => data,
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let train = limited(load_mnist(&a.mnist_dir, Split::Train)?, a.train_limit);
    let test = limited(load_mnist(&a.mnist_dir, Split::Test)?, a.test_limit);
    let cfg = TrainConfig {
        adam: AdamConfig { lr: a.lr, ..AdamConfig::default() },
        batch_size: a.batch_size as usize,
        epochs: a.epochs as usize,
        seed: a.seed,
        augment: AugmentConfig {
            max_shift: a.max_shift as i32,
            max_rotation_deg: a.max_rotation,
            probability: a.augment_prob,
        },
    };
    eprintln!("training on {} images, evaluating on {}", train.len(), test.len());
    let outcome = spc_core::nn::train(init_params(a.seed), &train, Some(&test), &cfg, |m| {
        eprintln!(
            "epoch {:>2}  loss {:.5}  test accuracy {:.4}",
            m.epoch,
            m.train_loss,
            m.held_out_accuracy.unwrap_or(f64::NAN)
        );
    })?;
    save_model(&outcome.model, &a.out)?;
    if let Some(path) = &a.metrics {
        let mut csv = String::from("epoch,train_loss,test_accuracy\n");
        for m in &outcome.history {
            writeln!(csv, "{},{:.8},{:.6}", m.epoch, m.train_loss, m.held_out_accuracy.unwrap_or(f64::NAN))?;
        }
        write(path, csv)?;
    }
    let last = outcome.history.last().and_then(|m| m.held_out_accuracy).unwrap_or(f64::NAN);
    println!("test_accuracy={last:.4}");
    println!("model={}", a.out.display());
    Ok(())
}

pub fn test(a: TestArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let test = limited(load_mnist(&a.mnist_dir, Split::Test)?, a.limit);
    println!("images={}", test.len());
    println!("accuracy={:.4}", evaluate_accuracy(&model, &test));

    if let Some(path) = &a.pack {
        let pack = load_pack(path)?;
        let (mut correct, mut agree, mut err_sum) = (0usize, 0usize, 0.0);
        for (img, &label) in test.images.iter().zip(&test.labels) {
            let mut f = pattern_features(&pack, img);
            for (v, b) in f.iter_mut().zip(&pack.biases) {
                *v += b;
            }
            let p = forward_from_features(&model, &FeatureVector::new(&f)?)?;
            let q = forward(&model, img)?;
            correct += (argmax(&p) == label as usize) as usize;
            agree += (argmax(&p) == argmax(&q)) as usize;
            err_sum += fidelity_error(&pack, &model, img);
        }
        let n = test.len().max(1) as f64;
        println!("pattern_accuracy={:.4}", correct as f64 / n);
        println!("pattern_argmax_agreement={:.4}", agree as f64 / n);
        println!("pattern_mean_relative_error={:.4}", err_sum / n);
    }

    if let Some(i) = a.index {
        let full = load_mnist(&a.mnist_dir, Split::Test)?;
        if i >= full.len() {
            bail!("--index {i} is out of range for {} test images", full.len());
        }
        let p = forward(&model, &full.images[i])?;
        println!("index={i} label={} predicted={}", full.labels[i], argmax(&p));
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&x, &y| p[y].total_cmp(&p[x]));
        for c in order {
            println!("  {c}: {:.6}", p[c]);
        }
    }
    Ok(())
}

pub fn export_patterns(a: ExportArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let k = a.upsample as usize;
    let pack = build_pattern_pack(&model, k)?;
    save_pack(&pack, &a.out)?;
    if let Some(dir) = &a.preview_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let (kernels, _) = extract_kernels(&model);
        for (i, kernel) in kernels.iter().enumerate() {
            let (gray, _) = normalize_kernel(kernel, i)?;
            let up = upsample_bicubic(&gray, k)?;
            write(&dir.join(format!("kernel_{i:02}_gray.pgm")), write_pgm(up.width, up.height, &up.values))?;
            let bin = dither_floyd_steinberg(&up);
            let bits: Vec<f64> = bin.bits.iter().map(|&b| b as f64).collect();
            write(&dir.join(format!("kernel_{i:02}_pattern.pgm")), write_pgm(bin.width, bin.height, &bits))?;
        }
    }
    println!("patterns={} side={} upsample={k}", 2 * pack.pairs.len(), pack.side());
    println!("pack={}", a.out.display());
    Ok(())
}

fn default_truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.csv")
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let pack = load_pack(&a.pack)?;
    let test = load_mnist(&a.mnist_dir, Split::Test)?;
    let indices = match &a.digits {
        Some(d) => {
            if let Some(&bad) = d.iter().find(|&&i| i >= test.len()) {
                bail!("--digits index {bad} is out of range for {} test images", test.len());
            }
            d.clone()
        }
        None => test.sample_indices(NUM_DIGITS, a.digit_seed),
    };
    let omega = match (a.omega, a.motor_voltage) {
        (Some(w), _) => w,
        (None, Some(v)) => motor_voltage_to_omega(v).expect("validated"),
        (None, None) => 0.0,
    };
    let start_deg = a.start_angle.unwrap_or(if omega == 0.0 { 0.0 } else { -22.5 });
    let geometry = DiskGeometry { initial_angle: start_deg.to_radians(), ..DiskGeometry::default() };
    let digits = indices.iter().map(|&i| test.images[i].clone()).collect();
    let labels = indices.iter().map(|&i| test.labels[i]).collect();
    let scene = build_disk_scene(digits, Some(labels), geometry, omega)?;
    let timing =
        TimingModel { dmd_rate: a.dmd_rate, adc_rate: a.adc_rate, loops: a.loops as usize, ..TimingModel::default() };
    let noise = NoiseConfig { sigma0: a.sigma0, alpha: a.alpha, dark: a.dark, seed: a.seed };
    let adc = AdcConfig::default();

    let stream = run_acquisition(&scene, &pack, &timing, &noise, &adc)?;
    save_stream(&stream, &a.out)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| default_truth_path(&a.out));
    write(&truth_path, truth_to_csv(&frame_truth(&scene, &timing)))?;
    if let Some(path) = &a.reference {
        let reference = run_reference_acquisition(&pack, &timing, &noise, &adc)?;
        save_stream(&reference, path)?;
    }

    let list: Vec<String> =
        indices.iter().zip(&scene.digits).map(|(i, d)| format!("{i}:{}", d.label.unwrap_or(0))).collect();
    println!("digits={}", list.join(" "));
    println!("omega_rad_s={omega} speed_m_s={:.3}", scene.linear_speed());
    println!("samples={} frames={} saturated={}", stream.len(), stream.num_frames(), stream.saturated);
    println!("stream={}", a.out.display());
    println!("truth={}", truth_path.display());
    Ok(())
}

fn calibration_hint(e: anyhow::Error) -> anyhow::Error {
    match e.downcast_ref::<ClassifyError>() {
        Some(ClassifyError::NoDarkInterval) => {
            anyhow::anyhow!(
                "{e}; the window never stays empty for a whole frame, pass --dark <VOLTS> with the known dark level"
            )
        }
        _ => e,
    }
}

pub fn classify(a: ClassifyArgs) -> Result<()> {
    let stream = load_stream(&a.stream)?;
    let model = load_model(&a.model)?;
    let pack = load_pack(&a.pack)?;
    check_pack(&pack)?;
    let reference = a.reference.as_deref().map(load_stream).transpose()?;
    let gain = match &reference {
        Some(r) => GainSource::Reference(r),
        None => GainSource::Known(a.alpha.unwrap_or(stream.noise.alpha)),
    };
    let cal = estimate_calibration(&stream, &pack, gain, a.dark).map_err(|e| calibration_hint(e.into()))?;
    let events = classify_stream(&stream, &model, &cal, a.threshold)?;
    write(&a.events, events_to_csv(&events))?;

    let mut rows: Vec<(&str, String)> = vec![
        ("frames", stream.num_frames().to_string()),
        ("events", events.len().to_string()),
        ("alpha_hat_v", format!("{:.6}", cal.alpha_hat)),
        ("dark_v", format!("{:.6}", cal.dark)),
        ("threshold_v", format!("{:.6}", a.threshold.unwrap_or_else(|| cal.presence_threshold()))),
    ];
    if let Some(path) = &a.truth {
        let truth = parse_truth_csv(&read_to_string(path)?)?;
        let s = score(&events, &truth, TruthRule { min_visible_ink: a.min_visible_ink }, &stream.timing);
        rows.extend([
            ("truth_frames", s.truth_frames.to_string()),
            ("correct", s.correct.to_string()),
            ("accuracy", format!("{:.4}", s.accuracy)),
            ("presence_events", s.presence_events.to_string()),
            ("presence_accuracy", format!("{:.4}", s.presence_accuracy)),
            ("false_events", s.false_events.to_string()),
        ]);
    }
    let tp = throughput_report(&stream.timing);
    let lat: Vec<f64> = events.iter().map(|e| e.latency).collect();
    rows.extend([
        ("frame_rate_hz", format!("{:.3}", tp.frames_per_second)),
        ("bytes_per_frame", tp.bytes_per_frame.to_string()),
        ("bytes_per_second", format!("{:.0}", tp.bytes_per_second)),
        ("latency_p50_s", format!("{:.9}", classify::percentile(&lat, 50.0))),
        ("latency_p99_s", format!("{:.9}", classify::percentile(&lat, 99.0))),
    ]);
    let mut csv = String::from("metric,value\n");
    for (k, v) in &rows {
        println!("{k}={v}");
        writeln!(csv, "{k},{v}")?;
    }
    if let Some(path) = &a.summary {
        write(path, csv)?;
    }
    Ok(())
}

fn check_pack(pack: &PatternPack) -> Result<()> {
    if pack.pairs.len() != NUM_KERNELS {
        bail!("pattern pack holds {} pairs, the network needs {NUM_KERNELS}", pack.pairs.len());
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let pack = load_pack(&a.pack)?;
    check_pack(&pack)?;
    let timing = TimingModel { dmd_rate: a.dmd_rate, adc_rate: a.adc_rate, ..TimingModel::default() };
    timing.validate()?;
    let noise = NoiseConfig::default();
    let cal = CalibrationInfo::new(noise.alpha, noise.dark, &pack, AdcConfig::default().lsb())?;
    let r = classify::bench(&model, &cal, &timing, a.frames as usize, a.seed)?;
    println!("frames={}", r.frames);
    println!("latency_mean_s={:.9}", r.mean);
    println!("latency_p50_s={:.9}", r.p50);
    println!("latency_p99_s={:.9}", r.p99);
    println!("budget_s={:.9}", r.budget);
    println!("verdict={}", if r.pass { "PASS" } else { "FAIL" });
    Ok(())
}
