//! Stream consumer: sample averaging, differential features, calibration,
//! presence gating and measurement-fed inference.

mod report;

pub use report::{
    bench, events_to_csv, parse_truth_csv, percentile, score, throughput_report, truth_to_csv, LatencyReport, Summary,
    ThroughputReport, TruthRule,
};

use std::time::Instant;

use thiserror::Error;

use crate::nn::{argmax, forward_from_features, FeatureVector, ModelParams, NnError, IMAGE_PIXELS, NUM_KERNELS};
use crate::optics::{RawSampleStream, TimingModel};
use crate::patterns::PatternPack;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("expected {expected} samples, got {actual}")]
    SliceLength { expected: usize, actual: usize },
    #[error("frame has {0} measurements, expected {expected}", expected = 2 * NUM_KERNELS)]
    FrameLength(usize),
    #[error("estimated gain must be positive, got {0}")]
    Gain(f64),
    #[error("presence threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("no dark interval found in the stream")]
    NoDarkInterval,
    #[error("calibration stream is empty")]
    EmptyReference,
    #[error("stream and calibration disagree: {0}")]
    Mismatch(String),
    #[error("truth file line {line}: {message}")]
    Truth { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Mean of one pattern's samples.
pub fn average_samples(slice: &[f64], samples_per_pattern: usize) -> Result<f64, ClassifyError> {
    if slice.len() != samples_per_pattern || slice.is_empty() {
        return Err(ClassifyError::SliceLength { expected: samples_per_pattern, actual: slice.len() });
    }
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// One loop of pattern-level measurements, slot order `(P⁺₀, P⁻₀, P⁺₁, …)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementFrame {
    pub values: Vec<f64>,
    pub loop_index: usize,
    pub start: f64,
}

impl MeasurementFrame {
    pub fn new(values: Vec<f64>, loop_index: usize, start: f64) -> Result<Self, ClassifyError> {
        if values.len() != 2 * NUM_KERNELS {
            return Err(ClassifyError::FrameLength(values.len()));
        }
        Ok(Self { values, loop_index, start })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Turns a sample-by-sample voltage feed into loop-aligned frames.
pub struct FrameAssembler {
    timing: TimingModel,
    pattern: Vec<f64>,
    slots: Vec<f64>,
    consumed: usize,
}

impl FrameAssembler {
    pub fn new(timing: TimingModel) -> Self {
        Self {
            pattern: Vec::with_capacity(timing.samples_per_pattern()),
            slots: Vec::with_capacity(timing.patterns_per_frame),
            timing,
            consumed: 0,
        }
    }

    /// Feeds one sample; returns the frame it completes, if any.
    pub fn push(&mut self, voltage: f64) -> Option<MeasurementFrame> {
        self.pattern.push(voltage);
        self.consumed += 1;
        let spp = self.timing.samples_per_pattern();
        if self.pattern.len() < spp {
            return None;
        }
        self.slots.push(average_samples(&self.pattern, spp).expect("full pattern"));
        self.pattern.clear();
        if self.slots.len() < self.timing.patterns_per_frame {
            return None;
        }
        let spf = self.timing.samples_per_frame();
        let loop_index = self.consumed / spf - 1;
        let start = (loop_index * spf) as f64 / self.timing.adc_rate;
        Some(MeasurementFrame { values: std::mem::take(&mut self.slots), loop_index, start })
    }
}

pub fn assemble_frames(stream: &RawSampleStream) -> Vec<MeasurementFrame> {
    let mut asm = FrameAssembler::new(stream.timing);
    stream.samples().filter_map(|s| asm.push(s.voltage)).collect()
}

/// `d[i] = m[2i] − m[2i+1]`.
pub fn differential(frame: &MeasurementFrame) -> [f64; NUM_KERNELS] {
    let mut d = [0.0; NUM_KERNELS];
    for (i, v) in d.iter_mut().enumerate() {
        *v = frame.values[2 * i] - frame.values[2 * i + 1];
    }
    d
}

/// Everything needed to put raw differentials into the network's feature units.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationInfo {
    /// Volts per unit normalized intensity.
    pub alpha_hat: f64,
    pub dark: f64,
    pub scales: Vec<f64>,
    pub upsample: usize,
    pub biases: Vec<f64>,
    /// Standard deviation of dark-frame means, volts.
    pub dark_sigma: f64,
    /// Per-sample noise estimate, volts.
    pub sample_sigma: f64,
    /// ADC step, volts.
    pub lsb: f64,
}

impl CalibrationInfo {
    pub fn new(alpha_hat: f64, dark: f64, pack: &PatternPack, lsb: f64) -> Result<Self, ClassifyError> {
        if !(alpha_hat.is_finite() && alpha_hat > 0.0) {
            return Err(ClassifyError::Gain(alpha_hat));
        }
        Ok(Self {
            alpha_hat,
            dark,
            scales: pack.scales(),
            upsample: pack.upsample,
            biases: pack.biases.clone(),
            dark_sigma: 0.0,
            sample_sigma: 0.0,
            lsb,
        })
    }

    /// Default presence threshold: `5·σ̂_dark`, never below one ADC step.
    pub fn presence_threshold(&self) -> f64 {
        (5.0 * self.dark_sigma).max(self.lsb)
    }
}

/// `features[i] = B[i]·784·d[i]/α̂ + bias[i]`.
///
/// A differential over the full mirror grid measures `⟨2P⁺−1, x⟩/N` with
/// `N = 784·k²` mirrors, and `⟨2P⁺−1, x⟩ ≈ k²·⟨2g−1, x₂₈⟩`, so the factor
/// 784 turns it back into a 28×28 inner product.
pub fn calibrate(d: &[f64; NUM_KERNELS], cal: &CalibrationInfo) -> Result<FeatureVector, ClassifyError> {
    if !(cal.alpha_hat.is_finite() && cal.alpha_hat > 0.0) {
        return Err(ClassifyError::Gain(cal.alpha_hat));
    }
    let mut f = [0.0; NUM_KERNELS];
    for i in 0..NUM_KERNELS {
        f[i] = cal.scales[i] * IMAGE_PIXELS as f64 * d[i] / cal.alpha_hat + cal.biases[i];
    }
    Ok(FeatureVector::new(&f)?)
}

/// Robust per-sample noise level from successive differences within each
/// pattern slot: `median|Δv| / (0.6745·√2)`.
pub fn estimate_sample_noise(stream: &RawSampleStream) -> f64 {
    let spp = stream.timing.samples_per_pattern();
    let mut diffs: Vec<f64> = Vec::with_capacity(stream.len());
    for chunk in stream.codes.chunks_exact(spp) {
        for w in chunk.windows(2) {
            diffs.push((w[1] as f64 - w[0] as f64).abs());
        }
    }
    if diffs.is_empty() {
        return 0.0;
    }
    let mid = diffs.len() / 2;
    let (_, median, _) = diffs.select_nth_unstable_by(mid, f64::total_cmp);
    *median * stream.adc.lsb() / (0.6745 * std::f64::consts::SQRT_2)
}

/// Where the gain comes from.
pub enum GainSource<'a> {
    Known(f64),
    /// A run through a fully open window with the same patterns and detector.
    Reference(&'a RawSampleStream),
}

/// Finds dark frames (flat, at the lowest level) to fix the dark level and
/// its spread, then takes the gain from `gain`. A known `dark` level skips
/// the search; its spread then comes from the sample noise estimate.
pub fn estimate_calibration(
    stream: &RawSampleStream,
    pack: &PatternPack,
    gain: GainSource<'_>,
    dark: Option<f64>,
) -> Result<CalibrationInfo, ClassifyError> {
    let lsb = stream.adc.lsb();
    let sigma = estimate_sample_noise(stream);
    let spf = stream.timing.samples_per_frame() as f64;
    let (dark, dark_sigma) = match dark {
        Some(d) => (d, sigma / spf.sqrt()),
        None => find_dark(stream, sigma)?,
    };
    let alpha_hat = match gain {
        GainSource::Known(a) => a,
        GainSource::Reference(r) => reference_gain(r, stream, dark)?,
    };
    let mut cal = CalibrationInfo::new(alpha_hat, dark, pack, lsb)?;
    cal.dark_sigma = dark_sigma;
    cal.sample_sigma = sigma;
    Ok(cal)
}

/// Mean and spread of the dark frames' means.
fn find_dark(stream: &RawSampleStream, sigma: f64) -> Result<(f64, f64), ClassifyError> {
    let lsb = stream.adc.lsb();
    let frames = assemble_frames(stream);
    let spp = stream.timing.samples_per_pattern() as f64;
    let spf = stream.timing.samples_per_frame() as f64;
    let tol_d = 6.0 * (sigma * (2.0 / spp).sqrt() + lsb);
    let tol_mean = 6.0 * (sigma / spf.sqrt() + lsb);
    let means: Vec<f64> = frames.iter().map(|f| f.mean()).collect();
    let lowest = means.iter().copied().fold(f64::INFINITY, f64::min);
    let dark_means: Vec<f64> = frames
        .iter()
        .zip(&means)
        .filter(|(f, &m)| m <= lowest + tol_mean && differential(f).iter().all(|d| d.abs() <= tol_d))
        .map(|(_, &m)| m)
        .collect();
    if dark_means.is_empty() {
        return Err(ClassifyError::NoDarkInterval);
    }
    let n = dark_means.len() as f64;
    let dark = dark_means.iter().sum::<f64>() / n;
    let dark_sigma = if dark_means.len() > 1 {
        (dark_means.iter().map(|m| (m - dark).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        sigma / spf.sqrt()
    };
    Ok((dark, dark_sigma))
}

/// Through an open window `m⁺ + m⁻ = 2·dark + α`.
fn reference_gain(reference: &RawSampleStream, stream: &RawSampleStream, dark: f64) -> Result<f64, ClassifyError> {
    if reference.timing.patterns_per_frame != stream.timing.patterns_per_frame {
        return Err(ClassifyError::Mismatch("reference run uses a different pattern count".into()));
    }
    let frames = assemble_frames(reference);
    if frames.is_empty() {
        return Err(ClassifyError::EmptyReference);
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for f in &frames {
        for pair in f.values.chunks_exact(2) {
            acc += pair[0] + pair[1] - 2.0 * dark;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// True when the frame mean exceeds `dark + θ`.
pub fn detect_presence(frame: &MeasurementFrame, dark: f64, theta: f64) -> Result<bool, ClassifyError> {
    if !(theta > 0.0) {
        return Err(ClassifyError::Threshold(theta));
    }
    Ok(frame.mean() > dark + theta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationEvent {
    pub frame: usize,
    /// Start of the frame, seconds from stream start.
    pub timestamp: f64,
    pub label: u8,
    pub confidence: f64,
    pub features: FeatureVector,
    /// Wall-clock seconds from differential to softmax.
    pub latency: f64,
    /// Raw sample bytes behind this classification.
    pub bytes: usize,
}

/// Differential → calibrate → network, for one frame.
pub fn classify_frame(
    frame: &MeasurementFrame,
    model: &ModelParams,
    cal: &CalibrationInfo,
    bytes: usize,
) -> Result<ClassificationEvent, ClassifyError> {
    let started = Instant::now();
    let features = calibrate(&differential(frame), cal)?;
    let probs = forward_from_features(model, &features)?;
    let latency = started.elapsed().as_secs_f64();
    let label = argmax(&probs);
    Ok(ClassificationEvent {
        frame: frame.loop_index,
        timestamp: frame.start,
        label: label as u8,
        confidence: probs[label],
        features,
        latency,
        bytes,
    })
}

/// Classifies every frame whose mean clears the presence threshold.
/// `theta` defaults to [`CalibrationInfo::presence_threshold`].
pub fn classify_stream(
    stream: &RawSampleStream,
    model: &ModelParams,
    cal: &CalibrationInfo,
    theta: Option<f64>,
) -> Result<Vec<ClassificationEvent>, ClassifyError> {
    if cal.scales.len() != NUM_KERNELS || cal.biases.len() != NUM_KERNELS {
        return Err(ClassifyError::Mismatch(format!("calibration holds {} kernel scales", cal.scales.len())));
    }
    let theta = theta.unwrap_or_else(|| cal.presence_threshold());
    let bytes = 2 * stream.timing.samples_per_frame();
    let mut asm = FrameAssembler::new(stream.timing);
    let mut events = Vec::new();
    for s in stream.samples() {
        if let Some(frame) = asm.push(s.voltage) {
            if detect_presence(&frame, cal.dark, theta)? {
                events.push(classify_frame(&frame, model, cal, bytes)?);
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, init_params, Image28};
    use crate::optics::{
        build_disk_scene, run_acquisition, run_reference_acquisition, AdcConfig, DiskGeometry, NoiseConfig,
    };
    use crate::patterns::build_pattern_pack;
    use proptest::prelude::*;

    fn frame(values: Vec<f64>) -> MeasurementFrame {
        MeasurementFrame::new(values, 0, 0.0).unwrap()
    }

    fn digit(seed: usize) -> Image28 {
        let px = (0..IMAGE_PIXELS)
            .map(|i| {
                let (x, y) = (i % 28, i / 28);
                let r2 = (x as f64 - 13.5).powi(2) + (y as f64 - 13.5).powi(2);
                if r2 < 60.0 && r2 > 20.0 + seed as f64 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Image28::new(px).unwrap()
    }

    #[test]
    fn averaging() {
        assert_eq!(average_samples(&[2.5; 28], 28).unwrap(), 2.5);
        let ramp: Vec<f64> = (1..=28).map(f64::from).collect();
        assert_eq!(average_samples(&ramp, 28).unwrap(), 14.5);
        assert!(matches!(
            average_samples(&ramp[..27], 28),
            Err(ClassifyError::SliceLength { expected: 28, actual: 27 })
        ));
    }

    #[test]
    fn differential_arithmetic() {
        assert_eq!(differential(&frame(vec![1.0; 30])), [0.0; 15]);
        let mut v = vec![0.0; 30];
        v[0] = 5.0;
        v[1] = 2.0;
        assert_eq!(differential(&frame(v))[0], 3.0);
        assert!(MeasurementFrame::new(vec![0.0; 29], 0, 0.0).is_err());
    }

    #[test]
    fn calibrate_zero_differential_gives_biases() {
        let pack = build_pattern_pack(&init_params(1), 1).unwrap();
        let mut cal = CalibrationInfo::new(2.0, 0.0, &pack, 1e-4).unwrap();
        cal.biases = (0..15).map(|i| i as f64 * 0.1).collect();
        assert_eq!(calibrate(&[0.0; 15], &cal).unwrap().0.to_vec(), cal.biases);
        assert!(CalibrationInfo::new(0.0, 0.0, &pack, 1e-4).is_err());
    }

    #[test]
    fn presence() {
        let dark = frame(vec![0.1; 30]);
        assert!(!detect_presence(&dark, 0.1, 0.01).unwrap());
        let lit = frame(vec![0.2; 30]);
        assert!(detect_presence(&lit, 0.1, 0.01).unwrap());
        assert!(!detect_presence(&lit, 0.1, f64::INFINITY).unwrap());
        assert!(detect_presence(&lit, 0.1, 0.0).is_err());
    }

    #[test]
    fn assembler_emits_loop_aligned_frames() {
        let timing = TimingModel { loops: 2, ..TimingModel::default() };
        let mut asm = FrameAssembler::new(timing);
        let mut frames = Vec::new();
        for n in 0..timing.total_samples() {
            if let Some(f) = asm.push((n / 28 % 30) as f64) {
                frames.push(f);
            }
        }
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].loop_index, 1);
        assert_eq!(frames[1].values, (0..30).map(f64::from).collect::<Vec<_>>());
        assert!((frames[1].start - 840.0 / 500_000.0).abs() < 1e-15);
    }

    fn pipeline(
        omega: f64,
        initial_angle: f64,
        noise: NoiseConfig,
        loops: usize,
    ) -> (ModelParams, PatternPack, RawSampleStream) {
        let model = init_params(21);
        let pack = build_pattern_pack(&model, 5).unwrap();
        let geometry = DiskGeometry { initial_angle, ..DiskGeometry::default() };
        let scene = build_disk_scene((0..8).map(digit).collect(), None, geometry, omega).unwrap();
        let timing = TimingModel { loops, ..TimingModel::default() };
        let stream = run_acquisition(&scene, &pack, &timing, &noise, &AdcConfig::default()).unwrap();
        (model, pack, stream)
    }

    #[test]
    fn static_noiseless_frames_agree_with_numerical_forward() {
        let noise = NoiseConfig::noiseless();
        let (model, pack, stream) = pipeline(0.0, 0.0, noise, 3);
        let cal = CalibrationInfo::new(noise.alpha, noise.dark, &pack, stream.adc.lsb()).unwrap();
        let events = classify_stream(&stream, &model, &cal, None).unwrap();
        assert_eq!(events.len(), 3);
        let want = argmax(&forward(&model, &digit(0)).unwrap()) as u8;
        assert!(events.iter().all(|e| e.label == want && e.bytes == 1680));
        assert!(events.windows(2).all(|w| w[0].features == w[1].features));
    }

    #[test]
    fn always_lit_stream_has_no_dark_interval() {
        let (_, pack, stream) = pipeline(0.0, 0.0, NoiseConfig::noiseless(), 3);
        let err = estimate_calibration(&stream, &pack, GainSource::Known(5.0), None).unwrap_err();
        assert!(matches!(err, ClassifyError::NoDarkInterval));
    }

    #[test]
    fn calibration_recovers_dark_and_gain() {
        let noise = NoiseConfig::noiseless();
        let (_, pack, stream) = pipeline(24.05, -0.39, noise, 20);
        let reference = run_reference_acquisition(&pack, &stream.timing, &noise, &stream.adc).unwrap();
        let cal = estimate_calibration(&stream, &pack, GainSource::Reference(&reference), None).unwrap();
        assert!((cal.dark - noise.dark).abs() <= stream.adc.lsb());
        assert!((cal.alpha_hat - noise.alpha).abs() <= 4.0 * stream.adc.lsb(), "{}", cal.alpha_hat);

        let noisy = NoiseConfig::default();
        let (_, pack, stream) = pipeline(24.05, -0.39, noisy, 20);
        let reference =
            run_reference_acquisition(&pack, &stream.timing, &NoiseConfig { seed: 99, ..noisy }, &stream.adc).unwrap();
        let cal = estimate_calibration(&stream, &pack, GainSource::Reference(&reference), None).unwrap();
        assert!((cal.alpha_hat - noisy.alpha).abs() / noisy.alpha <= 0.02);
        assert!((cal.sample_sigma - noisy.sigma0).abs() / noisy.sigma0 < 0.2, "{}", cal.sample_sigma);
    }

    proptest! {
        #[test]
        fn common_mode_and_gain_invariance(
            vals in proptest::collection::vec(0.0f64..3.0, 30),
            c in -1.0f64..1.0,
            gamma in 0.1f64..10.0,
        ) {
            let pack = build_pattern_pack(&init_params(2), 1).unwrap();
            let cal = CalibrationInfo::new(2.0, 0.0, &pack, 1e-4).unwrap();
            let base = differential(&frame(vals.clone()));
            let shifted = differential(&frame(vals.iter().map(|v| v + c).collect()));
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let scaled = differential(&frame(vals.iter().map(|v| v * gamma).collect()));
            let cal_scaled = CalibrationInfo { alpha_hat: cal.alpha_hat * gamma, ..cal.clone() };
            let f1 = calibrate(&base, &cal).unwrap();
            let f2 = calibrate(&scaled, &cal_scaled).unwrap();
            for (a, b) in f1.0.iter().zip(&f2.0) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
