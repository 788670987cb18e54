//! Event output, scoring against simulator truth, throughput and latency reports.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{classify_frame, CalibrationInfo, ClassificationEvent, ClassifyError, MeasurementFrame};
use crate::nn::{ModelParams, NUM_KERNELS};
use crate::optics::{FrameTruth, TimingModel};

pub fn events_to_csv(events: &[ClassificationEvent]) -> String {
    let mut out = String::from("timestamp,label,confidence,latency_s,bytes\n");
    for e in events {
        writeln!(out, "{:.9},{},{:.6},{:.9},{}", e.timestamp, e.label, e.confidence, e.latency, e.bytes).unwrap();
    }
    out
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

pub fn truth_to_csv(truth: &[FrameTruth]) -> String {
    let mut out = String::from("frame,time_s,digit,label,offset_mm,visible_ink\n");
    for t in truth {
        let offset = if t.offset_mm.is_finite() { format!("{:.4}", t.offset_mm) } else { "none".into() };
        writeln!(out, "{},{:.9},{},{},{},{:.6}", t.frame, t.time, opt(t.digit), opt(t.label), offset, t.visible_ink)
            .unwrap();
    }
    out
}

pub fn parse_truth_csv(text: &str) -> Result<Vec<FrameTruth>, ClassifyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ClassifyError::Truth { line: i + 1, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let maybe = |s: &str| -> Result<Option<usize>, ClassifyError> {
            if s == "none" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| err(format!("{s:?}: {e}")))
            }
        };
        out.push(FrameTruth {
            frame: f[0].parse().map_err(|e| err(format!("{:?}: {e}", f[0])))?,
            time: num(f[1])?,
            digit: maybe(f[2])?,
            label: maybe(f[3])?.map(|l| l as u8),
            offset_mm: if f[4] == "none" { f64::NAN } else { num(f[4])? },
            visible_ink: num(f[5])?,
        });
    }
    Ok(out)
}

/// Which frames count as showing a digit for scoring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRule {
    /// Minimum fraction of the digit's ink inside the window.
    pub min_visible_ink: f64,
}

impl Default for TruthRule {
    fn default() -> Self {
        Self { min_visible_ink: 1.0 }
    }
}

impl TruthRule {
    fn counts(&self, t: &FrameTruth) -> bool {
        t.label.is_some() && t.visible_ink >= self.min_visible_ink - 1e-9
    }
}

/// Linear-interpolated percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub frames: usize,
    pub events: usize,
    /// Frames that satisfy the truth rule.
    pub truth_frames: usize,
    /// Truth frames classified correctly; an undetected truth frame counts as wrong.
    pub correct: usize,
    pub accuracy: f64,
    /// Events on frames with any ink of a labelled digit.
    pub presence_events: usize,
    pub presence_correct: usize,
    pub presence_accuracy: f64,
    /// Events on frames with nothing in the window.
    pub false_events: usize,
    pub latency_mean: f64,
    pub latency_p50: f64,
    pub latency_p99: f64,
    pub bytes_per_frame: usize,
    pub frame_rate: f64,
}

pub fn score(events: &[ClassificationEvent], truth: &[FrameTruth], rule: TruthRule, timing: &TimingModel) -> Summary {
    let by_frame: std::collections::HashMap<usize, &ClassificationEvent> =
        events.iter().map(|e| (e.frame, e)).collect();
    let (mut truth_frames, mut correct) = (0, 0);
    for t in truth.iter().filter(|t| rule.counts(t)) {
        truth_frames += 1;
        if by_frame.get(&t.frame).is_some_and(|e| Some(e.label) == t.label) {
            correct += 1;
        }
    }
    let truth_of: std::collections::HashMap<usize, &FrameTruth> = truth.iter().map(|t| (t.frame, t)).collect();
    let (mut presence_events, mut presence_correct, mut false_events) = (0, 0, 0);
    for e in events {
        match truth_of.get(&e.frame).and_then(|t| t.label) {
            Some(l) => {
                presence_events += 1;
                presence_correct += (l == e.label) as usize;
            }
            None => false_events += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    let lat: Vec<f64> = events.iter().map(|e| e.latency).collect();
    let tp = throughput_report(timing);
    Summary {
        frames: truth.len(),
        events: events.len(),
        truth_frames,
        correct,
        accuracy: ratio(correct, truth_frames),
        presence_events,
        presence_correct,
        presence_accuracy: ratio(presence_correct, presence_events),
        false_events,
        latency_mean: if lat.is_empty() { f64::NAN } else { lat.iter().sum::<f64>() / lat.len() as f64 },
        latency_p50: percentile(&lat, 50.0),
        latency_p99: percentile(&lat, 99.0),
        bytes_per_frame: tp.bytes_per_frame,
        frame_rate: tp.frames_per_second,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThroughputReport {
    pub samples_per_pattern: usize,
    pub frame_time: f64,
    pub frames_per_second: f64,
    pub bytes_per_second: f64,
    pub bytes_per_frame: usize,
}

pub fn throughput_report(timing: &TimingModel) -> ThroughputReport {
    let spp = timing.samples_per_pattern();
    ThroughputReport {
        samples_per_pattern: spp,
        frame_time: timing.frame_time(),
        frames_per_second: timing.dmd_rate / timing.patterns_per_frame as f64,
        bytes_per_second: 2.0 * timing.adc_rate,
        bytes_per_frame: 2 * spp * timing.patterns_per_frame,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub frames: usize,
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    /// Frame time the p99 must beat.
    pub budget: f64,
    pub pass: bool,
}

/// Times `frames` classifications of synthetic frames (seeded random slot voltages).
pub fn bench(
    model: &ModelParams,
    cal: &CalibrationInfo,
    timing: &TimingModel,
    frames: usize,
    seed: u64,
) -> Result<LatencyReport, ClassifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bytes = 2 * timing.samples_per_frame();
    let mut lat = Vec::with_capacity(frames);
    for i in 0..frames {
        let values = (0..2 * NUM_KERNELS).map(|_| cal.dark + rng.random_range(0.0..0.05)).collect();
        let frame = MeasurementFrame::new(values, i, 0.0)?;
        lat.push(classify_frame(&frame, model, cal, bytes)?.latency);
    }
    let budget = timing.frame_time();
    let p99 = percentile(&lat, 99.0);
    Ok(LatencyReport {
        frames,
        mean: lat.iter().sum::<f64>() / frames.max(1) as f64,
        p50: percentile(&lat, 50.0),
        p99,
        budget,
        pass: p99 < budget,
    })
}
