//! Rotating-disk bench simulation.
//!
//! Eight carved digits ride a disk through a fixed square illumination
//! window. Each ADC sample integrates the currently displayed binary pattern
//! against the window's transmittance at that sample's instant, so motion
//! blur within and across patterns comes out of the geometry.

mod acquire;
mod scene;
mod stream;

pub use acquire::{
    pattern_measurements, run_acquisition, run_reference_acquisition, single_pixel_sample, PatternIntegrals, Reading,
};
pub use scene::{build_disk_scene, frame_truth, scene_window, DigitPlacement, DiskGeometry, DiskScene, FrameTruth};
pub use stream::{
    decode_stream, encode_stream, load_stream, save_stream, RawSampleStream, Sample, STREAM_FORMAT_VERSION,
    STREAM_MAGIC,
};

use thiserror::Error;

pub const DISK_RADIUS_M: f64 = 0.15;
pub const WINDOW_SIDE_M: f64 = 0.045;
pub const NUM_DIGITS: usize = 8;
pub const DEFAULT_DMD_RATE_HZ: f64 = 17_850.0;
pub const DEFAULT_ADC_RATE_HZ: f64 = 500_000.0;
pub const DEFAULT_LOOPS: usize = 400;

/// Motor drive voltage (V) and the resulting angular velocity (rad/s) of the bench.
pub const MOTOR_VOLTAGE_TABLE: [(f64, f64); 7] =
    [(0.0, 0.0), (1.5, 24.05), (2.0, 32.49), (2.5, 37.74), (3.0, 48.34), (3.5, 54.94), (4.0, 63.31)];

/// Angular velocity for a tabulated motor voltage.
pub fn motor_voltage_to_omega(volts: f64) -> Option<f64> {
    MOTOR_VOLTAGE_TABLE.iter().find(|(v, _)| (v - volts).abs() < 1e-9).map(|&(_, w)| w)
}

#[derive(Debug, Error)]
pub enum OpticsError {
    #[error("expected {NUM_DIGITS} digits, got {0}")]
    DigitCount(usize),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("invalid noise configuration: {0}")]
    Noise(String),
    #[error("invalid ADC configuration: {0}")]
    Adc(String),
    #[error("pattern is {actual} values, window grid is {expected}")]
    GridMismatch { expected: usize, actual: usize },
    #[error("stream file: {0}")]
    Format(String),
    #[error("unsupported stream format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingModel {
    pub dmd_rate: f64,
    pub adc_rate: f64,
    pub patterns_per_frame: usize,
    pub loops: usize,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            dmd_rate: DEFAULT_DMD_RATE_HZ,
            adc_rate: DEFAULT_ADC_RATE_HZ,
            patterns_per_frame: 30,
            loops: DEFAULT_LOOPS,
        }
    }
}

impl TimingModel {
    pub fn samples_per_pattern(&self) -> usize {
        (self.adc_rate / self.dmd_rate).floor() as usize
    }

    pub fn samples_per_frame(&self) -> usize {
        self.samples_per_pattern() * self.patterns_per_frame
    }

    pub fn total_samples(&self) -> usize {
        self.samples_per_frame() * self.loops
    }

    /// Duration of one pass through all patterns, in seconds.
    pub fn frame_time(&self) -> f64 {
        self.patterns_per_frame as f64 / self.dmd_rate
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.dmd_rate.is_finite() && self.dmd_rate > 0.0) {
            return Err(OpticsError::Timing(format!("DMD rate must be positive, got {}", self.dmd_rate)));
        }
        if !(self.adc_rate.is_finite() && self.adc_rate > 0.0) {
            return Err(OpticsError::Timing(format!("ADC rate must be positive, got {}", self.adc_rate)));
        }
        if self.samples_per_pattern() == 0 {
            return Err(OpticsError::Timing("ADC rate below DMD rate leaves no samples per pattern".into()));
        }
        if self.patterns_per_frame == 0 || self.patterns_per_frame % 2 != 0 {
            return Err(OpticsError::Timing(format!(
                "patterns per frame must be even and positive, got {}",
                self.patterns_per_frame
            )));
        }
        Ok(())
    }
}

/// Photodiode and amplifier model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Noise standard deviation at the reference DMD rate, volts.
    pub sigma0: f64,
    /// Volts per unit normalized transmitted intensity.
    pub alpha: f64,
    pub dark: f64,
    pub seed: u64,
}

/// DMD rate at which `sigma0` is specified.
pub const REFERENCE_DMD_RATE_HZ: f64 = 17_850.0;

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma0: 0.002, alpha: 5.0, dark: 0.1, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { sigma0: 0.0, ..Self::default() }
    }

    /// Per-sample σ: shorter pattern dwell means less integration, more noise.
    pub fn sigma_at(&self, dmd_rate: f64) -> f64 {
        self.sigma0 * (dmd_rate / REFERENCE_DMD_RATE_HZ).sqrt()
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.sigma0.is_finite() && self.sigma0 >= 0.0) {
            return Err(OpticsError::Noise(format!("sigma must be non-negative, got {}", self.sigma0)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(OpticsError::Noise(format!("gain must be positive, got {}", self.alpha)));
        }
        if !self.dark.is_finite() {
            return Err(OpticsError::Noise("dark level must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdcConfig {
    pub full_scale: f64,
    pub bits: u32,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self { full_scale: 10.0, bits: 16 }
    }
}

impl AdcConfig {
    pub fn max_code(&self) -> u16 {
        ((1u32 << self.bits) - 1) as u16
    }

    /// Volts per code step.
    pub fn lsb(&self) -> f64 {
        self.full_scale / self.max_code() as f64
    }

    /// Quantizes to the nearest code; the flag is set when `volts` is outside `[0, full_scale]`.
    pub fn quantize(&self, volts: f64) -> (u16, bool) {
        let saturated = !(0.0..=self.full_scale).contains(&volts);
        let code = (volts / self.lsb()).round().clamp(0.0, self.max_code() as f64);
        (code as u16, saturated)
    }

    pub fn to_volts(&self, code: u16) -> f64 {
        code as f64 * self.lsb()
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(1..=16).contains(&self.bits) {
            return Err(OpticsError::Adc(format!("bits must be in 1..=16, got {}", self.bits)));
        }
        if !(self.full_scale.is_finite() && self.full_scale > 0.0) {
            return Err(OpticsError::Adc(format!("full scale must be positive, got {}", self.full_scale)));
        }
        Ok(())
    }
}
