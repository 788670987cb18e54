//! Raw ADC sample streams and the SPCS dump format.
//!
//! SPCS layout (little-endian): `"SPCS"`, `u16` version; timing as `f64`
//! DMD rate, `f64` ADC rate, `u32` samples per pattern, `u32` patterns per
//! frame, `u32` loops; noise as `f64` σ₀, `f64` gain, `f64` dark level,
//! `u64` seed; ADC as `f64` full scale, `u16` bits; `u64` sample count; then
//! one `u16` code per sample.

use std::path::Path;

use super::{AdcConfig, NoiseConfig, OpticsError, TimingModel};
use crate::binio::{Reader, Writer};

pub const STREAM_MAGIC: &[u8; 4] = b"SPCS";
pub const STREAM_FORMAT_VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 8 + 8 + 4 + 4 + 4 + 8 + 8 + 8 + 8 + 8 + 2 + 8;

/// One sample as seen by a consumer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub timestamp: f64,
    pub voltage: f64,
    /// Pattern slot within the loop.
    pub pattern: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSampleStream {
    pub timing: TimingModel,
    pub noise: NoiseConfig,
    pub adc: AdcConfig,
    pub codes: Vec<u16>,
    /// Number of samples that hit either ADC rail.
    pub saturated: usize,
}

impl RawSampleStream {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn timestamp(&self, n: usize) -> f64 {
        n as f64 / self.timing.adc_rate
    }

    pub fn voltage(&self, n: usize) -> f64 {
        self.adc.to_volts(self.codes[n])
    }

    pub fn pattern_index(&self, n: usize) -> usize {
        (n / self.timing.samples_per_pattern()) % self.timing.patterns_per_frame
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|n| Sample {
            timestamp: self.timestamp(n),
            voltage: self.voltage(n),
            pattern: self.pattern_index(n),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.len() / self.timing.samples_per_frame()
    }

    /// Raw codes of loop `f`.
    pub fn frame_codes(&self, f: usize) -> &[u16] {
        let spf = self.timing.samples_per_frame();
        &self.codes[f * spf..(f + 1) * spf]
    }
}

pub fn encode_stream(s: &RawSampleStream) -> Vec<u8> {
    let mut w = Writer::with_capacity(HEADER_BYTES + 2 * s.len());
    w.bytes(STREAM_MAGIC);
    w.u16(STREAM_FORMAT_VERSION);
    w.f64(s.timing.dmd_rate);
    w.f64(s.timing.adc_rate);
    w.u32(s.timing.samples_per_pattern() as u32);
    w.u32(s.timing.patterns_per_frame as u32);
    w.u32(s.timing.loops as u32);
    w.f64(s.noise.sigma0);
    w.f64(s.noise.alpha);
    w.f64(s.noise.dark);
    w.u64(s.noise.seed);
    w.f64(s.adc.full_scale);
    w.u16(s.adc.bits as u16);
    w.u64(s.len() as u64);
    for &c in &s.codes {
        w.u16(c);
    }
    w.finish()
}

pub fn decode_stream(data: &[u8]) -> Result<RawSampleStream, OpticsError> {
    let fmt = |e: crate::binio::Truncated| OpticsError::Format(e.to_string());
    let mut r = Reader::new(data);
    let magic = r.take(4).map_err(fmt)?;
    if magic != STREAM_MAGIC {
        return Err(OpticsError::Format(format!("bad magic {magic:?}, expected \"SPCS\"")));
    }
    let version = r.u16().map_err(fmt)?;
    if version != STREAM_FORMAT_VERSION {
        return Err(OpticsError::Version { found: version, supported: STREAM_FORMAT_VERSION });
    }
    let dmd_rate = r.f64().map_err(fmt)?;
    let adc_rate = r.f64().map_err(fmt)?;
    let spp = r.u32().map_err(fmt)? as usize;
    let patterns_per_frame = r.u32().map_err(fmt)? as usize;
    let loops = r.u32().map_err(fmt)? as usize;
    let timing = TimingModel { dmd_rate, adc_rate, patterns_per_frame, loops };
    timing.validate()?;
    if timing.samples_per_pattern() != spp {
        return Err(OpticsError::Format(format!(
            "header says {spp} samples per pattern, rates imply {}",
            timing.samples_per_pattern()
        )));
    }
    let noise = NoiseConfig {
        sigma0: r.f64().map_err(fmt)?,
        alpha: r.f64().map_err(fmt)?,
        dark: r.f64().map_err(fmt)?,
        seed: r.u64().map_err(fmt)?,
    };
    noise.validate()?;
    let adc = AdcConfig { full_scale: r.f64().map_err(fmt)?, bits: r.u16().map_err(fmt)? as u32 };
    adc.validate()?;
    let count = r.u64().map_err(fmt)? as usize;
    if count != timing.total_samples() {
        return Err(OpticsError::Format(format!(
            "{count} samples recorded, timing implies {}",
            timing.total_samples()
        )));
    }
    if r.remaining() != 2 * count {
        return Err(OpticsError::Format(format!("expected {} sample bytes, found {}", 2 * count, r.remaining())));
    }
    let mut codes = Vec::with_capacity(count);
    let mut saturated = 0;
    for _ in 0..count {
        let c = r.u16().map_err(fmt)?;
        saturated += (c == 0 || c == adc.max_code()) as usize;
        codes.push(c);
    }
    Ok(RawSampleStream { timing, noise, adc, codes, saturated })
}

pub fn save_stream(s: &RawSampleStream, path: &Path) -> Result<(), OpticsError> {
    std::fs::write(path, encode_stream(s)).map_err(|source| OpticsError::Io { path: path.to_path_buf(), source })
}

pub fn load_stream(path: &Path) -> Result<RawSampleStream, OpticsError> {
    let data = std::fs::read(path).map_err(|source| OpticsError::Io { path: path.to_path_buf(), source })?;
    decode_stream(&data)
}
