//! Binary micro-mirror patterns from trained kernels.
//!
//! Each kernel is mapped affinely onto `[0, 1]`, upsampled by an integer
//! ratio with Catmull-Rom bicubic interpolation, binarized by
//! Floyd–Steinberg error diffusion and shown as a complementary pair
//! `(P⁺, P⁻ = 1 − P⁺)`.

mod dither;
mod io;
mod resample;

pub use dither::dither_floyd_steinberg;
pub use io::{decode_pack, encode_pack, load_pack, save_pack, write_pgm, PACK_FORMAT_VERSION, PACK_MAGIC};
pub use resample::upsample_bicubic;

use thiserror::Error;

use crate::nn::{Image28, ModelParams, IMAGE_PIXELS, IMAGE_SIDE, NUM_KERNELS};

/// Upsample ratio giving 700×700 mirrors per pattern.
pub const DEFAULT_UPSAMPLE: usize = 25;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("kernel {index} is all zero; no scale can be derived")]
    ZeroKernel { index: usize },
    #[error("kernel {index} has a non-finite value")]
    NonFiniteKernel { index: usize },
    #[error("upsample ratio must be at least 1, got {0}")]
    UpsampleRatio(usize),
    #[error("size mismatch: expected {expected} values, got {actual}")]
    Size { expected: usize, actual: usize },
    #[error("pack must hold {NUM_KERNELS} pairs in kernel order, {0}")]
    PackLayout(String),
    #[error("pattern file: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("unsupported pattern format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// Row-major grayscale values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayPattern {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub kernel: usize,
}

impl GrayPattern {
    pub fn new(width: usize, height: usize, values: Vec<f64>, kernel: usize) -> Result<Self, PatternError> {
        if values.len() != width * height {
            return Err(PatternError::Size { expected: width * height, actual: values.len() });
        }
        Ok(Self { width, height, values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(), kernel })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Row-major 0/1 mirror states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryPattern {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl BinaryPattern {
    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, bits: self.bits.iter().map(|b| 1 - b).collect() }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn mean(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryPatternPair {
    pub p_plus: BinaryPattern,
    pub p_minus: BinaryPattern,
    pub kernel: usize,
    /// Kernel scale `B = max|kernel|`.
    pub scale: f64,
    pub upsample: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternPack {
    pub pairs: Vec<BinaryPatternPair>,
    pub biases: Vec<f64>,
    pub upsample: usize,
    pub version: u16,
}

impl PatternPack {
    /// Side length of every pattern in mirrors.
    pub fn side(&self) -> usize {
        IMAGE_SIDE * self.upsample
    }

    pub fn scales(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.scale).collect()
    }

    fn check_layout(&self) -> Result<(), PatternError> {
        if self.pairs.len() != NUM_KERNELS || self.biases.len() != NUM_KERNELS {
            return Err(PatternError::PackLayout(format!(
                "found {} pairs, {} biases",
                self.pairs.len(),
                self.biases.len()
            )));
        }
        for (i, p) in self.pairs.iter().enumerate() {
            if p.kernel != i {
                return Err(PatternError::PackLayout(format!("slot {i} holds kernel {}", p.kernel)));
            }
        }
        Ok(())
    }
}

/// Copies of the kernel-layer weights (15 × 784) and biases.
pub fn extract_kernels(model: &ModelParams) -> (Vec<Vec<f64>>, Vec<f64>) {
    ((0..NUM_KERNELS).map(|i| model.kernel(i).to_vec()).collect(), model.kernel_bias.clone())
}

/// Maps a 28×28 kernel onto `[0, 1]` as `(kernel/B + 1)/2` with `B = max|kernel|`.
pub fn normalize_kernel(kernel: &[f64], index: usize) -> Result<(GrayPattern, f64), PatternError> {
    if kernel.len() != IMAGE_PIXELS {
        return Err(PatternError::Size { expected: IMAGE_PIXELS, actual: kernel.len() });
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(PatternError::NonFiniteKernel { index });
    }
    let b = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if b == 0.0 {
        return Err(PatternError::ZeroKernel { index });
    }
    let gray = kernel.iter().map(|v| (v / b + 1.0) / 2.0).collect();
    Ok((GrayPattern::new(IMAGE_SIDE, IMAGE_SIDE, gray, index)?, b))
}

pub fn make_pattern_pair(binary: BinaryPattern, kernel: usize, scale: f64, upsample: usize) -> BinaryPatternPair {
    let p_minus = binary.complement();
    BinaryPatternPair { p_plus: binary, p_minus, kernel, scale, upsample }
}

/// Full pipeline for all 15 kernels, in kernel order.
pub fn build_pattern_pack(model: &ModelParams, upsample: usize) -> Result<PatternPack, PatternError> {
    if upsample == 0 {
        return Err(PatternError::UpsampleRatio(0));
    }
    let (kernels, biases) = extract_kernels(model);
    let mut pairs = Vec::with_capacity(NUM_KERNELS);
    for (i, kernel) in kernels.iter().enumerate() {
        let (gray, scale) = normalize_kernel(kernel, i)?;
        let up = upsample_bicubic(&gray, upsample)?;
        pairs.push(make_pattern_pair(dither_floyd_steinberg(&up), i, scale, upsample));
    }
    Ok(PatternPack { pairs, biases, upsample, version: PACK_FORMAT_VERSION })
}

/// Nearest-neighbour rendering of a 28×28 image at `k` mirrors per pixel.
pub fn render_scene(image: &Image28, k: usize) -> Vec<f64> {
    let side = IMAGE_SIDE * k;
    let px = image.pixels();
    let mut out = vec![0.0; side * side];
    for (y, row) in out.chunks_exact_mut(side).enumerate() {
        let src = &px[(y / k) * IMAGE_SIDE..(y / k + 1) * IMAGE_SIDE];
        for (x, v) in row.iter_mut().enumerate() {
            *v = src[x / k];
        }
    }
    out
}

/// `Σ (P⁺ − P⁻)·scene` over the mirror grid.
pub fn differential_inner_product(pair: &BinaryPatternPair, scene: &[f64]) -> f64 {
    pair.p_plus.bits.iter().zip(&pair.p_minus.bits).zip(scene).map(|((&p, &m), &s)| (p as f64 - m as f64) * s).sum()
}

/// Kernel responses recovered from the binary patterns: `B·⟨2P⁺−1, x⟩/k²`.
pub fn pattern_features(pack: &PatternPack, image: &Image28) -> Vec<f64> {
    let scene = render_scene(image, pack.upsample);
    let k2 = (pack.upsample * pack.upsample) as f64;
    pack.pairs.iter().map(|p| p.scale * differential_inner_product(p, &scene) / k2).collect()
}

/// Relative RMS difference `‖a − b‖ / ‖b‖` between an approximate and a reference vector.
pub fn relative_rms(approx: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = approx.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Relative RMS error of the pattern-recovered features against the direct
/// 28×28 inner products (biases excluded on both sides).
pub fn fidelity_error(pack: &PatternPack, model: &ModelParams, image: &Image28) -> f64 {
    let direct: Vec<f64> = (0..NUM_KERNELS).map(|i| crate::nn::dot(model.kernel(i), image.pixels())).collect();
    relative_rms(&pattern_features(pack, image), &direct)
}
