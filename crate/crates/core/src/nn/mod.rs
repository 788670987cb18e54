//! The classification network.
//!
//! Layout, input to output:
//!
//! ```text
//! image 28×28 ─► 15 full-size kernels (+bias, linear) ─► feature map (15)
//!   ─► transposed conv 1×1×15 → 7×7×15, stride 7 (+bias, ReLU) ─► flatten 735
//!   ─► dense 400 (ReLU) ─► dense 200 (ReLU) ─► dense 100 (ReLU) ─► dense 10 ─► softmax
//! ```
//!
//! The kernel layer has no activation: a physical single-pixel measurement is
//! linear in the scene, so measured values can be injected at the feature map
//! through [`forward_from_features`] and go through exactly the same
//! arithmetic as [`forward`].

mod adam;
mod backprop;
mod forward;
mod gradcheck;
mod params;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backprop::{backward, BatchGrads};
pub(crate) use forward::dot;
pub use forward::{
    feature_layer_forward, forward, forward_from_features, loss_cross_entropy, softmax, CrossEntropy, Probs, LOSS_FLOOR,
};
pub use gradcheck::{grad_check, grad_check_model, relative_error, Differentiable, GradCheckReport, SampleLoss};
pub use params::{init_params, DenseLayer, Gradients, ModelParams, INIT_STD};
pub use train::{evaluate_accuracy, train, EpochMetrics, TrainConfig, TrainOutcome};

use thiserror::Error;

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_KERNELS: usize = 15;
/// Side of the spatial grid produced by the transposed convolution.
pub const UPSAMPLE_SIDE: usize = 7;
pub const UPSAMPLE_UNITS: usize = UPSAMPLE_SIDE * UPSAMPLE_SIDE * NUM_KERNELS;
pub const HIDDEN_WIDTHS: [usize; 3] = [400, 200, 100];
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape { what: &'static str, expected: usize, actual: usize },
    #[error("pixel {index} = {value} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("non-finite value at layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: &'static str },
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label {0} outside 0..=9")]
    Label(u8),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A 28×28 grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image28 {
    pixels: Box<[f64; IMAGE_PIXELS]>,
}

impl Image28 {
    pub fn new(pixels: Vec<f64>) -> Result<Self, NnError> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(NnError::Shape { what: "image", expected: IMAGE_PIXELS, actual: pixels.len() });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(NnError::PixelRange { index, value });
        }
        Ok(Self { pixels: pixels.into_boxed_slice().try_into().unwrap() })
    }

    pub fn zeros() -> Self {
        Self { pixels: Box::new([0.0; IMAGE_PIXELS]) }
    }

    /// Builds an image from raw bytes, scaling 0..=255 to `[0, 1]`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        if bytes.len() != IMAGE_PIXELS {
            return Err(NnError::Shape { what: "image bytes", expected: IMAGE_PIXELS, actual: bytes.len() });
        }
        let mut pixels = Box::new([0.0; IMAGE_PIXELS]);
        for (p, &b) in pixels.iter_mut().zip(bytes) {
            *p = f64::from(b) / 255.0;
        }
        Ok(Self { pixels })
    }

    /// Clamps every value into `[0, 1]`; NaN becomes 0.
    pub(crate) fn from_clipped(mut pixels: Box<[f64; IMAGE_PIXELS]>) -> Self {
        for p in pixels.iter_mut() {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self { pixels }
    }

    pub fn pixels(&self) -> &[f64; IMAGE_PIXELS] {
        &self.pixels
    }

    /// Intensity at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * IMAGE_SIDE + x]
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Inverse of [`Image28::from_bytes`]; exact for images that came from bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect()
    }
}

/// The 15 values at the feature map: one inner product (or one calibrated
/// differential measurement) per kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_KERNELS]);

impl FeatureVector {
    pub fn new(values: &[f64]) -> Result<Self, NnError> {
        let arr: [f64; NUM_KERNELS] = values.try_into().map_err(|_| NnError::Shape {
            what: "feature vector",
            expected: NUM_KERNELS,
            actual: values.len(),
        })?;
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { layer: 0 });
        }
        Ok(Self(arr))
    }

    pub fn zeros() -> Self {
        Self([0.0; NUM_KERNELS])
    }

    pub fn values(&self) -> &[f64; NUM_KERNELS] {
        &self.0
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
