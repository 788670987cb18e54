//! Image-free classification of moving objects with learned single-pixel
//! modulation patterns.
//!
//! The pipeline runs end to end in simulation:
//!
//! 1. [`nn`] trains a small network whose first layer holds 15 full-size
//!    28×28 kernels, so each feature is a plain inner product with the scene.
//! 2. [`patterns`] turns those kernels into binary micro-mirror patterns by
//!    bicubic upsampling and Floyd–Steinberg error diffusion, displayed as
//!    complementary pairs.
//! 3. [`optics`] simulates a rotating disk of carved digits passing under the
//!    patterns and produces the photodiode's quantized sample stream.
//! 4. [`classify`] turns that stream back into feature vectors and feeds them
//!    to the network at its feature map, frame by frame.
//!
//! [`data`] holds the MNIST loader, augmentation and the model file format.

pub mod classify;
pub mod data;
pub mod nn;
pub mod optics;
pub mod patterns;

mod binio;

pub use nn::{FeatureVector, Image28, ModelParams};
