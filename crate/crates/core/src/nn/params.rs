use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NnError, HIDDEN_WIDTHS, IMAGE_PIXELS, NUM_CLASSES, NUM_KERNELS, UPSAMPLE_SIDE, UPSAMPLE_UNITS};

/// Standard deviation of the (truncated) normal weight initializer.
pub const INIT_STD: f64 = 0.1;

/// Fully connected layer, weights stored row-major as `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }
}

/// All trainable parameters.
///
/// `upsample_weights` is the transposed convolution on the 1×1×15 feature
/// map: row `i` (input channel) holds 735 weights indexed
/// `out_channel * 49 + y * 7 + x`. Its bias is one value per output channel,
/// shared by the 49 positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub kernels: Vec<f64>,
    pub kernel_bias: Vec<f64>,
    pub upsample_weights: Vec<f64>,
    pub upsample_bias: Vec<f64>,
    pub dense: [DenseLayer; 3],
    pub output: DenseLayer,
}

/// Gradients have exactly the parameter layout.
pub type Gradients = ModelParams;

pub(crate) const TENSOR_NAMES: [&str; 12] = [
    "kernels",
    "kernel_bias",
    "upsample_weights",
    "upsample_bias",
    "dense1.weights",
    "dense1.bias",
    "dense2.weights",
    "dense2.bias",
    "dense3.weights",
    "dense3.bias",
    "output.weights",
    "output.bias",
];

impl ModelParams {
    pub fn zeros() -> Self {
        let [h1, h2, h3] = HIDDEN_WIDTHS;
        Self {
            kernels: vec![0.0; NUM_KERNELS * IMAGE_PIXELS],
            kernel_bias: vec![0.0; NUM_KERNELS],
            upsample_weights: vec![0.0; NUM_KERNELS * UPSAMPLE_UNITS],
            upsample_bias: vec![0.0; NUM_KERNELS],
            dense: [DenseLayer::zeros(UPSAMPLE_UNITS, h1), DenseLayer::zeros(h1, h2), DenseLayer::zeros(h2, h3)],
            output: DenseLayer::zeros(h3, NUM_CLASSES),
        }
    }

    /// Parameter tensors in their fixed declaration order (also the on-disk order).
    pub fn tensors(&self) -> [(&'static str, &[f64]); 12] {
        let [d1, d2, d3] = &self.dense;
        [
            (TENSOR_NAMES[0], &self.kernels),
            (TENSOR_NAMES[1], &self.kernel_bias),
            (TENSOR_NAMES[2], &self.upsample_weights),
            (TENSOR_NAMES[3], &self.upsample_bias),
            (TENSOR_NAMES[4], &d1.weights),
            (TENSOR_NAMES[5], &d1.bias),
            (TENSOR_NAMES[6], &d2.weights),
            (TENSOR_NAMES[7], &d2.bias),
            (TENSOR_NAMES[8], &d3.weights),
            (TENSOR_NAMES[9], &d3.bias),
            (TENSOR_NAMES[10], &self.output.weights),
            (TENSOR_NAMES[11], &self.output.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 12] {
        let [d1, d2, d3] = &mut self.dense;
        [
            (TENSOR_NAMES[0], &mut self.kernels),
            (TENSOR_NAMES[1], &mut self.kernel_bias),
            (TENSOR_NAMES[2], &mut self.upsample_weights),
            (TENSOR_NAMES[3], &mut self.upsample_bias),
            (TENSOR_NAMES[4], &mut d1.weights),
            (TENSOR_NAMES[5], &mut d1.bias),
            (TENSOR_NAMES[6], &mut d2.weights),
            (TENSOR_NAMES[7], &mut d2.bias),
            (TENSOR_NAMES[8], &mut d3.weights),
            (TENSOR_NAMES[9], &mut d3.bias),
            (TENSOR_NAMES[10], &mut self.output.weights),
            (TENSOR_NAMES[11], &mut self.output.bias),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Kernel `i` as a row-major 28×28 slice.
    pub fn kernel(&self, i: usize) -> &[f64] {
        &self.kernels[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
    }

    /// Checks shapes, widths and finiteness.
    pub fn validate(&self) -> Result<(), NnError> {
        let reference = Self::zeros();
        for ((name, t), (_, r)) in self.tensors().iter().zip(reference.tensors().iter()) {
            if t.len() != r.len() {
                return Err(NnError::InvalidModel(format!("{name}: expected {} values, got {}", r.len(), t.len())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(NnError::InvalidModel(format!("{name}: non-finite value")));
            }
        }
        for (layer, r) in self.dense.iter().chain([&self.output]).zip(reference.dense.iter().chain([&reference.output]))
        {
            if layer.inputs != r.inputs || layer.outputs != r.outputs {
                return Err(NnError::InvalidModel(format!(
                    "dense layer {}→{} where {}→{} is required",
                    layer.inputs, layer.outputs, r.inputs, r.outputs
                )));
            }
        }
        Ok(())
    }
}

/// Weights ~ N(0, 0.1²) resampled until inside ±2σ; biases zero.
pub fn init_params(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).unwrap();
    let mut model = ModelParams::zeros();
    for (name, tensor) in model.tensors_mut() {
        if name.ends_with("bias") {
            continue;
        }
        for w in tensor.iter_mut() {
            *w = loop {
                let v: f64 = normal.sample(&mut rng);
                if v.abs() <= 2.0 * INIT_STD {
                    break v;
                }
            };
        }
    }
    model
}

const _: () = assert!(UPSAMPLE_SIDE * UPSAMPLE_SIDE * NUM_KERNELS == UPSAMPLE_UNITS);
