use super::{FeatureVector, Image28, ModelParams, NnError, NUM_CLASSES, NUM_KERNELS, UPSAMPLE_SIDE, UPSAMPLE_UNITS};

pub type Probs = [f64; NUM_CLASSES];

/// Smallest probability fed to the logarithm in the cross-entropy.
pub const LOSS_FLOOR: f64 = 1e-12;

/// `out[i] = Σ_p kernels[i·P + p] · image[p] + biases[i]` with `P = image.len()`.
///
/// Works on any kernel size; the network uses 15 kernels of 784 pixels.
pub fn feature_layer_forward(kernels: &[f64], biases: &[f64], image: &[f64]) -> Result<Vec<f64>, NnError> {
    let pixels = image.len();
    if kernels.len() != biases.len() * pixels {
        return Err(NnError::Shape { what: "kernel bank", expected: biases.len() * pixels, actual: kernels.len() });
    }
    Ok(kernels.chunks_exact(pixels.max(1)).zip(biases).map(|(k, &b)| dot(k, image) + b).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ModelParams {
    /// The feature map for an image: 15 plain inner products plus bias.
    pub fn features(&self, image: &Image28) -> FeatureVector {
        let mut out = [0.0; NUM_KERNELS];
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.kernel(i), image.pixels()) + self.kernel_bias[i];
        }
        FeatureVector(out)
    }
}

/// Class probabilities for an image. Defined as `forward_from_features`
/// applied to the feature map, so both entry points agree bit for bit.
pub fn forward(model: &ModelParams, image: &Image28) -> Result<Probs, NnError> {
    let features = model.features(image);
    if features.0.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite { layer: 0 });
    }
    forward_from_features(model, &features)
}

/// Runs the network from the feature map onward:
/// upsample → ReLU → dense 400/200/100 (ReLU) → output 10 → softmax.
pub fn forward_from_features(model: &ModelParams, features: &FeatureVector) -> Result<Probs, NnError> {
    let mut up = [0.0; UPSAMPLE_UNITS];
    let per_channel = UPSAMPLE_SIDE * UPSAMPLE_SIDE;
    for (o, chunk) in up.chunks_exact_mut(per_channel).enumerate() {
        chunk.fill(model.upsample_bias[o]);
    }
    for (i, &f) in features.0.iter().enumerate() {
        let row = &model.upsample_weights[i * UPSAMPLE_UNITS..(i + 1) * UPSAMPLE_UNITS];
        for (u, w) in up.iter_mut().zip(row) {
            *u += f * w;
        }
    }
    relu_in_place(&mut up);
    check_finite(&up, 1)?;

    let mut h = up.to_vec();
    for (l, layer) in model.dense.iter().enumerate() {
        h = affine(layer, &h);
        relu_in_place(&mut h);
        check_finite(&h, 2 + l)?;
    }
    let logits = affine(&model.output, &h);
    check_finite(&logits, 5)?;
    let probs = softmax(&logits);
    check_finite(&probs, 6)?;
    Ok(probs.try_into().unwrap())
}

fn affine(layer: &super::DenseLayer, input: &[f64]) -> Vec<f64> {
    layer.weights.chunks_exact(layer.inputs).zip(&layer.bias).map(|(row, &b)| dot(row, input) + b).collect()
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn check_finite(v: &[f64], layer: usize) -> Result<(), NnError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite { layer })
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossEntropy {
    pub value: f64,
    /// The label's probability was below [`LOSS_FLOOR`] and got clamped.
    pub clamped: bool,
}

pub fn loss_cross_entropy(probs: &[f64], label: u8) -> Result<CrossEntropy, NnError> {
    let p = *probs.get(label as usize).ok_or(NnError::Label(label))?;
    if label as usize >= NUM_CLASSES {
        return Err(NnError::Label(label));
    }
    let clamped = p < LOSS_FLOOR;
    Ok(CrossEntropy { value: -p.max(LOSS_FLOOR).ln(), clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, IMAGE_PIXELS};

    fn test_image(seed: u64) -> Image28 {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let px = (0..IMAGE_PIXELS)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64).clamp(0.0, 1.0)
            })
            .collect();
        Image28::new(px).unwrap()
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let m = init_params(1);
        let f = feature_layer_forward(&m.kernels, &[0.0; 15], Image28::zeros().pixels()).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_inner_product() {
        let f = feature_layer_forward(&[1.0, -1.0, 0.5, 0.0], &[0.0], &[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(f, vec![1.5]);
    }

    #[test]
    fn feature_layer_shape_mismatch() {
        assert!(matches!(feature_layer_forward(&[1.0; 5], &[0.0], &[1.0; 4]), Err(NnError::Shape { .. })));
    }

    #[test]
    fn matched_image_maximizes_its_feature() {
        // Cauchy–Schwarz: at fixed norm no image beats the kernel's own direction.
        let m = init_params(5);
        let k = m.kernel(2);
        let (lo, hi) = k.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let rescaled: Vec<f64> = k.iter().map(|v| (v - lo) / (hi - lo)).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let bound = norm(k) * norm(&rescaled);
        assert!(dot(k, &rescaled) <= bound + 1e-12);
        for seed in 0..20 {
            let img = test_image(seed);
            let scaled = dot(k, img.pixels()) * norm(&rescaled) / norm(img.pixels());
            assert!(scaled <= bound + 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = init_params(2);
        for seed in 0..10 {
            let p = forward(&m, &test_image(seed)).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = init_params(2);
        let img = test_image(9);
        assert_eq!(forward(&m, &img).unwrap(), forward(&m, &img).unwrap());
    }

    #[test]
    fn path_equivalence_is_bitwise() {
        let m = init_params(4);
        for seed in 0..10 {
            let img = test_image(seed);
            let f = feature_layer_forward(&m.kernels, &m.kernel_bias, img.pixels()).unwrap();
            let a = forward(&m, &img).unwrap();
            let b = forward_from_features(&m, &FeatureVector::new(&f).unwrap()).unwrap();
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn zero_features_propagate_biases_only() {
        let mut m = init_params(4);
        for (name, t) in m.tensors_mut() {
            if name.ends_with("bias") {
                for (i, b) in t.iter_mut().enumerate() {
                    *b = 0.01 * (i % 7) as f64 - 0.02;
                }
            }
        }
        let got = forward_from_features(&m, &FeatureVector::zeros()).unwrap();
        // Bias-only propagation written out independently.
        let mut h: Vec<f64> = (0..UPSAMPLE_UNITS).map(|u| m.upsample_bias[u / 49].max(0.0)).collect();
        for layer in &m.dense {
            h = (0..layer.outputs)
                .map(|j| {
                    (0..layer.inputs).map(|i| layer.weights[j * layer.inputs + i] * h[i]).sum::<f64>() + layer.bias[j]
                })
                .map(|z: f64| z.max(0.0))
                .collect();
        }
        let o = &m.output;
        let logits: Vec<f64> = (0..10)
            .map(|j| (0..o.inputs).map(|i| o.weights[j * o.inputs + i] * h[i]).sum::<f64>() + o.bias[j])
            .collect();
        let want = softmax(&logits);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_from_features_rejects_wrong_length() {
        assert!(FeatureVector::new(&[0.0; 14]).is_err());
        assert!(FeatureVector::new(&[f64::NAN; 15]).is_err());
    }

    #[test]
    fn non_finite_reports_layer() {
        let mut m = init_params(1);
        m.dense[1].bias[0] = f64::INFINITY;
        assert_eq!(forward(&m, &test_image(0)), Err(NnError::NonFinite { layer: 3 }));
    }

    #[test]
    fn cross_entropy_values() {
        let mut one_hot = [0.0; 10];
        one_hot[4] = 1.0;
        assert_eq!(loss_cross_entropy(&one_hot, 4).unwrap().value, 0.0);
        let uniform = [0.1; 10];
        assert!((loss_cross_entropy(&uniform, 0).unwrap().value - std::f64::consts::LN_10).abs() < 1e-12);
        let mut p = [0.0; 10];
        p[3] = 0.5963;
        assert!((loss_cross_entropy(&p, 3).unwrap().value - 0.51701).abs() < 5e-6);
        let c = loss_cross_entropy(&p, 0).unwrap();
        assert!(c.clamped);
        assert!((c.value - 12.0 * std::f64::consts::LN_10).abs() < 1e-9);
        assert!(loss_cross_entropy(&p, 10).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
    }
}
