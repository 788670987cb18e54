//! Batched forward/backward pass on row-major matrices.

use super::{
    forward::softmax, Gradients, Image28, ModelParams, NnError, IMAGE_PIXELS, NUM_CLASSES, NUM_KERNELS, UPSAMPLE_SIDE,
    UPSAMPLE_UNITS,
};

/// `C = op(A)·op(B) + beta·C` for row-major `A` (m×k) and `B` (k×n).
/// With `a_t`, `A` is stored k×m; with `b_t`, `B` is stored n×k.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides reach is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_row_bias(m: &mut [f64], bias: &[f64]) {
    for row in m.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn relu(m: &mut [f64]) {
    for v in m {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.fill(0.0);
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Activations kept from the forward pass.
pub(crate) struct BatchActivations {
    pub features: Vec<f64>,
    pub upsampled: Vec<f64>,
    pub hidden: [Vec<f64>; 3],
    pub probs: Vec<f64>,
}

pub(crate) fn forward_batch(model: &ModelParams, x: &[f64], rows: usize) -> BatchActivations {
    let mut features = vec![0.0; rows * NUM_KERNELS];
    gemm(rows, IMAGE_PIXELS, NUM_KERNELS, x, false, &model.kernels, true, 0.0, &mut features);
    add_row_bias(&mut features, &model.kernel_bias);

    let mut upsampled = vec![0.0; rows * UPSAMPLE_UNITS];
    gemm(rows, NUM_KERNELS, UPSAMPLE_UNITS, &features, false, &model.upsample_weights, false, 0.0, &mut upsampled);
    let per_channel = UPSAMPLE_SIDE * UPSAMPLE_SIDE;
    for row in upsampled.chunks_exact_mut(UPSAMPLE_UNITS) {
        for (o, chunk) in row.chunks_exact_mut(per_channel).enumerate() {
            let b = model.upsample_bias[o];
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
    relu(&mut upsampled);

    let mut input: &[f64] = &upsampled;
    let mut hidden: [Vec<f64>; 3] = Default::default();
    for (h, layer) in hidden.iter_mut().zip(&model.dense) {
        let mut z = vec![0.0; rows * layer.outputs];
        gemm(rows, layer.inputs, layer.outputs, input, false, &layer.weights, true, 0.0, &mut z);
        add_row_bias(&mut z, &layer.bias);
        relu(&mut z);
        *h = z;
        input = h;
    }

    let out = &model.output;
    let mut logits = vec![0.0; rows * NUM_CLASSES];
    gemm(rows, out.inputs, out.outputs, &hidden[2], false, &out.weights, true, 0.0, &mut logits);
    add_row_bias(&mut logits, &out.bias);
    let probs = logits.chunks_exact(NUM_CLASSES).flat_map(softmax).collect();

    BatchActivations { features, upsampled, hidden, probs }
}

pub struct BatchGrads {
    pub grads: Gradients,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
}

/// Gradients of the mean batch cross-entropy with respect to every parameter.
pub fn backward(model: &ModelParams, images: &[Image28], labels: &[u8]) -> Result<BatchGrads, NnError> {
    if images.len() != labels.len() {
        return Err(NnError::Shape { what: "labels", expected: images.len(), actual: labels.len() });
    }
    let mut x = Vec::with_capacity(images.len() * IMAGE_PIXELS);
    for img in images {
        x.extend_from_slice(img.pixels());
    }
    backward_rows(model, &x, labels)
}

/// Same as [`backward`] with the batch already packed row-major (`labels.len()` × 784).
pub(crate) fn backward_rows(model: &ModelParams, x: &[f64], labels: &[u8]) -> Result<BatchGrads, NnError> {
    let rows = labels.len();
    if rows == 0 {
        return Err(NnError::EmptyBatch);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(NnError::Label(bad));
    }
    let act = forward_batch(model, x, rows);
    let mut g = Gradients::zeros();

    let inv = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut delta = act.probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        let row = &mut delta[r * NUM_CLASSES..(r + 1) * NUM_CLASSES];
        loss -= row[label as usize].max(super::LOSS_FLOOR).ln();
        row[label as usize] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    loss *= inv;

    // Output layer.
    let out = &model.output;
    gemm(out.outputs, rows, out.inputs, &delta, true, &act.hidden[2], false, 0.0, &mut g.output.weights);
    column_sums(&delta, out.outputs, &mut g.output.bias);
    let mut upstream = vec![0.0; rows * out.inputs];
    gemm(rows, out.outputs, out.inputs, &delta, false, &out.weights, false, 0.0, &mut upstream);

    // Dense layers, last to first.
    for l in (0..3).rev() {
        let layer = &model.dense[l];
        relu_mask(&mut upstream, &act.hidden[l]);
        let input: &[f64] = if l == 0 { &act.upsampled } else { &act.hidden[l - 1] };
        let gl = &mut g.dense[l];
        gemm(layer.outputs, rows, layer.inputs, &upstream, true, input, false, 0.0, &mut gl.weights);
        column_sums(&upstream, layer.outputs, &mut gl.bias);
        let mut next = vec![0.0; rows * layer.inputs];
        gemm(rows, layer.outputs, layer.inputs, &upstream, false, &layer.weights, false, 0.0, &mut next);
        upstream = next;
    }

    // Transposed convolution.
    relu_mask(&mut upstream, &act.upsampled);
    gemm(NUM_KERNELS, rows, UPSAMPLE_UNITS, &act.features, true, &upstream, false, 0.0, &mut g.upsample_weights);
    let per_channel = UPSAMPLE_SIDE * UPSAMPLE_SIDE;
    for row in upstream.chunks_exact(UPSAMPLE_UNITS) {
        for (o, chunk) in row.chunks_exact(per_channel).enumerate() {
            g.upsample_bias[o] += chunk.iter().sum::<f64>();
        }
    }
    let mut d_features = vec![0.0; rows * NUM_KERNELS];
    gemm(rows, UPSAMPLE_UNITS, NUM_KERNELS, &upstream, false, &model.upsample_weights, true, 0.0, &mut d_features);

    // Kernel layer (linear).
    gemm(NUM_KERNELS, rows, IMAGE_PIXELS, &d_features, true, x, false, 0.0, &mut g.kernels);
    column_sums(&d_features, NUM_KERNELS, &mut g.kernel_bias);

    for (name, t) in g.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient { param: name });
        }
    }
    Ok(BatchGrads { grads: g, loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, init_params};

    fn image(seed: u64) -> Image28 {
        let px = (0..IMAGE_PIXELS).map(|i| (((i as u64 * 2654435761 + seed * 97) % 1000) as f64) / 999.0).collect();
        Image28::new(px).unwrap()
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4],[5,6]] (3×2), B = [[1,0,2],[0,1,3]] (2×3)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 2.0, 0.0, 1.0, 3.0];
        let mut c = [0.0; 9];
        gemm(3, 2, 3, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [1.0, 2.0, 8.0, 3.0, 4.0, 18.0, 5.0, 6.0, 28.0]);
        let at = [1.0, 3.0, 5.0, 2.0, 4.0, 6.0];
        let bt = [1.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        let mut c2 = [0.0; 9];
        gemm(3, 2, 3, &at, true, &bt, true, 0.0, &mut c2);
        assert_eq!(c, c2);
    }

    #[test]
    fn batch_forward_matches_single_sample_path() {
        let m = init_params(11);
        let imgs: Vec<Image28> = (0..5).map(image).collect();
        let x: Vec<f64> = imgs.iter().flat_map(|i| i.pixels().iter().copied()).collect();
        let act = forward_batch(&m, &x, 5);
        for (r, img) in imgs.iter().enumerate() {
            let p = forward(&m, img).unwrap();
            for c in 0..10 {
                assert!((p[c] - act.probs[r * 10 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_sample_gives_single_sample_gradient() {
        let m = init_params(3);
        let img = image(4);
        let one = backward(&m, &[img.clone()], &[7]).unwrap();
        let two = backward(&m, &[img.clone(), img], &[7, 7]).unwrap();
        for ((name, a), (_, b)) in one.grads.tensors().iter().zip(two.grads.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-6), "{name}: {x} vs {y}");
            }
        }
        assert!((one.loss - two.loss).abs() < 1e-12);
    }

    #[test]
    fn zero_image_has_zero_kernel_gradient() {
        let mut m = init_params(3);
        m.kernel_bias.fill(0.5);
        let g = backward(&m, &[Image28::zeros()], &[2]).unwrap();
        assert!(g.grads.kernels.iter().all(|&v| v == 0.0));
        // The bias path still carries gradient.
        assert!(g.grads.kernel_bias.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(matches!(backward(&init_params(0), &[], &[]), Err(NnError::EmptyBatch)));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut m = init_params(0);
        m.output.weights[0] = f64::NAN;
        let err = backward(&m, &[image(1)], &[1]).err().unwrap();
        assert!(matches!(err, NnError::NonFiniteGradient { .. }));
    }
}
