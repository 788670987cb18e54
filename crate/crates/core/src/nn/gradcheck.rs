//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backprop::backward_rows, params::TENSOR_NAMES, Image28, ModelParams, NnError};

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);
    fn loss(&self) -> f64;
    fn gradient(&self) -> Vec<f64>;
}

/// Gradients smaller than this are compared absolutely rather than relatively.
const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(index, analytic, numeric, relative error)` for every checked parameter.
    pub entries: Vec<(usize, f64, f64, f64)>,
}

/// Compares the analytic gradient against `(L(θ+h) − L(θ−h)) / 2h` at `indices`.
pub fn grad_check<D: Differentiable>(model: &mut D, indices: &[usize], h: f64) -> Result<GradCheckReport, NnError> {
    if !(h > 0.0) {
        return Err(NnError::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let analytic = model.gradient();
    let mut entries = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= model.num_params() {
            return Err(NnError::InvalidArgument(format!("parameter index {i} out of range")));
        }
        let orig = model.param(i);
        model.set_param(i, orig + h);
        let plus = model.loss();
        model.set_param(i, orig - h);
        let minus = model.loss();
        model.set_param(i, orig);
        let numeric = (plus - minus) / (2.0 * h);
        entries.push((i, analytic[i], numeric, relative_error(analytic[i], numeric)));
    }
    let max_relative_error = entries.iter().map(|e| e.3).fold(0.0, f64::max);
    Ok(GradCheckReport { max_relative_error, entries })
}

/// Mean cross-entropy of the network over a fixed set of samples.
pub struct SampleLoss {
    pub model: ModelParams,
    x: Vec<f64>,
    labels: Vec<u8>,
    offsets: Vec<usize>,
}

impl SampleLoss {
    pub fn new(model: ModelParams, images: &[Image28], labels: &[u8]) -> Self {
        let x = images.iter().flat_map(|i| i.pixels().iter().copied()).collect();
        let mut offsets = vec![0];
        for (_, t) in model.tensors() {
            offsets.push(offsets.last().unwrap() + t.len());
        }
        Self { model, x, labels: labels.to_vec(), offsets }
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let t = self.offsets.partition_point(|&o| o <= i) - 1;
        (t, i - self.offsets[t])
    }

    /// Range of flat indices belonging to tensor `t` (declaration order).
    pub fn tensor_range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }
}

impl Differentiable for SampleLoss {
    fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn param(&self, i: usize) -> f64 {
        let (t, j) = self.locate(i);
        self.model.tensors()[t].1[j]
    }

    fn set_param(&mut self, i: usize, value: f64) {
        let (t, j) = self.locate(i);
        self.model.tensors_mut()[t].1[j] = value;
    }

    fn loss(&self) -> f64 {
        backward_rows(&self.model, &self.x, &self.labels).map(|g| g.loss).unwrap_or(f64::NAN)
    }

    fn gradient(&self) -> Vec<f64> {
        match backward_rows(&self.model, &self.x, &self.labels) {
            Ok(g) => g.grads.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect(),
            Err(_) => vec![f64::NAN; self.num_params()],
        }
    }
}

/// Checks `per_tensor` seeded random parameters in every tensor of the
/// network (all of them when a tensor is smaller). Returns the overall
/// report plus the worst error per tensor name.
pub fn grad_check_model(
    model: &ModelParams,
    images: &[Image28],
    labels: &[u8],
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<(GradCheckReport, Vec<(&'static str, f64)>), NnError> {
    let mut objective = SampleLoss::new(model.clone(), images, labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::new();
    for t in 0..TENSOR_NAMES.len() {
        let range = objective.tensor_range(t);
        let n = range.len();
        indices.extend(sample(&mut rng, n, per_tensor.min(n)).into_iter().map(|j| range.start + j));
    }
    let report = grad_check(&mut objective, &indices, h)?;
    let per_name = (0..TENSOR_NAMES.len())
        .map(|t| {
            let range = objective.tensor_range(t);
            let worst = report.entries.iter().filter(|e| range.contains(&e.0)).map(|e| e.3).fold(0.0, f64::max);
            (TENSOR_NAMES[t], worst)
        })
        .collect();
    Ok((report, per_name))
}
