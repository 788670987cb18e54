use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backprop::{backward_rows, forward_batch};
use super::{adam_step, argmax, AdamConfig, AdamState, ModelParams, NnError, IMAGE_PIXELS, NUM_CLASSES};
use crate::data::{augment, AugmentConfig, LabeledDataset};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), batch_size: 128, epochs: 10, seed: 0, augment: AugmentConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub held_out_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    pub model: ModelParams,
    pub history: Vec<EpochMetrics>,
}

/// Mini-batch ADAM on the mean cross-entropy.
///
/// Each epoch reshuffles the training set and re-draws augmentation for
/// every sample from one seeded stream, so a given `(model, data, cfg)`
/// always produces the same parameters and loss curve.
pub fn train(
    mut model: ModelParams,
    data: &LabeledDataset,
    held_out: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(NnError::InvalidArgument("batch size must be positive".into()));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut x = Vec::with_capacity(cfg.batch_size * IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            x.clear();
            labels.clear();
            for &i in chunk {
                let img = &data.images[i];
                if cfg.augment.probability > 0.0 && rng.random::<f64>() < cfg.augment.probability {
                    x.extend_from_slice(augment(img, &cfg.augment, &mut rng).pixels());
                } else {
                    x.extend_from_slice(img.pixels());
                }
                labels.push(data.labels[i]);
            }
            let step = backward_rows(&model, &x, &labels).map_err(|e| match e {
                NnError::NonFiniteGradient { .. } => NnError::Diverged { epoch, batch, loss: f64::NAN },
                other => other,
            })?;
            if !step.loss.is_finite() {
                return Err(NnError::Diverged { epoch, batch, loss: step.loss });
            }
            loss_sum += step.loss * chunk.len() as f64;
            adam_step(&mut model, &step.grads, &mut state, &cfg.adam)?;
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            held_out_accuracy: held_out.map(|d| evaluate_accuracy(&model, d)),
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { model, history })
}

/// Fraction of `data` whose argmax prediction matches the label.
pub fn evaluate_accuracy(model: &ModelParams, data: &LabeledDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    const CHUNK: usize = 500;
    let mut x = Vec::with_capacity(CHUNK * IMAGE_PIXELS);
    for (imgs, labels) in data.images.chunks(CHUNK).zip(data.labels.chunks(CHUNK)) {
        x.clear();
        for img in imgs {
            x.extend_from_slice(img.pixels());
        }
        let act = forward_batch(model, &x, imgs.len());
        correct += act.probs.chunks_exact(NUM_CLASSES).zip(labels).filter(|(p, &l)| argmax(p) == l as usize).count();
    }
    correct as f64 / data.len() as f64
}
