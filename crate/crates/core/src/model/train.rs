use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::TransformerClassifier;
use super::optim::{adamw_step, lr_at, AdamHyper, AdamState};
use super::{ModelError, Result};
use crate::eval::{confusion, metrics};
use crate::nttp::EncodedExample;
use crate::Scalar;

/// Fine-tuning rate used for the pretrained encoders. Too small for a model
/// trained from random init, so it is not the default.
pub const FINE_TUNE_LEARNING_RATE: f64 = 3e-5;
pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamHyper,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 8,
            epochs: 1,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the weights untouched.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidTrainConfig(m));
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 || a.weight_decay < 0.0 {
            return bad(format!("invalid AdamW hyperparameters {a:?}"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
    pub step_learning_rates: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub config: TrainConfig,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Mini-batch AdamW with a linear decay schedule. Train order is reshuffled
/// every epoch from `(seed, epoch)`; dropout masks derive from the step.
pub fn train<T: Scalar>(
    model: &mut TransformerClassifier<T>,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let steps_per_epoch = config.steps_per_epoch(train_set.len());
    let total_steps = steps_per_epoch * config.epochs;
    let mut state = AdamState::new(&model.config, model.vocab_size);
    let mut history = TrainHistory {
        step_losses: Vec::with_capacity(total_steps),
        step_learning_rates: Vec::with_capacity(total_steps),
        epochs: Vec::with_capacity(config.epochs),
        steps_per_epoch,
        total_steps,
        config: config.clone(),
    };
    let use_dropout = model.config.dropout_rate > 0.0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(config.seed, epoch));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<EncodedExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = if use_dropout {
                let dropout_seed = config.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                model.loss_and_grad_with_dropout(&batch, dropout_seed)?
            } else {
                model.loss_and_grad(&batch)?
            };
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(ModelError::NonFinite(format!("training loss at step {step}")));
            }
            let lr = lr_at(step as u64, total_steps as u64, config.learning_rate)?;
            adamw_step(&mut model.params, &grads, &mut state, step as u64 + 1, lr, &config.adam)?;
            history.step_losses.push(loss);
            history.step_learning_rates.push(lr);
            epoch_loss += loss;
            step += 1;
        }
        if !model.params.is_finite() {
            return Err(ModelError::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let (val_accuracy, val_f1) = validation_scores(model, val_set)?;
        history.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            mean_train_loss: epoch_loss / steps_per_epoch as f64,
            val_accuracy,
            val_f1,
        });
    }
    Ok(history)
}

fn validation_scores<T: Scalar>(model: &TransformerClassifier<T>, val: &[EncodedExample]) -> Result<(f64, f64)> {
    let probs = model.predict_proba(val)?;
    let predicted: Vec<u8> = probs.iter().map(|p| u8::from(p[1].as_f64() > 0.5)).collect();
    let actual: Vec<u8> = val
        .iter()
        .enumerate()
        .map(|(i, ex)| ex.label.ok_or(ModelError::MissingLabel(i)))
        .collect::<Result<_>>()?;
    let cm = confusion(&predicted, &actual).map_err(|e| ModelError::InvalidTrainConfig(e.to_string()))?;
    let m = metrics(&cm).map_err(|e| ModelError::InvalidTrainConfig(e.to_string()))?;
    Ok((m.accuracy, m.f1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_count_with_default_batch() {
        let c = TrainConfig::default();
        assert_eq!(c.steps_per_epoch(2000), 250);
        assert_eq!(c.steps_per_epoch(2001), 251);
        assert_eq!(c.steps_per_epoch(1), 1);
    }

    #[test]
    fn config_gates() {
        assert!(TrainConfig::default().validate().is_ok());
        let zero = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(zero.validate().is_ok());
        let neg = TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
        let b = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(b.validate().is_err());
    }
}
