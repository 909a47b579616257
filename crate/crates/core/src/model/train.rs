use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lr_at_epoch, Checkpoint, ModelError, Result, TrainableModel, TrainingConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Runs up to `config.epochs` epochs of shuffled mini-batch training with
/// step-decayed learning rate, stopping after `config.patience` consecutive
/// epochs without validation improvement. The model is left holding, and the
/// returned checkpoint contains, the state with the lowest validation loss.
///
/// Each epoch shuffles the training indices with ChaCha8 seeded by
/// `derive(config.seed, epoch)`; batch `b` of that epoch receives
/// `derive(epoch_seed, b)` as its step seed.
pub fn train_with_early_stopping<M: TrainableModel>(
    model: &mut M,
    train: &[M::Sample],
    val: &[M::Sample],
    config: &TrainingConfig,
) -> Result<(Checkpoint, TrainingLog)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut epochs = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stalled = 0;
    let mut stop_reason = StopReason::Completed;

    for epoch in 1..=config.epochs {
        let lr = lr_at_epoch(config, epoch)?;
        let epoch_seed = seed::derive(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = model.train_step(&batch, lr, seed::derive(epoch_seed, b as u64))?;
            check_finite(loss, epoch, "training")?;
            weighted += loss * chunk.len() as f64;
        }
        let train_loss = weighted / train.len() as f64;
        let val_loss = model.evaluate(val)?;
        check_finite(val_loss, epoch, "validation")?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        let improved = best
            .as_ref()
            .is_none_or(|b| val_loss < b.val_loss - config.min_delta);
        if improved {
            best = Some(Checkpoint::new(model.name(), epoch, val_loss, model.snapshot())?);
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= config.patience {
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }

    let best = best.expect("at least one epoch ran");
    model.restore(&best.state)?;
    let log = TrainingLog {
        epochs,
        stop_reason,
        best_epoch: best.epoch,
    };
    Ok((best, log))
}

fn check_finite(value: f64, epoch: usize, phase: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonFiniteLoss { epoch, phase, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::NormalizedTensor;
    use crate::model::{ClassProbabilities, ClassifierBackend};
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Reports scripted validation losses; its "state" is the epoch count.
    struct Scripted {
        losses: Vec<f64>,
        calls: AtomicUsize,
        steps: usize,
        labels: Vec<String>,
    }

    impl Scripted {
        fn new(losses: &[f64]) -> Self {
            Self {
                losses: losses.to_vec(),
                calls: AtomicUsize::new(0),
                steps: 0,
                labels: vec!["a".into()],
            }
        }
    }

    impl ClassifierBackend for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn labels(&self) -> &[String] {
            &self.labels
        }
        fn predict(&self, _: &NormalizedTensor) -> Result<ClassProbabilities> {
            ClassProbabilities::new(self.labels.clone(), vec![1.0])
        }
    }

    impl TrainableModel for Scripted {
        type Sample = u8;
        fn train_step(&mut self, _: &[&u8], _: f64, _: u64) -> Result<f64> {
            self.steps += 1;
            Ok(1.0)
        }
        fn evaluate(&self, _: &[u8]) -> Result<f64> {
            Ok(self.losses[self.calls.fetch_add(1, Ordering::SeqCst)])
        }
        fn snapshot(&self) -> Vec<u8> {
            (self.calls.load(Ordering::SeqCst) as u32).to_le_bytes().to_vec()
        }
        fn restore(&mut self, state: &[u8]) -> Result<()> {
            self.calls
                .store(u32::from_le_bytes(state.try_into().unwrap()) as usize, Ordering::SeqCst);
            Ok(())
        }
    }

    #[test]
    fn stalls_then_stops() {
        let mut m = Scripted::new(&[1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 0.5]);
        let (ckpt, log) = train_with_early_stopping(&mut m, &[0; 40], &[0], &TrainingConfig::default()).unwrap();
        assert_eq!(log.epochs.len(), 7);
        assert_eq!((log.best_epoch, ckpt.epoch, ckpt.val_loss), (2, 2, 0.9));
        assert_eq!(log.stop_reason, StopReason::EarlyStopped);
        // 40 samples in batches of 16 is 3 steps per epoch.
        assert_eq!(m.steps, 21);
        assert_eq!(m.calls.load(Ordering::SeqCst), 2, "restored to the best snapshot");
    }

    #[test]
    fn min_delta_raises_the_bar() {
        let config = TrainingConfig {
            min_delta: 0.2,
            epochs: 6,
            ..TrainingConfig::default()
        };
        let mut m = Scripted::new(&[1.0, 0.9, 0.85, 0.82, 0.81, 0.805]);
        let (_, log) = train_with_early_stopping(&mut m, &[0], &[0], &config).unwrap();
        assert_eq!(log.stop_reason, StopReason::EarlyStopped);
        assert_eq!(log.best_epoch, 1);
    }

    #[test]
    fn non_finite_and_empty() {
        let mut m = Scripted::new(&[1.0, f64::NAN]);
        assert!(matches!(
            train_with_early_stopping(&mut m, &[0], &[0], &TrainingConfig::default()),
            Err(ModelError::NonFiniteLoss { epoch: 2, .. })
        ));
        let mut m = Scripted::new(&[1.0]);
        assert!(matches!(
            train_with_early_stopping(&mut m, &[], &[0], &TrainingConfig::default()),
            Err(ModelError::EmptyDataset)
        ));
    }
}
