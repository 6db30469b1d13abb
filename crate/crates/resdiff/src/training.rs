use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;

/// Two-phase learning-rate schedule plus stopping policy shared by both
/// training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_late: f64,
    /// Epochs after this one use `lr_late`.
    pub lr_switch_epoch: usize,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50,
            patience: 5,
            batch_size: 32,
            lr_initial: 1e-3,
            lr_late: 4e-4,
            lr_switch_epoch: 20,
            weight_decay: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch > self.lr_switch_epoch {
            self.lr_late
        } else {
            self.lr_initial
        }
    }
}

/// One line of training history, emitted as line-delimited records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Strict-improvement early stopping; ties keep the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Record a validation loss for `epoch` (1-based). Returns true when
    /// this epoch is the new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Fisher–Yates permutation of 0..n driven by a dedicated stream.
pub fn shuffled_indices(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.draw_uniform_int(i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_mechanics_match_stated_rule() {
        // Schedule [1, .9, .91, .92, .93, .94, .95] with patience 5:
        // stop after epoch 7, best weights from epoch 2.
        let losses = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95];
        let mut es = EarlyStopping::new(5);
        let mut stopped_at = 0;
        for (i, &l) in losses.iter().enumerate() {
            es.observe(i + 1, l);
            if es.should_stop() {
                stopped_at = i + 1;
                break;
            }
        }
        assert_eq!(stopped_at, 7);
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn ties_keep_earlier_epoch() {
        let mut es = EarlyStopping::new(3);
        assert!(es.observe(1, 0.5));
        assert!(!es.observe(2, 0.5));
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn lr_schedule_switches_after_epoch_20() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(1), 1e-3);
        assert_eq!(cfg.lr_at(20), 1e-3);
        assert_eq!(cfg.lr_at(21), 4e-4);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = RngStream::new(3, 9);
        let mut p = shuffled_indices(100, &mut rng);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
