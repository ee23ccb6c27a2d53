//! Training loop: stratified split, full-batch Adam, early stopping.

mod adam;
mod backprop;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use backprop::{backward, cross_entropy, sample_loss, BatchGradient, Gradients, PROB_FLOOR};

use std::borrow::Cow;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{init_model, ArchitectureConfig, ModelParams};
use crate::pose::{Label, LabeledSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Training categorical accuracy that must be held to stop early.
    pub early_stop_threshold: f64,
    /// Consecutive epochs the threshold must hold.
    pub early_stop_patience: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub grad_clip_norm: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            early_stop_threshold: 0.95,
            early_stop_patience: 5,
            test_fraction: 0.25,
            seed: 0,
            grad_clip_norm: 5.0,
            batch_size: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs < 1 {
            return fail("epochs must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return fail("Adam betas must be in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return fail("Adam epsilon must be positive".into());
        }
        if !(self.early_stop_threshold > 0.0) {
            return fail("early-stop threshold must be positive".into());
        }
        if self.early_stop_patience < 1 {
            return fail("early-stop patience must be >= 1".into());
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail("gradient clip norm must be positive".into());
        }
        if self.batch_size == Some(0) {
            return fail("batch size must be >= 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            clip_norm: self.grad_clip_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub categorical_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EpochsExhausted,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl TrainingHistory {
    /// CSV export with header `epoch,loss,categorical_accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,categorical_accuracy\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.mean_loss, r.categorical_accuracy);
        }
        out
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.categorical_accuracy)
    }
}

/// Positions of the train and test samples chosen by [`split_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn test_size(n: usize, fraction: f64) -> usize {
    // guard against products like 100 * 0.07 = 7.000000000000001
    let raw = n as f64 * fraction;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Stratified, seeded split. The test set has `ceil(N * test_fraction)`
/// samples and each class contributes within one of its proportional share.
pub fn split_indices(labels: &[Label], test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    let n = labels.len();
    if n < 4 {
        return Err(Error::Stratification(format!("need at least 4 samples, got {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); Label::ALL.len()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    if let Some(missing) = Label::ALL.iter().find(|l| by_class[l.index()].is_empty()) {
        return Err(Error::Stratification(format!("no samples of class {missing}")));
    }
    let total_test = test_size(n, test_fraction).min(n - 1);

    // largest-remainder allocation of the test set across classes
    let shares: Vec<f64> = by_class
        .iter()
        .map(|c| c.len() as f64 * total_test as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total_test - alloc.iter().sum::<usize>();
    for &c in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if alloc[c] < by_class[c].len() {
            alloc[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n - total_test);
    let mut test = Vec::with_capacity(total_test);
    for (members, &k) in by_class.iter_mut().zip(&alloc) {
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(SplitIndices { train, test })
}

pub fn split_dataset(
    data: &[LabeledSequence],
    cfg: &TrainingConfig,
) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>)> {
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    let split = split_indices(&labels, cfg.test_fraction, cfg.seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect();
    Ok((pick(&split.train), pick(&split.test)))
}

/// Trains a freshly initialized model on `train_set` (no splitting).
/// `on_epoch` observes each finished epoch.
pub fn fit(
    train_set: &[LabeledSequence],
    arch: &ArchitectureConfig,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainingHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training partition".into()));
    }
    if let Some(bad) = train_set.iter().find(|s| s.window.width() != arch.input_width) {
        return Err(Error::Dimension {
            context: "training sample width",
            expected: arch.input_width,
            found: bad.window.width(),
        });
    }
    let mut model = init_model(arch, cfg.seed)?;
    let mut adam = AdamState::new(&model);
    let adam_cfg = cfg.adam();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch_size = cfg.batch_size.unwrap_or(train_set.len()).min(train_set.len());

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut streak = 0;
    let mut stop_reason = StopReason::EpochsExhausted;
    for epoch in 1..=cfg.epochs {
        if batch_size < train_set.len() {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Cow<'_, [LabeledSequence]> = if chunk.len() == train_set.len() {
                Cow::Borrowed(train_set)
            } else {
                Cow::Owned(chunk.iter().map(|&i| train_set[i].clone()).collect())
            };
            let bg = backward(&model, &batch).map_err(|e| match e {
                Error::Numeric { sample, .. } => Error::Numeric {
                    epoch: Some(epoch),
                    sample: chunk[sample],
                },
                other => other,
            })?;
            loss_sum += bg.mean_loss * batch.len() as f64;
            correct += bg.correct;
            adam_step(&mut model, &bg.grads, &mut adam, &adam_cfg);
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / train_set.len() as f64,
            categorical_accuracy: correct as f64 / train_set.len() as f64,
        };
        on_epoch(&record);
        records.push(record);
        if record.categorical_accuracy >= cfg.early_stop_threshold {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= cfg.early_stop_patience {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }
    Ok((
        model,
        TrainingHistory {
            epochs: records,
            stop_reason,
        },
    ))
}

/// Splits `data`, then trains on the training partition.
pub fn train(
    data: &[LabeledSequence],
    arch: &ArchitectureConfig,
    cfg: &TrainingConfig,
) -> Result<(ModelParams, TrainingHistory)> {
    cfg.validate()?;
    let (train_set, _) = split_dataset(data, cfg)?;
    fit(&train_set, arch, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{FeatureVector, SequenceWindow};
    use proptest::prelude::*;

    fn labels(good: usize, bad: usize) -> Vec<Label> {
        let mut v = vec![Label::Good; good];
        v.extend(vec![Label::Bad; bad]);
        v
    }

    #[test]
    fn sixty_two_sample_split() {
        let s = split_indices(&labels(31, 31), 0.25, 3).unwrap();
        assert_eq!(s.test.len(), 16);
        assert_eq!(s.train.len(), 46);
        let bad_test = s.test.iter().filter(|&&i| i >= 31).count();
        assert_eq!(bad_test, 8);
    }

    #[test]
    fn tiny_split() {
        let s = split_indices(&labels(2, 2), 0.25, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 1));
    }

    #[test]
    fn split_is_deterministic() {
        let l = labels(20, 13);
        assert_eq!(split_indices(&l, 0.25, 9).unwrap(), split_indices(&l, 0.25, 9).unwrap());
        assert_ne!(
            split_indices(&l, 0.25, 9).unwrap(),
            split_indices(&l, 0.25, 10).unwrap()
        );
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_indices(&labels(5, 0), 0.25, 0),
            Err(Error::Stratification(_))
        ));
        assert!(matches!(
            split_indices(&labels(2, 1), 0.25, 0),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn fraction_rounding_is_stable() {
        assert_eq!(test_size(100, 0.07), 7);
        assert_eq!(test_size(62, 0.25), 16);
        assert_eq!(test_size(10, 0.33), 4);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::default();
        assert!(c.validate().is_ok());
        c.epochs = 0;
        assert!(c.validate().is_err());
        let c = TrainingConfig {
            test_fraction: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainingConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn history_csv() {
        let h = TrainingHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                mean_loss: 0.5,
                categorical_accuracy: 0.75,
            }],
            stop_reason: StopReason::EpochsExhausted,
        };
        assert_eq!(h.to_csv(), "epoch,loss,categorical_accuracy\n1,0.5,0.75\n");
    }

    fn toy_data() -> Vec<LabeledSequence> {
        (0..8)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let frames = (0..5)
                    .map(|t| FeatureVector::new(vec![sign * (0.5 + 0.1 * t as f64), 0.1 * i as f64, -sign]).unwrap())
                    .collect();
                let label = if i % 2 == 0 { Label::Good } else { Label::Bad };
                LabeledSequence::new(SequenceWindow::new(frames, format!("c{i}"), 0).unwrap(), label)
            })
            .collect()
    }

    fn toy_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            input_width: 3,
            lstm_hidden: vec![6, 6],
            dense_widths: vec![4, 2],
            features: Default::default(),
        }
    }

    #[test]
    fn unreachable_threshold_runs_all_epochs() {
        let cfg = TrainingConfig {
            epochs: 7,
            early_stop_threshold: 1.01,
            ..Default::default()
        };
        let (_, h) = fit(&toy_data(), &toy_arch(), &cfg, |_| {}).unwrap();
        assert_eq!(h.stop_reason, StopReason::EpochsExhausted);
        assert_eq!(h.epochs.len(), 7);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainingConfig {
            epochs: 5,
            seed: 4,
            ..Default::default()
        };
        let a = train(&toy_data(), &toy_arch(), &cfg).unwrap();
        let b = train(&toy_data(), &toy_arch(), &cfg).unwrap();
        assert_eq!(a, b);
        let mini = TrainingConfig {
            batch_size: Some(3),
            ..cfg
        };
        assert_eq!(
            fit(&toy_data(), &toy_arch(), &mini, |_| {}).unwrap(),
            fit(&toy_data(), &toy_arch(), &mini, |_| {}).unwrap()
        );
    }

    #[test]
    fn separable_toy_data_is_learned() {
        let cfg = TrainingConfig {
            epochs: 500,
            learning_rate: 0.01,
            ..Default::default()
        };
        let (_, h) = fit(&toy_data(), &toy_arch(), &cfg, |_| {}).unwrap();
        assert_eq!(h.stop_reason, StopReason::EarlyStopped);
        assert_eq!(h.final_accuracy(), Some(1.0));
    }

    #[test]
    fn width_mismatch_rejected() {
        let arch = ArchitectureConfig {
            input_width: 4,
            ..toy_arch()
        };
        assert!(matches!(
            fit(&toy_data(), &arch, &TrainingConfig::default(), |_| {}),
            Err(Error::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn split_partitions_exactly(good in 2usize..40, bad in 2usize..40, frac in 0.05..0.6f64, seed in any::<u64>()) {
            let l = labels(good, bad);
            let s = split_indices(&l, frac, seed).unwrap();
            let n = good + bad;
            prop_assert_eq!(s.train.len() + s.test.len(), n);
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.test.len(), test_size(n, frac).min(n - 1));
            let bad_test = s.test.iter().filter(|&&i| i >= good).count() as f64;
            let share = bad as f64 * s.test.len() as f64 / n as f64;
            prop_assert!((bad_test - share).abs() <= 1.0);
        }
    }
}
