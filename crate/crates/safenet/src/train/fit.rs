//! Mini-batch training loop: seeded shuffling, Adam updates, adaptive
//! learning-rate decay on training plateaus, and early stopping that
//! restores the best-validation weights.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionMode;
use crate::diffcore::Tape;
use crate::dsp::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::SafeNet;
use crate::train::adam::Adam;
use crate::train::metrics::gather_batch;

/// Optimization protocol. The defaults follow the training recipe:
/// batch 50, six epochs, Adam at 1e-4, early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    /// Epochs without validation improvement tolerated before stopping.
    pub early_stop_patience: usize,
    /// Multiplier applied to the learning rate when the training loss
    /// fails to improve for one epoch.
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            epochs: 6,
            lr_init: 1e-4,
            early_stop_patience: 2,
            lr_decay_factor: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "training needs batch_size ≥ 1 and epochs ≥ 1".into(),
            ));
        }
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            return Err(Error::Range {
                what: "initial learning rate".into(),
                value: self.lr_init,
                limit: "> 0 and finite".into(),
            });
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config("early-stop patience must be ≥ 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Range {
                what: "learning-rate decay factor".into(),
                value: self.lr_decay_factor,
                limit: "in (0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// One line of training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Outcome of a fit run.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) whose weights the model carries afterwards.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Validation-loss watchdog: remembers the best epoch and says when
/// `patience` consecutive epochs have failed to improve on it.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records one epoch's validation loss; true means stop now.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.since_best >= self.patience
        }
    }

    /// Whether the last observed epoch set a new best.
    pub fn improved(&self) -> bool {
        self.since_best == 0
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mean loss over a partition in eval mode, weighted by batch size.
pub fn partition_loss(
    net: &SafeNet,
    ds: &WindowedDataset,
    batch_size: usize,
    use_safd: bool,
) -> Result<f64> {
    let tape = Tape::inference();
    let n = ds.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (batch, targets, labels) = gather_batch(ds, &idx)?;
        let out = net.forward(&tape, &batch, false, AttentionMode::Spiking, use_safd)?;
        let terms = net.compute_loss(&tape, &out, &targets, &labels)?;
        total += terms.total.values()[0] * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// Trains in place. Each epoch shuffles the training windows with the
/// seeded generator, takes Adam steps, evaluates the validation loss,
/// halves the learning rate after a training plateau, and stops early
/// after `early_stop_patience` stale epochs. The model ends up with the
/// weights of its best validation epoch either way.
pub fn fit(
    net: &mut SafeNet,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    use_safd: bool,
    log: &mut dyn Write,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("training or validation partition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new();
    let mut lr = cfg.lr_init;
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut best_weights = net.clone();
    let mut prev_train_loss = f64::INFINITY;
    let mut history = Vec::new();
    let mut stopped_early = false;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (batch, targets, labels) = gather_batch(train, chunk)?;
            let tape = Tape::new();
            let out = net.forward(&tape, &batch, true, AttentionMode::Spiking, use_safd)?;
            let terms = net.compute_loss(&tape, &out, &targets, &labels)?;
            let loss = terms.total.values()[0];
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            running += loss * chunk.len() as f64;
            let grads = tape.backward(&terms.total)?;
            opt.step(net, &grads, lr)?;
        }
        let train_loss = running / train.len() as f64;
        let val_loss = partition_loss(net, val, cfg.batch_size, use_safd)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        writeln!(
            log,
            "epoch {epoch}/{} train {train_loss:.6} val {val_loss:.6} lr {lr:.2e}",
            cfg.epochs
        )?;
        let stop = stopper.observe(epoch, val_loss);
        if stopper.improved() {
            best_weights = net.clone();
        }
        if stop {
            stopped_early = true;
            break;
        }
        if train_loss >= prev_train_loss {
            lr *= cfg.lr_decay_factor;
        }
        prev_train_loss = train_loss;
    }
    *net = best_weights;
    Ok(FitResult {
        history,
        best_epoch: stopper.best_epoch(),
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::model::SAFENetConfig;
    use rand::Rng;

    fn tiny_cfg() -> SAFENetConfig {
        SAFENetConfig {
            embed: crate::attention::EmbedConfig {
                c_in: 2,
                d_model: 8,
                conv_kernel: 3,
            },
            ssa: crate::attention::SSAConfig {
                d_model: 8,
                ..Default::default()
            },
            tcn: crate::model::TCNConfig {
                channels: 8,
                kernel: 3,
                dilations: vec![1, 2],
                residual: true,
            },
            safd: crate::model::SAFDConfig {
                iterations: 1,
                weight_hidden: 4,
            },
            encoder_layers: 1,
            n_joints: 1,
            n_subjects: 2,
            ..Default::default()
        }
    }

    /// Toy task: subject 0 emits weak windows around amplitude a0 with a
    /// negative target, subject 1 strong windows with a positive target.
    /// Linearly separable by channel energy, so identity must saturate.
    fn toy_dataset(per_subject: usize, seed: u64) -> WindowedDataset {
        let (l, c) = (8, 2);
        let total = 2 * per_subject;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Vec::new();
        let mut t = Vec::new();
        let mut labels = Vec::new();
        for s in 0..2usize {
            let amp = if s == 0 { 0.2 } else { 1.6 };
            for _ in 0..per_subject {
                for _ in 0..l * c {
                    w.push(amp * rng.gen_range(-1.0..1.0));
                }
                t.push(if s == 0 { -0.8 } else { 0.8 });
                labels.push(s);
            }
        }
        WindowedDataset {
            windows: Tensor::new(w, &[total, l, c]).unwrap(),
            targets: Tensor::new(t, &[total, 1]).unwrap(),
            labels,
            window_len: l,
            step: l,
        }
    }

    #[test]
    fn stopper_halts_after_patience_stale_epochs_and_keeps_the_best() {
        let mut s = EarlyStopper::new(1);
        assert!(!s.observe(1, 1.0));
        assert!(s.observe(2, 1.5), "patience 1 stops on the first stale epoch");
        assert_eq!(s.best_epoch(), 1);

        let mut s = EarlyStopper::new(2);
        assert!(!s.observe(1, 1.0));
        assert!(!s.observe(2, 1.2));
        assert!(s.observe(3, 1.1), "second stale epoch exhausts patience 2");
        assert_eq!(s.best_epoch(), 1);

        let mut s = EarlyStopper::new(2);
        assert!(!s.observe(1, 1.0));
        assert!(!s.observe(2, 1.2));
        assert!(!s.observe(3, 0.9), "improvement resets the counter");
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn separable_toy_task_reaches_full_validation_accuracy() {
        let ds = toy_dataset(30, 11);
        let (train, val, _) = crate::train::split(&ds, &Default::default()).unwrap();
        let mut net =
            SafeNet::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let cfg = TrainConfig {
            batch_size: 10,
            epochs: 6,
            lr_init: 5e-3,
            ..Default::default()
        };
        let mut log = Vec::new();
        let res = fit(&mut net, &train, &val, &cfg, true, &mut log).unwrap();
        assert!(res.history.len() <= cfg.epochs);
        let stats = crate::train::fit_stats(&train).unwrap();
        let report = crate::train::evaluate(&net, &val, &stats, 10, true).unwrap();
        assert_eq!(
            report.identity_accuracy, 1.0,
            "history: {:?}",
            res.history
        );
        let text = String::from_utf8(log).unwrap();
        assert_eq!(text.lines().count(), res.history.len());
        assert!(text.contains("epoch 1/6 train"));
    }

    #[test]
    fn same_seed_reproduces_the_same_weights_bit_for_bit() {
        let ds = toy_dataset(15, 13);
        let (train, val, _) = crate::train::split(&ds, &Default::default()).unwrap();
        let cfg = TrainConfig {
            batch_size: 6,
            epochs: 2,
            lr_init: 1e-3,
            ..Default::default()
        };
        let run = || {
            let mut net =
                SafeNet::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(31)).unwrap();
            fit(&mut net, &train, &val, &cfg, true, &mut Vec::new()).unwrap();
            net.named_params()
                .into_iter()
                .map(|(n, t)| {
                    (n, t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_loss_aborts_with_the_batch_index() {
        let ds = toy_dataset(10, 17);
        let (train, val, _) = crate::train::split(&ds, &Default::default()).unwrap();
        let mut net =
            SafeNet::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(41)).unwrap();
        // Poison one embedding weight; the NaN rides through the forward
        // pass and must be caught at the first loss evaluation.
        let poisoned: Vec<f64> = net
            .embed_w
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 { f64::NAN } else { *v })
            .collect();
        net.embed_w = Tensor::param(poisoned, net.embed_w.shape()).unwrap();
        let err = fit(
            &mut net,
            &train,
            &val,
            &TrainConfig {
                batch_size: 4,
                epochs: 1,
                ..Default::default()
            },
            true,
            &mut Vec::new(),
        )
        .unwrap_err();
        match err {
            Error::NonFiniteLoss { epoch, batch } => {
                assert_eq!(epoch, 1);
                assert_eq!(batch, 0);
            }
            other => panic!("expected a non-finite-loss abort, got {other:?}"),
        }
    }

    #[test]
    fn learning_rate_decays_after_a_training_plateau() {
        let ds = toy_dataset(12, 19);
        let (train, val, _) = crate::train::split(&ds, &Default::default()).unwrap();
        let mut net =
            SafeNet::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
        // An absurdly large step makes the loss bounce, forcing at least
        // one plateau epoch within the budget.
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 5,
            lr_init: 0.5,
            early_stop_patience: 5,
            ..Default::default()
        };
        let res = fit(&mut net, &train, &val, &cfg, true, &mut Vec::new()).unwrap();
        let decayed = res
            .history
            .windows(2)
            .any(|w| w[1].lr < w[0].lr && (w[1].lr - w[0].lr * 0.5).abs() < 1e-15);
        assert!(
            decayed,
            "expected at least one halving, history {:?}",
            res.history
        );
    }
}
