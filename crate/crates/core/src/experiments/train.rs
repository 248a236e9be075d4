//! Minibatch SGD with momentum, weight decay and a step learning-rate
//! schedule.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Split};
use crate::error::{arg_err, Error, Result};
use crate::metrics::{accuracy, consistency, zero_fill_shift, ShiftSampler};
use crate::network::{softmax_cross_entropy, Network};
use crate::tensor::{circular_shift, Real, Tensor};

/// Random translation applied to each training image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    #[default]
    None,
    RandomCircularShift { max: usize },
    RandomZeroPadCrop { pad: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Learning rate is multiplied by `lr_decay` every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    pub augmentation: Augmentation,
    pub seed: u64,
    /// Shift pairs per validation image for the per-epoch consistency.
    pub consistency_trials: usize,
    /// After the last epoch, put back the parameters of the epoch with the
    /// highest validation accuracy (earliest on ties).
    pub restore_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay: 0.1,
            lr_step: 20,
            augmentation: Augmentation::None,
            seed: 0,
            consistency_trials: 1,
            restore_best: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return arg_err("batch_size must be positive");
        }
        let rates = [self.learning_rate, self.momentum, self.weight_decay, self.lr_decay];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return arg_err("rates must be finite and non-negative");
        }
        if self.lr_step == 0 {
            return arg_err("lr_step must be positive");
        }
        if self.consistency_trials == 0 {
            return arg_err("consistency_trials must be positive");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(((epoch.saturating_sub(1)) / self.lr_step) as i32)
    }
}

/// One row of the epoch log. Epoch 0 is the untrained network, and its
/// `train_loss` is the mean loss over the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_consistency: f64,
}

pub fn write_epoch_log(log: &[EpochRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in log {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Validation consistency uses circular shifts anywhere on the canvas,
/// from one sampler seeded by `cfg.seed`, so every epoch sees the same
/// shift set.
fn evaluate<T: Real>(net: &Network<T>, val: &Split, cfg: &TrainConfig) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let x = val.images_as::<T>();
    let s = x.shape();
    let sampler = ShiftSampler::circular(s.h.max(s.w), cfg.seed ^ 0x5eed)?;
    let acc = accuracy(net, &x, &val.labels)?;
    let cons = consistency(net, &x, &sampler, cfg.consistency_trials)?.fraction;
    Ok((acc, cons))
}

fn mean_loss<T: Real>(net: &Network<T>, split: &Split) -> Result<f64> {
    let logits = net.forward(&split.images_as::<T>())?;
    let total: f64 = (0..split.len())
        .map(|n| {
            let z: Vec<f64> = logits.item_data(n).iter().map(|v| v.as_f64()).collect();
            softmax_cross_entropy(&z, split.labels[n]).0
        })
        .sum();
    Ok(total / split.len().max(1) as f64)
}

fn augment<T: Real>(x: Tensor<T>, aug: Augmentation, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let draw = |rng: &mut ChaCha8Rng, b: usize| {
        let b = b as i64;
        (rng.random_range(-b..=b) as isize, rng.random_range(-b..=b) as isize)
    };
    match aug {
        Augmentation::None => x,
        Augmentation::RandomCircularShift { max } => {
            let (dy, dx) = draw(rng, max);
            circular_shift(&x, dy, dx)
        }
        Augmentation::RandomZeroPadCrop { pad } => {
            let (dy, dx) = draw(rng, pad);
            zero_fill_shift(&x, dy, dx)
        }
    }
}

/// Trains `net` in place and returns the epoch log (epochs `0..=cfg.epochs`).
/// Epoch `e` shuffles with stream `e` of a generator seeded by `cfg.seed`.
/// With `cfg.restore_best`, `net` ends with the parameters of the best
/// validation epoch rather than the last one.
pub fn train<T: Real>(net: &mut Network<T>, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.train.is_empty() {
        return arg_err("empty training split");
    }
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let (val_acc, val_consistency) = evaluate(net, &data.val, cfg)?;
    log.push(EpochRecord { epoch: 0, train_loss: mean_loss(net, &data.train)?, val_acc, val_consistency });
    let mut best = (val_acc, net.params().to_vec());

    let mut velocity: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.value.data().len()]).collect();
    let n = data.train.len();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<Tensor<T>> = batch
                .iter()
                .map(|&i| augment(data.train.images.item(i).cast::<T>(), cfg.augmentation, &mut rng))
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.train.labels[i]).collect();
            let grads = net.backward(&Tensor::stack(&items)?, &labels)?;
            if !grads.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += grads.loss * batch.len() as f64;
            for ((p, g), v) in net.params_mut().iter_mut().zip(&grads.params).zip(&mut velocity) {
                for ((w, &g), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                    let wf = w.as_f64();
                    *v = cfg.momentum * *v + g + cfg.weight_decay * wf;
                    *w = T::from_f64(wf - lr * *v);
                }
            }
        }
        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() || !net.params().iter().all(|p| p.value.all_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let (val_acc, val_consistency) = evaluate(net, &data.val, cfg)?;
        log.push(EpochRecord { epoch, train_loss, val_acc, val_consistency });
        if val_acc > best.0 {
            best = (val_acc, net.params().to_vec());
        }
    }
    if cfg.restore_best && best.0.is_finite() {
        net.params_mut().clone_from_slice(&best.1);
    }
    Ok(log)
}
