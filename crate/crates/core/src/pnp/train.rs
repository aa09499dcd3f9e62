use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{BlockPushes, PnpError, PnpModel, PushDataset, PushRecord, HISTORY_LIMIT};
use crate::nn::{Adam, Tape};
use crate::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Largest context drawn for the conditioning posterior.
    pub max_context: usize,
    /// Learning rate at the last epoch as a fraction of the initial one (cosine decay).
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 16, learning_rate: 1e-3, seed: 0, max_context: HISTORY_LIMIT, final_lr_fraction: 0.1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PnpError::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PnpError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(PnpError::Config(format!("final_lr_fraction must be in [0, 1], got {}", self.final_lr_fraction)));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let progress = (epoch - 1) as f64 / (self.epochs - 1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean negative ELBO per block over the epoch.
    pub elbo_loss: f64,
    /// Mean per-push predictive log-likelihood on held-out blocks, if any.
    pub holdout_loglik: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Fits the model by minimising the negative ELBO with Adam.
///
/// Each epoch visits every training block once in shuffled order. A block's
/// context is a random subset of its pushes of uniform size in
/// `0..=min(max_context, T)` and its targets are all of its pushes.
pub fn train(
    model: &mut PnpModel,
    dataset: &PushDataset,
    holdout: &PushDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &PnpModel),
) -> Result<TrainReport, PnpError> {
    config.validate()?;
    if dataset.blocks.is_empty() || dataset.blocks.iter().all(|b| b.records.is_empty()) {
        return Err(PnpError::EmptyDataset);
    }
    let blocks: Vec<&BlockPushes> = dataset.blocks.iter().filter(|b| !b.records.is_empty()).collect();
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    let mut report = TrainReport::default();
    let mut context: Vec<PushRecord> = Vec::with_capacity(config.max_context);
    let mut perm: Vec<usize> = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        opt.lr = config.learning_rate_at(epoch);
        let mut total = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape, true);
            let mut acc = None;
            for &i in batch {
                let records = &blocks[i].records;
                let t = rng.random_range(0..=config.max_context.min(records.len()));
                perm.clear();
                perm.extend(0..records.len());
                perm.partial_shuffle(&mut rng, t);
                context.clear();
                context.extend(perm[..t].iter().map(|&j| records[j]));
                let eps = model.draw_eps(&mut rng);
                let l = model.elbo_on_tape(&mut tape, &p, &context, records, &eps)?;
                acc = Some(match acc {
                    None => l,
                    Some(a) => tape.add(a, l)?,
                });
            }
            let sum = acc.expect("batches are non-empty");
            let batch_sum = tape.value(sum).item();
            if !batch_sum.is_finite() {
                return Err(PnpError::Diverged { epoch, batch: batch_idx, loss: batch_sum });
            }
            let loss = tape.scale(sum, 1.0 / batch.len() as f64);
            let mut grads = tape.backward(loss)?;
            let g = p.collect(model.params(), &mut grads);
            if g.iter().any(|t| !t.is_finite()) {
                return Err(PnpError::Diverged { epoch, batch: batch_idx, loss: batch_sum });
            }
            opt.step(model.params_mut(), &g);
            total += batch_sum;
        }
        let holdout_loglik = if holdout.blocks.is_empty() { None } else { Some(holdout_loglik(model, holdout)) };
        let stats = EpochStats { epoch, elbo_loss: total / blocks.len() as f64, holdout_loglik };
        log::debug!("epoch {epoch}: loss {:.4} holdout {:?}", stats.elbo_loss, stats.holdout_loglik);
        on_epoch(&stats, model);
        report.epochs.push(stats);
    }
    Ok(report)
}

/// Mean per-push log-likelihood of each block's later pushes given its first
/// `min(10, T/2)`, using the posterior mean latent.
pub fn holdout_loglik(model: &PnpModel, dataset: &PushDataset) -> f64 {
    let mut total = 0.0;
    let mut blocks = 0usize;
    for b in &dataset.blocks {
        let k = HISTORY_LIMIT.min(b.records.len() / 2);
        let targets = &b.records[k..];
        if targets.is_empty() {
            continue;
        }
        let z = model.encode(&b.records[..k]).mean;
        let ll: f64 = targets.iter().map(|r| model.decode(&z, r.action).logpdf(&r.outcome)).sum();
        total += ll / targets.len() as f64;
        blocks += 1;
    }
    if blocks == 0 {
        f64::NAN
    } else {
        total / blocks as f64
    }
}

/// Prediction error after conditioning on a given number of pushes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextPoint {
    pub context: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub blocks: usize,
}

/// For each context size `k` in `0..=max_context`, conditions on each block's
/// first `k` pushes and predicts the pushes after index `max_context` through
/// the posterior-mean latent and the decoder mean. The position error of a
/// block is averaged over its targets; the curve reports the mean and
/// standard error across blocks.
pub fn eval_context_curve(model: &PnpModel, dataset: &PushDataset, max_context: usize) -> Result<Vec<ContextPoint>, PnpError> {
    if dataset.blocks.is_empty() {
        return Err(PnpError::EmptyDataset);
    }
    for b in &dataset.blocks {
        if b.records.len() <= max_context {
            return Err(PnpError::ShortBlock { block: b.id, len: b.records.len(), need: max_context + 1 });
        }
    }
    let mut curve = Vec::with_capacity(max_context + 1);
    for k in 0..=max_context {
        let errors: Vec<f64> = dataset
            .blocks
            .iter()
            .map(|b| {
                let z = model.encode(&b.records[..k]).mean;
                let targets = &b.records[max_context..];
                let sum: f64 = targets
                    .iter()
                    .map(|r| {
                        let m = model.decode(&z, r.action).mean;
                        (m[0] - r.outcome[0]).hypot(m[1] - r.outcome[1])
                    })
                    .sum();
                sum / targets.len() as f64
            })
            .collect();
        let (mean_error, std_error) = mean_and_se(&errors);
        curve.push(ContextPoint { context: k, mean_error, std_error, blocks: errors.len() });
    }
    Ok(curve)
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
