//! The pushing neural process: an attentive encoder from push histories to a
//! latent Gaussian, and a decoder from latent and push to an outcome Gaussian.

mod checkpoint;
mod data;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, CHECKPOINT_VERSION};
pub use data::{gen_dataset, load_dataset, save_dataset, BlockPushes, DatasetLine, PushDataset};
pub use model::{block_features, DecodeScratch, PnpConfig, PnpModel, TapedLatent, OUTCOME_SCALE, TOKEN_DIM};
pub(crate) use train::mean_and_se;
pub use train::{eval_context_curve, holdout_loglik, train, ContextPoint, EpochStats, TrainConfig, TrainReport};

use crate::scalar::wrap_angle;
use crate::{Action, Pose};

/// Typical magnitude of a planar displacement, used to normalise inputs.
pub const POS_SCALE: f64 = 0.1;
/// Nominal pusher travel, used to normalise inputs.
pub const TRAVEL_SCALE: f64 = 0.15;
pub const HISTORY_LIMIT: usize = 10;

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("targets must not be empty")]
    EmptyTargets,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("block {block} has {len} pushes, need at least {need}")]
    ShortBlock { block: usize, len: usize, need: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Autodiff(#[from] crate::nn::AutodiffError),
    #[error(transparent)]
    Layer(#[from] crate::nn::layers::LayerError),
}

/// One push: the action relative to the block's heading and the outcome in the
/// block's pre-push body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushRecord {
    /// `(cos θ, sin θ, travel)` with θ measured from the block's heading.
    pub action: [f64; 3],
    /// `(Δx, Δy, Δyaw)`.
    pub outcome: [f64; 3],
}

impl PushRecord {
    pub fn from_push(before: &Pose, action: &Action, after: &Pose) -> Self {
        let d = after.relative_to(before);
        Self { action: relative_action(before, action), outcome: [d.x, d.y, d.yaw] }
    }

    /// World pose reached by applying this record's outcome from `before`.
    pub fn apply(outcome: [f64; 3], before: &Pose) -> Pose {
        before.compose(&Pose::new(outcome[0], outcome[1], outcome[2]))
    }

    pub fn is_finite(&self) -> bool {
        self.action.iter().chain(&self.outcome).all(|v| v.is_finite())
    }
}

/// Encoder/decoder action features of a push applied to a block at `pose`.
pub fn relative_action(pose: &Pose, action: &Action) -> [f64; 3] {
    let rel = wrap_angle(action.theta - pose.yaw);
    [rel.cos(), rel.sin(), action.travel]
}

/// Which records survive once a [`History`] reaches its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryCap {
    /// Later pushes are ignored.
    #[default]
    KeepFirst,
    /// The oldest push is dropped.
    KeepLast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    records: Vec<PushRecord>,
    limit: usize,
    cap: HistoryCap,
}

impl History {
    pub fn new(limit: usize, cap: HistoryCap) -> Self {
        Self { records: Vec::with_capacity(limit), limit, cap }
    }

    pub fn from_records(records: &[PushRecord], limit: usize, cap: HistoryCap) -> Self {
        let mut h = Self::new(limit, cap);
        for r in records {
            h.push(*r);
        }
        h
    }

    /// Appends a record; returns false when the capped history is unchanged.
    pub fn push(&mut self, record: PushRecord) -> bool {
        if self.limit == 0 {
            return false;
        }
        if self.records.len() < self.limit {
            self.records.push(record);
            return true;
        }
        match self.cap {
            HistoryCap::KeepFirst => false,
            HistoryCap::KeepLast => {
                self.records.remove(0);
                self.records.push(record);
                true
            }
        }
    }

    pub fn records(&self) -> &[PushRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn cap(&self) -> HistoryCap {
        self.cap
    }
}

impl Default for History {
    fn default() -> Self {
        Self::new(HISTORY_LIMIT, HistoryCap::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize) -> PushRecord {
        PushRecord { action: [1.0, 0.0, 0.15], outcome: [i as f64, 0.0, 0.0] }
    }

    #[test]
    fn keep_first_ignores_overflow() {
        let mut h = History::new(3, HistoryCap::KeepFirst);
        for i in 0..5 {
            assert_eq!(h.push(rec(i)), i < 3);
        }
        let xs: Vec<f64> = h.records().iter().map(|r| r.outcome[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn keep_last_drops_oldest() {
        let h = History::from_records(&(0..5).map(rec).collect::<Vec<_>>(), 3, HistoryCap::KeepLast);
        let xs: Vec<f64> = h.records().iter().map(|r| r.outcome[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn record_round_trips_through_poses() {
        let before = Pose::new(0.3, -0.2, 2.5);
        let action = Action::toward(0.4);
        let after = Pose::new(0.35, -0.1, 2.9);
        let r = PushRecord::from_push(&before, &action, &after);
        let back = PushRecord::apply(r.outcome, &before);
        assert!((back.x - after.x).abs() < 1e-12 && (back.y - after.y).abs() < 1e-12);
        assert!((back.yaw - after.yaw).abs() < 1e-12);
        let rel = wrap_angle(0.4_f64 - 2.5);
        assert!((r.action[0] - rel.cos()).abs() < 1e-15);
    }
}
