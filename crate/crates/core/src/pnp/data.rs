use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PnpError, PushRecord};
use crate::env::Dynamics;
use crate::geom::simulate_push;
use crate::{Block, Pose};

/// All pushes recorded for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPushes {
    pub id: usize,
    /// True center of mass; kept for analysis only.
    pub com: [f64; 2],
    pub records: Vec<PushRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PushDataset {
    pub blocks: Vec<BlockPushes>,
}

impl PushDataset {
    pub fn record_count(&self) -> usize {
        self.blocks.iter().map(|b| b.records.len()).sum()
    }

    /// Splits off the last `fraction` of blocks (at least one when possible).
    pub fn split_holdout(&self, fraction: f64) -> (PushDataset, PushDataset) {
        let n = self.blocks.len();
        let k = if fraction <= 0.0 || n < 2 { 0 } else { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) };
        let (train, hold) = self.blocks.split_at(n - k);
        (PushDataset { blocks: train.to_vec() }, PushDataset { blocks: hold.to_vec() })
    }
}

/// One line of the JSON-lines dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetLine {
    pub block_id: usize,
    pub com: [f64; 2],
    pub action: [f64; 3],
    pub outcome: [f64; 3],
}

/// Pushes `n_blocks` blocks with random centers of mass from the canonical pose,
/// each `pushes_per_block` times in uniformly random directions.
pub fn gen_dataset<R: Rng + ?Sized>(
    n_blocks: usize,
    pushes_per_block: usize,
    template: &Block,
    dynamics: &Dynamics,
    rng: &mut R,
) -> Result<PushDataset, PnpError> {
    if n_blocks == 0 || pushes_per_block == 0 {
        return Err(PnpError::Config("block and push counts must be at least 1".into()));
    }
    let pusher = dynamics.pusher();
    let noise = dynamics.noise();
    let origin = Pose::origin();
    let mut blocks = Vec::with_capacity(n_blocks);
    for id in 0..n_blocks {
        let com = template.sample_com(rng);
        let block = template.with_com(com).expect("sampled com lies inside the footprint");
        let records = (0..pushes_per_block)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let action = dynamics.action(theta);
                let after = simulate_push(&origin, &block, &action, &noise, &pusher, rng);
                PushRecord::from_push(&origin, &action, &after)
            })
            .collect();
        blocks.push(BlockPushes { id, com, records });
    }
    Ok(PushDataset { blocks })
}

pub fn save_dataset(path: &Path, dataset: &PushDataset) -> Result<(), PnpError> {
    let io = |source| PnpError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for b in &dataset.blocks {
        for r in &b.records {
            let line = DatasetLine { block_id: b.id, com: b.com, action: r.action, outcome: r.outcome };
            serde_json::to_writer(&mut w, &line).map_err(|e| io(e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a dataset; lines of one block must be contiguous.
pub fn load_dataset(path: &Path) -> Result<PushDataset, PnpError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| PnpError::Io { path: p.clone(), source })?;
    let mut blocks: Vec<BlockPushes> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PnpError::Io { path: p.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| PnpError::Parse { path: p.clone(), line: i + 1, message };
        let d: DatasetLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let record = PushRecord { action: d.action, outcome: d.outcome };
        if !record.is_finite() {
            return Err(parse_err("non-finite value".into()));
        }
        match blocks.last_mut() {
            Some(b) if b.id == d.block_id => b.records.push(record),
            _ => {
                if blocks.iter().any(|b| b.id == d.block_id) {
                    return Err(parse_err(format!("block {} is not contiguous", d.block_id)));
                }
                blocks.push(BlockPushes { id: d.block_id, com: d.com, records: vec![record] });
            }
        }
    }
    if blocks.is_empty() {
        return Err(PnpError::EmptyDataset);
    }
    Ok(PushDataset { blocks })
}
