use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{PnpConfig, PnpError, PnpModel};
use crate::nn::Tensor;
use crate::SimRng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// JSON side of a checkpoint; the weights live in a sibling `.bin` file as
/// little-endian `f64`s, tensors concatenated in manifest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: PnpConfig,
    pub features: [f64; 3],
    pub weights: String,
    pub tensors: Vec<TensorEntry>,
}

fn weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(path: &Path, model: &PnpModel) -> Result<(), PnpError> {
    let bin = weights_path(path);
    let params = model.params();
    let tensors = params
        .names()
        .iter()
        .zip(params.values())
        .map(|(name, t)| TensorEntry { name: name.clone(), rows: t.rows(), cols: t.cols() })
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        features: model.features(),
        weights: bin.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        tensors,
    };
    let mut bytes = Vec::with_capacity(params.scalar_count() * 8);
    for t in params.values() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| PnpError::Io { path: p, source }
    };
    fs::write(path, json + "\n").map_err(io(path))?;
    fs::write(&bin, bytes).map_err(io(&bin))
}

pub fn load_checkpoint(path: &Path) -> Result<PnpModel, PnpError> {
    let err = |message: String| PnpError::Checkpoint { path: path.display().to_string(), message };
    let text = fs::read_to_string(path).map_err(|source| PnpError::Io { path: path.display().to_string(), source })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported version {}", manifest.version)));
    }
    let bin = path.with_file_name(&manifest.weights);
    let bytes = fs::read(&bin).map_err(|source| PnpError::Io { path: bin.display().to_string(), source })?;
    // initial values are overwritten below; the seed only fixes the layout
    let mut model = PnpModel::new(manifest.config.clone(), manifest.features, &mut SimRng::seed_from_u64(0))?;
    let expected: Vec<(String, usize, usize)> = {
        let p = model.params();
        p.names().iter().zip(p.values()).map(|(n, t)| (n.clone(), t.rows(), t.cols())).collect()
    };
    if expected.len() != manifest.tensors.len() {
        return Err(err(format!("expected {} tensors, found {}", expected.len(), manifest.tensors.len())));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
    if bytes.len() != total * 8 {
        return Err(err(format!("weights file holds {} bytes, manifest needs {}", bytes.len(), total * 8)));
    }
    let mut offset = 0;
    for (i, entry) in manifest.tensors.iter().enumerate() {
        let (name, rows, cols) = &expected[i];
        if &entry.name != name || entry.rows != *rows || entry.cols != *cols {
            return Err(err(format!(
                "tensor {i} is {}[{}x{}], model expects {name}[{rows}x{cols}]",
                entry.name, entry.rows, entry.cols
            )));
        }
        let n = rows * cols;
        let data: Vec<f64> = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += n * 8;
        model.params_mut().values_mut()[i] = Tensor::new(*rows, *cols, data);
    }
    if !model.params().is_finite() {
        return Err(err("non-finite weights".into()));
    }
    Ok(model)
}
