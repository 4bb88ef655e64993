use std::collections::BTreeMap;
use std::path::Path;

use super::{NdiffError, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter tensors with a format version, stored as JSON. f64 values
/// survive the round trip exactly (shortest-representation printing).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn save_checkpoint(path: &Path, named: &[(&str, &Tensor)]) -> Result<(), NdiffError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        tensors: named
            .iter()
            .map(|(name, t)| (name.to_string(), (*t).clone()))
            .collect(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(file, &ckpt)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NdiffError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(file)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(NdiffError::CheckpointVersion(ckpt.version));
    }
    for (name, t) in &ckpt.tensors {
        if t.data.len() != t.rows * t.cols {
            return Err(NdiffError::CheckpointTensor {
                name: name.clone(),
                detail: format!(
                    "expected {} values for {}x{}, got {}",
                    t.rows * t.cols,
                    t.rows,
                    t.cols,
                    t.data.len()
                ),
            });
        }
        if !t.is_all_finite() {
            return Err(NdiffError::CheckpointTensor {
                name: name.clone(),
                detail: "non-finite value".into(),
            });
        }
    }
    Ok(ckpt)
}
