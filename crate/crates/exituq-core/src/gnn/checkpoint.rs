//! Versioned JSON checkpoints.
//!
//! A checkpoint stores the full model — architecture echo, every parameter
//! tensor, and batch-norm running statistics. JSON floats round-trip `f64`
//! exactly (shortest-representation printing), so save → load reproduces the
//! model bit for bit.

use super::{GnnError, MultiExitGnn, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Current on-disk format version.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    model: MultiExitGnn,
}

fn checkpoint_error(path: &Path, msg: impl ToString) -> GnnError {
    GnnError::Checkpoint { path: path.display().to_string(), msg: msg.to_string() }
}

/// Serializes the model to `path`.
pub fn save_checkpoint(path: &Path, model: &MultiExitGnn) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| checkpoint_error(path, e))?;
        }
    }
    let file = CheckpointFile { format_version: CHECKPOINT_FORMAT_VERSION, model: model.clone() };
    let json = serde_json::to_string(&file).map_err(|e| checkpoint_error(path, e))?;
    fs::write(path, json).map_err(|e| checkpoint_error(path, e))
}

/// Loads a model from `path`, rejecting unknown format versions.
pub fn load_checkpoint(path: &Path) -> Result<MultiExitGnn> {
    let json = fs::read_to_string(path).map_err(|e| checkpoint_error(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&json).map_err(|e| checkpoint_error(path, e))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(checkpoint_error(
            path,
            format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                file.format_version
            ),
        ));
    }
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{ArchConfig, LayerKind};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut rng = StdRng::seed_from_u64(42);
        let arch = ArchConfig::standard(LayerKind::SageMean, 7, 3);
        let model = MultiExitGnn::new_multi_exit(arch, &mut rng).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        assert_eq!(model, restored);
    }

    #[test]
    fn rejects_future_format_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut rng = StdRng::seed_from_u64(1);
        let arch = ArchConfig::standard(LayerKind::GraphConv, 3, 2);
        let model = MultiExitGnn::new_single_exit(arch, &mut rng).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let tampered = fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":99");
        fs::write(&path, tampered).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("format version 99"));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_checkpoint(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.json"));
    }
}
