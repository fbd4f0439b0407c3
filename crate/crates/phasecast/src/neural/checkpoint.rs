//! On-disk model layout (`PFCKPT`, version 1).
//!
//! A checkpoint directory holds `meta.json` (spec, system, factor ranges,
//! optional training state, parameter shapes, blob checksum) plus
//! `params.bin` with every parameter tensor concatenated in canonical
//! order as little-endian `f64`. Loading rebuilds the model from its spec
//! and then overwrites the freshly initialized parameters, validating
//! names, shapes, byte count, and CRC32 on the way in.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::format::{read_f64_file, write_f64_file, FileMeta};
use crate::dynsys::SystemKind;
use crate::error::{Error, Result};

use super::{Model, ModelSpec};

pub const FORMAT_NAME: &str = "PFCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer-independent training progress stored alongside the weights,
/// enough to label a checkpoint; optimizer moments are not persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub best_val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    format: String,
    version: u32,
    system: SystemKind,
    spec: ModelSpec,
    factor_ranges: Option<Vec<(f64, f64)>>,
    train_state: Option<TrainState>,
    params: Vec<ParamMeta>,
    blob: FileMeta,
}

/// Writes `model` into `dir`, creating the directory if needed.
pub fn save_checkpoint(model: &Model, train_state: Option<&TrainState>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;

    let tensors = model.param_tensors();
    let blob = write_f64_file(
        &dir.join("params.bin"),
        tensors.iter().flat_map(|t| t.data().iter().copied()),
    )?;
    let params = model
        .param_names()
        .into_iter()
        .zip(&tensors)
        .map(|(name, t)| ParamMeta {
            name,
            rows: t.rows(),
            cols: t.cols(),
        })
        .collect();

    let meta = CheckpointMeta {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        system: model.system(),
        spec: model.spec().clone(),
        factor_ranges: model.factor_ranges().map(|r| r.to_vec()),
        train_state: train_state.cloned(),
        params,
        blob,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::format(format!("encode checkpoint metadata: {e}")))?;
    fs::write(dir.join("meta.json"), json)
        .map_err(|e| Error::io(format!("write {}", dir.join("meta.json").display()), e))?;
    Ok(())
}

/// Reads a checkpoint back. The spec is revalidated and the parameter
/// list must match the architecture it implies exactly.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, Option<TrainState>)> {
    let meta_path = dir.join("meta.json");
    let raw = fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(format!("read {}", meta_path.display()), e))?;
    let meta: CheckpointMeta = serde_json::from_str(&raw)
        .map_err(|e| Error::format(format!("{}: {e}", meta_path.display())))?;

    if meta.format != FORMAT_NAME {
        return Err(Error::format(format!(
            "{}: expected format {FORMAT_NAME}, found {}",
            meta_path.display(),
            meta.format
        )));
    }
    if meta.version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "{}: unsupported version {}",
            meta_path.display(),
            meta.version
        )));
    }

    let mut model = Model::build(meta.spec, meta.system)?;
    let names = model.param_names();
    if meta.params.len() != names.len() {
        return Err(Error::format(format!(
            "checkpoint lists {} parameters, architecture has {}",
            meta.params.len(),
            names.len()
        )));
    }
    let mut total = 0usize;
    for (pm, (name, t)) in meta.params.iter().zip(names.iter().zip(model.param_tensors())) {
        if &pm.name != name || pm.rows != t.rows() || pm.cols != t.cols() {
            return Err(Error::format(format!(
                "checkpoint parameter {} is {}x{}, architecture expects {} as {}",
                pm.name,
                pm.rows,
                pm.cols,
                name,
                t.shape_string()
            )));
        }
        total += pm.rows * pm.cols;
    }
    if meta.blob.bytes != 8 * total as u64 {
        return Err(Error::format(format!(
            "declared shapes imply {} bytes, metadata says {}",
            8 * total,
            meta.blob.bytes
        )));
    }

    let flat = read_f64_file(&dir.join("params.bin"), &meta.blob, "params.bin")?;
    let mut at = 0;
    for t in model.param_tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    if let Some(ranges) = &meta.factor_ranges {
        model.set_factor_ranges(ranges.clone())?;
    }
    Ok((model, meta.train_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Family;

    fn small_model() -> Model {
        let spec = ModelSpec::new(Family::VaeSd, 8, 2, 13).with_hidden(vec![10, 6]);
        let mut m = Model::build(spec, SystemKind::Pendulum).unwrap();
        m.set_factor_ranges(vec![(1.0, 1.5)]).unwrap();
        m
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let model = small_model();
        let state = TrainState {
            epoch: 42,
            lr: 3e-4,
            best_val: 0.123,
        };
        save_checkpoint(&model, Some(&state), dir.path()).unwrap();

        let (back, back_state) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.spec(), model.spec());
        assert_eq!(back.system(), model.system());
        assert_eq!(back.factor_ranges(), model.factor_ranges());
        assert_eq!(back_state.as_ref(), Some(&state));
        for (a, b) in model.param_tensors().iter().zip(back.param_tensors()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn truncated_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_model(), None, dir.path()).unwrap();
        let blob = dir.path().join("params.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("expected"), "got: {err}");
    }

    #[test]
    fn corrupted_blob_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_model(), None, dir.path()).unwrap();
        let blob = dir.path().join("params.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[40] ^= 0xff;
        fs::write(&blob, &bytes).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("checksum"), "got: {err}");
    }

    #[test]
    fn edited_shape_metadata_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_model(), None, dir.path()).unwrap();
        let meta_path = dir.path().join("meta.json");
        let text = fs::read_to_string(&meta_path)
            .unwrap()
            .replacen("\"rows\": 16", "\"rows\": 15", 1);
        fs::write(&meta_path, text).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn unknown_meta_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_model(), None, dir.path()).unwrap();
        let meta_path = dir.path().join("meta.json");
        let text = fs::read_to_string(&meta_path)
            .unwrap()
            .replacen("\"format\"", "\"surprise\": 1,\n  \"format\"", 1);
        fs::write(&meta_path, text).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
