//! Versioned JSON containers for networks and resumable training state.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::FlowModel;

pub const FORMAT_VERSION: u64 = 1;
pub const MODEL_KIND: &str = "model";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a checkpoint ({detail})")]
    Format { path: PathBuf, detail: String },
    #[error("{path}: format_version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u64 },
    #[error("{path}: holds a '{found}' checkpoint, expected '{expected}'")]
    Kind { path: PathBuf, found: String, expected: String },
    #[error("{path}: invalid contents: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// Serializes `payload` under a `{format_version, kind, payload}` envelope,
/// writing through a temporary file so readers never see a partial file.
pub fn write<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<(), CheckpointError> {
    let payload = serde_json::to_value(payload).map_err(|e| CheckpointError::Invalid {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let doc = json!({ "format_version": FORMAT_VERSION, "kind": kind, "payload": payload });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&doc).expect("JSON value serializes")).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, CheckpointError> {
    let bytes = fs::read(path).map_err(io(path))?;
    let format = |detail: String| CheckpointError::Format { path: path.to_path_buf(), detail };
    let mut doc: Value = serde_json::from_slice(&bytes).map_err(|e| format(format!("JSON parse error: {e}")))?;
    let found = doc
        .get("format_version")
        .ok_or_else(|| format("missing 'format_version'".into()))?
        .as_u64()
        .ok_or_else(|| format("'format_version' is not an unsigned integer".into()))?;
    if found != FORMAT_VERSION {
        return Err(CheckpointError::Version { path: path.to_path_buf(), found });
    }
    let found_kind = doc.get("kind").and_then(Value::as_str).ok_or_else(|| format("missing 'kind'".into()))?;
    if found_kind != kind {
        return Err(CheckpointError::Kind {
            path: path.to_path_buf(),
            found: found_kind.to_string(),
            expected: kind.to_string(),
        });
    }
    let payload = doc
        .get_mut("payload")
        .map(Value::take)
        .ok_or_else(|| format("missing 'payload'".into()))?;
    serde_json::from_value(payload).map_err(|e| CheckpointError::Invalid {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn save_model(path: &Path, model: &FlowModel) -> Result<(), CheckpointError> {
    write(path, MODEL_KIND, model)
}

pub fn load_model(path: &Path) -> Result<FlowModel, CheckpointError> {
    let model: FlowModel = read(path, MODEL_KIND)?;
    model.validate().map_err(|e| CheckpointError::Invalid {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        FlowModel::init(&Architecture::mscale(&[7, 5], &[1.0, 2.0, 4.0]), false, true, &mut rng).unwrap()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.json");
        let m = model();
        save_model(&path, &m).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let bits = |m: &FlowModel| -> Vec<u64> { m.nets().iter().flat_map(|n| n.to_flat()).map(f64::to_bits).collect() };
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn diagnostics_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, b"{\"format_version\": 1, \"kind\": \"model\", \"payl").unwrap();
        assert!(matches!(load_model(&path), Err(CheckpointError::Format { .. })));
        fs::write(&path, b"{\"format_version\": 9, \"kind\": \"model\", \"payload\": {}}").unwrap();
        assert!(matches!(load_model(&path), Err(CheckpointError::Version { found: 9, .. })));
        write(&path, "train_state", &1).unwrap();
        assert!(matches!(load_model(&path), Err(CheckpointError::Kind { .. })));
        fs::write(&path, b"{\"format_version\": 1, \"kind\": \"model\", \"payload\": {\"nets\": 3}}").unwrap();
        assert!(matches!(load_model(&path), Err(CheckpointError::Invalid { .. })));
        let missing = dir.path().join("nope.json");
        let err = load_model(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.json"));
    }
}
