//! Checkpoints: a flat little-endian binary of named tensors plus a JSON
//! manifest carrying name, shape, dtype and byte offset for each tensor.
//!
//! Optimizer state is stored alongside the weights (`<name>#m`,
//! `<name>#v`) so a resumed run reproduces the next update exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::ParamStore;
use super::Matrix;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("binary payload truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unsupported dtype {0}")]
    Dtype(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    byte_offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    step: u64,
    extra: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

/// Write `<base>.json` and `<base>.bin`. `extra` is free-form trainer
/// metadata (epoch counters, config echo) preserved verbatim.
pub fn save(
    store: &ParamStore,
    extra: &serde_json::Value,
    base: &Path,
) -> Result<(), CheckpointError> {
    let (json_path, bin_path) = paths(base);
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let push = |name: String, m: &Matrix, tensors: &mut Vec<TensorEntry>, blob: &mut Vec<u8>| {
        tensors.push(TensorEntry {
            name,
            shape: [m.rows, m.cols],
            dtype: "f64".into(),
            byte_offset: blob.len(),
        });
        for v in &m.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for id in 0..store.len() {
        push(store.name(id).to_string(), store.value(id), &mut tensors, &mut blob);
        let (m, v) = store.adam_slot(id);
        push(format!("{}#m", store.name(id)), m, &mut tensors, &mut blob);
        push(format!("{}#v", store.name(id)), v, &mut tensors, &mut blob);
    }
    let manifest = Manifest {
        dtype: "f64".into(),
        step: store.step,
        extra: extra.clone(),
        tensors,
    };
    let mut f = fs::File::create(&json_path)?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    fs::write(&bin_path, &blob)?;
    Ok(())
}

fn read_tensor(blob: &[u8], entry: &TensorEntry) -> Result<Matrix, CheckpointError> {
    if entry.dtype != "f64" {
        return Err(CheckpointError::Dtype(entry.dtype.clone()));
    }
    let n = entry.shape[0] * entry.shape[1];
    let need = entry.byte_offset + n * 8;
    if blob.len() < need {
        return Err(CheckpointError::Truncated {
            need,
            have: blob.len(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = entry.byte_offset + i * 8;
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&blob[off..off + 8]);
        data.push(f64::from_le_bytes(bytes));
    }
    Ok(Matrix::from_vec(entry.shape[0], entry.shape[1], data))
}

/// Fill an existing store (same parameter names and shapes) from
/// `<base>.json` / `<base>.bin`. Returns the manifest's `extra` value.
pub fn load_into(
    store: &mut ParamStore,
    base: &Path,
) -> Result<serde_json::Value, CheckpointError> {
    let (json_path, bin_path) = paths(base);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    let blob = fs::read(bin_path)?;
    let find = |name: &str| -> Result<&TensorEntry, CheckpointError> {
        manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    };
    for id in 0..store.len() {
        let name = store.name(id).to_string();
        let expected = store.shape(id);
        let entry = find(&name)?;
        let value = read_tensor(&blob, entry)?;
        if (value.rows, value.cols) != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: (value.rows, value.cols),
                expected,
            });
        }
        *store.value_mut(id) = value;
        let m = read_tensor(&blob, find(&format!("{name}#m"))?)?;
        let v = read_tensor(&blob, find(&format!("{name}#v"))?)?;
        store.set_adam_slot(id, m, v);
    }
    store.step = manifest.step;
    Ok(manifest.extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::params::{AdamConfig, Init};
    use crate::tensor::{Gradients, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_values_and_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let a = store.add("layer.w", 3, 2, Init::Uniform(1.0), &mut rng);
        let b = store.add("layer.b", 1, 2, Init::Uniform(1.0), &mut rng);

        // Take one optimizer step so Adam slots are non-trivial.
        let mut grads = Gradients::zeros_like(&store);
        grads.by_id[a].data[0] = 0.5;
        grads.by_id[b].data[1] = -0.25;
        store.adam_step(&grads, &AdamConfig::default(), |_| false);

        let extra = serde_json::json!({"epoch": 3});
        save(&store, &extra, &base).unwrap();

        let mut rng2 = ChaCha8Rng::seed_from_u64(1234);
        let mut restored = ParamStore::new();
        restored.add("layer.w", 3, 2, Init::Uniform(1.0), &mut rng2);
        restored.add("layer.b", 1, 2, Init::Uniform(1.0), &mut rng2);
        let got_extra = load_into(&mut restored, &base).unwrap();
        assert_eq!(got_extra["epoch"], 3);
        assert_eq!(restored.step, store.step);
        for id in 0..store.len() {
            assert_eq!(restored.value(id), store.value(id));
            assert_eq!(restored.adam_slot(id).0, store.adam_slot(id).0);
            assert_eq!(restored.adam_slot(id).1, store.adam_slot(id).1);
        }

        // A further identical update must produce identical values.
        let mut tape1 = Tape::new();
        let v1 = tape1.param(&store, a);
        let l1 = tape1.sum_all(v1);
        let g1 = tape1.backward(l1, &store);
        store.adam_step(&g1, &AdamConfig::default(), |_| false);

        let mut tape2 = Tape::new();
        let v2 = tape2.param(&restored, a);
        let l2 = tape2.sum_all(v2);
        let g2 = tape2.backward(l2, &restored);
        restored.adam_step(&g2, &AdamConfig::default(), |_| false);
        assert_eq!(restored.value(a), store.value(a));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.add("w", 2, 2, Init::Uniform(1.0), &mut rng);
        save(&store, &serde_json::Value::Null, &base).unwrap();

        let mut other = ParamStore::new();
        other.add("w", 3, 2, Init::Uniform(1.0), &mut rng);
        match load_into(&mut other, &base) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => assert_eq!(name, "w"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
