//! Binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"GMA1" | manifest length (u32 LE) | manifest (JSON) | values (f64 LE)
//! ```
//!
//! The manifest lists every stored tensor by name and shape in the order
//! its values follow. Optimizer moments are stored as ordinary entries
//! named `adamax.m/<param>` and `adamax.u/<param>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::model::{Model, ModelConfig};
use crate::error::{GmaError, Result};
use crate::numeric::{AdamaxConfig, AdamaxState, Tensor};

pub const MAGIC: &[u8; 4] = b"GMA1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: RunConfig,
    pub model: ModelConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub adamax: Option<AdamaxMeta>,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamaxMeta {
    pub config: AdamaxConfig,
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor>,
}

fn err(msg: impl Into<String>) -> GmaError {
    GmaError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, model: &Model, optimizer: Option<&AdamaxState>, epoch: usize) -> Self {
        let mut entries = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, t: Tensor| {
            entries.push(Entry {
                name,
                rows: t.rows(),
                cols: t.cols(),
                dtype: DTYPE.into(),
            });
            tensors.push(t);
        };
        for (name, t) in model.store.names().iter().zip(model.store.tensors()) {
            push(name.clone(), Tensor::new(t.rows(), t.cols(), t.data().to_vec()).expect("same shape"));
        }
        if let Some(opt) = optimizer {
            for (prefix, buffers) in [("adamax.m/", &opt.m), ("adamax.u/", &opt.u)] {
                for ((name, t), buf) in model.store.names().iter().zip(model.store.tensors()).zip(buffers) {
                    push(format!("{prefix}{name}"), Tensor::new(t.rows(), t.cols(), buf.clone()).expect("same shape"));
                }
            }
        }
        Checkpoint {
            manifest: Manifest {
                version: CHECKPOINT_VERSION,
                config: config.clone(),
                model: model.config.clone(),
                epoch,
                adamax: optimizer.map(|o| AdamaxMeta {
                    config: o.config,
                    t: o.t,
                }),
                entries,
            },
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let len = u32::try_from(manifest.len()).map_err(|_| err("manifest too large"))?;
        let values: usize = self.tensors.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(8 + manifest.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a whole checkpoint; nothing is returned unless every byte
    /// checks out.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(err(format!("file is {} bytes, too short for a header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(format!("bad magic {:?}, expected {:?}", &bytes[..4], MAGIC)));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() < len {
            return Err(err(format!("truncated manifest: {} of {len} bytes", body.len())));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len]).map_err(|e| err(format!("manifest: {e}")))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", manifest.version)));
        }
        let mut values = &body[len..];
        let expected: usize = manifest.entries.iter().map(|e| e.rows * e.cols * 8).sum();
        if values.len() != expected {
            return Err(err(format!(
                "value section is {} bytes, manifest describes {expected}{}",
                values.len(),
                if values.len() < expected { " (truncated file)" } else { "" }
            )));
        }
        let mut tensors = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            if e.dtype != DTYPE {
                return Err(err(format!("{}: unsupported dtype {:?}", e.name, e.dtype)));
            }
            let n = e.rows * e.cols;
            let data = values[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            values = &values[8 * n..];
            tensors.push(Tensor::new(e.rows, e.cols, data)?);
        }
        Ok(Checkpoint { manifest, tensors })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| GmaError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| GmaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GmaError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    fn find(&self, name: &str) -> Option<&Tensor> {
        self.manifest.entries.iter().position(|e| e.name == name).map(|i| &self.tensors[i])
    }

    /// Copies stored values into `model`, which must have exactly the
    /// stored parameter names and shapes.
    pub fn restore_into(&self, model: &mut Model) -> Result<()> {
        let mut values = Vec::with_capacity(model.store.len());
        for (name, t) in model.store.names().iter().zip(model.store.tensors()) {
            let stored = self.find(name).ok_or_else(|| err(format!("parameter {name} missing from checkpoint")))?;
            if stored.shape() != t.shape() {
                return Err(err(format!(
                    "parameter {name}: checkpoint shape {:?}, model expects {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            values.push(stored.data().to_vec());
        }
        let unknown = self.manifest.entries.iter().find(|e| {
            let base = e.name.strip_prefix("adamax.m/").or_else(|| e.name.strip_prefix("adamax.u/")).unwrap_or(&e.name);
            model.store.find(base).is_none()
        });
        if let Some(e) = unknown {
            return Err(err(format!("checkpoint entry {} has no counterpart in the model", e.name)));
        }
        for (t, v) in model.store.tensors_mut().iter_mut().zip(values) {
            t.data_mut().copy_from_slice(&v);
        }
        Ok(())
    }

    /// Rebuilds the stored model. When `expected` is given the stored
    /// layout must match it.
    pub fn restore_model(&self, expected: Option<&ModelConfig>) -> Result<Model> {
        let config = expected.unwrap_or(&self.manifest.model).clone();
        let mut model = Model::new(config, 0)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn restore_optimizer(&self, model: &Model) -> Result<Option<AdamaxState>> {
        let Some(meta) = self.manifest.adamax else { return Ok(None) };
        let mut state = AdamaxState::for_params(meta.config, model.store.tensors());
        state.t = meta.t;
        for (i, name) in model.store.names().iter().enumerate() {
            for (prefix, buf) in [("adamax.m/", &mut state.m[i]), ("adamax.u/", &mut state.u[i])] {
                let key = format!("{prefix}{name}");
                let stored = self.find(&key).ok_or_else(|| err(format!("optimizer entry {key} missing")))?;
                if stored.len() != buf.len() {
                    return Err(err(format!("optimizer entry {key} has {} values, expected {}", stored.len(), buf.len())));
                }
                buf.copy_from_slice(stored.data());
            }
        }
        Ok(Some(state))
    }
}
