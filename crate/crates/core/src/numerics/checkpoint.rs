//! Parameter checkpoint file: a JSON document tagged with a format magic,
//! a model kind, and a name → `{shape, data}` map.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "SEEDLINE-CKPT-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vae,
    Lm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Vae => "vae",
            ModelKind::Lm => "lm",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unrecognised checkpoint magic {0:?}")]
    BadMagic(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {name} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint vocabulary hash {found} does not match {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("invalid checkpoint sidecar: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub magic: String,
    pub kind: ModelKind,
    pub params: BTreeMap<String, ParamRecord>,
}

impl ParamFile {
    pub fn from_store<T: Scalar>(kind: ModelKind, store: &ParamStore<T>) -> Self {
        let params = store
            .iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    ParamRecord {
                        shape: t.shape().to_vec(),
                        data: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
                    },
                )
            })
            .collect();
        Self {
            magic: CHECKPOINT_MAGIC.to_string(),
            kind,
            params,
        }
    }

    /// Copies values into a store whose parameter set and shapes must match exactly.
    pub fn load_into<T: Scalar>(&self, kind: ModelKind, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        if self.magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(self.magic.clone()));
        }
        if self.kind != kind {
            return Err(CheckpointError::KindMismatch {
                expected: kind,
                found: self.kind,
            });
        }
        if let Some(extra) = self.params.keys().find(|k| store.id(k).is_none()) {
            return Err(CheckpointError::UnexpectedParam(extra.clone()));
        }
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names {
            let rec = self
                .params
                .get(&name)
                .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
            let expected = store.get(store.id(&name).expect("name from store")).shape().to_vec();
            if rec.shape != expected {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected,
                    found: rec.shape.clone(),
                });
            }
            let data = rec.data.iter().map(|&v| T::of(v)).collect();
            let tensor = Tensor::new(rec.shape.clone(), data).map_err(|e| CheckpointError::Sidecar(e.to_string()))?;
            store.assign(&name, tensor).expect("shape checked above");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("param file serialises")
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        write_file(path, &self.to_json())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let text = read_file(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CheckpointError> {
    fs::write(path, contents).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn read_file(path: &Path) -> Result<String, CheckpointError> {
    fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}
