use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nuclick_core::synth::ObjectKind;
use nuclick_pipeline::Segmenter;
use serde::Serialize;

use crate::error::{Result, ServiceError};

pub const CHECKPOINT_EXTENSION: &str = "nuck";

#[derive(Clone, Debug, Serialize)]
pub struct ModelInfo {
    pub id: String,
    pub kind: ObjectKind,
    pub patch_size: usize,
    pub parameters: usize,
}

/// Checkpoints keyed by file name. Models are immutable once loaded and
/// shared by every session.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<Segmenter>>,
}

impl ModelRegistry {
    /// Loads every `*.nuck` file in `dir`.
    pub fn scan(dir: &Path) -> Result<Self> {
        let mut reg = Self::default();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(CHECKPOINT_EXTENSION) {
                continue;
            }
            let id = path.file_name().and_then(|n| n.to_str()).map(str::to_owned);
            let Some(id) = id else { continue };
            let seg = Segmenter::load(&path).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
            reg.insert(id, seg);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, id: impl Into<String>, seg: Segmenter) {
        self.models.insert(id.into(), Arc::new(seg));
    }

    pub fn get(&self, id: &str) -> Result<Arc<Segmenter>> {
        self.models
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("model {id}")))
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        self.models
            .iter()
            .map(|(id, s)| ModelInfo {
                id: id.clone(),
                kind: s.kind(),
                patch_size: s.net().config().patch_size,
                parameters: s.net().parameter_count(),
            })
            .collect()
    }
}
