use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ilvr_core::tensorio::is_image_shape;
use ilvr_core::{DenoiserModel, Kernel};
use serde::Serialize;

use crate::error::{CliError, CliResult, Context};
use crate::model::{model_from_bytes, sha256_hex, CHECKPOINT_EXT};

pub struct ModelEntry {
    pub id: String,
    pub kind: &'static str,
    pub model: DenoiserModel,
    /// `kind:sha256:<hex>` of the file the model came from.
    pub content_id: String,
}

impl ModelEntry {
    pub fn new(id: impl Into<String>, kind: &'static str, model: DenoiserModel, content_id: String) -> Self {
        Self {
            id: id.into(),
            kind,
            model,
            content_id,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.model.data_shape()
    }
}

/// What `GET /api/models` reports per model.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ModelInfo {
    pub id: String,
    pub kind: String,
    pub content_id: String,
    pub shape: Vec<usize>,
    pub timesteps: usize,
    /// Factors valid for every kernel (they divide both image sides).
    pub factors: Vec<usize>,
    pub kernels: Vec<Kernel>,
}

#[derive(Default)]
pub struct Registry {
    models: BTreeMap<String, Arc<ModelEntry>>,
}

impl Registry {
    /// Loads every image-shaped mixture (`.json`) and checkpoint (`.ilvn`)
    /// in `dir`; the file stem becomes the model id. Returns the registry
    /// and the names of files skipped as not image-shaped.
    pub fn scan(dir: &Path) -> CliResult<(Self, Vec<String>)> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .context_with(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut reg = Self::default();
        let mut skipped = Vec::new();
        for path in files {
            let kind = match path.extension().and_then(|e| e.to_str()) {
                Some("json") => "analytic",
                Some(CHECKPOINT_EXT) => "neural",
                _ => continue,
            };
            let bytes = fs::read(&path).context_with(|| format!("reading {}", path.display()))?;
            let model = model_from_bytes(kind == "analytic", &bytes)
                .context_with(|| format!("loading model {}", path.display()))?;
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if !is_image_shape(&model.data_shape()) {
                skipped.push(name);
                continue;
            }
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let content_id = format!("{kind}:sha256:{}", sha256_hex(&bytes));
            reg.insert(ModelEntry::new(id, kind, model, content_id))?;
        }
        Ok((reg, skipped))
    }

    pub fn insert(&mut self, entry: ModelEntry) -> CliResult<()> {
        if self.models.contains_key(&entry.id) {
            return Err(CliError::data(format!("duplicate model id {:?}", entry.id)));
        }
        self.models.insert(entry.id.clone(), Arc::new(entry));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Arc<ModelEntry>> {
        self.models.get(id).cloned()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn infos(&self, timesteps: usize) -> Vec<ModelInfo> {
        self.models
            .values()
            .map(|m| {
                let shape = m.shape();
                let (h, w) = (shape[1], shape[2]);
                ModelInfo {
                    id: m.id.clone(),
                    kind: m.kind.to_owned(),
                    content_id: m.content_id.clone(),
                    factors: (1..=h.max(w)).filter(|f| h % f == 0 && w % f == 0).collect(),
                    shape,
                    timesteps,
                    kernels: Kernel::ALL.to_vec(),
                }
            })
            .collect()
    }
}
