//! Loaded models as immutable versions behind a single writer.
//!
//! Readers clone an `Arc<ModelVersion>` and never block each other. Every
//! mutation (load, resolve, convert) holds the writer lock for its whole
//! computation and then swaps in a new version.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use bemtrace_core::conflict::{resolve, ResolveError};
use bemtrace_core::ingest::IngestReport;
use bemtrace_core::model::{Conflict, Id, ModelSnapshot, Resolution, SpaceClass};
use bemtrace_core::pipeline::{analyze, convert, load_model, Conversion, ConversionConfig, InputFormat, PipelineError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown boundary {0}")]
    UnknownBoundary(Id),
    #[error("model is at version {current}, request was made against version {expected}")]
    StaleVersion { expected: u64, current: u64 },
    #[error("model has not been converted yet")]
    NotConverted,
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// One immutable state of a model.
#[derive(Debug, Clone)]
pub struct ModelVersion {
    pub id: String,
    pub name: String,
    pub version: u64,
    pub ingest: Option<IngestReport>,
    pub config: ConversionConfig,
    /// Snapshot with the resolution ledger, before wrangling.
    pub base: ModelSnapshot,
    pub classes: BTreeMap<Id, SpaceClass>,
    pub conflicts: Vec<Conflict>,
    pub conversion: Option<Arc<Conversion>>,
}

impl ModelVersion {
    /// The snapshot scenes and boundary queries read from.
    pub fn current(&self) -> &ModelSnapshot {
        self.conversion.as_ref().map_or(&self.base, |c| &c.snapshot)
    }

    /// `current()` with the analyzed classes filled in before conversion,
    /// so space scenes are colored from the first load on.
    pub fn display(&self) -> Cow<'_, ModelSnapshot> {
        if self.conversion.is_some() {
            return Cow::Borrowed(self.current());
        }
        let mut parts = self.base.parts().clone();
        for (id, s) in parts.spaces.iter_mut() {
            s.classification = self.classes.get(id).copied().unwrap_or_default();
        }
        Cow::Owned(ModelSnapshot::with_version(self.version, parts))
    }

    pub fn converted(&self) -> Result<&Conversion, ServiceError> {
        self.conversion.as_deref().ok_or(ServiceError::NotConverted)
    }

    pub fn open_conflicts(&self) -> usize {
        self.conflicts.iter().filter(|c| c.is_open()).count()
    }

    pub fn check_version(&self, expected: Option<u64>) -> Result<(), ServiceError> {
        match expected {
            Some(e) if e != self.version => Err(ServiceError::StaleVersion { expected: e, current: self.version }),
            _ => Ok(()),
        }
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            id: self.id.clone(),
            name: self.name.clone(),
            version: self.version,
            elements: self.base.elements().len(),
            spaces: self.base.spaces().len(),
            boundaries: self.base.boundaries().len(),
            open_conflicts: self.open_conflicts(),
            converted: self.conversion.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub id: String,
    pub name: String,
    pub version: u64,
    pub elements: usize,
    pub spaces: usize,
    pub boundaries: usize,
    pub open_conflicts: usize,
    pub converted: bool,
}

pub struct Registry {
    config: ConversionConfig,
    models: RwLock<BTreeMap<String, Arc<ModelVersion>>>,
    writer: Mutex<u64>,
}

impl Registry {
    pub fn new(config: ConversionConfig) -> Self {
        Self { config, models: RwLock::new(BTreeMap::new()), writer: Mutex::new(0) }
    }

    pub fn get(&self, id: &str) -> Result<Arc<ModelVersion>, ServiceError> {
        self.models.read().unwrap().get(id).cloned().ok_or_else(|| ServiceError::UnknownModel(id.to_string()))
    }

    pub fn list(&self) -> Vec<ModelSummary> {
        self.models.read().unwrap().values().map(|m| m.summary()).collect()
    }

    fn publish(&self, m: ModelVersion) -> Arc<ModelVersion> {
        let m = Arc::new(m);
        self.models.write().unwrap().insert(m.id.clone(), m.clone());
        m
    }

    fn analyzed(
        id: String,
        name: String,
        ingest: Option<IngestReport>,
        config: ConversionConfig,
        base: ModelSnapshot,
    ) -> Result<ModelVersion, ServiceError> {
        let (classes, conflicts) = analyze(&base, &config)?;
        Ok(ModelVersion {
            id,
            name,
            version: base.version(),
            ingest,
            config,
            base,
            classes,
            conflicts,
            conversion: None,
        })
    }

    /// Parses `.ifc` or bimlite/1 bytes (sniffed) into a new model.
    pub fn load(&self, name: &str, bytes: &[u8]) -> Result<Arc<ModelVersion>, ServiceError> {
        let mut next = self.writer.lock().unwrap();
        let (snapshot, ingest) = load_model(bytes, InputFormat::sniff(bytes), &self.config.tolerances)?;
        let id = format!("m{}", *next + 1);
        let m = Self::analyzed(id, name.to_string(), ingest, self.config.clone(), snapshot)?;
        *next += 1;
        log::info!("loaded model {} ({}) at version {}", m.id, m.name, m.version);
        Ok(self.publish(m))
    }

    /// Loads every `.ifc` and `.json` file of `dir` in name order.
    pub fn load_dir(&self, dir: &Path) -> Result<Vec<Arc<ModelVersion>>, ServiceError> {
        let io = |e: std::io::Error| ServiceError::Io { path: dir.display().to_string(), message: e.to_string() };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && InputFormat::from_path(p).is_some())
            .collect();
        paths.sort();
        let mut out = Vec::new();
        for p in paths {
            let bytes = std::fs::read(&p).map_err(io)?;
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            out.push(self.load(name, &bytes)?);
        }
        Ok(out)
    }

    /// Applies a resolution to an open conflict, producing the next version.
    pub fn resolve(
        &self,
        id: &str,
        conflict: &str,
        resolution: &Resolution,
        expected: Option<u64>,
    ) -> Result<Arc<ModelVersion>, ServiceError> {
        let _w = self.writer.lock().unwrap();
        let m = self.get(id)?;
        m.check_version(expected)?;
        let next = resolve(&m.base, &m.conflicts, conflict, resolution)?;
        let base = ModelSnapshot::with_version(m.version + 1, next.parts().clone());
        let out = Self::analyzed(m.id.clone(), m.name.clone(), m.ingest.clone(), m.config.clone(), base)?;
        log::info!("model {} resolved {} at version {}", id, conflict, out.version);
        Ok(self.publish(out))
    }

    /// Runs the conversion pipeline; `config` replaces the model's config.
    pub fn convert(&self, id: &str, config: Option<ConversionConfig>) -> Result<Arc<ModelVersion>, ServiceError> {
        let _w = self.writer.lock().unwrap();
        let m = self.get(id)?;
        let config = config.unwrap_or_else(|| m.config.clone());
        // keep versions increasing across repeated conversions
        let base = if m.version > m.base.version() {
            ModelSnapshot::with_version(m.version, m.base.parts().clone())
        } else {
            m.base.clone()
        };
        let conv = convert(&base, m.ingest.clone(), &config)?;
        let out = ModelVersion {
            id: m.id.clone(),
            name: m.name.clone(),
            version: conv.snapshot.version(),
            ingest: m.ingest.clone(),
            config,
            base: conv.resolved.clone(),
            classes: conv.report.classes.clone(),
            conflicts: conv.conflicts.clone(),
            conversion: Some(Arc::new(conv)),
        };
        log::info!("model {} converted at version {}", id, out.version);
        Ok(self.publish(out))
    }
}
