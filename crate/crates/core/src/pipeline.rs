//! The single conversion code path shared by the CLI and the service:
//! classify, detect, apply preset resolutions, wrangle, pair, label, build
//! the room network and its trace index.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bimlite::{parse_bimlite, SchemaError};
use crate::classify::{classify_spaces, group_compositions, ClassifierConfig, ClassifyError};
use crate::conflict::{detect_conflicts_with, resolve, ResolveError, DEFAULT_DUPLICATE_RATIO};
use crate::geom::Tolerances;
use crate::ingest::{ingest_step, IngestError, IngestReport};
use crate::model::{Conflict, Id, LedgerEntry, ModelSnapshot, Resolution, RoomNetwork, SpaceClass};
use crate::network::{build_connections, build_room_network};
use crate::trace::{build_trace_index, TraceError, TraceIndex};
use crate::validate::{validate_snapshot_with, ValidationReport};
use crate::wrangle::{mark_unmatched, pair_boundaries, wrangle, WrangleReport};

pub const REPORT_SCHEMA: &str = "bemtrace-report/1";

/// A resolution to apply without a user in the loop. Without `conflict` it
/// answers the first open conflict that offers exactly this resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetResolution {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict: Option<String>,
    #[serde(flatten)]
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversionConfig {
    pub tolerances: Tolerances,
    pub classifier: ClassifierConfig,
    pub overrides: BTreeMap<Id, SpaceClass>,
    pub resolutions: Vec<PresetResolution>,
    pub duplicate_ratio: f64,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            classifier: ClassifierConfig::default(),
            overrides: BTreeMap::new(),
            resolutions: Vec::new(),
            duplicate_ratio: DEFAULT_DUPLICATE_RATIO,
        }
    }
}

impl ConversionConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            PipelineError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        if !cfg.tolerances.is_valid() {
            return Err(PipelineError::Config("tolerances must be finite and positive".into()));
        }
        if !cfg.classifier.is_valid() {
            return Err(PipelineError::Config("classifier settings out of range".into()));
        }
        if !(cfg.duplicate_ratio > 0.0 && cfg.duplicate_ratio <= 1.0) {
            return Err(PipelineError::Config("duplicate_ratio must lie in (0, 1]".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Ifc,
    BimLite,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.ends_with(".ifc") {
            Some(InputFormat::Ifc)
        } else if name.ends_with(".json") {
            Some(InputFormat::BimLite)
        } else {
            None
        }
    }

    /// JSON documents start with `{`; everything else is treated as STEP.
    pub fn sniff(bytes: &[u8]) -> Self {
        match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') => InputFormat::BimLite,
            _ => InputFormat::Ifc,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("bimlite: {0}")]
    Schema(#[from] SchemaError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub fn load_model(
    bytes: &[u8],
    format: InputFormat,
    tol: &Tolerances,
) -> Result<(ModelSnapshot, Option<IngestReport>), PipelineError> {
    match format {
        InputFormat::Ifc => {
            let (s, r) = ingest_step(bytes, tol)?;
            Ok((s, Some(r)))
        }
        InputFormat::BimLite => Ok((parse_bimlite(bytes)?, None)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub internal: usize,
    pub air: usize,
    pub earth: usize,
    pub unclassified: usize,
}

impl ClassCounts {
    pub fn of(classes: &BTreeMap<Id, SpaceClass>) -> Self {
        let n = |c: SpaceClass| classes.values().filter(|v| **v == c).count();
        Self {
            internal: n(SpaceClass::Internal),
            air: n(SpaceClass::Air),
            earth: n(SpaceClass::Earth),
            unclassified: n(SpaceClass::Unclassified),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub schema: String,
    pub snapshot_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestReport>,
    pub validation: ValidationReport,
    pub classes: BTreeMap<Id, SpaceClass>,
    pub class_counts: ClassCounts,
    pub conflicts: Vec<Conflict>,
    pub open_conflicts: usize,
    pub applied_resolutions: Vec<LedgerEntry>,
    pub unused_presets: Vec<PresetResolution>,
    pub wrangle: WrangleReport,
    pub unmatched_boundaries: Vec<Id>,
    pub composition_labels: BTreeMap<Id, String>,
    pub coverage: BTreeMap<Id, f64>,
    pub warnings: Vec<String>,
    pub blocked: bool,
}

impl ConversionReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone)]
pub struct Conversion {
    /// Snapshot after resolutions, before wrangling; conflicts refer to it.
    pub resolved: ModelSnapshot,
    /// Wrangled snapshot the network was built from.
    pub snapshot: ModelSnapshot,
    pub conflicts: Vec<Conflict>,
    pub network: RoomNetwork,
    pub trace: TraceIndex,
    pub report: ConversionReport,
}

fn merged_overrides(snapshot: &ModelSnapshot, config: &ConversionConfig) -> BTreeMap<Id, SpaceClass> {
    let mut o = snapshot.overrides().clone();
    o.extend(config.overrides.iter().map(|(k, v)| (k.clone(), *v)));
    o
}

/// Classification and conflict detection for one snapshot.
pub fn analyze(
    snapshot: &ModelSnapshot,
    config: &ConversionConfig,
) -> Result<(BTreeMap<Id, SpaceClass>, Vec<Conflict>), PipelineError> {
    let tol = &config.tolerances;
    let classes = classify_spaces(snapshot, &config.classifier, &merged_overrides(snapshot, config), tol)?;
    let conflicts = detect_conflicts_with(snapshot, &classes, tol, config.duplicate_ratio);
    Ok((classes, conflicts))
}

fn find_preset_target<'a>(conflicts: &'a [Conflict], p: &PresetResolution) -> Option<&'a Conflict> {
    conflicts.iter().filter(|c| c.is_open()).find(|c| match &p.conflict {
        Some(id) => &c.id == id,
        None => c.resolutions.iter().any(|r| r.kind == p.resolution.kind),
    })
}

/// Applies the config's preset resolutions in order, re-detecting after each.
pub fn apply_presets(
    snapshot: &ModelSnapshot,
    config: &ConversionConfig,
) -> Result<(ModelSnapshot, Vec<PresetResolution>), PipelineError> {
    let mut current = snapshot.clone();
    let mut unused = Vec::new();
    for p in &config.resolutions {
        let (_, conflicts) = analyze(&current, config)?;
        match find_preset_target(&conflicts, p) {
            Some(c) => {
                log::info!("applying preset resolution to {}", c.id);
                current = resolve(&current, &conflicts, &c.id, &p.resolution)?;
            }
            None => {
                log::warn!("preset resolution {:?} matched no open conflict", p.resolution.kind);
                unused.push(p.clone());
            }
        }
    }
    Ok((current, unused))
}

/// Runs the whole conversion. Open conflicts do not stop it; they mark the
/// result as blocked.
pub fn convert(
    snapshot: &ModelSnapshot,
    ingest: Option<IngestReport>,
    config: &ConversionConfig,
) -> Result<Conversion, PipelineError> {
    let tol = &config.tolerances;
    let ledger_before = snapshot.ledger().len();
    let (resolved, unused_presets) = apply_presets(snapshot, config)?;
    let (classes, conflicts) = analyze(&resolved, config)?;
    let open_conflicts = conflicts.iter().filter(|c| c.is_open()).count();
    log::info!("{} conflicts, {} open", conflicts.len(), open_conflicts);

    let (wrangled, wrangle_report) = wrangle(&resolved, &classes, tol);
    let (pairs, unmatched) = pair_boundaries(&wrangled, tol);
    let paired = if unmatched.is_empty() { wrangled } else { mark_unmatched(&wrangled, &unmatched) };
    let labels = group_compositions(&paired, &config.classifier, &classes);
    let connections = build_connections(&pairs, &paired, &classes, &labels, tol);
    let network = build_room_network(&connections, &paired, &classes, tol);
    let trace = build_trace_index(&paired, &network)?;
    log::info!("{} rooms, {} connections", network.rooms.len(), network.connections.len());

    let mut warnings: Vec<String> = wrangle_report.errors.iter().map(|e| e.to_string()).collect();
    warnings.extend(network.warnings.iter().cloned());
    let report = ConversionReport {
        schema: REPORT_SCHEMA.to_string(),
        snapshot_version: paired.version(),
        ingest,
        validation: validate_snapshot_with(&resolved, tol),
        class_counts: ClassCounts::of(&classes),
        classes,
        open_conflicts,
        conflicts: conflicts.clone(),
        applied_resolutions: resolved.ledger()[ledger_before..].to_vec(),
        unused_presets,
        wrangle: wrangle_report,
        unmatched_boundaries: unmatched,
        composition_labels: labels.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
        coverage: network.rooms.iter().map(|r| (r.id.clone(), r.coverage_ratio)).collect(),
        warnings,
        blocked: open_conflicts > 0,
    };
    Ok(Conversion { resolved, snapshot: paired, conflicts, network, trace, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_rejections() {
        let c = ConversionConfig::from_json(b"{}").unwrap();
        assert_eq!(c, ConversionConfig::default());
        let err = ConversionConfig::from_json(br#"{"tolerances":{"min_area":-1}}"#).unwrap_err();
        assert!(err.to_string().contains("tolerances"));
        let err = ConversionConfig::from_json(br#"{"bogus":1}"#).unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)));
        let err = ConversionConfig::from_json(br#"{"classifier":{"external_margin":"x"}}"#).unwrap_err();
        assert!(err.to_string().contains("classifier.external_margin"), "{err}");
    }

    #[test]
    fn preset_parses_flattened() {
        let c = ConversionConfig::from_json(
            br#"{"resolutions":[{"kind":"KeepBoundaryOfPair","keep":"a","drop":"b"},{"conflict":"cf-1","kind":"IgnoreElement","id":"e"}]}"#,
        )
        .unwrap();
        assert_eq!(c.resolutions.len(), 2);
        assert_eq!(c.resolutions[1].conflict.as_deref(), Some("cf-1"));
    }

    #[test]
    fn format_detection() {
        assert_eq!(InputFormat::from_path(Path::new("a/house.IFC")), Some(InputFormat::Ifc));
        assert_eq!(InputFormat::from_path(Path::new("house.bimlite.json")), Some(InputFormat::BimLite));
        assert_eq!(InputFormat::from_path(Path::new("house.txt")), None);
        assert_eq!(InputFormat::sniff(b"  {\"schema\":1}"), InputFormat::BimLite);
        assert_eq!(InputFormat::sniff(b"ISO-10303-21;"), InputFormat::Ifc);
    }

    #[test]
    fn empty_model_converts_to_empty_network() {
        let conv = convert(&ModelSnapshot::empty(), None, &ConversionConfig::default()).unwrap();
        assert!(conv.network.rooms.is_empty());
        assert!(!conv.report.blocked);
        assert_eq!(conv.trace.version, conv.snapshot.version());
    }
}
