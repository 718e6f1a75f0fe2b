//! Space classification heuristics and material-composition labels.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{overlap_area, PlanarPolygon, Tolerances};
use crate::model::{ElementKind, Id, ModelSnapshot, SpaceClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// `None` switches the below-grade (Earth) rule off.
    pub ground_elevation: Option<f64>,
    pub external_margin: f64,
    /// Switches the free-face (Air) rule.
    pub enclosure_test: bool,
    /// Label bases keyed `"<Kind>/external"`, `"<Kind>/internal"` or `"<Kind>"`.
    pub label_prefixes: BTreeMap<String, String>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let label_prefixes = [
            ("Window/external", "AF"),
            ("Window/internal", "IF"),
            ("Wall/external", "AW"),
            ("Wall/internal", "IW"),
            ("Slab", "SL"),
            ("Door/external", "AD"),
            ("Door/internal", "ID"),
            ("Other", "OT"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self { ground_elevation: Some(0.0), external_margin: 0.05, enclosure_test: true, label_prefixes }
    }
}

impl ClassifierConfig {
    /// Both heuristics off: every space not overridden becomes Internal.
    pub fn heuristics_off() -> Self {
        Self { ground_elevation: None, enclosure_test: false, ..Self::default() }
    }

    pub fn is_valid(&self) -> bool {
        self.external_margin >= 0.0 && self.ground_elevation.is_none_or(f64::is_finite)
    }

    pub fn prefix(&self, kind: ElementKind, external: bool) -> String {
        let side = if external { "external" } else { "internal" };
        self.label_prefixes
            .get(&format!("{kind}/{side}"))
            .or_else(|| self.label_prefixes.get(&kind.to_string()))
            .cloned()
            .unwrap_or_else(|| kind.to_string().chars().take(2).collect::<String>().to_uppercase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("override references unknown space {0}")]
    UnknownSpaceOverride(Id),
}

/// Overrides win; then below grade is Earth, a free volume face is Air,
/// everything else Internal.
pub fn classify_spaces(
    snapshot: &ModelSnapshot,
    config: &ClassifierConfig,
    overrides: &BTreeMap<Id, SpaceClass>,
    tol: &Tolerances,
) -> Result<BTreeMap<Id, SpaceClass>, ClassifyError> {
    if let Some(id) = overrides.keys().find(|id| snapshot.space(id).is_none()) {
        return Err(ClassifyError::UnknownSpaceOverride(id.clone()));
    }
    let ignored = snapshot.ignored();
    let facets: BTreeMap<&Id, Vec<PlanarPolygon>> = if config.enclosure_test {
        snapshot.spaces().iter().map(|(id, s)| (id, s.volume.facets(tol))).collect()
    } else {
        BTreeMap::new()
    };

    let mut out = BTreeMap::new();
    for (id, space) in snapshot.spaces() {
        if let Some(c) = overrides.get(id) {
            out.insert(id.clone(), *c);
            continue;
        }
        let below_grade = match (config.ground_elevation, space.volume.aabb()) {
            (Some(g), Some(bb)) => bb.max.z < g + config.external_margin,
            _ => false,
        };
        let class = if below_grade {
            SpaceClass::Earth
        } else if config.enclosure_test && !ignored.spaces.contains(id) && has_free_face(snapshot, id, &facets, tol) {
            SpaceClass::Air
        } else {
            SpaceClass::Internal
        };
        out.insert(id.clone(), class);
    }
    Ok(out)
}

fn has_free_face(
    snapshot: &ModelSnapshot,
    space: &Id,
    facets: &BTreeMap<&Id, Vec<PlanarPolygon>>,
    tol: &Tolerances,
) -> bool {
    let own: Vec<&PlanarPolygon> =
        snapshot.active_boundaries().into_iter().filter(|b| &b.space == space).map(|b| &b.raw).collect();
    let Some(faces) = facets.get(space) else {
        return false;
    };
    faces.iter().any(|f| {
        let attached = own.iter().any(|b| overlap_area(f, b, tol) >= tol.min_area);
        let facing = facets.iter().filter(|(other, _)| **other != space).any(|(_, others)| {
            others.iter().any(|g| g.plane.normal.dot(f.plane.normal) < 0.0 && overlap_area(f, g, tol) >= tol.min_area)
        });
        !attached && !facing
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionLabel {
    pub base: String,
    pub index: u32,
    pub key: String,
}

impl fmt::Display for CompositionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.base, self.index)
    }
}

/// Labels elements by material composition. Layers are read along the
/// element's reference normal, flipped so the reading starts on the side of
/// its first internal-space boundary; a reversed asymmetric layer list
/// therefore yields a new key while palindromes stay put.
pub fn group_compositions(
    snapshot: &ModelSnapshot,
    config: &ClassifierConfig,
    classes: &BTreeMap<Id, SpaceClass>,
) -> BTreeMap<Id, CompositionLabel> {
    let class_of = |s: &Id| classes.get(s).copied().unwrap_or_default();
    let boundaries = snapshot.active_boundaries();
    let mut next: BTreeMap<String, u32> = BTreeMap::new();
    let mut by_key: BTreeMap<String, CompositionLabel> = BTreeMap::new();
    let mut out = BTreeMap::new();

    for (id, e) in snapshot.elements() {
        let mine: Vec<_> = boundaries.iter().filter(|b| &b.element == id).collect();
        let external = mine.iter().any(|b| class_of(&b.space).is_external());
        let room_side = mine.iter().find(|b| class_of(&b.space) == SpaceClass::Internal);
        let mut layers: Vec<String> = e.layers.iter().map(|l| format!("{}:{:.6}", l.material, l.thickness)).collect();
        if room_side.is_some_and(|b| e.reference_normal.dot(b.normal_into_element) < 0.0) {
            layers.reverse();
        }
        let base = config.prefix(e.kind, external);
        let key = format!("{base}|{}|{}", e.kind, layers.join(","));
        let label = by_key
            .entry(key.clone())
            .or_insert_with(|| {
                let n = next.entry(base.clone()).or_insert(0);
                *n += 1;
                CompositionLabel { base: base.clone(), index: *n, key }
            })
            .clone();
        out.insert(id.clone(), label);
    }
    out
}
