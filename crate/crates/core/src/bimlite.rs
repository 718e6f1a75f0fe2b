//! BIM-lite: a small JSON interchange format (`"schema": "bimlite/1"`).
//!
//! ```json
//! {"schema": "bimlite/1", "units": "m",
//!  "elements": [{"id", "kind", "layers", "reference_normal", "storey", "solid"}],
//!  "spaces": [{"id", "storey", "volume", "classification"?}],
//!  "boundaries": [{"id", "space", "element", "sb_type", "polygon"}],
//!  "overrides": {"<space id>": "Air"}}
//! ```
//!
//! Boundaries may also carry `normal_into_element` (defaults to the polygon
//! plane normal), `enhanced` and `edits`, and the document may carry a
//! resolution `ledger`, so every snapshot survives a write/parse cycle.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PlanarPolygon, TriMesh, Vec3};
use crate::model::{
    EditRecord, Element, ElementKind, Id, Layer, LedgerEntry, ModelSnapshot, SbType, SnapshotParts, Space,
    SpaceBoundary, SpaceClass,
};

pub const SCHEMA: &str = "bimlite/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pointer}: {rule}")]
pub struct SchemaError {
    /// RFC 6901 pointer into the document.
    pub pointer: String,
    pub rule: String,
}

fn fail<T>(pointer: impl Into<String>, rule: impl Into<String>) -> Result<T, SchemaError> {
    Err(SchemaError { pointer: pointer.into(), rule: rule.into() })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    #[serde(default)]
    schema: Option<String>,
    #[serde(default)]
    units: Option<String>,
    elements: Vec<DocElement>,
    spaces: Vec<DocSpace>,
    boundaries: Vec<DocBoundary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    overrides: BTreeMap<Id, SpaceClass>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocElement {
    id: Id,
    kind: ElementKind,
    #[serde(default)]
    layers: Vec<Layer>,
    reference_normal: Vec3,
    #[serde(default)]
    storey: String,
    solid: TriMesh,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocSpace {
    id: Id,
    #[serde(default)]
    storey: String,
    volume: TriMesh,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classification: Option<SpaceClass>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocBoundary {
    id: Id,
    space: Id,
    element: Id,
    sb_type: SbType,
    polygon: PlanarPolygon,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normal_into_element: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    enhanced: Option<PlanarPolygon>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    edits: Vec<EditRecord>,
}

pub fn parse_bimlite(bytes: &[u8]) -> Result<ModelSnapshot, SchemaError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let doc: Doc = serde_path_to_error::deserialize(de)
        .map_err(|e| SchemaError { pointer: pointer_of(e.path()), rule: e.inner().to_string() })?;
    if let Some(s) = &doc.schema {
        if s != SCHEMA {
            return fail("/schema", format!("expected \"{SCHEMA}\""));
        }
    }
    if let Some(u) = &doc.units {
        if u != "m" {
            return fail("/units", "units must be \"m\"");
        }
    }

    let mut parts = SnapshotParts::default();
    let mut seen = HashSet::new();
    let mut unique = |id: &Id, at: String| {
        if id.as_str().is_empty() {
            fail(at, "id must not be empty")
        } else if !seen.insert(id.clone()) {
            fail(at, format!("duplicate id \"{id}\""))
        } else {
            Ok(())
        }
    };

    for (i, e) in doc.elements.into_iter().enumerate() {
        let at = format!("/elements/{i}");
        unique(&e.id, format!("{at}/id"))?;
        check_mesh(&e.solid, &format!("{at}/solid"))?;
        check_unit(e.reference_normal, &format!("{at}/reference_normal"))?;
        for (j, l) in e.layers.iter().enumerate() {
            if !(l.thickness > 0.0 && l.thickness.is_finite()) {
                return fail(format!("{at}/layers/{j}/thickness"), "thickness must be positive");
            }
        }
        parts.insert_element(Element {
            id: e.id,
            kind: e.kind,
            solid: e.solid,
            layers: e.layers,
            reference_normal: e.reference_normal,
            storey: e.storey,
        });
    }
    for (i, s) in doc.spaces.into_iter().enumerate() {
        let at = format!("/spaces/{i}");
        unique(&s.id, format!("{at}/id"))?;
        check_mesh(&s.volume, &format!("{at}/volume"))?;
        parts.insert_space(Space {
            id: s.id,
            volume: s.volume,
            classification: s.classification.unwrap_or_default(),
            storey: s.storey,
        });
    }
    for (i, b) in doc.boundaries.into_iter().enumerate() {
        let at = format!("/boundaries/{i}");
        unique(&b.id, format!("{at}/id"))?;
        if !parts.spaces.contains_key(&b.space) {
            return fail(format!("{at}/space"), format!("unknown space id \"{}\"", b.space));
        }
        if !parts.elements.contains_key(&b.element) {
            return fail(format!("{at}/element"), format!("unknown element id \"{}\"", b.element));
        }
        check_polygon(&b.polygon, &format!("{at}/polygon"))?;
        if let Some(enh) = &b.enhanced {
            check_polygon(enh, &format!("{at}/enhanced"))?;
        }
        let normal_into_element = b.normal_into_element.unwrap_or(b.polygon.plane.normal);
        check_unit(normal_into_element, &format!("{at}/normal_into_element"))?;
        parts.insert_boundary(SpaceBoundary {
            id: b.id,
            space: b.space,
            element: b.element,
            sb_type: b.sb_type,
            raw: b.polygon,
            enhanced: b.enhanced,
            edits: b.edits,
            normal_into_element,
        });
    }
    for id in doc.overrides.keys() {
        if !parts.spaces.contains_key(id) {
            return fail(format!("/overrides/{}", escape(id.as_str())), format!("unknown space id \"{id}\""));
        }
    }
    parts.classification_overrides = doc.overrides;
    parts.resolution_ledger = doc.ledger;
    Ok(ModelSnapshot::new(parts))
}

pub fn write_bimlite(snapshot: &ModelSnapshot) -> Vec<u8> {
    let p = snapshot.parts();
    let doc = Doc {
        schema: Some(SCHEMA.to_string()),
        units: Some("m".to_string()),
        elements: p
            .elements
            .values()
            .map(|e| DocElement {
                id: e.id.clone(),
                kind: e.kind,
                layers: e.layers.clone(),
                reference_normal: e.reference_normal,
                storey: e.storey.clone(),
                solid: e.solid.clone(),
            })
            .collect(),
        spaces: p
            .spaces
            .values()
            .map(|s| DocSpace {
                id: s.id.clone(),
                storey: s.storey.clone(),
                volume: s.volume.clone(),
                classification: (s.classification != SpaceClass::Unclassified).then_some(s.classification),
            })
            .collect(),
        boundaries: p
            .boundaries
            .values()
            .map(|b| DocBoundary {
                id: b.id.clone(),
                space: b.space.clone(),
                element: b.element.clone(),
                sb_type: b.sb_type,
                polygon: b.raw.clone(),
                normal_into_element: (b.normal_into_element != b.raw.plane.normal).then_some(b.normal_into_element),
                enhanced: b.enhanced.clone(),
                edits: b.edits.clone(),
            })
            .collect(),
        overrides: p.classification_overrides.clone(),
        ledger: p.resolution_ledger.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("document types always serialize");
    out.push(b'\n');
    out
}

fn check_unit(v: Vec3, at: &str) -> Result<(), SchemaError> {
    if v.is_finite() && (v.norm() - 1.0).abs() <= 1e-6 {
        Ok(())
    } else {
        fail(at, "must be a unit vector")
    }
}

fn check_mesh(m: &TriMesh, at: &str) -> Result<(), SchemaError> {
    if let Some(i) = m.vertices.iter().position(|v| !v.is_finite()) {
        return fail(format!("{at}/vertices/{i}"), "coordinates must be finite");
    }
    let n = m.vertices.len() as u32;
    if let Some(i) = m.triangles.iter().position(|t| t.iter().any(|&k| k >= n)) {
        return fail(format!("{at}/triangles/{i}"), "vertex index out of range");
    }
    Ok(())
}

fn check_polygon(p: &PlanarPolygon, at: &str) -> Result<(), SchemaError> {
    check_unit(p.plane.normal, &format!("{at}/plane/normal"))?;
    if !p.plane.origin.is_finite() {
        return fail(format!("{at}/plane/origin"), "coordinates must be finite");
    }
    if p.outer.len() < 3 {
        return fail(format!("{at}/outer"), "ring needs at least 3 vertices");
    }
    if let Some(i) = p.holes.iter().position(|h| h.len() < 3) {
        return fail(format!("{at}/holes/{i}"), "ring needs at least 3 vertices");
    }
    if !p.points().all(|v| v.is_finite()) {
        return fail(at, "coordinates must be finite");
    }
    Ok(())
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape(variant))),
            Segment::Unknown => {}
        }
    }
    out
}
