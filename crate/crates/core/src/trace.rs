//! BEM to BIM trace index, context-adaptive selection and per-view render
//! payloads.
//!
//! Selection context matrix (`exact` / `context` for a selected object shown
//! in a target view):
//!
//! | selected   | BemView                | SpaceView        | ElementView          | RelationshipView           | BimView                    |
//! |------------|------------------------|------------------|----------------------|----------------------------|----------------------------|
//! | Connection | {c} / its 2 rooms      | - / its 2 spaces | - / its element      | - / its 2 boundaries       | - / element + 2 spaces     |
//! | Room       | {r} / its connections  | - / its space    | - / connection elems | - / its space's boundaries | - / space + connection elems |
//! | Boundary   | - / its connection     | - / its space    | - / its element      | {b} / element, space, partner | - / element + space     |
//! | Element    | - / its connections    | - / touching spaces | {e} / -           | {e} / its boundaries       | {e} / touching spaces      |
//! | Space      | - / its room           | {s} / -          | - / touching elements | {s} / its boundaries      | {s} / touching elements    |
//!
//! Everything else shown in the target view is ghosted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{project_onto, triangulate, PlanarPolygon, TriMesh, Vec3};
use crate::model::{Category, EditRecord, ElementKind, Id, ModelSnapshot, RoomNetwork, SbType, SpaceClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    BimView,
    SpaceView,
    ElementView,
    RelationshipView,
    BemView,
}

impl ViewKind {
    pub const ALL: [ViewKind; 5] =
        [ViewKind::BimView, ViewKind::SpaceView, ViewKind::ElementView, ViewKind::RelationshipView, ViewKind::BemView];

    /// Object kinds that can be picked in (and are drawn by) this view.
    pub fn selectable(self) -> &'static [ObjectKind] {
        use ObjectKind::*;
        match self {
            ViewKind::BemView => &[Room, Connection],
            ViewKind::SpaceView => &[Space],
            ViewKind::ElementView => &[Element],
            ViewKind::RelationshipView => &[Boundary, Space, Element],
            ViewKind::BimView => &[Element, Space],
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ViewKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase();
        let key = key.strip_suffix("view").unwrap_or(&key);
        Ok(match key {
            "bim" => ViewKind::BimView,
            "space" => ViewKind::SpaceView,
            "element" => ViewKind::ElementView,
            "relationship" => ViewKind::RelationshipView,
            "bem" => ViewKind::BemView,
            _ => return Err(format!("unknown view `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Element,
    Space,
    Boundary,
    Connection,
    Room,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 5] =
        [ObjectKind::Element, ObjectKind::Space, ObjectKind::Boundary, ObjectKind::Connection, ObjectKind::Room];
}

impl FromStr for ObjectKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "element" => ObjectKind::Element,
            "space" => ObjectKind::Space,
            "boundary" => ObjectKind::Boundary,
            "connection" => ObjectKind::Connection,
            "room" => ObjectKind::Room,
            _ => return Err(format!("unknown object kind `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    Raw,
    Enhanced,
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Variant::Raw),
            "enhanced" => Ok(Variant::Enhanced),
            _ => Err(format!("unknown variant `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub kind: ObjectKind,
    pub id: Id,
    pub source: ViewKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HighlightSet {
    pub version: u64,
    pub exact: Vec<Id>,
    pub context: Vec<Id>,
    pub ghost: Vec<Id>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TraceError {
    #[error("network was built from version {network}, snapshot is version {snapshot}")]
    VersionMismatch { snapshot: u64, network: u64 },
    #[error("{kind:?} cannot be selected in {source_view}")]
    IllegalSelection { kind: ObjectKind, source_view: ViewKind },
    #[error("unknown {kind:?} {id}")]
    UnknownObject { kind: ObjectKind, id: Id },
    #[error("{0:?} geometry is not available for this model version")]
    VariantUnavailable(Variant),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionTrace {
    pub boundaries: [Id; 2],
    pub element: Id,
    pub spaces: [Id; 2],
    pub rooms: [Id; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomTrace {
    pub space: Id,
    pub connections: Vec<Id>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub element: Id,
    pub space: Id,
    pub raw: PlanarPolygon,
    pub enhanced: Option<PlanarPolygon>,
    pub edits: Vec<EditRecord>,
    pub connection: Option<Id>,
    pub partner: Option<Id>,
}

/// Forward and reverse links between BEM objects and BIM parts for one
/// snapshot version.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceIndex {
    pub version: u64,
    pub connections: BTreeMap<Id, ConnectionTrace>,
    pub rooms: BTreeMap<Id, RoomTrace>,
    pub boundaries: BTreeMap<Id, BoundaryTrace>,
    pub element_connections: BTreeMap<Id, Vec<Id>>,
    pub element_boundaries: BTreeMap<Id, Vec<Id>>,
    pub space_room: BTreeMap<Id, Id>,
    pub space_connections: BTreeMap<Id, Vec<Id>>,
    pub space_boundaries: BTreeMap<Id, Vec<Id>>,
    pub elements: BTreeSet<Id>,
    pub spaces: BTreeSet<Id>,
}

pub fn build_trace_index(snapshot: &ModelSnapshot, network: &RoomNetwork) -> Result<TraceIndex, TraceError> {
    if snapshot.version() != network.snapshot_version {
        return Err(TraceError::VersionMismatch { snapshot: snapshot.version(), network: network.snapshot_version });
    }
    let mut ix = TraceIndex {
        version: snapshot.version(),
        elements: snapshot.elements().keys().cloned().collect(),
        spaces: snapshot.spaces().keys().cloned().collect(),
        ..Default::default()
    };
    for r in &network.rooms {
        ix.rooms.insert(r.id.clone(), RoomTrace { space: r.space.clone(), connections: r.connections.clone() });
        ix.space_room.insert(r.space.clone(), r.id.clone());
    }
    let mut partner = BTreeMap::new();
    let mut conn_of = BTreeMap::new();
    for c in &network.connections {
        let room = |s: &Id| ix.space_room.get(s).cloned().unwrap_or_else(|| crate::network::room_id(s));
        ix.connections.insert(
            c.id.clone(),
            ConnectionTrace {
                boundaries: c.boundaries.clone(),
                element: c.element.clone(),
                spaces: c.spaces.clone(),
                rooms: [room(&c.spaces[0]), room(&c.spaces[1])],
            },
        );
        ix.element_connections.entry(c.element.clone()).or_default().push(c.id.clone());
        for s in &c.spaces {
            ix.space_connections.entry(s.clone()).or_default().push(c.id.clone());
        }
        partner.insert(c.boundaries[0].clone(), c.boundaries[1].clone());
        partner.insert(c.boundaries[1].clone(), c.boundaries[0].clone());
        for b in &c.boundaries {
            conn_of.insert(b.clone(), c.id.clone());
        }
    }
    for (id, b) in snapshot.boundaries() {
        ix.boundaries.insert(
            id.clone(),
            BoundaryTrace {
                element: b.element.clone(),
                space: b.space.clone(),
                raw: b.raw.clone(),
                enhanced: b.enhanced.clone(),
                edits: b.edits.clone(),
                connection: conn_of.get(id).cloned(),
                partner: partner.get(id).cloned(),
            },
        );
        ix.element_boundaries.entry(b.element.clone()).or_default().push(id.clone());
        ix.space_boundaries.entry(b.space.clone()).or_default().push(id.clone());
    }
    for v in ix
        .element_connections
        .values_mut()
        .chain(ix.space_connections.values_mut())
        .chain(ix.element_boundaries.values_mut())
        .chain(ix.space_boundaries.values_mut())
    {
        v.sort();
        v.dedup();
    }
    Ok(ix)
}

impl TraceIndex {
    fn exists(&self, kind: ObjectKind, id: &Id) -> bool {
        match kind {
            ObjectKind::Element => self.elements.contains(id),
            ObjectKind::Space => self.spaces.contains(id),
            ObjectKind::Boundary => self.boundaries.contains_key(id),
            ObjectKind::Connection => self.connections.contains_key(id),
            ObjectKind::Room => self.rooms.contains_key(id),
        }
    }

    /// Ids drawn by a view.
    pub fn displayed(&self, view: ViewKind) -> BTreeSet<Id> {
        let mut out = BTreeSet::new();
        for k in view.selectable() {
            match k {
                ObjectKind::Element => out.extend(self.elements.iter().cloned()),
                ObjectKind::Space => out.extend(self.spaces.iter().cloned()),
                ObjectKind::Boundary => out.extend(self.boundaries.keys().cloned()),
                ObjectKind::Connection => out.extend(self.connections.keys().cloned()),
                ObjectKind::Room => out.extend(self.rooms.keys().cloned()),
            }
        }
        out
    }

    fn spaces_touching(&self, element: &Id) -> Vec<Id> {
        let bs = self.element_boundaries.get(element).into_iter().flatten();
        bs.filter_map(|b| self.boundaries.get(b)).map(|b| b.space.clone()).collect()
    }

    fn elements_touching(&self, space: &Id) -> Vec<Id> {
        let bs = self.space_boundaries.get(space).into_iter().flatten();
        bs.filter_map(|b| self.boundaries.get(b)).map(|b| b.element.clone()).collect()
    }

    fn room_elements(&self, room: &RoomTrace) -> Vec<Id> {
        room.connections.iter().filter_map(|c| self.connections.get(c)).map(|c| c.element.clone()).collect()
    }
}

pub fn selection_context(index: &TraceIndex, sel: &Selection, target: ViewKind) -> Result<HighlightSet, TraceError> {
    if !sel.source.selectable().contains(&sel.kind) {
        return Err(TraceError::IllegalSelection { kind: sel.kind, source_view: sel.source });
    }
    if !index.exists(sel.kind, &sel.id) {
        return Err(TraceError::UnknownObject { kind: sel.kind, id: sel.id.clone() });
    }
    use ObjectKind as K;
    use ViewKind as V;
    let id = &sel.id;
    let exact: Vec<Id> = if target.selectable().contains(&sel.kind) { vec![id.clone()] } else { vec![] };
    let context: Vec<Id> = match sel.kind {
        K::Connection => {
            let c = &index.connections[id];
            match target {
                V::BemView => c.rooms.to_vec(),
                V::SpaceView => c.spaces.to_vec(),
                V::ElementView => vec![c.element.clone()],
                V::RelationshipView => c.boundaries.to_vec(),
                V::BimView => std::iter::once(c.element.clone()).chain(c.spaces.iter().cloned()).collect(),
            }
        }
        K::Room => {
            let r = &index.rooms[id];
            match target {
                V::BemView => r.connections.clone(),
                V::SpaceView => vec![r.space.clone()],
                V::ElementView => index.room_elements(r),
                V::RelationshipView => index.space_boundaries.get(&r.space).cloned().unwrap_or_default(),
                V::BimView => std::iter::once(r.space.clone()).chain(index.room_elements(r)).collect(),
            }
        }
        K::Boundary => {
            let b = &index.boundaries[id];
            match target {
                V::BemView => b.connection.iter().cloned().collect(),
                V::SpaceView => vec![b.space.clone()],
                V::ElementView => vec![b.element.clone()],
                V::RelationshipView => {
                    [Some(b.element.clone()), Some(b.space.clone()), b.partner.clone()].into_iter().flatten().collect()
                }
                V::BimView => vec![b.element.clone(), b.space.clone()],
            }
        }
        K::Element => match target {
            V::BemView => index.element_connections.get(id).cloned().unwrap_or_default(),
            V::SpaceView | V::BimView => index.spaces_touching(id),
            V::ElementView => vec![],
            V::RelationshipView => index.element_boundaries.get(id).cloned().unwrap_or_default(),
        },
        K::Space => match target {
            V::BemView => index.space_room.get(id).cloned().into_iter().collect(),
            V::SpaceView => vec![],
            V::ElementView | V::BimView => index.elements_touching(id),
            V::RelationshipView => index.space_boundaries.get(id).cloned().unwrap_or_default(),
        },
    };
    let exact_set: BTreeSet<Id> = exact.into_iter().collect();
    let context_set: BTreeSet<Id> = context.into_iter().filter(|c| !exact_set.contains(c)).collect();
    let ghost =
        index.displayed(target).into_iter().filter(|i| !exact_set.contains(i) && !context_set.contains(i)).collect();
    Ok(HighlightSet {
        version: index.version,
        exact: exact_set.into_iter().collect(),
        context: context_set.into_iter().collect(),
        ghost,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_kind: Option<ElementKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<SpaceClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storey: Option<String>,
}

impl SceneFilter {
    pub fn is_empty(&self) -> bool {
        self == &SceneFilter::default()
    }

    fn admits(&self, o: &SceneObject) -> bool {
        let category_ok = self.category.is_none_or(|c| o.kind == ObjectKind::Connection && o.category == c.to_string());
        let kind_ok = self.element_kind.is_none_or(|k| {
            matches!(o.kind, ObjectKind::Element | ObjectKind::Connection | ObjectKind::Boundary)
                && o.element_kind == Some(k)
        });
        let class_ok = self.class.is_none_or(|c| o.class == Some(c));
        let storey_ok = self.storey.as_ref().is_none_or(|s| &o.storey == s);
        category_ok && kind_ok && class_ok && storey_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: Id,
    pub kind: ObjectKind,
    pub category: String,
    pub color_role: String,
    pub ghost: bool,
    pub storey: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_kind: Option<ElementKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<SpaceClass>,
    pub triangles: Vec<[Vec3; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreyGroup {
    pub storey: String,
    pub objects: Vec<Id>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePayload {
    pub version: u64,
    pub view: ViewKind,
    pub variant: Variant,
    pub objects: Vec<SceneObject>,
    pub storeys: Vec<StoreyGroup>,
}

fn class_role(c: SpaceClass) -> String {
    c.to_string().to_ascii_lowercase()
}

fn mesh_tris(m: &TriMesh) -> Vec<[Vec3; 3]> {
    m.iter_triangles().collect()
}

fn poly_tris(p: &PlanarPolygon) -> Vec<[Vec3; 3]> {
    triangulate(&project_onto(p, &p.plane.basis()))
}

/// Render payload for one view. `Enhanced` needs wrangled geometry; the
/// BEM view needs a network.
pub fn scene(
    snapshot: &ModelSnapshot,
    network: Option<&RoomNetwork>,
    view: ViewKind,
    filter: &SceneFilter,
    variant: Variant,
) -> Result<ScenePayload, TraceError> {
    if variant == Variant::Enhanced && !snapshot.has_enhanced() {
        return Err(TraceError::VariantUnavailable(variant));
    }
    let ignored = snapshot.ignored();
    let class_of = |s: &Id| -> SpaceClass {
        network
            .and_then(|n| n.room_of_space(s))
            .map(|r| r.class)
            .unwrap_or_else(|| snapshot.space(s).map(|s| s.classification).unwrap_or_default())
    };
    let label_of: BTreeMap<&Id, &str> = network
        .map(|n| n.connections.iter().map(|c| (&c.element, c.composition_label.as_str())).collect())
        .unwrap_or_default();
    let storey_of_space = |s: &Id| snapshot.space(s).map(|s| s.storey.clone()).unwrap_or_default();

    let mut objects = Vec::new();
    let elements = |objects: &mut Vec<SceneObject>| {
        for (id, e) in snapshot.elements() {
            let label = label_of.get(id).copied().unwrap_or("");
            objects.push(SceneObject {
                id: id.clone(),
                kind: ObjectKind::Element,
                category: e.kind.to_string(),
                color_role: if label.is_empty() { e.kind.to_string().to_ascii_lowercase() } else { label.to_string() },
                ghost: ignored.elements.contains(id),
                storey: e.storey.clone(),
                area: None,
                element_kind: Some(e.kind),
                class: None,
                triangles: mesh_tris(&e.solid),
            });
        }
    };
    let spaces = |objects: &mut Vec<SceneObject>| {
        for (id, s) in snapshot.spaces() {
            let c = class_of(id);
            objects.push(SceneObject {
                id: id.clone(),
                kind: ObjectKind::Space,
                category: c.to_string(),
                color_role: class_role(c),
                ghost: ignored.spaces.contains(id),
                storey: s.storey.clone(),
                area: None,
                element_kind: None,
                class: Some(c),
                triangles: mesh_tris(&s.volume),
            });
        }
    };
    match view {
        ViewKind::SpaceView => spaces(&mut objects),
        ViewKind::ElementView => elements(&mut objects),
        ViewKind::BimView => {
            elements(&mut objects);
            spaces(&mut objects);
        }
        ViewKind::RelationshipView => {
            for (id, b) in snapshot.boundaries() {
                let poly = match variant {
                    Variant::Raw => Some(&b.raw),
                    Variant::Enhanced => b.enhanced.as_ref(),
                };
                let poly = poly.unwrap_or(&b.raw);
                objects.push(SceneObject {
                    id: id.clone(),
                    kind: ObjectKind::Boundary,
                    category: format!("{:?}", b.sb_type),
                    color_role: match b.sb_type {
                        SbType::TypeA => "type-a".into(),
                        SbType::TypeB => "type-b".into(),
                    },
                    ghost: !ignored.boundary_active(b) || (variant == Variant::Enhanced && b.enhanced.is_none()),
                    storey: storey_of_space(&b.space),
                    area: Some(poly.area()),
                    element_kind: snapshot.element(&b.element).map(|e| e.kind),
                    class: Some(class_of(&b.space)),
                    triangles: poly_tris(poly),
                });
            }
        }
        ViewKind::BemView => {
            let Some(net) = network else {
                return Err(TraceError::VariantUnavailable(variant));
            };
            for r in &net.rooms {
                let mesh = snapshot.space(&r.space).map(|s| mesh_tris(&s.volume)).unwrap_or_default();
                objects.push(SceneObject {
                    id: r.id.clone(),
                    kind: ObjectKind::Room,
                    category: r.class.to_string(),
                    color_role: class_role(r.class),
                    ghost: false,
                    storey: storey_of_space(&r.space),
                    area: None,
                    element_kind: None,
                    class: Some(r.class),
                    triangles: mesh,
                });
            }
            for c in &net.connections {
                let tris = snapshot.boundary(&c.boundaries[0]).map(|b| poly_tris(b.current())).unwrap_or_default();
                objects.push(SceneObject {
                    id: c.id.clone(),
                    kind: ObjectKind::Connection,
                    category: c.category.to_string(),
                    color_role: if c.category.is_external() { "external".into() } else { "internal".into() },
                    ghost: false,
                    storey: storey_of_space(&c.spaces[0]),
                    area: Some(c.area),
                    element_kind: Some(c.category.element_kind),
                    class: None,
                    triangles: tris,
                });
            }
        }
    }
    if !filter.is_empty() {
        for o in &mut objects {
            if !filter.admits(o) {
                o.ghost = true;
            }
        }
    }
    let mut groups: BTreeMap<String, Vec<Id>> = BTreeMap::new();
    for o in &objects {
        groups.entry(o.storey.clone()).or_default().push(o.id.clone());
    }
    Ok(ScenePayload {
        version: snapshot.version(),
        view,
        variant,
        objects,
        storeys: groups.into_iter().map(|(storey, objects)| StoreyGroup { storey, objects }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_names_parse() {
        assert_eq!("bem".parse::<ViewKind>(), Ok(ViewKind::BemView));
        assert_eq!("RelationshipView".parse::<ViewKind>(), Ok(ViewKind::RelationshipView));
        assert!("nope".parse::<ViewKind>().is_err());
        assert_eq!("Connection".parse::<ObjectKind>(), Ok(ObjectKind::Connection));
    }

    #[test]
    fn selectability_matrix() {
        use ObjectKind as K;
        let allowed = |v: ViewKind| v.selectable().to_vec();
        assert_eq!(allowed(ViewKind::BemView), vec![K::Room, K::Connection]);
        assert_eq!(allowed(ViewKind::SpaceView), vec![K::Space]);
        assert_eq!(allowed(ViewKind::ElementView), vec![K::Element]);
        assert_eq!(allowed(ViewKind::RelationshipView), vec![K::Boundary, K::Space, K::Element]);
        assert_eq!(allowed(ViewKind::BimView), vec![K::Element, K::Space]);
    }

    #[test]
    fn empty_network_gives_empty_index() {
        let ix = build_trace_index(&ModelSnapshot::empty(), &RoomNetwork { snapshot_version: 1, ..Default::default() })
            .unwrap();
        assert!(ix.connections.is_empty() && ix.rooms.is_empty());
        let err =
            build_trace_index(&ModelSnapshot::empty(), &RoomNetwork { snapshot_version: 7, ..Default::default() });
        assert_eq!(err, Err(TraceError::VersionMismatch { snapshot: 1, network: 7 }));
    }

    #[test]
    fn illegal_selection() {
        let ix = TraceIndex::default();
        let sel = Selection { kind: ObjectKind::Connection, id: "x".into(), source: ViewKind::SpaceView };
        assert!(matches!(selection_context(&ix, &sel, ViewKind::BemView), Err(TraceError::IllegalSelection { .. })));
    }
}
