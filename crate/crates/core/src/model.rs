//! Domain types shared by every stage of the conversion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{PlanarPolygon, TriMesh, Vec3};

/// Stable identifier. Reuses the IFC GlobalId when the entity came from a
/// STEP file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Id(pub String);

impl Id {
    pub fn new(s: impl Into<String>) -> Self {
        Id(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Id {
    fn from(s: &str) -> Self {
        Id(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Wall,
    Slab,
    Window,
    Door,
    Other,
}

impl ElementKind {
    pub fn is_opening(self) -> bool {
        matches!(self, ElementKind::Window | ElementKind::Door)
    }

    pub const ALL: [ElementKind; 5] =
        [ElementKind::Wall, ElementKind::Slab, ElementKind::Window, ElementKind::Door, ElementKind::Other];
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ElementKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElementKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown element kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub material: String,
    pub thickness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: Id,
    pub kind: ElementKind,
    pub solid: TriMesh,
    /// Material layers in the order met when walking along `reference_normal`.
    pub layers: Vec<Layer>,
    pub reference_normal: Vec3,
    pub storey: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum SpaceClass {
    Internal,
    Air,
    Earth,
    #[default]
    Unclassified,
}

impl SpaceClass {
    pub fn is_external(self) -> bool {
        matches!(self, SpaceClass::Air | SpaceClass::Earth)
    }

    pub const ALL: [SpaceClass; 4] =
        [SpaceClass::Internal, SpaceClass::Air, SpaceClass::Earth, SpaceClass::Unclassified];
}

impl fmt::Display for SpaceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for SpaceClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SpaceClass::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown space class `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Space {
    pub id: Id,
    pub volume: TriMesh,
    #[serde(default)]
    pub classification: SpaceClass,
    pub storey: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SbType {
    TypeA,
    TypeB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum EditOp {
    RecessRemoved { openings: Vec<Id> },
    Enlarged,
    Ignored { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    #[serde(flatten)]
    pub op: EditOp,
    pub area_before: f64,
    pub area_after: f64,
}

impl EditRecord {
    /// Checks the area direction implied by the operation.
    pub fn is_consistent(&self, rel_tol: f64) -> bool {
        let slack = rel_tol * self.area_before.abs().max(1.0);
        match self.op {
            EditOp::RecessRemoved { .. } => self.area_after < self.area_before,
            EditOp::Enlarged => self.area_after >= self.area_before - slack,
            EditOp::Ignored { .. } => (self.area_after - self.area_before).abs() <= slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceBoundary {
    pub id: Id,
    pub space: Id,
    pub element: Id,
    pub sb_type: SbType,
    pub raw: PlanarPolygon,
    pub enhanced: Option<PlanarPolygon>,
    pub edits: Vec<EditRecord>,
    pub normal_into_element: Vec3,
}

impl SpaceBoundary {
    /// Enhanced geometry when the wrangler has run, raw otherwise.
    pub fn current(&self) -> &PlanarPolygon {
        self.enhanced.as_ref().unwrap_or(&self.raw)
    }
}

/// `(element kind, unordered pair of space classes)`, rendered as
/// `Window:Internal-Air`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Category {
    pub element_kind: ElementKind,
    pub classes: [SpaceClass; 2],
}

impl Category {
    pub fn new(element_kind: ElementKind, a: SpaceClass, b: SpaceClass) -> Self {
        Self { element_kind, classes: if a <= b { [a, b] } else { [b, a] } }
    }

    pub fn is_external(&self) -> bool {
        self.classes.iter().any(|c| c.is_external())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}-{}", self.element_kind, self.classes[0], self.classes[1])
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, pair) = s.split_once(':').ok_or_else(|| format!("bad category `{s}`"))?;
        let (a, b) = pair.split_once(['-', '–']).ok_or_else(|| format!("bad category `{s}`"))?;
        Ok(Category::new(kind.trim().parse()?, a.trim().parse()?, b.trim().parse()?))
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub id: Id,
    pub boundaries: [Id; 2],
    pub element: Id,
    pub spaces: [Id; 2],
    pub category: Category,
    pub composition_label: String,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: Id,
    pub space: Id,
    pub class: SpaceClass,
    pub connections: Vec<Id>,
    pub coverage_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjacent {
    pub room: Id,
    pub connection: Id,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoomNetwork {
    /// Version of the snapshot the network was built from.
    pub snapshot_version: u64,
    pub rooms: Vec<Room>,
    pub connections: Vec<Connection>,
    pub adjacency: BTreeMap<Id, Vec<Adjacent>>,
    pub warnings: Vec<String>,
}

impl RoomNetwork {
    pub fn room(&self, id: &Id) -> Option<&Room> {
        self.rooms.iter().find(|r| &r.id == id)
    }

    pub fn connection(&self, id: &Id) -> Option<&Connection> {
        self.connections.iter().find(|c| &c.id == id)
    }

    pub fn room_of_space(&self, space: &Id) -> Option<&Room> {
        self.rooms.iter().find(|r| &r.space == space)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConflictKind {
    DuplicateBoundary,
    OverlappingBoundaries,
    UnmatchedBoundary,
    TooSmallBoundary,
    BoundaryInsideElement,
    MultipleExternalAdjacency,
    ElementOverlap,
}

impl fmt::Display for ConflictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ResolutionKind {
    IgnoreBoundary { id: Id },
    IgnoreSpace { id: Id },
    IgnoreElement { id: Id },
    KeepBoundaryOfPair { keep: Id, drop: Id },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(flatten)]
    pub kind: ResolutionKind,
    #[serde(default)]
    pub note: String,
}

impl Resolution {
    pub fn new(kind: ResolutionKind, note: impl Into<String>) -> Self {
        Self { kind, note: note.into() }
    }

    /// Ids this resolution refers to.
    pub fn referenced_ids(&self) -> Vec<&Id> {
        match &self.kind {
            ResolutionKind::IgnoreBoundary { id }
            | ResolutionKind::IgnoreSpace { id }
            | ResolutionKind::IgnoreElement { id } => vec![id],
            ResolutionKind::KeepBoundaryOfPair { keep, drop } => vec![keep, drop],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Involved {
    pub elements: Vec<Id>,
    pub spaces: Vec<Id>,
    pub boundaries: Vec<Id>,
}

impl Involved {
    pub fn contains(&self, id: &Id) -> bool {
        self.elements.contains(id) || self.spaces.contains(id) || self.boundaries.contains(id)
    }

    pub(crate) fn normalize(&mut self) {
        for v in [&mut self.elements, &mut self.spaces, &mut self.boundaries] {
            v.sort();
            v.dedup();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum ConflictStatus {
    Open,
    Resolved { chosen: Resolution },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub id: String,
    pub kind: ConflictKind,
    pub involved: Involved,
    pub description: String,
    pub resolutions: Vec<Resolution>,
    pub status: ConflictStatus,
}

impl Conflict {
    pub fn is_open(&self) -> bool {
        matches!(self.status, ConflictStatus::Open)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub conflict: String,
    pub resolution: Resolution,
}

/// Everything a snapshot holds, in mutable form. Only ever used to build a
/// new [`ModelSnapshot`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapshotParts {
    pub elements: BTreeMap<Id, Element>,
    pub spaces: BTreeMap<Id, Space>,
    pub boundaries: BTreeMap<Id, SpaceBoundary>,
    pub resolution_ledger: Vec<LedgerEntry>,
    pub classification_overrides: BTreeMap<Id, SpaceClass>,
}

impl SnapshotParts {
    pub fn insert_element(&mut self, e: Element) {
        self.elements.insert(e.id.clone(), e);
    }

    pub fn insert_space(&mut self, s: Space) {
        self.spaces.insert(s.id.clone(), s);
    }

    pub fn insert_boundary(&mut self, b: SpaceBoundary) {
        self.boundaries.insert(b.id.clone(), b);
    }
}

/// Immutable, versioned model. Changes go through [`ModelSnapshot::evolve`],
/// which returns a new snapshot with `version + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    version: u64,
    parts: SnapshotParts,
}

impl ModelSnapshot {
    pub fn new(parts: SnapshotParts) -> Self {
        Self { version: 1, parts }
    }

    pub fn with_version(version: u64, parts: SnapshotParts) -> Self {
        Self { version, parts }
    }

    pub fn empty() -> Self {
        Self::new(SnapshotParts::default())
    }

    pub fn evolve(&self, f: impl FnOnce(&mut SnapshotParts)) -> ModelSnapshot {
        let mut parts = self.parts.clone();
        f(&mut parts);
        ModelSnapshot { version: self.version + 1, parts }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parts(&self) -> &SnapshotParts {
        &self.parts
    }

    pub fn elements(&self) -> &BTreeMap<Id, Element> {
        &self.parts.elements
    }

    pub fn spaces(&self) -> &BTreeMap<Id, Space> {
        &self.parts.spaces
    }

    pub fn boundaries(&self) -> &BTreeMap<Id, SpaceBoundary> {
        &self.parts.boundaries
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.parts.resolution_ledger
    }

    pub fn overrides(&self) -> &BTreeMap<Id, SpaceClass> {
        &self.parts.classification_overrides
    }

    pub fn element(&self, id: &Id) -> Option<&Element> {
        self.parts.elements.get(id)
    }

    pub fn space(&self, id: &Id) -> Option<&Space> {
        self.parts.spaces.get(id)
    }

    pub fn boundary(&self, id: &Id) -> Option<&SpaceBoundary> {
        self.parts.boundaries.get(id)
    }

    pub fn has_enhanced(&self) -> bool {
        self.parts.boundaries.values().any(|b| b.enhanced.is_some())
    }

    /// Entities excluded from the conversion by resolutions in the ledger.
    pub fn ignored(&self) -> IgnoredSet {
        let mut set = IgnoredSet::default();
        for entry in &self.parts.resolution_ledger {
            match &entry.resolution.kind {
                ResolutionKind::IgnoreBoundary { id } => {
                    set.boundaries.insert(id.clone());
                }
                ResolutionKind::IgnoreSpace { id } => {
                    set.spaces.insert(id.clone());
                }
                ResolutionKind::IgnoreElement { id } => {
                    set.elements.insert(id.clone());
                }
                ResolutionKind::KeepBoundaryOfPair { drop, .. } => {
                    set.boundaries.insert(drop.clone());
                }
            }
        }
        set
    }

    /// Boundaries taking part in the conversion, in id order.
    pub fn active_boundaries(&self) -> Vec<&SpaceBoundary> {
        let ignored = self.ignored();
        self.parts.boundaries.values().filter(|b| ignored.boundary_active(b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct IgnoredSet {
    pub elements: BTreeSet<Id>,
    pub spaces: BTreeSet<Id>,
    pub boundaries: BTreeSet<Id>,
}

impl IgnoredSet {
    pub fn boundary_active(&self, b: &SpaceBoundary) -> bool {
        !self.boundaries.contains(&b.id) && !self.spaces.contains(&b.space) && !self.elements.contains(&b.element)
    }

    pub fn contains(&self, id: &Id) -> bool {
        self.elements.contains(id) || self.spaces.contains(id) || self.boundaries.contains(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_round_trips_through_text() {
        let c = Category::new(ElementKind::Window, SpaceClass::Air, SpaceClass::Internal);
        assert_eq!(c.to_string(), "Window:Internal-Air");
        assert_eq!("Window:Internal–Air".parse::<Category>().unwrap(), c);
        assert!(c.is_external());
    }

    #[test]
    fn evolve_bumps_version_and_leaves_original() {
        let s = ModelSnapshot::empty();
        let t = s.evolve(|p| {
            p.classification_overrides.insert(Id::from("x"), SpaceClass::Earth);
        });
        assert_eq!(s.version(), 1);
        assert_eq!(t.version(), 2);
        assert!(s.overrides().is_empty());
    }

    #[test]
    fn keep_boundary_ignores_the_dropped_one() {
        let s = ModelSnapshot::empty().evolve(|p| {
            p.resolution_ledger.push(LedgerEntry {
                conflict: "c".into(),
                resolution: Resolution::new(
                    ResolutionKind::KeepBoundaryOfPair { keep: "a".into(), drop: "b".into() },
                    "",
                ),
            })
        });
        let ig = s.ignored();
        assert!(ig.boundaries.contains(&Id::from("b")));
        assert!(!ig.boundaries.contains(&Id::from("a")));
    }

    #[test]
    fn edit_record_rules() {
        let r = |op, a, b| EditRecord { op, area_before: a, area_after: b };
        assert!(r(EditOp::RecessRemoved { openings: vec![] }, 12.0, 11.0).is_consistent(1e-9));
        assert!(!r(EditOp::RecessRemoved { openings: vec![] }, 12.0, 12.0).is_consistent(1e-9));
        assert!(r(EditOp::Enlarged, 7.48, 10.0).is_consistent(1e-9));
        assert!(!r(EditOp::Enlarged, 10.0, 7.48).is_consistent(1e-9));
        assert!(r(EditOp::Ignored { reason: "x".into() }, 3.0, 3.0).is_consistent(1e-9));
    }
}
