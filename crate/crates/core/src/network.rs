//! Connections, rooms, the room network, watertightness and the bem/1
//! export format.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classify::CompositionLabel;
use crate::geom::{coplanar, projected_overlap, Tolerances, Vec3};
use crate::model::{Adjacent, Category, Connection, Id, ModelSnapshot, Room, RoomNetwork, SpaceClass};
use crate::wrangle::BoundaryPair;

pub const BEM_SCHEMA: &str = "bem/1";

pub fn connection_id(a: &Id, b: &Id) -> Id {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let mut h = Sha256::new();
    h.update(a.as_str().as_bytes());
    h.update([0u8]);
    h.update(b.as_str().as_bytes());
    let hex: String = h.finalize().iter().take(8).map(|x| format!("{x:02x}")).collect();
    Id::new(format!("cn-{hex}"))
}

pub fn room_id(space: &Id) -> Id {
    Id::new(format!("rm-{space}"))
}

/// One connection per pair whose boundaries, element and spaces are all
/// active. Area is the overlap of the two current polygons.
pub fn build_connections(
    pairs: &[BoundaryPair],
    snapshot: &ModelSnapshot,
    classes: &BTreeMap<Id, SpaceClass>,
    labels: &BTreeMap<Id, CompositionLabel>,
    tol: &Tolerances,
) -> Vec<Connection> {
    let ignored = snapshot.ignored();
    let mut out = Vec::new();
    for p in pairs {
        let (Some(a), Some(b)) = (snapshot.boundary(&p.a), snapshot.boundary(&p.b)) else { continue };
        if !ignored.boundary_active(a) || !ignored.boundary_active(b) {
            continue;
        }
        let Some(element) = snapshot.element(&p.element) else { continue };
        let class = |s: &Id| classes.get(s).copied().unwrap_or_default();
        out.push(Connection {
            id: connection_id(&a.id, &b.id),
            boundaries: [a.id.clone(), b.id.clone()],
            element: element.id.clone(),
            spaces: [a.space.clone(), b.space.clone()],
            category: Category::new(element.kind, class(&a.space), class(&b.space)),
            composition_label: labels.get(&element.id).map(|l| l.to_string()).unwrap_or_default(),
            area: projected_overlap(a.current(), b.current(), tol),
        });
    }
    out.sort_by(|x, y| x.id.cmp(&y.id));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceCoverage {
    /// Outward normal of the space face.
    pub normal: Vec3,
    pub face_area: f64,
    pub covered: f64,
    pub shortfall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub ratio: f64,
    pub surface_area: f64,
    pub covered: f64,
    pub faces: Vec<FaceCoverage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Connection area touching `space` over the analytic surface area of its
/// volume, with a per-face breakdown.
pub fn watertight_coverage(
    space: &Id,
    snapshot: &ModelSnapshot,
    connections: &[Connection],
    tol: &Tolerances,
) -> Coverage {
    let Some(sp) = snapshot.space(space) else {
        return Coverage {
            ratio: 0.0,
            surface_area: 0.0,
            covered: 0.0,
            faces: vec![],
            warning: Some(format!("unknown space {space}")),
        };
    };
    let surface_area = sp.volume.surface_area();
    let mine: Vec<(&Connection, usize)> =
        connections.iter().filter_map(|c| c.spaces.iter().position(|s| s == space).map(|i| (c, i))).collect();
    let covered: f64 = mine.iter().map(|(c, _)| c.area).sum();
    let faces = sp
        .volume
        .facets(tol)
        .into_iter()
        .map(|f| {
            let on_face: f64 = mine
                .iter()
                .filter(|(c, i)| {
                    snapshot.boundary(&c.boundaries[*i]).is_some_and(|b| {
                        b.normal_into_element.dot(f.plane.normal) > 0.0 && coplanar(&f, b.current(), tol)
                    })
                })
                .map(|(c, _)| c.area)
                .sum();
            let face_area = f.area();
            FaceCoverage { normal: f.plane.normal, face_area, covered: on_face, shortfall: face_area - on_face }
        })
        .collect();
    if !(surface_area > 0.0) {
        return Coverage {
            ratio: 0.0,
            surface_area,
            covered,
            faces,
            warning: Some(format!("space {space} has zero surface area")),
        };
    }
    Coverage { ratio: covered / surface_area, surface_area, covered, faces, warning: None }
}

/// Rooms for every active space, symmetric adjacency, and warnings for
/// Internal rooms that are not watertight or not connected to each other.
pub fn build_room_network(
    connections: &[Connection],
    snapshot: &ModelSnapshot,
    classes: &BTreeMap<Id, SpaceClass>,
    tol: &Tolerances,
) -> RoomNetwork {
    let ignored = snapshot.ignored();
    let mut warnings = Vec::new();
    let mut rooms = Vec::new();
    for (sid, _) in snapshot.spaces().iter().filter(|(id, _)| !ignored.spaces.contains(*id)) {
        let class = classes.get(sid).copied().unwrap_or_default();
        let mut conns: Vec<Id> = connections.iter().filter(|c| c.spaces.contains(sid)).map(|c| c.id.clone()).collect();
        conns.sort();
        let cov = watertight_coverage(sid, snapshot, connections, tol);
        if let Some(w) = &cov.warning {
            warnings.push(w.clone());
        }
        if class == SpaceClass::Internal && (cov.ratio - 1.0).abs() > 1e-6 {
            warnings.push(format!("room {} is not watertight: coverage {:.6}", room_id(sid), cov.ratio));
        }
        rooms.push(Room { id: room_id(sid), space: sid.clone(), class, connections: conns, coverage_ratio: cov.ratio });
    }

    let room_of: BTreeMap<&Id, Id> = rooms.iter().map(|r| (&r.space, r.id.clone())).collect();
    let mut adjacency: BTreeMap<Id, Vec<Adjacent>> = rooms.iter().map(|r| (r.id.clone(), Vec::new())).collect();
    let kept: Vec<Connection> = connections
        .iter()
        .filter(|c| room_of.contains_key(&c.spaces[0]) && room_of.contains_key(&c.spaces[1]))
        .cloned()
        .collect();
    for c in &kept {
        let (ra, rb) = (room_of[&c.spaces[0]].clone(), room_of[&c.spaces[1]].clone());
        adjacency.entry(ra.clone()).or_default().push(Adjacent { room: rb.clone(), connection: c.id.clone() });
        adjacency.entry(rb).or_default().push(Adjacent { room: ra, connection: c.id.clone() });
    }
    for v in adjacency.values_mut() {
        v.sort_by(|a, b| a.connection.cmp(&b.connection).then(a.room.cmp(&b.room)));
    }

    let internal: Vec<&Id> = rooms.iter().filter(|r| r.class == SpaceClass::Internal).map(|r| &r.id).collect();
    if let Some(start) = internal.first() {
        let mut seen = BTreeSet::from([(*start).clone()]);
        let mut stack = vec![(*start).clone()];
        while let Some(r) = stack.pop() {
            for a in adjacency.get(&r).into_iter().flatten() {
                if seen.insert(a.room.clone()) {
                    stack.push(a.room.clone());
                }
            }
        }
        for r in internal.iter().filter(|r| !seen.contains(**r)) {
            warnings.push(format!("room {r} is disconnected from room {start}"));
        }
    }
    RoomNetwork { snapshot_version: snapshot.version(), rooms, connections: kept, adjacency, warnings }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BemDoc {
    schema: String,
    snapshot_version: u64,
    rooms: Vec<BemRoom>,
    connections: Vec<BemConnection>,
    #[serde(default)]
    warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BemRoom {
    id: Id,
    space: Id,
    class: SpaceClass,
    coverage_ratio: f64,
    connections: Vec<Id>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BemConnection {
    id: Id,
    rooms: [Id; 2],
    category: Category,
    composition_label: String,
    area: f64,
    boundaries: [Id; 2],
    element: Id,
    spaces: [Id; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BemError {
    #[error("not a bem/1 document: {0}")]
    Format(String),
    #[error("connection {0} references an unknown room")]
    UnknownRoom(Id),
    #[error("connection {0} lists rooms that do not belong to its spaces")]
    RoomSpaceMismatch(Id),
}

pub fn export_bem(network: &RoomNetwork) -> Vec<u8> {
    let room_of: BTreeMap<&Id, &Id> = network.rooms.iter().map(|r| (&r.space, &r.id)).collect();
    let doc = BemDoc {
        schema: BEM_SCHEMA.to_string(),
        snapshot_version: network.snapshot_version,
        rooms: network
            .rooms
            .iter()
            .map(|r| BemRoom {
                id: r.id.clone(),
                space: r.space.clone(),
                class: r.class,
                coverage_ratio: r.coverage_ratio,
                connections: r.connections.clone(),
            })
            .collect(),
        connections: network
            .connections
            .iter()
            .map(|c| BemConnection {
                id: c.id.clone(),
                rooms: c.spaces.clone().map(|s| room_of.get(&s).map_or_else(|| room_id(&s), |r| (*r).clone())),
                category: c.category,
                composition_label: c.composition_label.clone(),
                area: c.area,
                boundaries: c.boundaries.clone(),
                element: c.element.clone(),
                spaces: c.spaces.clone(),
            })
            .collect(),
        warnings: network.warnings.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("bem document always serializes");
    out.push(b'\n');
    out
}

pub fn import_bem(bytes: &[u8]) -> Result<RoomNetwork, BemError> {
    let doc: BemDoc = serde_json::from_slice(bytes).map_err(|e| BemError::Format(e.to_string()))?;
    if doc.schema != BEM_SCHEMA {
        return Err(BemError::Format(format!("schema is {:?}", doc.schema)));
    }
    let known: BTreeSet<&Id> = doc.rooms.iter().map(|r| &r.id).collect();
    let room_of: BTreeMap<&Id, &Id> = doc.rooms.iter().map(|r| (&r.space, &r.id)).collect();
    if known.len() != doc.rooms.len() || room_of.len() != doc.rooms.len() {
        return Err(BemError::Format("room ids and room spaces must be unique".into()));
    }
    let mut adjacency: BTreeMap<Id, Vec<Adjacent>> = doc.rooms.iter().map(|r| (r.id.clone(), Vec::new())).collect();
    for c in &doc.connections {
        if c.rooms.iter().any(|r| !known.contains(r)) {
            return Err(BemError::UnknownRoom(c.id.clone()));
        }
        if c.spaces.iter().zip(&c.rooms).any(|(s, r)| room_of.get(s) != Some(&r)) {
            return Err(BemError::RoomSpaceMismatch(c.id.clone()));
        }
        let [ra, rb] = &c.rooms;
        adjacency.entry(ra.clone()).or_default().push(Adjacent { room: rb.clone(), connection: c.id.clone() });
        adjacency.entry(rb.clone()).or_default().push(Adjacent { room: ra.clone(), connection: c.id.clone() });
    }
    for v in adjacency.values_mut() {
        v.sort_by(|a, b| a.connection.cmp(&b.connection).then(a.room.cmp(&b.room)));
    }
    Ok(RoomNetwork {
        snapshot_version: doc.snapshot_version,
        rooms: doc
            .rooms
            .into_iter()
            .map(|r| Room {
                id: r.id,
                space: r.space,
                class: r.class,
                connections: r.connections,
                coverage_ratio: r.coverage_ratio,
            })
            .collect(),
        connections: doc
            .connections
            .into_iter()
            .map(|c| Connection {
                id: c.id,
                boundaries: c.boundaries,
                element: c.element,
                spaces: c.spaces,
                category: c.category,
                composition_label: c.composition_label,
                area: c.area,
            })
            .collect(),
        adjacency,
        warnings: doc.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{box_mesh, PlanarPolygon, Plane};
    use crate::model::{Element, ElementKind, SbType, SnapshotParts, Space, SpaceBoundary};

    /// A 4x3x2.5 room with one boundary per face, each paired with an
    /// outside counterpart across a 0.2 m element.
    fn boxed_room(skip_ceiling: bool) -> (ModelSnapshot, Vec<Connection>) {
        let mut p = SnapshotParts::default();
        let room = box_mesh(Vec3::ZERO, Vec3::new(4.0, 3.0, 2.5));
        p.insert_space(Space {
            id: "r".into(),
            volume: room.clone(),
            classification: SpaceClass::Unclassified,
            storey: String::new(),
        });
        p.insert_space(Space {
            id: "out".into(),
            volume: box_mesh(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(-0.5, -0.5, -0.5)),
            classification: SpaceClass::Unclassified,
            storey: String::new(),
        });
        let mut conns = Vec::new();
        for (i, f) in room.facets(&Tolerances::default()).into_iter().enumerate() {
            let n = f.plane.normal;
            let is_ceiling = n.z > 0.5;
            let eid = Id::new(format!("e{i}"));
            p.insert_element(Element {
                id: eid.clone(),
                kind: if n.z.abs() > 0.5 { ElementKind::Slab } else { ElementKind::Wall },
                solid: box_mesh(Vec3::new(-5.0, -5.0, -5.0), Vec3::new(-4.0, -4.0, -4.0)),
                layers: vec![],
                reference_normal: n,
                storey: String::new(),
            });
            let inner = SpaceBoundary {
                id: Id::new(format!("a{i}")),
                space: "r".into(),
                element: eid.clone(),
                sb_type: SbType::TypeA,
                raw: f.clone(),
                enhanced: Some(f.clone()),
                edits: vec![],
                normal_into_element: n,
            };
            let shifted = PlanarPolygon {
                plane: Plane { origin: f.plane.origin + n * 0.2, normal: -n },
                outer: f.outer.iter().rev().map(|p| *p + n * 0.2).collect(),
                holes: vec![],
            };
            let outer = SpaceBoundary {
                id: Id::new(format!("b{i}")),
                space: "out".into(),
                element: eid,
                sb_type: SbType::TypeA,
                enhanced: Some(shifted.clone()),
                raw: shifted,
                edits: vec![],
                normal_into_element: -n,
            };
            if !(skip_ceiling && is_ceiling) {
                conns.push(BoundaryPair {
                    a: inner.id.clone(),
                    b: outer.id.clone(),
                    element: inner.element.clone(),
                    overlap: 0.0,
                    plane_gap: 0.2,
                });
            }
            p.insert_boundary(inner);
            p.insert_boundary(outer);
        }
        let s = ModelSnapshot::new(p);
        let classes = BTreeMap::from([(Id::from("r"), SpaceClass::Internal), (Id::from("out"), SpaceClass::Air)]);
        let c = build_connections(&conns, &s, &classes, &BTreeMap::new(), &Tolerances::default());
        (s, c)
    }

    #[test]
    fn full_box_is_watertight() {
        let (s, c) = boxed_room(false);
        let cov = watertight_coverage(&"r".into(), &s, &c, &Tolerances::default());
        assert!((cov.surface_area - 59.0).abs() < 1e-9);
        assert!((cov.ratio - 1.0).abs() < 1e-6);
        assert!(cov.faces.iter().all(|f| f.shortfall.abs() < 1e-9));
    }

    #[test]
    fn missing_ceiling_shows_in_ratio_and_breakdown() {
        let (s, c) = boxed_room(true);
        let cov = watertight_coverage(&"r".into(), &s, &c, &Tolerances::default());
        assert!((cov.ratio - 47.0 / 59.0).abs() < 1e-9);
        let short: Vec<_> = cov.faces.iter().filter(|f| f.shortfall > 1e-9).collect();
        assert_eq!(short.len(), 1);
        assert!((short[0].shortfall - 12.0).abs() < 1e-9);
    }

    #[test]
    fn zero_area_space_is_guarded() {
        let mut p = SnapshotParts::default();
        p.insert_space(Space {
            id: "z".into(),
            volume: Default::default(),
            classification: SpaceClass::Unclassified,
            storey: String::new(),
        });
        let cov = watertight_coverage(&"z".into(), &ModelSnapshot::new(p), &[], &Tolerances::default());
        assert_eq!(cov.ratio, 0.0);
        assert!(cov.warning.is_some());
    }

    #[test]
    fn network_symmetry_and_export_round_trip() {
        let (s, c) = boxed_room(false);
        let classes = BTreeMap::from([(Id::from("r"), SpaceClass::Internal), (Id::from("out"), SpaceClass::Air)]);
        let net = build_room_network(&c, &s, &classes, &Tolerances::default());
        assert_eq!(net.rooms.len(), 2);
        let degree: usize = net.rooms.iter().map(|r| r.connections.len()).sum();
        assert_eq!(degree, 2 * net.connections.len());
        assert_eq!(net.adjacency[&room_id(&"r".into())].len(), 6);
        let bytes = export_bem(&net);
        let back = import_bem(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(export_bem(&back), bytes);
    }

    #[test]
    fn import_rejects_rooms_that_disagree_with_spaces() {
        let (s, c) = boxed_room(false);
        let classes = BTreeMap::from([(Id::from("r"), SpaceClass::Internal), (Id::from("out"), SpaceClass::Air)]);
        let net = build_room_network(&c, &s, &classes, &Tolerances::default());
        let mut doc: serde_json::Value = serde_json::from_slice(&export_bem(&net)).unwrap();
        let conn = &mut doc["connections"][0];
        let rooms = conn["rooms"].clone();
        conn["rooms"] = serde_json::json!([rooms[1], rooms[0]]);
        let err = import_bem(&serde_json::to_vec(&doc).unwrap()).unwrap_err();
        assert!(matches!(err, BemError::RoomSpaceMismatch(_)), "{err}");

        let mut doc: serde_json::Value = serde_json::from_slice(&export_bem(&net)).unwrap();
        doc["rooms"][1]["space"] = doc["rooms"][0]["space"].clone();
        assert!(matches!(import_bem(&serde_json::to_vec(&doc).unwrap()), Err(BemError::Format(_))));
    }

    #[test]
    fn empty_network() {
        let net = build_room_network(&[], &ModelSnapshot::empty(), &BTreeMap::new(), &Tolerances::default());
        assert!(net.rooms.is_empty() && net.connections.is_empty());
        let v: serde_json::Value = serde_json::from_slice(&export_bem(&net)).unwrap();
        assert_eq!(v["rooms"], serde_json::json!([]));
        assert_eq!(v["connections"], serde_json::json!([]));
    }
}
