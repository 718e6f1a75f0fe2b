//! Conflict detection, grouping and resolution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geom::{overlap_area, project_onto, segment_crosses_triangle, triangulate, Aabb, Tolerances, TriMesh};
use crate::model::{
    Conflict, ConflictKind, ConflictStatus, Element, Id, Involved, LedgerEntry, ModelSnapshot, Resolution,
    ResolutionKind, SpaceBoundary, SpaceClass,
};
use crate::wrangle::{pair_boundaries, pair_candidate};

/// Overlap ratio above which two boundaries of the same space and element
/// count as duplicates.
pub const DEFAULT_DUPLICATE_RATIO: f64 = 0.99;

pub fn conflict_id(kind: ConflictKind, involved: &Involved) -> String {
    let mut ids: Vec<&str> =
        involved.elements.iter().chain(&involved.spaces).chain(&involved.boundaries).map(Id::as_str).collect();
    ids.sort_unstable();
    let mut h = Sha256::new();
    h.update(format!("{kind:?}").as_bytes());
    for id in ids {
        h.update([0u8]);
        h.update(id.as_bytes());
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("cf-{hex}")
}

fn make(kind: ConflictKind, mut involved: Involved, description: String, resolutions: Vec<Resolution>) -> Conflict {
    involved.normalize();
    Conflict {
        id: conflict_id(kind, &involved),
        kind,
        involved,
        description,
        resolutions,
        status: ConflictStatus::Open,
    }
}

fn ignore_boundary(id: &Id) -> Resolution {
    Resolution::new(ResolutionKind::IgnoreBoundary { id: id.clone() }, format!("ignore boundary {id}"))
}

fn ignore_element(id: &Id) -> Resolution {
    Resolution::new(ResolutionKind::IgnoreElement { id: id.clone() }, format!("ignore element {id}"))
}

fn involved_of(bs: &[&SpaceBoundary]) -> Involved {
    Involved {
        elements: bs.iter().map(|b| b.element.clone()).collect(),
        spaces: bs.iter().map(|b| b.space.clone()).collect(),
        boundaries: bs.iter().map(|b| b.id.clone()).collect(),
    }
}

pub fn detect_conflicts(
    snapshot: &ModelSnapshot,
    classes: &BTreeMap<Id, SpaceClass>,
    tol: &Tolerances,
) -> Vec<Conflict> {
    detect_conflicts_with(snapshot, classes, tol, DEFAULT_DUPLICATE_RATIO)
}

/// Runs every detector on the raw geometry of the active entities. Conflicts
/// already answered in the ledger come back as `Resolved`.
pub fn detect_conflicts_with(
    snapshot: &ModelSnapshot,
    classes: &BTreeMap<Id, SpaceClass>,
    tol: &Tolerances,
    duplicate_ratio: f64,
) -> Vec<Conflict> {
    let raw = snapshot.evolve(|p| {
        for b in p.boundaries.values_mut() {
            b.enhanced = None;
            b.edits.clear();
        }
    });
    let active = raw.active_boundaries();
    let ignored = raw.ignored();
    let elements: Vec<&Element> = raw.elements().values().filter(|e| !ignored.elements.contains(&e.id)).collect();
    let kind_of = |b: &SpaceBoundary| raw.element(&b.element).map(|e| e.kind);

    let mut out = Vec::new();

    for b in &active {
        let a = b.raw.area();
        if a < tol.min_area {
            out.push(make(
                ConflictKind::TooSmallBoundary,
                involved_of(&[b]),
                format!("boundary {} has area {a:.5} m², below {} m²", b.id, tol.min_area),
                vec![ignore_boundary(&b.id)],
            ));
        }
    }

    let boxes: Vec<Option<Aabb>> = active.iter().map(|b| Aabb::from_points(b.raw.points())).collect();
    for i in 0..active.len() {
        for j in i + 1..active.len() {
            let (a, b) = (active[i], active[j]);
            if !boxes_touch(boxes[i].as_ref(), boxes[j].as_ref(), tol.coplanar_tol) {
                continue;
            }
            let ov = overlap_area(&a.raw, &b.raw, tol);
            if ov <= 0.0 {
                continue;
            }
            let smaller = a.raw.area().min(b.raw.area());
            if a.space == b.space && a.element == b.element && ov >= duplicate_ratio * smaller {
                out.push(make(
                    ConflictKind::DuplicateBoundary,
                    involved_of(&[a, b]),
                    format!("boundaries {} and {} duplicate each other ({ov:.3} m² shared)", a.id, b.id),
                    vec![ignore_boundary(&a.id), ignore_boundary(&b.id)],
                ));
                continue;
            }
            let host_opening = a.space == b.space
                && matches!((kind_of(a), kind_of(b)), (Some(x), Some(y)) if x.is_opening() != y.is_opening());
            if ov >= tol.min_area && !host_opening {
                let mut res = vec![ignore_boundary(&a.id), ignore_boundary(&b.id)];
                if a.element != b.element {
                    res.push(ignore_element(&a.element));
                    res.push(ignore_element(&b.element));
                }
                out.push(make(
                    ConflictKind::OverlappingBoundaries,
                    involved_of(&[a, b]),
                    format!("boundaries {} and {} overlap by {ov:.3} m²", a.id, b.id),
                    res,
                ));
            }
        }
    }

    let element_boxes: BTreeMap<&Id, Aabb> =
        elements.iter().filter_map(|e| e.solid.aabb().map(|bb| (&e.id, bb))).collect();
    for b in &active {
        let samples: Vec<_> = triangulate(&project_onto(&b.raw, &b.raw.plane.basis()))
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) * (1.0 / 3.0))
            .collect();
        for e in &elements {
            if e.id == b.element {
                continue;
            }
            let Some(bb) = element_boxes.get(&e.id) else { continue };
            let hit =
                samples.iter().any(|p| inside_box(bb, *p, tol.snap_tol) && e.solid.strictly_contains(*p, tol.snap_tol));
            if hit {
                let mut inv = involved_of(&[b]);
                inv.elements.push(e.id.clone());
                out.push(make(
                    ConflictKind::BoundaryInsideElement,
                    inv,
                    format!("boundary {} lies inside element {}", b.id, e.id),
                    vec![ignore_boundary(&b.id), ignore_element(&e.id)],
                ));
            }
        }
    }

    let (_, unmatched) = pair_boundaries(&raw, tol);
    for id in &unmatched {
        let Some(b) = raw.boundary(id) else { continue };
        out.push(make(
            ConflictKind::UnmatchedBoundary,
            involved_of(&[b]),
            format!("boundary {id} has no partner across element {}", b.element),
            vec![ignore_boundary(id)],
        ));
    }

    out.extend(multiple_external(&raw, &active, classes, tol));

    for i in 0..elements.len() {
        for j in i + 1..elements.len() {
            let (a, b) = (elements[i], elements[j]);
            let (Some(ba), Some(bb)) = (element_boxes.get(&a.id), element_boxes.get(&b.id)) else { continue };
            let ext = ba.overlap_extents(bb);
            if !(ext.x > tol.snap_tol && ext.y > tol.snap_tol && ext.z > tol.snap_tol) {
                continue;
            }
            if solids_intersect(&a.solid, &b.solid, tol.snap_tol) {
                out.push(make(
                    ConflictKind::ElementOverlap,
                    Involved { elements: vec![a.id.clone(), b.id.clone()], ..Default::default() },
                    format!("elements {} and {} intersect", a.id, b.id),
                    vec![ignore_element(&a.id), ignore_element(&b.id)],
                ));
            }
        }
    }

    let ledger: BTreeMap<&str, &Resolution> =
        snapshot.ledger().iter().map(|e| (e.conflict.as_str(), &e.resolution)).collect();
    for c in &mut out {
        if let Some(r) = ledger.get(c.id.as_str()) {
            c.status = ConflictStatus::Resolved { chosen: (*r).clone() };
        }
    }
    out.sort_by(|x, y| group_key(x).cmp(&group_key(y)).then(x.id.cmp(&y.id)));
    out.dedup_by(|x, y| x.id == y.id);
    out
}

fn multiple_external(
    raw: &ModelSnapshot,
    active: &[&SpaceBoundary],
    classes: &BTreeMap<Id, SpaceClass>,
    tol: &Tolerances,
) -> Vec<Conflict> {
    let class_of = |s: &Id| classes.get(s).copied().unwrap_or_default();
    let height = |s: &Id| raw.space(s).and_then(|s| s.volume.aabb()).map_or(0.0, |bb| bb.center().z);
    let mut out = Vec::new();
    for a in active.iter().filter(|a| class_of(&a.space) == SpaceClass::Internal) {
        let Some(el) = raw.element(&a.element) else { continue };
        let thickness = el.solid.extent_along(a.normal_into_element);
        let partners: Vec<&SpaceBoundary> = active
            .iter()
            .filter(|b| b.element == a.element && class_of(&b.space).is_external())
            .filter(|b| pair_candidate(a, b, thickness, tol).is_some())
            .copied()
            .collect();
        let spaces: BTreeSet<&Id> = partners.iter().map(|b| &b.space).collect();
        if spaces.len() < 2 {
            continue;
        }
        let mut resolutions = Vec::new();
        for keep in &partners {
            for drop in &partners {
                if keep.space == drop.space {
                    continue;
                }
                let side = if height(&keep.space) > height(&drop.space) { "upper" } else { "lower" };
                resolutions.push(Resolution::new(
                    ResolutionKind::KeepBoundaryOfPair { keep: keep.id.clone(), drop: drop.id.clone() },
                    format!("keep the {side} external space {} and ignore {}", keep.space, drop.space),
                ));
            }
        }
        let mut all = vec![*a];
        all.extend(partners.iter().copied());
        out.push(make(
            ConflictKind::MultipleExternalAdjacency,
            involved_of(&all),
            format!("{} connects {} to {} external spaces", a.element, a.space, spaces.len()),
            resolutions,
        ));
    }
    out
}

fn boxes_touch(a: Option<&Aabb>, b: Option<&Aabb>, slack: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => {
            let e = a.overlap_extents(b);
            e.x >= -slack && e.y >= -slack && e.z >= -slack
        }
        _ => false,
    }
}

fn inside_box(bb: &Aabb, p: crate::geom::Vec3, tol: f64) -> bool {
    p.x > bb.min.x + tol
        && p.y > bb.min.y + tol
        && p.z > bb.min.z + tol
        && p.x < bb.max.x - tol
        && p.y < bb.max.y - tol
        && p.z < bb.max.z - tol
}

/// Interior contact between two closed meshes: a sample of one strictly
/// inside the other, or an edge of one properly crossing a face of the other.
pub fn solids_intersect(a: &TriMesh, b: &TriMesh, tol: f64) -> bool {
    let probes = |m: &TriMesh| {
        let mut pts = m.vertices.clone();
        pts.extend(m.iter_triangles().map(|t| (t[0] + t[1] + t[2]) * (1.0 / 3.0)));
        if let Some(c) = m.centroid().filter(|c| m.strictly_contains(*c, tol)) {
            pts.push(c);
        }
        pts
    };
    if probes(a).iter().any(|p| b.strictly_contains(*p, tol)) || probes(b).iter().any(|p| a.strictly_contains(*p, tol))
    {
        return true;
    }
    let crosses = |m: &TriMesh, n: &TriMesh| {
        m.iter_triangles().any(|t| {
            (0..3).any(|k| n.iter_triangles().any(|u| segment_crosses_triangle(t[k], t[(k + 1) % 3], &u, tol)))
        })
    };
    crosses(a, b) || crosses(b, a)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub kind: ConflictKind,
    /// First involved element, if any.
    pub element: Option<Id>,
}

pub fn group_key(c: &Conflict) -> GroupKey {
    GroupKey { kind: c.kind, element: c.involved.elements.first().cloned() }
}

/// Groups by (kind, first involved element), groups in key order and
/// conflicts in id order.
pub fn group_conflicts(conflicts: &[Conflict]) -> Vec<(GroupKey, Vec<Conflict>)> {
    let mut groups: BTreeMap<GroupKey, Vec<Conflict>> = BTreeMap::new();
    for c in conflicts {
        groups.entry(group_key(c)).or_default().push(c.clone());
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(|a, b| a.id.cmp(&b.id));
            (k, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ResolveError {
    #[error("unknown conflict {0}")]
    UnknownConflict(String),
    #[error("resolution is not among the candidates of conflict {0}")]
    IllegalResolution(String),
    #[error("conflict {0} is already resolved")]
    AlreadyResolved(String),
}

/// Records `resolution` for conflict `id` in a new snapshot version. The
/// wrangled geometry of the old version is discarded since it was computed
/// with the now-ignored entities.
pub fn resolve(
    snapshot: &ModelSnapshot,
    conflicts: &[Conflict],
    id: &str,
    resolution: &Resolution,
) -> Result<ModelSnapshot, ResolveError> {
    if snapshot.ledger().iter().any(|e| e.conflict == id) {
        return Err(ResolveError::AlreadyResolved(id.to_string()));
    }
    let c = conflicts.iter().find(|c| c.id == id).ok_or_else(|| ResolveError::UnknownConflict(id.to_string()))?;
    if !c.is_open() {
        return Err(ResolveError::AlreadyResolved(id.to_string()));
    }
    let chosen = c
        .resolutions
        .iter()
        .find(|r| r.kind == resolution.kind)
        .ok_or_else(|| ResolveError::IllegalResolution(id.to_string()))?;
    let note = if resolution.note.is_empty() { chosen.note.clone() } else { resolution.note.clone() };
    let entry =
        LedgerEntry { conflict: id.to_string(), resolution: Resolution { kind: resolution.kind.clone(), note } };
    Ok(snapshot.evolve(|p| {
        p.resolution_ledger.push(entry);
        for b in p.boundaries.values_mut() {
            b.enhanced = None;
            b.edits.clear();
        }
    }))
}
