//! Space-boundary geometry repair: recess removal, enlargement to full face
//! coverage, and pairing across elements.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    boolean_2d_with, difference_all, project_onto, projected_overlap, shared_border_length, union_all, BoolOp,
    PlanarPolygon, Polygon2D, Tolerances,
};
use crate::model::{EditOp, EditRecord, Id, ModelSnapshot, SnapshotParts, SpaceBoundary, SpaceClass};

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum WrangleError {
    #[error("removing openings from {boundary} leaves {parts} pieces")]
    FragmentedBoundary { boundary: Id, parts: usize },
    #[error("uncovered region of {area:.4} m² on a face of {space} touches no boundary")]
    OrphanRegion { space: Id, area: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecessOutcome {
    pub enhanced: PlanarPolygon,
    /// `None` when no opening intersects the boundary.
    pub edit: Option<EditRecord>,
    /// Openings that do not intersect the boundary.
    pub non_intersecting: Vec<Id>,
}

/// Subtracts opening footprints from the boundary's current geometry.
pub fn remove_recesses(
    boundary: &SpaceBoundary,
    openings: &[(Id, PlanarPolygon)],
    tol: &Tolerances,
) -> Result<RecessOutcome, WrangleError> {
    let base = boundary.current();
    let basis = base.plane.basis();
    let b2 = project_onto(base, &basis);
    let mut hits = Vec::new();
    let mut cutters = Vec::new();
    let mut non_intersecting = Vec::new();
    for (id, fp) in openings {
        let f2 = project_onto(fp, &basis);
        let inter: f64 =
            boolean_2d_with(&b2, &f2, BoolOp::Intersection, tol.snap_tol).iter().map(Polygon2D::area).sum();
        if inter > tol.snap_tol * tol.snap_tol {
            hits.push(id.clone());
            cutters.push(f2);
        } else {
            non_intersecting.push(id.clone());
        }
    }
    if cutters.is_empty() {
        return Ok(RecessOutcome { enhanced: base.clone(), edit: None, non_intersecting });
    }
    let pieces = difference_all(&b2, &cutters, tol.snap_tol);
    if pieces.len() != 1 {
        return Err(WrangleError::FragmentedBoundary { boundary: boundary.id.clone(), parts: pieces.len() });
    }
    let enhanced = pieces[0].to_planar();
    hits.sort();
    hits.dedup();
    let edit = EditRecord {
        op: EditOp::RecessRemoved { openings: hits },
        area_before: base.area(),
        area_after: enhanced.area(),
    };
    Ok(RecessOutcome { enhanced, edit: Some(edit), non_intersecting })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnlargeOutcome {
    /// New geometry and edit per grown boundary.
    pub grown: BTreeMap<Id, (PlanarPolygon, EditRecord)>,
    /// Areas of uncovered components that touch no boundary.
    pub orphans: Vec<f64>,
}

/// Grows the boundaries lying on `face` until they cover it. Each uncovered
/// component goes to the boundary sharing the longest border with it (ties:
/// smallest id).
pub fn enlarge_boundaries(face: &PlanarPolygon, boundaries: &[&SpaceBoundary], tol: &Tolerances) -> EnlargeOutcome {
    let basis = face.plane.basis();
    let face2 = project_onto(face, &basis);
    let mut current: Vec<(Id, Polygon2D, f64)> =
        boundaries.iter().map(|b| (b.id.clone(), project_onto(b.current(), &basis), b.current().area())).collect();
    current.sort_by(|a, b| a.0.cmp(&b.0));

    let cutters: Vec<Polygon2D> = current.iter().map(|c| c.1.clone()).collect();
    let floor = (face2.area() * 1e-9).max(tol.snap_tol * tol.snap_tol);
    let mut uncovered: Vec<Polygon2D> =
        difference_all(&face2, &cutters, tol.snap_tol).into_iter().filter(|p| p.area() > floor).collect();
    uncovered.sort_by(|a, b| {
        let (ka, kb) = (a.bbox().0, b.bbox().0);
        b.area().total_cmp(&a.area()).then(ka[0].total_cmp(&kb[0])).then(ka[1].total_cmp(&kb[1]))
    });

    let mut out = EnlargeOutcome::default();
    let mut grown = BTreeSet::new();
    for comp in uncovered {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, poly, _)) in current.iter().enumerate() {
            let len = shared_border_length(&comp, poly, tol.coplanar_tol);
            if len > tol.snap_tol && best.is_none_or(|(_, l)| len > l + 1e-9) {
                best = Some((i, len));
            }
        }
        let Some((i, _)) = best else {
            out.orphans.push(comp.area());
            continue;
        };
        let merged = union_all(&[current[i].1.clone(), comp.clone()], tol.snap_tol);
        if merged.len() != 1 {
            out.orphans.push(comp.area());
            continue;
        }
        current[i].1 = merged.into_iter().next().unwrap_or_else(|| comp.clone());
        grown.insert(i);
    }
    for i in grown {
        let (id, poly, before) = &current[i];
        let planar = poly.to_planar();
        let edit = EditRecord { op: EditOp::Enlarged, area_before: *before, area_after: planar.area() };
        out.grown.insert(id.clone(), (planar, edit));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub a: Id,
    pub b: Id,
    pub element: Id,
    pub overlap: f64,
    pub plane_gap: f64,
}

/// Greedy matching of boundaries across their element, by descending
/// projected overlap (ties by id). Returns pairs and unmatched ids.
pub fn pair_boundaries(snapshot: &ModelSnapshot, tol: &Tolerances) -> (Vec<BoundaryPair>, Vec<Id>) {
    let active = snapshot.active_boundaries();
    let mut by_element: BTreeMap<&Id, Vec<&SpaceBoundary>> = BTreeMap::new();
    for b in &active {
        by_element.entry(&b.element).or_default().push(b);
    }
    let mut candidates = Vec::new();
    for (element, bs) in &by_element {
        let Some(el) = snapshot.element(element) else { continue };
        for (i, a) in bs.iter().enumerate() {
            for b in &bs[i + 1..] {
                if let Some(p) = pair_candidate(a, b, el.solid.extent_along(a.normal_into_element), tol) {
                    candidates.push(p);
                }
            }
        }
    }
    // quantized so that geometrically equal overlaps tie exactly
    let q = |v: f64| (v * 1e9).round();
    candidates.sort_by(|x, y| q(y.overlap).total_cmp(&q(x.overlap)).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));

    let mut used = BTreeSet::new();
    let mut pairs = Vec::new();
    for c in candidates {
        if used.contains(&c.a) || used.contains(&c.b) {
            continue;
        }
        used.insert(c.a.clone());
        used.insert(c.b.clone());
        pairs.push(c);
    }
    pairs.sort_by(|x, y| x.a.cmp(&y.a).then(x.b.cmp(&y.b)));
    let unmatched = active.iter().map(|b| b.id.clone()).filter(|id| !used.contains(id)).collect();
    (pairs, unmatched)
}

/// The pairing predicate on its own: `Some` when `a` and `b` could form a pair
/// across an element `thickness` thick.
pub fn pair_candidate(a: &SpaceBoundary, b: &SpaceBoundary, thickness: f64, tol: &Tolerances) -> Option<BoundaryPair> {
    if a.space == b.space || a.element != b.element {
        return None;
    }
    if a.normal_into_element.dot(b.normal_into_element) > -tol.angle_tol.cos() {
        return None;
    }
    let (pa, pb) = (a.current(), b.current());
    let gap = (pb.plane.origin - pa.plane.origin).dot(a.normal_into_element);
    if gap < -2.0 * tol.snap_tol || gap > thickness + 2.0 * tol.snap_tol {
        return None;
    }
    let overlap = projected_overlap(pa, pb, tol);
    if overlap < tol.min_area {
        return None;
    }
    let (x, y) = if a.id <= b.id { (a, b) } else { (b, a) };
    Some(BoundaryPair { a: x.id.clone(), b: y.id.clone(), element: a.element.clone(), overlap, plane_gap: gap.abs() })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WrangleReport {
    pub errors: Vec<WrangleError>,
    /// (boundary, opening) pairs on the same face that did not intersect.
    pub non_intersecting: Vec<(Id, Id)>,
}

/// Runs recess removal on every active boundary, then enlargement on every
/// face of the Internal spaces, producing the next snapshot version. Earlier
/// enhanced geometry and edit logs are discarded first.
pub fn wrangle(
    snapshot: &ModelSnapshot,
    classes: &BTreeMap<Id, SpaceClass>,
    tol: &Tolerances,
) -> (ModelSnapshot, WrangleReport) {
    let mut report = WrangleReport::default();
    let mut parts: SnapshotParts = snapshot.parts().clone();
    for b in parts.boundaries.values_mut() {
        b.enhanced = None;
        b.edits.clear();
    }
    let ignored = snapshot.ignored();
    let active: Vec<Id> =
        parts.boundaries.values().filter(|b| ignored.boundary_active(b)).map(|b| b.id.clone()).collect();

    // recesses: openings are boundaries of the same space, attached to a
    // window or door, lying in the host boundary's plane
    let mut recessed = BTreeMap::new();
    for id in &active {
        let b = &parts.boundaries[id];
        let Some(host) = parts.elements.get(&b.element) else { continue };
        if host.kind.is_opening() {
            continue;
        }
        let openings: Vec<(Id, PlanarPolygon)> = active
            .iter()
            .map(|o| &parts.boundaries[o])
            .filter(|o| o.space == b.space && o.id != b.id)
            .filter(|o| parts.elements.get(&o.element).is_some_and(|e| e.kind.is_opening()))
            .filter(|o| same_face(&b.raw, &o.raw, tol))
            .map(|o| (o.element.clone(), o.raw.clone()))
            .collect();
        if openings.is_empty() {
            continue;
        }
        match remove_recesses(b, &openings, tol) {
            Ok(r) => {
                report.non_intersecting.extend(r.non_intersecting.iter().map(|o| (id.clone(), o.clone())));
                if let Some(edit) = r.edit {
                    recessed.insert(id.clone(), (r.enhanced, edit));
                }
            }
            Err(e) => report.errors.push(e),
        }
    }
    for (id, (poly, edit)) in recessed {
        let b = parts.boundaries.get_mut(&id).expect("recessed boundary exists");
        b.enhanced = Some(poly);
        b.edits.push(edit);
    }

    // enlargement on Internal spaces only
    let mut grown_all = BTreeMap::new();
    for (sid, space) in &parts.spaces {
        if classes.get(sid) != Some(&SpaceClass::Internal) {
            continue;
        }
        for face in space.volume.facets(tol) {
            let on_face: Vec<&SpaceBoundary> = active
                .iter()
                .map(|id| &parts.boundaries[id])
                .filter(|b| &b.space == sid && b.normal_into_element.dot(face.plane.normal) > 0.0)
                .filter(|b| same_face(&face, b.current(), tol))
                .collect();
            if on_face.is_empty() {
                report.errors.push(WrangleError::OrphanRegion { space: sid.clone(), area: face.area() });
                continue;
            }
            let out = enlarge_boundaries(&face, &on_face, tol);
            report
                .errors
                .extend(out.orphans.iter().map(|a| WrangleError::OrphanRegion { space: sid.clone(), area: *a }));
            grown_all.extend(out.grown);
        }
    }
    for (id, (poly, edit)) in grown_all {
        let b = parts.boundaries.get_mut(&id).expect("grown boundary exists");
        b.enhanced = Some(poly);
        b.edits.push(edit);
    }
    // untouched active boundaries get their raw geometry as enhanced
    for id in &active {
        let b = parts.boundaries.get_mut(id).expect("active boundary exists");
        if b.enhanced.is_none() {
            b.enhanced = Some(b.raw.clone());
        }
    }
    (ModelSnapshot::with_version(snapshot.version() + 1, parts), report)
}

/// Marks unmatched boundaries: enhanced geometry dropped, `Ignored` edit.
pub fn mark_unmatched(snapshot: &ModelSnapshot, unmatched: &[Id]) -> ModelSnapshot {
    snapshot.evolve(|p| {
        for id in unmatched {
            if let Some(b) = p.boundaries.get_mut(id) {
                let area = b.current().area();
                b.enhanced = None;
                b.edits.push(EditRecord {
                    op: EditOp::Ignored { reason: "no matching partner".into() },
                    area_before: area,
                    area_after: area,
                });
            }
        }
    })
}

fn same_face(a: &PlanarPolygon, b: &PlanarPolygon, tol: &Tolerances) -> bool {
    crate::geom::coplanar(a, b, tol) && projected_overlap(a, b, tol) > tol.snap_tol * tol.snap_tol
}
