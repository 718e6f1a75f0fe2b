//! Snapshot-level sanity checks. Violations are data; nothing here fails.

use serde::{Deserialize, Serialize};

use crate::geom::{
    point_in_ring, ring_self_intersects, ring_signed_area, rings_cross, PlanarPolygon, Tolerances, TriMesh, Vec3,
};
use crate::model::{EditOp, Id, ModelSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: Id,
    pub rule: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, entity: &Id, rule: &str, detail: impl Into<String>) {
        self.violations.push(Violation { entity: entity.clone(), rule: rule.to_string(), detail: detail.into() });
    }
}

pub fn validate_snapshot(snapshot: &ModelSnapshot) -> ValidationReport {
    validate_snapshot_with(snapshot, &Tolerances::default())
}

pub fn validate_snapshot_with(snapshot: &ModelSnapshot, tol: &Tolerances) -> ValidationReport {
    let mut r = ValidationReport::default();

    for (key, e) in snapshot.elements() {
        check_id(&mut r, key, &e.id);
        check_solid(&mut r, key, &e.solid);
        if e.layers.iter().any(|l| !(l.thickness > 0.0)) {
            r.push(key, "non-positive layer thickness", "");
        }
        if !is_unit(e.reference_normal) {
            r.push(key, "reference normal not unit", "");
        }
    }

    for (key, s) in snapshot.spaces() {
        check_id(&mut r, key, &s.id);
        check_solid(&mut r, key, &s.volume);
    }

    for (key, b) in snapshot.boundaries() {
        check_id(&mut r, key, &b.id);
        if snapshot.space(&b.space).is_none() {
            r.push(key, "dangling space reference", b.space.as_str());
        }
        if snapshot.element(&b.element).is_none() {
            r.push(key, "dangling element reference", b.element.as_str());
        }
        if !is_unit(b.normal_into_element) {
            r.push(key, "boundary normal not unit", "");
        }
        check_polygon(&mut r, key, "raw", &b.raw, tol);
        if let Some(enh) = &b.enhanced {
            check_polygon(&mut r, key, "enhanced", enh, tol);
        }

        for (i, e) in b.edits.iter().enumerate() {
            if !e.is_consistent(1e-9) {
                r.push(key, "inconsistent edit record", format!("edit {i}"));
            }
        }
        match (&b.enhanced, b.edits.first(), b.edits.last()) {
            (Some(enh), Some(first), Some(last)) => {
                if !rel_eq(first.area_before, b.raw.area(), 1e-9) {
                    r.push(key, "edit log does not start at raw area", "");
                }
                if !rel_eq(last.area_after, enh.area(), 1e-9) {
                    r.push(key, "edit log does not end at enhanced area", "");
                }
            }
            (None, _, Some(last)) if !matches!(last.op, EditOp::Ignored { .. }) => {
                r.push(key, "edits without enhanced geometry", "");
            }
            _ => {}
        }
    }

    for entry in snapshot.ledger() {
        for id in entry.resolution.referenced_ids() {
            let known =
                snapshot.element(id).is_some() || snapshot.space(id).is_some() || snapshot.boundary(id).is_some();
            if !known {
                r.push(id, "dangling ledger reference", entry.conflict.clone());
            }
        }
    }
    for id in snapshot.overrides().keys() {
        if snapshot.space(id).is_none() {
            r.push(id, "dangling override", "");
        }
    }
    r
}

fn rel_eq(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

fn is_unit(v: Vec3) -> bool {
    (v.norm() - 1.0).abs() <= 1e-9
}

fn check_id(r: &mut ValidationReport, key: &Id, id: &Id) {
    if id.as_str().is_empty() {
        r.push(key, "empty id", "");
    } else if key != id {
        r.push(key, "id mismatch", id.as_str());
    }
}

/// One violation per mesh at most, the most fundamental one.
fn check_solid(r: &mut ValidationReport, key: &Id, mesh: &TriMesh) {
    let c = mesh.closedness();
    if mesh.triangles.is_empty() {
        r.push(key, "empty solid", "");
    } else if c.out_of_range > 0 {
        r.push(key, "triangle index out of range", "");
    } else if c.non_manifold_edges > 0 {
        r.push(key, "non-manifold solid", format!("{} edges", c.non_manifold_edges));
    } else if c.boundary_edges > 0 {
        r.push(key, "open solid", format!("{} edges", c.boundary_edges));
    } else if c.inconsistent_edges > 0 {
        r.push(key, "inconsistent winding", "");
    } else if !(mesh.signed_volume() > 0.0) {
        r.push(key, "non-positive volume", "");
    }
}

fn check_polygon(r: &mut ValidationReport, key: &Id, which: &str, poly: &PlanarPolygon, tol: &Tolerances) {
    if !is_unit(poly.plane.normal) {
        r.push(key, "plane normal not unit", which);
        return;
    }
    if poly.outer.len() < 3 || poly.holes.iter().any(|h| h.len() < 3) {
        r.push(key, "degenerate ring", which);
        return;
    }
    if poly.planarity_deviation() > tol.coplanar_tol {
        r.push(key, "vertex off plane", which);
    }
    let basis = poly.plane.basis();
    let to2 = |ring: &[Vec3]| ring.iter().map(|p| basis.to_2d(*p)).collect::<Vec<_>>();
    let outer = to2(&poly.outer);
    let holes: Vec<_> = poly.holes.iter().map(|h| to2(h)).collect();
    let eps = tol.snap_tol * tol.snap_tol;
    if ring_signed_area(&outer) <= 0.0 {
        r.push(key, "outer ring orientation", which);
    }
    if holes.iter().any(|h| ring_signed_area(h) >= 0.0) {
        r.push(key, "hole orientation", which);
    }
    if ring_self_intersects(&outer, eps) || holes.iter().any(|h| ring_self_intersects(h, eps)) {
        r.push(key, "self-intersecting ring", which);
    }
    for (i, h) in holes.iter().enumerate() {
        let inside = h.iter().all(|p| point_in_ring(*p, &outer) && !on_ring(*p, &outer, tol.snap_tol));
        if !inside || rings_cross(h, &outer, eps) {
            r.push(key, "hole outside outer ring", format!("{which} hole {i}"));
        }
        for h2 in &holes[i + 1..] {
            if rings_cross(h, h2, eps) || point_in_ring(h2[0], h) || point_in_ring(h[0], h2) {
                r.push(key, "overlapping holes", which);
            }
        }
    }
}

fn on_ring(p: [f64; 2], ring: &[[f64; 2]], tol: f64) -> bool {
    (0..ring.len()).any(|i| {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        if len2 == 0.0 {
            return false;
        }
        let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
        let q = [a[0] + t * d[0], a[1] + t * d[1]];
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= tol
    })
}
