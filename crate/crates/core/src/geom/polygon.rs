//! Planar polygons, their 2D working frames, and area/boolean operations.
//!
//! Every boolean runs in 2D after projecting onto a [`Basis`]. Inputs are
//! snapped to a `snap_tol` grid first so exporter jitter does not produce
//! sliver fragments.

use geo::{BooleanOps, Coord, LineString, MultiPolygon, Polygon};
use serde::{Deserialize, Serialize};

use super::{GeomError, Tolerances, Vec3};

pub type P2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub origin: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.origin).dot(self.normal)
    }

    /// Deterministic right-handed frame on this plane (`u × v = normal`).
    pub fn basis(&self) -> Basis {
        let n = self.normal.normalized().unwrap_or(Vec3::Z);
        let helper = if n.z.abs() < 0.9 { Vec3::Z } else { Vec3::X };
        let u = helper.cross(n).normalized().unwrap_or(Vec3::X);
        let v = n.cross(u);
        Basis { origin: self.origin, u, v }
    }
}

/// Orthonormal 2D frame embedded in 3D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl Basis {
    pub fn normal(&self) -> Vec3 {
        self.u.cross(self.v)
    }

    pub fn to_2d(&self, p: Vec3) -> P2 {
        let d = p - self.origin;
        [d.dot(self.u), d.dot(self.v)]
    }

    pub fn lift(&self, p: P2) -> Vec3 {
        self.origin + self.u * p[0] + self.v * p[1]
    }

    pub fn plane(&self) -> Plane {
        Plane { origin: self.origin, normal: self.normal() }
    }
}

/// Planar polygon with holes in model space.
///
/// The outer ring winds counter-clockwise around `plane.normal` (right-hand
/// rule), holes clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPolygon {
    pub plane: Plane,
    pub outer: Vec<Vec3>,
    #[serde(default)]
    pub holes: Vec<Vec<Vec3>>,
}

impl PlanarPolygon {
    pub fn points(&self) -> impl Iterator<Item = &Vec3> {
        self.outer.iter().chain(self.holes.iter().flatten())
    }

    /// Area measured in the polygon's own frame, without the planarity check.
    pub fn area(&self) -> f64 {
        project_onto(self, &self.plane.basis()).area()
    }

    /// Largest deviation of any vertex from the plane.
    pub fn planarity_deviation(&self) -> f64 {
        self.points().map(|p| self.plane.signed_distance(*p).abs()).fold(0.0, f64::max)
    }

    /// Axis-aligned rectangle helper used heavily by tests and fixtures: the
    /// polygon spans `u_range × v_range` in the plane's own basis.
    pub fn rect_in_plane(plane: Plane, u_range: (f64, f64), v_range: (f64, f64)) -> Self {
        let b = plane.basis();
        Polygon2D::rect(b, u_range.0, v_range.0, u_range.1 - u_range.0, v_range.1 - v_range.0).to_planar()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D {
    pub outer: Vec<P2>,
    #[serde(default)]
    pub holes: Vec<Vec<P2>>,
    pub basis: Basis,
}

impl Polygon2D {
    pub fn new(basis: Basis, outer: Vec<P2>, holes: Vec<Vec<P2>>) -> Self {
        let mut p = Self { outer, holes, basis };
        p.normalize_orientation();
        p
    }

    pub fn rect(basis: Basis, x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(basis, vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]], vec![])
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    pub fn to_planar(&self) -> PlanarPolygon {
        PlanarPolygon {
            plane: self.basis.plane(),
            outer: self.outer.iter().map(|p| self.basis.lift(*p)).collect(),
            holes: self.holes.iter().map(|r| r.iter().map(|p| self.basis.lift(*p)).collect()).collect(),
        }
    }

    pub fn bbox(&self) -> (P2, P2) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.outer {
            lo = [lo[0].min(p[0]), lo[1].min(p[1])];
            hi = [hi[0].max(p[0]), hi[1].max(p[1])];
        }
        (lo, hi)
    }

    /// Outer ring counter-clockwise, holes clockwise.
    pub fn normalize_orientation(&mut self) {
        if ring_signed_area(&self.outer) < 0.0 {
            self.outer.reverse();
        }
        for h in &mut self.holes {
            if ring_signed_area(h) > 0.0 {
                h.reverse();
            }
        }
    }

    fn to_geo(&self, snap: f64) -> Polygon<f64> {
        let ring = |r: &[P2]| {
            LineString::from(
                r.iter().map(|p| Coord { x: snap_value(p[0], snap), y: snap_value(p[1], snap) }).collect::<Vec<_>>(),
            )
        };
        Polygon::new(ring(&self.outer), self.holes.iter().map(|h| ring(h)).collect())
    }
}

pub(crate) fn snap_value(v: f64, snap: f64) -> f64 {
    if snap > 0.0 {
        let s = (v / snap).round() * snap;
        // Avoid -0.0 leaking into serialized output.
        if s == 0.0 {
            0.0
        } else {
            s
        }
    } else {
        v
    }
}

pub fn ring_signed_area(ring: &[P2]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

/// Shoelace area of the outer ring minus the hole areas, clamped at zero.
pub fn area(p: &Polygon2D) -> f64 {
    let outer = ring_signed_area(&p.outer).abs();
    let holes: f64 = p.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
    (outer - holes).max(0.0)
}

/// Orthogonal projection of `poly` onto `basis`; ring orientation is
/// normalized in the target frame, so polygons with opposite normals can be
/// combined.
pub fn project_onto(poly: &PlanarPolygon, basis: &Basis) -> Polygon2D {
    Polygon2D::new(
        *basis,
        poly.outer.iter().map(|p| basis.to_2d(*p)).collect(),
        poly.holes.iter().map(|r| r.iter().map(|p| basis.to_2d(*p)).collect()).collect(),
    )
}

/// Projects a polygon into its own plane frame.
pub fn project(poly: &PlanarPolygon, tol: &Tolerances) -> Result<Polygon2D, GeomError> {
    let deviation = poly.planarity_deviation();
    if !(deviation <= tol.coplanar_tol) {
        return Err(GeomError::NonPlanar { deviation });
    }
    let basis = poly.plane.basis();
    Ok(Polygon2D {
        outer: poly.outer.iter().map(|p| basis.to_2d(*p)).collect(),
        holes: poly.holes.iter().map(|r| r.iter().map(|p| basis.to_2d(*p)).collect()).collect(),
        basis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoolOp {
    Union,
    Intersection,
    Difference,
}

/// Boolean operation on two polygons sharing `a`'s basis, with the default
/// snap tolerance.
pub fn boolean_2d(a: &Polygon2D, b: &Polygon2D, op: BoolOp) -> Vec<Polygon2D> {
    boolean_2d_with(a, b, op, Tolerances::default().snap_tol)
}

pub fn boolean_2d_with(a: &Polygon2D, b: &Polygon2D, op: BoolOp, snap: f64) -> Vec<Polygon2D> {
    let ga = a.to_geo(snap);
    let gb = b.to_geo(snap);
    let out = match op {
        BoolOp::Union => ga.union(&gb),
        BoolOp::Intersection => ga.intersection(&gb),
        BoolOp::Difference => ga.difference(&gb),
    };
    from_geo(out, a.basis, snap)
}

/// Union of any number of polygons in one basis.
pub fn union_all(polys: &[Polygon2D], snap: f64) -> Vec<Polygon2D> {
    let Some(first) = polys.first() else {
        return Vec::new();
    };
    let mut acc = MultiPolygon::new(vec![first.to_geo(snap)]);
    for p in &polys[1..] {
        acc = acc.union(&MultiPolygon::new(vec![p.to_geo(snap)]));
    }
    from_geo(acc, first.basis, snap)
}

/// `a` minus the union of `cutters`.
pub fn difference_all(a: &Polygon2D, cutters: &[Polygon2D], snap: f64) -> Vec<Polygon2D> {
    if cutters.is_empty() {
        return vec![a.clone()];
    }
    let cut = MultiPolygon::new(cutters.iter().map(|c| c.to_geo(snap)).collect());
    // Union the cutters first; overlapping cutters in one MultiPolygon are
    // not a valid geo input.
    let cut = cut
        .iter()
        .skip(1)
        .fold(MultiPolygon::new(vec![cut.0[0].clone()]), |acc, p| acc.union(&MultiPolygon::new(vec![p.clone()])));
    from_geo(MultiPolygon::new(vec![a.to_geo(snap)]).difference(&cut), a.basis, snap)
}

fn from_geo(mp: MultiPolygon<f64>, basis: Basis, snap: f64) -> Vec<Polygon2D> {
    let min_ring = snap * snap;
    mp.0.into_iter()
        .filter_map(|p| {
            let (ext, ints) = p.into_inner();
            let outer = clean_ring(&ext, snap);
            if ring_signed_area(&outer).abs() <= min_ring {
                return None;
            }
            let holes =
                ints.iter().map(|r| clean_ring(r, snap)).filter(|r| ring_signed_area(r).abs() > min_ring).collect();
            Some(Polygon2D::new(basis, outer, holes))
        })
        .collect()
}

/// Drops the closing duplicate, coincident neighbors and collinear vertices.
fn clean_ring(ls: &LineString<f64>, snap: f64) -> Vec<P2> {
    // the overlay engine works on a fixed-point grid; put its output back on
    // the snap grid the inputs were snapped to
    let mut pts: Vec<P2> = ls.0.iter().map(|c| [snap_value(c.x, snap), snap_value(c.y, snap)]).collect();
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    simplify_ring(pts, snap)
}

pub(crate) fn simplify_ring(mut pts: Vec<P2>, snap: f64) -> Vec<P2> {
    let eps = snap.max(1e-12);
    loop {
        let n = pts.len();
        if n < 3 {
            return pts;
        }
        let mut removed = false;
        for i in 0..n {
            let prev = pts[(i + n - 1) % n];
            let cur = pts[i];
            let next = pts[(i + 1) % n];
            let d = dist2(prev, cur);
            let e = [next[0] - prev[0], next[1] - prev[1]];
            let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
            let cross = ((cur[0] - prev[0]) * e[1] - (cur[1] - prev[1]) * e[0]).abs();
            if d <= eps || (len > 0.0 && cross / len <= eps && between(prev, cur, next)) {
                pts.remove(i);
                removed = true;
                break;
            }
        }
        if !removed {
            return pts;
        }
    }
}

fn between(a: P2, p: P2, b: P2) -> bool {
    let t = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    t >= 0.0 && t <= dist2(a, b)
}

fn dist2(a: P2, b: P2) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// True when the normals are parallel within `angle_tol`, either direction.
pub fn parallel(a: Vec3, b: Vec3, angle_tol: f64) -> bool {
    match (a.normalized(), b.normalized()) {
        (Some(a), Some(b)) => a.dot(b).abs() >= angle_tol.cos(),
        _ => false,
    }
}

/// Area of the intersection of two parallel polygons after projecting `b`
/// onto `a`'s plane, regardless of the distance between the planes.
pub fn projected_overlap(a: &PlanarPolygon, b: &PlanarPolygon, tol: &Tolerances) -> f64 {
    if !parallel(a.plane.normal, b.plane.normal, tol.angle_tol) {
        return 0.0;
    }
    let basis = a.plane.basis();
    let pa = project_onto(a, &basis);
    let pb = project_onto(b, &basis);
    boolean_2d_with(&pa, &pb, BoolOp::Intersection, tol.snap_tol).iter().map(area).sum()
}

/// Intersection area of two coplanar polygons; 0 when the planes differ by
/// more than `coplanar_tol` in offset or `angle_tol` in direction.
pub fn overlap_area(a: &PlanarPolygon, b: &PlanarPolygon, tol: &Tolerances) -> f64 {
    if !coplanar(a, b, tol) {
        return 0.0;
    }
    projected_overlap(a, b, tol)
}

pub fn coplanar(a: &PlanarPolygon, b: &PlanarPolygon, tol: &Tolerances) -> bool {
    parallel(a.plane.normal, b.plane.normal, tol.angle_tol)
        && b.points().all(|p| a.plane.signed_distance(*p).abs() <= tol.coplanar_tol)
}

/// Length of the common border of two polygons in the same basis: sum of
/// collinear overlaps between their edges.
pub fn shared_border_length(a: &Polygon2D, b: &Polygon2D, tol: f64) -> f64 {
    let edges = |p: &Polygon2D| -> Vec<(P2, P2)> {
        std::iter::once(&p.outer)
            .chain(p.holes.iter())
            .flat_map(|r| (0..r.len()).map(move |i| (r[i], r[(i + 1) % r.len()])))
            .collect()
    };
    let eb = edges(b);
    let mut total = 0.0;
    for (p0, p1) in edges(a) {
        let d = [p1[0] - p0[0], p1[1] - p0[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if len <= tol {
            continue;
        }
        let dir = [d[0] / len, d[1] / len];
        let off = |q: P2| (q[0] - p0[0]) * dir[1] - (q[1] - p0[1]) * dir[0];
        let along = |q: P2| (q[0] - p0[0]) * dir[0] + (q[1] - p0[1]) * dir[1];
        for &(q0, q1) in &eb {
            if off(q0).abs() > tol || off(q1).abs() > tol {
                continue;
            }
            let (s0, s1) = (along(q0), along(q1));
            let lo = s0.min(s1).max(0.0);
            let hi = s0.max(s1).min(len);
            if hi > lo {
                total += hi - lo;
            }
        }
    }
    total
}

/// Ear-clipping triangulation of a ring set; returns counter-clockwise index
/// triples into `outer ++ holes`.
pub fn triangulate_rings(outer: &[P2], holes: &[Vec<P2>]) -> Vec<[usize; 3]> {
    let mut flat = Vec::with_capacity(2 * (outer.len() + holes.iter().map(Vec::len).sum::<usize>()));
    let mut pts: Vec<P2> = Vec::new();
    let mut hole_idx = Vec::new();
    for p in outer {
        flat.extend_from_slice(p);
        pts.push(*p);
    }
    for h in holes {
        hole_idx.push(pts.len());
        for p in h {
            flat.extend_from_slice(p);
            pts.push(*p);
        }
    }
    let Ok(idx) = earcutr::earcut(&flat, &hole_idx, 2) else {
        return Vec::new();
    };
    let tris: Vec<[usize; 3]> = idx.chunks_exact(3).map(|t| [t[0], t[1], t[2]]).collect();
    split_t_junctions(tris, &pts)
        .into_iter()
        .map(|t| {
            let (a, b, c) = (pts[t[0]], pts[t[1]], pts[t[2]]);
            let s = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            if s < 0.0 {
                [t[0], t[2], t[1]]
            } else {
                [t[0], t[1], t[2]]
            }
        })
        .collect()
}

/// Earcut drops collinear ring vertices, leaving them in the middle of a
/// triangle edge. Splitting those triangles keeps extruded meshes closed.
fn split_t_junctions(tris: Vec<[usize; 3]>, pts: &[P2]) -> Vec<[usize; 3]> {
    let scale = pts.iter().fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs())).max(1.0);
    let eps = 1e-12 * scale;
    let on_edge = |a: P2, b: P2, p: P2| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        if len == 0.0 {
            return false;
        }
        let cross = (dx * (p[1] - a[1]) - dy * (p[0] - a[0])) / len;
        let t = (dx * (p[0] - a[0]) + dy * (p[1] - a[1])) / (len * len);
        cross.abs() <= eps && t * len > eps && (1.0 - t) * len > eps
    };
    let mut work = tris;
    let mut out = Vec::with_capacity(work.len());
    while let Some(t) = work.pop() {
        let split = (0..3).find_map(|k| {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            (0..pts.len())
                .filter(|&i| !t.contains(&i) && pts[i] != pts[a] && pts[i] != pts[b])
                .find(|&i| on_edge(pts[a], pts[b], pts[i]))
                .map(|i| (k, i))
        });
        match split {
            Some((k, i)) => {
                let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                work.push([a, i, c]);
                work.push([i, b, c]);
            }
            None => out.push(t),
        }
    }
    out
}

/// Triangles covering the polygon, lifted to 3D and wound around the basis
/// normal.
pub fn triangulate(poly: &Polygon2D) -> Vec<[Vec3; 3]> {
    let pts: Vec<P2> = poly.outer.iter().chain(poly.holes.iter().flatten()).copied().collect();
    triangulate_rings(&poly.outer, &poly.holes).into_iter().map(|t| t.map(|i| poly.basis.lift(pts[i]))).collect()
}

pub fn triangle_area(t: &[Vec3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(t[2] - t[0]).norm()
}

/// Even-odd point-in-ring test.
pub fn point_in_ring(p: P2, ring: &[P2]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segments_cross(a0: P2, a1: P2, b0: P2, b1: P2, eps: f64) -> bool {
    let orient = |p: P2, q: P2, r: P2| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) && ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps))
}

/// Proper self-intersection between non-adjacent edges of one ring.
pub fn ring_self_intersects(ring: &[P2], eps: f64) -> bool {
    let n = ring.len();
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n], eps) {
                return true;
            }
        }
    }
    false
}

pub fn rings_cross(a: &[P2], b: &[P2], eps: f64) -> bool {
    (0..a.len())
        .any(|i| (0..b.len()).any(|j| segments_cross(a[i], a[(i + 1) % a.len()], b[j], b[(j + 1) % b.len()], eps)))
}
