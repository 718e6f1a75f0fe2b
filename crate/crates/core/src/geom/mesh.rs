//! Closed triangle meshes: solids of elements and volumes of spaces.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::polygon::{
    parallel, project_onto, triangle_area, triangulate_rings, union_all, PlanarPolygon, Plane, Polygon2D, P2,
};
use super::{Aabb, Tolerances, Vec3};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Edge-use statistics of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Closedness {
    /// Undirected edges used by exactly one triangle.
    pub boundary_edges: usize,
    /// Undirected edges used by three or more triangles.
    pub non_manifold_edges: usize,
    /// Edges used twice in the same direction.
    pub inconsistent_edges: usize,
    pub out_of_range: usize,
}

impl Closedness {
    pub fn is_closed(&self) -> bool {
        *self == Closedness::default()
    }
}

impl TriMesh {
    pub fn triangle(&self, i: usize) -> Option<[Vec3; 3]> {
        let t = self.triangles.get(i)?;
        let v = |k: u32| self.vertices.get(k as usize).copied();
        Some([v(t[0])?, v(t[1])?, v(t[2])?])
    }

    pub fn iter_triangles(&self) -> impl Iterator<Item = [Vec3; 3]> + '_ {
        (0..self.triangles.len()).filter_map(|i| self.triangle(i))
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn closedness(&self) -> Closedness {
        let mut c = Closedness::default();
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        let n = self.vertices.len() as u32;
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                c.out_of_range += 1;
                continue;
            }
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        let mut undirected: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        for (&(a, b), &k) in &directed {
            let e = undirected.entry((a.min(b), a.max(b))).or_default();
            if a < b {
                e.0 += k;
            } else {
                e.1 += k;
            }
        }
        for &(fw, bw) in undirected.values() {
            match fw + bw {
                1 => c.boundary_edges += 1,
                2 if fw == 1 => {}
                2 => c.inconsistent_edges += 1,
                _ => c.non_manifold_edges += 1,
            }
        }
        c
    }

    /// Signed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.iter_triangles().map(|[a, b, c]| a.dot(b.cross(c)) / 6.0).sum()
    }

    pub fn surface_area(&self) -> f64 {
        self.iter_triangles().map(|t| triangle_area(&t)).sum()
    }

    /// Volume centroid of a closed mesh.
    pub fn centroid(&self) -> Option<Vec3> {
        let mut acc = Vec3::ZERO;
        let mut vol = 0.0;
        for [a, b, c] in self.iter_triangles() {
            let v = a.dot(b.cross(c)) / 6.0;
            acc = acc + (a + b + c) * (v / 4.0);
            vol += v;
        }
        (vol.abs() > 1e-12).then(|| acc * (1.0 / vol))
    }

    pub fn flip(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }

    /// Merges vertices closer than `tol` and drops triangles that collapse.
    pub fn weld(&mut self, tol: f64) {
        let key = |p: Vec3| {
            let q = |v: f64| (v / tol).round() as i64;
            (q(p.x), q(p.y), q(p.z))
        };
        let mut map: HashMap<(i64, i64, i64), u32> = HashMap::new();
        let mut verts = Vec::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        for p in &self.vertices {
            let idx = *map.entry(key(*p)).or_insert_with(|| {
                verts.push(*p);
                (verts.len() - 1) as u32
            });
            remap.push(idx);
        }
        self.vertices = verts;
        self.triangles = self
            .triangles
            .iter()
            .filter_map(|t| {
                let t = t.map(|i| remap.get(i as usize).copied().unwrap_or(u32::MAX));
                (t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && !t.contains(&u32::MAX)).then_some(t)
            })
            .collect();
    }

    /// Groups triangles into maximal planar facets and returns each facet as
    /// a polygon whose plane normal points out of the solid.
    pub fn facets(&self, tol: &Tolerances) -> Vec<PlanarPolygon> {
        struct Group {
            plane: Plane,
            tris: Vec<[Vec3; 3]>,
        }
        let mut groups: Vec<Group> = Vec::new();
        for t in self.iter_triangles() {
            let Some(n) = (t[1] - t[0]).cross(t[2] - t[0]).normalized() else {
                continue;
            };
            let found = groups.iter_mut().find(|g| {
                g.plane.normal.dot(n) > 0.0
                    && parallel(g.plane.normal, n, tol.angle_tol)
                    && t.iter().all(|p| g.plane.signed_distance(*p).abs() <= tol.coplanar_tol)
            });
            match found {
                Some(g) => g.tris.push(t),
                None => groups.push(Group { plane: Plane { origin: t[0], normal: n }, tris: vec![t] }),
            }
        }
        let mut out = Vec::new();
        for g in groups {
            let basis = g.plane.basis();
            let tris: Vec<Polygon2D> = g
                .tris
                .iter()
                .map(|t| project_onto(&PlanarPolygon { plane: g.plane, outer: t.to_vec(), holes: vec![] }, &basis))
                .collect();
            out.extend(union_all(&tris, tol.snap_tol).iter().map(Polygon2D::to_planar));
        }
        out
    }

    /// Shortest distance from `p` to the mesh surface.
    pub fn distance_to_surface(&self, p: Vec3) -> f64 {
        self.iter_triangles().map(|t| point_triangle_distance(p, &t)).fold(f64::INFINITY, f64::min)
    }

    /// Generalized winding number of `p` (1 inside, 0 outside a closed mesh).
    pub fn winding_number(&self, p: Vec3) -> f64 {
        let mut total = 0.0;
        for [a, b, c] in self.iter_triangles() {
            let (a, b, c) = (a - p, b - p, c - p);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(b.cross(c));
            let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Inside and farther than `tol` from the surface.
    pub fn strictly_contains(&self, p: Vec3, tol: f64) -> bool {
        if let Some(b) = self.aabb() {
            if p.x < b.min.x || p.y < b.min.y || p.z < b.min.z || p.x > b.max.x || p.y > b.max.y || p.z > b.max.z {
                return false;
            }
        }
        self.distance_to_surface(p) > tol && self.winding_number(p) > 0.5
    }

    /// Extent of the mesh along `dir`.
    pub fn extent_along(&self, dir: Vec3) -> f64 {
        let Some(d) = dir.normalized() else {
            return 0.0;
        };
        let (lo, hi) = self
            .vertices
            .iter()
            .map(|v| v.dot(d))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }
}

pub fn point_triangle_distance(p: Vec3, t: &[Vec3; 3]) -> f64 {
    closest_point_on_triangle(p, t).distance(p)
}

// Ericson, Real-Time Collision Detection, 5.1.5.
fn closest_point_on_triangle(p: Vec3, t: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Segment passes through the interior of the triangle with its endpoints
/// strictly on opposite sides of the triangle's plane.
pub fn segment_crosses_triangle(p0: Vec3, p1: Vec3, t: &[Vec3; 3], tol: f64) -> bool {
    let Some(n) = (t[1] - t[0]).cross(t[2] - t[0]).normalized() else {
        return false;
    };
    let d0 = (p0 - t[0]).dot(n);
    let d1 = (p1 - t[0]).dot(n);
    if !((d0 > tol && d1 < -tol) || (d0 < -tol && d1 > tol)) {
        return false;
    }
    let x = p0 + (p1 - p0) * (d0 / (d0 - d1));
    let inside_edge = |a: Vec3, b: Vec3| (b - a).cross(x - a).dot(n) > tol * (b - a).norm();
    inside_edge(t[0], t[1]) && inside_edge(t[1], t[2]) && inside_edge(t[2], t[0])
}

/// Extrudes a planar profile (outer ring plus holes, in `frame` coordinates
/// mapped by `to_world`) along `dir` into a closed, outward-wound mesh.
pub fn extrude_profile(outer: &[P2], holes: &[Vec<P2>], to_world: impl Fn(Vec3) -> Vec3, dir: Vec3) -> TriMesh {
    let mut outer = outer.to_vec();
    if super::polygon::ring_signed_area(&outer) < 0.0 {
        outer.reverse();
    }
    let holes: Vec<Vec<P2>> = holes
        .iter()
        .map(|h| {
            let mut h = h.clone();
            if super::polygon::ring_signed_area(&h) > 0.0 {
                h.reverse();
            }
            h
        })
        .collect();
    let rings: Vec<&[P2]> = std::iter::once(outer.as_slice()).chain(holes.iter().map(Vec::as_slice)).collect();
    let n: usize = rings.iter().map(|r| r.len()).sum();
    let mut mesh = TriMesh::default();
    for r in &rings {
        for p in r.iter() {
            mesh.vertices.push(to_world(Vec3::new(p[0], p[1], 0.0)));
        }
    }
    for r in &rings {
        for p in r.iter() {
            mesh.vertices.push(to_world(Vec3::new(p[0], p[1], 0.0) + dir));
        }
    }
    for t in triangulate_rings(&outer, &holes) {
        let [a, b, c] = t.map(|i| i as u32);
        mesh.triangles.push([a, c, b]);
        mesh.triangles.push([a + n as u32, b + n as u32, c + n as u32]);
    }
    let mut start = 0usize;
    for r in &rings {
        let m = r.len();
        for i in 0..m {
            let b0 = (start + i) as u32;
            let b1 = (start + (i + 1) % m) as u32;
            let t0 = b0 + n as u32;
            let t1 = b1 + n as u32;
            mesh.triangles.push([b0, b1, t1]);
            mesh.triangles.push([b0, t1, t0]);
        }
        start += m;
    }
    if mesh.signed_volume() < 0.0 {
        mesh.flip();
    }
    mesh
}

/// Axis-aligned box mesh.
pub fn box_mesh(min: Vec3, max: Vec3) -> TriMesh {
    let d = max - min;
    extrude_profile(&[[0.0, 0.0], [d.x, 0.0], [d.x, d.y], [0.0, d.y]], &[], |p| min + p, Vec3::new(0.0, 0.0, d.z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_is_closed_with_expected_measures() {
        let m = box_mesh(Vec3::ZERO, Vec3::new(4.0, 3.0, 2.5));
        assert!(m.closedness().is_closed());
        assert!((m.signed_volume() - 30.0).abs() < 1e-9);
        assert!((m.surface_area() - 59.0).abs() < 1e-9);
        let f = m.facets(&Tolerances::default());
        assert_eq!(f.len(), 6);
        let c = m.centroid().unwrap();
        assert!(c.distance(Vec3::new(2.0, 1.5, 1.25)) < 1e-9);
        for facet in &f {
            // outward normals: centroid lies behind every facet
            assert!(facet.plane.signed_distance(c) < 0.0);
        }
    }

    #[test]
    fn extrusion_with_hole_is_closed() {
        let outer = [[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [0.0, 3.0]];
        let hole = vec![vec![[1.0, 1.0], [2.0, 1.0], [2.0, 2.0], [1.0, 2.0]]];
        let m = extrude_profile(&outer, &hole, |p| p, Vec3::new(0.0, 0.0, 0.5));
        assert!(m.closedness().is_closed());
        assert!((m.signed_volume() - 5.5).abs() < 1e-9);
        // the hole is outside the solid
        assert!(!m.strictly_contains(Vec3::new(1.5, 1.5, 0.25), 1e-6));
        assert!(m.strictly_contains(Vec3::new(3.0, 2.5, 0.25), 1e-6));
    }

    #[test]
    fn non_manifold_edge_detected() {
        let mut m = box_mesh(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
        let t = m.triangles[0];
        let extra = m.vertices.len() as u32;
        m.vertices.push(Vec3::new(5.0, 5.0, 5.0));
        m.triangles.push([t[0], t[1], extra]);
        let c = m.closedness();
        assert_eq!(c.non_manifold_edges, 1);
    }

    #[test]
    fn containment_surface_is_not_strict() {
        let m = box_mesh(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
        assert!(!m.strictly_contains(Vec3::new(0.5, 0.5, 1.0), 1e-6));
        assert!(!m.strictly_contains(Vec3::new(0.5, 0.5, 2.0), 1e-6));
        assert!(m.strictly_contains(Vec3::new(0.5, 0.5, 0.5), 1e-6));
    }

    #[test]
    fn segment_crossing() {
        let t = [Vec3::ZERO, Vec3::X * 2.0, Vec3::Y * 2.0];
        assert!(segment_crosses_triangle(Vec3::new(0.5, 0.5, -1.0), Vec3::new(0.5, 0.5, 1.0), &t, 1e-9));
        assert!(!segment_crosses_triangle(Vec3::new(0.5, 0.5, 0.0), Vec3::new(0.5, 0.5, 1.0), &t, 1e-9));
        assert!(!segment_crosses_triangle(Vec3::new(3.0, 3.0, -1.0), Vec3::new(3.0, 3.0, 1.0), &t, 1e-9));
    }
}
