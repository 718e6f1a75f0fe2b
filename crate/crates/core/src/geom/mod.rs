//! Planar polygon arithmetic and triangle-mesh helpers with explicit
//! tolerances. All lengths are meters, all areas square meters.

mod mesh;
mod polygon;
mod vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mesh::{box_mesh, extrude_profile, point_triangle_distance, segment_crosses_triangle, Closedness, TriMesh};
pub use polygon::{
    area, boolean_2d, boolean_2d_with, coplanar, difference_all, overlap_area, parallel, point_in_ring, project,
    project_onto, projected_overlap, ring_self_intersects, ring_signed_area, rings_cross, shared_border_length,
    triangle_area, triangulate, triangulate_rings, union_all, Basis, BoolOp, PlanarPolygon, Plane, Polygon2D, P2,
};
pub use vec::{Aabb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Max distance of a vertex from its polygon's plane (m).
    pub coplanar_tol: f64,
    /// Vertex merge distance (m).
    pub snap_tol: f64,
    /// Max angle between normals treated as parallel (rad).
    pub angle_tol: f64,
    /// Boundaries below this area are "too small" (m²).
    pub min_area: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { coplanar_tol: 1e-4, snap_tol: 1e-6, angle_tol: 1e-3, min_area: 0.01 }
    }
}

impl Tolerances {
    pub fn is_valid(&self) -> bool {
        [self.coplanar_tol, self.snap_tol, self.angle_tol, self.min_area].iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("polygon is not planar: vertex {deviation:.6} m off its plane")]
    NonPlanar { deviation: f64 },
}
