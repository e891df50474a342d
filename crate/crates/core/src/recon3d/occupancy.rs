use serde::{Deserialize, Serialize};

use super::{TriangleMesh, Vec3};
use crate::error::{Error, Result};

/// Points this close to the surface count as inside.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Barycentric margin under which a ray hit is treated as grazing an edge.
const EDGE_MARGIN: f64 = 1e-9;

/// Fixed, mutually skewed ray directions; later ones are only used when an
/// earlier ray grazes an edge or vertex.
const RAY_DIRECTIONS: [[f64; 3]; 6] = [
    [0.391_843_4, 0.175_393_1, 0.903_176_2],
    [-0.621_004_7, 0.713_550_3, 0.324_218_8],
    [0.112_355_9, -0.881_390_6, 0.458_843_5],
    [-0.533_914_1, -0.402_780_3, -0.743_501_9],
    [0.845_217_6, 0.461_182_9, -0.270_021_4],
    [-0.087_403_3, 0.288_715_2, -0.953_418_9],
];

/// A 3D query point. Its orthogonal image projection is `(x, y)` and its depth
/// along the camera ray is `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyQuery {
    pub position: Vec3,
}

impl OccupancyQuery {
    pub fn new(position: Vec3) -> Self {
        Self { position }
    }

    pub fn projection(&self) -> (f64, f64) {
        (self.position.x, self.position.y)
    }

    pub fn depth(&self) -> f64 {
        self.position.z
    }
}

/// 1 if the query lies inside (or on) the closed surface, else 0.
pub fn occupancy(mesh: &TriangleMesh, query: &OccupancyQuery) -> Result<u8> {
    if !mesh.is_watertight() {
        return Err(Error::Topology(
            "occupancy needs a watertight mesh".into(),
        ));
    }
    let p = query.position;
    if !p.is_finite() {
        return Err(Error::param("query position must be finite"));
    }
    if let Some((lo, hi)) = mesh.bounding_box() {
        let t = BOUNDARY_TOLERANCE;
        if p.x < lo.x - t || p.y < lo.y - t || p.z < lo.z - t || p.x > hi.x + t || p.y > hi.y + t || p.z > hi.z + t {
            return Ok(0);
        }
    }
    for f in 0..mesh.faces().len() {
        if point_triangle_distance(p, mesh.triangle(f)) <= BOUNDARY_TOLERANCE {
            return Ok(1);
        }
    }
    let mut last = 0;
    for dir in RAY_DIRECTIONS {
        let dir = Vec3::new(dir[0], dir[1], dir[2]).normalized();
        match crossing_parity(mesh, p, dir) {
            Some(odd) => return Ok(odd as u8),
            None => last = ray_crossings_lenient(mesh, p, dir) % 2,
        }
    }
    Ok(last as u8)
}

/// Parity of surface crossings along the ray, `None` when the ray grazes an
/// edge or vertex and the count is ambiguous.
fn crossing_parity(mesh: &TriangleMesh, origin: Vec3, dir: Vec3) -> Option<bool> {
    let mut crossings = 0usize;
    for f in 0..mesh.faces().len() {
        match ray_triangle(origin, dir, mesh.triangle(f)) {
            RayHit::Miss => {}
            RayHit::Hit => crossings += 1,
            RayHit::Grazing => return None,
        }
    }
    Some(crossings % 2 == 1)
}

fn ray_crossings_lenient(mesh: &TriangleMesh, origin: Vec3, dir: Vec3) -> usize {
    (0..mesh.faces().len())
        .filter(|&f| !matches!(ray_triangle(origin, dir, mesh.triangle(f)), RayHit::Miss))
        .count()
}

enum RayHit {
    Miss,
    Hit,
    Grazing,
}

// Moller-Trumbore with a grazing band around the triangle boundary.
fn ray_triangle(origin: Vec3, dir: Vec3, [a, b, c]: [Vec3; 3]) -> RayHit {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    let scale = e1.norm() * e2.norm();
    if det.abs() <= 1e-12 * scale {
        return RayHit::Miss;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(pvec) * inv;
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv;
    let t = e2.dot(qvec) * inv;
    if t <= 0.0 || u < -EDGE_MARGIN || v < -EDGE_MARGIN || u + v > 1.0 + EDGE_MARGIN {
        return RayHit::Miss;
    }
    if u < EDGE_MARGIN || v < EDGE_MARGIN || u + v > 1.0 - EDGE_MARGIN {
        return RayHit::Grazing;
    }
    RayHit::Hit
}

/// Euclidean distance from `p` to the closed triangle.
pub fn point_triangle_distance(p: Vec3, [a, b, c]: [Vec3; 3]) -> f64 {
    // Closest-point region walk (Ericson, Real-Time Collision Detection 5.1.5).
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}
