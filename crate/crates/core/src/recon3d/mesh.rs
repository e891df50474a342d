use std::collections::HashMap;

use super::Vec3;
use crate::error::{Error, Result};

/// Faces whose area falls below this are dropped by [`TriangleMesh::cleanup`].
const MIN_FACE_AREA: f64 = 1e-12;

/// Indexed triangle mesh. Faces wind counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    watertight: bool,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(v) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::Topology(format!("vertex {v} is not finite")));
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&ix| ix >= vertices.len()) {
                return Err(Error::Topology(format!(
                    "face {i} references a vertex outside 0..{}",
                    vertices.len()
                )));
            }
        }
        let watertight = is_closed_oriented(&faces);
        Ok(Self {
            vertices,
            faces,
            watertight,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Every directed edge is matched by exactly one opposite edge.
    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Drops zero-area faces and recomputes the watertight flag.
    pub fn cleanup(mut self) -> Self {
        let vertices = &self.vertices;
        self.faces.retain(|f| {
            let [a, b, c] = f.map(|i| vertices[i]);
            0.5 * (b - a).cross(c - a).norm() > MIN_FACE_AREA
        });
        self.watertight = is_closed_oriented(&self.faces);
        self
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                Vec3::new(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z)),
                Vec3::new(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z)),
            )
        }))
    }

    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            watertight: self.watertight,
        }
    }

    /// Axis-aligned unit cube `[0, 1]^3`, 12 outward-facing triangles.
    pub fn unit_cube() -> Self {
        let v = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let faces = vec![
            [0, 2, 3],
            [0, 3, 1],
            [4, 5, 7],
            [4, 7, 6],
            [0, 1, 5],
            [0, 5, 4],
            [2, 6, 7],
            [2, 7, 3],
            [0, 4, 6],
            [0, 6, 2],
            [1, 3, 7],
            [1, 7, 5],
        ];
        Self::new(v, faces).expect("cube indices are valid")
    }

    /// Latitude/longitude tessellated ellipsoid centred at the origin with
    /// semi-axes `radii`. `rings` latitude bands (≥ 2), `segments` longitudes
    /// (≥ 3); face count is `2 * segments * (rings - 1)`.
    pub fn ellipsoid(radii: Vec3, rings: usize, segments: usize) -> Result<Self> {
        if rings < 2 || segments < 3 {
            return Err(Error::param("ellipsoid needs rings >= 2 and segments >= 3"));
        }
        if !(radii.x > 0.0 && radii.y > 0.0 && radii.z > 0.0) {
            return Err(Error::param("ellipsoid radii must be positive"));
        }
        use std::f64::consts::PI;
        let mut vertices = vec![Vec3::new(0.0, radii.y, 0.0)];
        for r in 1..rings {
            let polar = PI * r as f64 / rings as f64;
            for s in 0..segments {
                let az = 2.0 * PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(
                    radii.x * polar.sin() * az.cos(),
                    radii.y * polar.cos(),
                    radii.z * polar.sin() * az.sin(),
                ));
            }
        }
        vertices.push(Vec3::new(0.0, -radii.y, 0.0));
        let south = vertices.len() - 1;
        let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;

        let mut faces = Vec::with_capacity(2 * segments * (rings - 1));
        for s in 0..segments {
            faces.push([0, ring(1, s + 1), ring(1, s)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b) = (ring(r, s), ring(r, s + 1));
                let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        for s in 0..segments {
            faces.push([south, ring(rings - 1, s), ring(rings - 1, s + 1)]);
        }
        Self::new(vertices, faces)
    }
}

fn is_closed_oriented(faces: &[[usize; 3]]) -> bool {
    if faces.is_empty() {
        return false;
    }
    let mut directed: HashMap<(usize, usize), u32> = HashMap::new();
    for f in faces {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return false;
        }
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    directed
        .iter()
        .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
}
