use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PointCloud, TriangleMesh, Vec3};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_COUNT: usize = 2048;

/// Uniform surface sample: faces drawn with probability proportional to
/// area, then a uniform point inside the chosen face.
pub fn sample_point_cloud(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_point_cloud_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Like [`sample_point_cloud`] but also returns the face each point came from.
pub fn sample_point_cloud_with_faces(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Err(Error::param("sample count must be at least 1"));
    }
    if mesh.faces().is_empty() {
        return Err(Error::Topology("cannot sample a mesh without faces".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Topology("mesh has zero surface area".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let face = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let [a, b, c] = mesh.triangle(face);
        points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
        faces.push(face);
    }
    let cloud = PointCloud::new(points, format!("mesh:{}f:seed{seed}", mesh.faces().len()))?;
    Ok((cloud, faces))
}

/// Barycentric coordinates of `p` with respect to triangle `abc`.
pub fn barycentric(p: Vec3, [a, b, c]: [Vec3; 3]) -> [f64; 3] {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(v0);
    let d01 = v0.dot(v1);
    let d11 = v1.dot(v1);
    let d20 = v2.dot(v0);
    let d21 = v2.dot(v1);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    [1.0 - v - w, v, w]
}
