use std::f64::consts::PI;
use std::time::Instant;

use nutriscan_core::recon3d::{
    occupancy, sample_point_cloud_with_faces, OccupancyQuery, TriangleMesh, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn one_to_three_mesh() -> TriangleMesh {
    let v = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(2.0, 0.0, 0.0),
        Vec3::new(5.0, 0.0, 0.0),
        Vec3::new(2.0, 1.0, 0.0),
    ];
    TriangleMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap()
}

#[test]
fn face_counts_follow_area() {
    let start = Instant::now();
    let mesh = one_to_three_mesh();
    assert_eq!(mesh.face_area(1) / mesh.face_area(0), 3.0);
    let chi = ChiSquared::new(1.0).unwrap();
    for seed in 0..20 {
        let (_, faces) = sample_point_cloud_with_faces(&mesh, 10_000, seed).unwrap();
        let c0 = faces.iter().filter(|&&f| f == 0).count() as f64;
        let c1 = 10_000.0 - c0;
        let stat = (c0 - 2500.0).powi(2) / 2500.0 + (c1 - 7500.0).powi(2) / 7500.0;
        let p = 1.0 - chi.cdf(stat);
        assert!(p > 0.01, "seed {seed}: counts ({c0}, {c1}) p = {p}");
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

/// Generalised winding number by summing signed solid angles.
fn winding_number(mesh: &TriangleMesh, p: Vec3) -> f64 {
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        let [a, b, c] = mesh.triangle(f).map(|v| v - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(b.cross(c));
        let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * PI)
}

#[test]
fn occupancy_agrees_with_winding_number() {
    let start = Instant::now();
    let sphere = TriangleMesh::ellipsoid(Vec3::new(1.0, 1.0, 1.0), 11, 10).unwrap();
    assert_eq!(sphere.faces().len(), 200);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inside = 0;
    for _ in 0..1000 {
        let p = Vec3::new(
            rng.random_range(-1.2..1.2),
            rng.random_range(-1.2..1.2),
            rng.random_range(-1.2..1.2),
        );
        let w = winding_number(&sphere, p);
        let expected = u8::from(w > 0.5);
        assert_eq!(occupancy(&sphere, &OccupancyQuery::new(p)).unwrap(), expected, "{p:?} w={w}");
        inside += expected as usize;
    }
    assert!(inside > 100 && inside < 900);
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn samples_lie_on_their_faces() {
    let sphere = TriangleMesh::ellipsoid(Vec3::new(1.0, 2.0, 0.5), 8, 12).unwrap();
    let (cloud, faces) = sample_point_cloud_with_faces(&sphere, 500, 4).unwrap();
    for (p, f) in cloud.points.iter().zip(&faces) {
        let d = nutriscan_core::recon3d::point_triangle_distance(*p, sphere.triangle(*f));
        assert!(d < 1e-9);
    }
}
