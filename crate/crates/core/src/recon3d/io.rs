//! Wavefront OBJ (vertices and triangular faces only) and XYZ point files.

use std::fmt::Write as _;
use std::path::Path;

use super::{PointCloud, TriangleMesh, Vec3};
use crate::error::{Error, Result};

pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

pub(crate) fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xyz: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("obj line {}: {e}", lineno + 1)))?;
                if xyz.len() != 3 {
                    return Err(Error::Format(format!(
                        "obj line {}: vertex needs 3 coordinates",
                        lineno + 1
                    )));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| resolve_index(t, vertices.len()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| {
                        Error::Format(format!("obj line {}: bad face index", lineno + 1))
                    })?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!(
                        "obj line {}: face needs at least 3 vertices",
                        lineno + 1
                    )));
                }
                // Fan-triangulate polygons.
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

fn resolve_index(token: &str, n_vertices: usize) -> Option<usize> {
    let raw: i64 = token.split('/').next()?.parse().ok()?;
    match raw {
        r if r > 0 => Some(r as usize - 1),
        r if r < 0 => n_vertices.checked_sub(r.unsigned_abs() as usize),
        _ => None,
    }
}

pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for p in &cloud.points {
        writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let xyz: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("xyz line {}: {e}", lineno + 1)))?;
        if xyz.len() < 3 {
            return Err(Error::Format(format!(
                "xyz line {}: expected 3 coordinates",
                lineno + 1
            )));
        }
        points.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }
    PointCloud::new(points, path.display().to_string())
}
