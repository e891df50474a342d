use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::error::{Error, Result};

/// Maps framed coordinates back to source units: `source = p * scale + centroid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub centroid: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        centroid: Vec3::ZERO,
        scale: 1.0,
    };
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normalization: Normalization,
    pub source: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, source: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DegenerateCloud("point cloud is empty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::DegenerateCloud("point cloud has non-finite points".into()));
        }
        Ok(Self {
            points,
            normalization: Normalization::IDENTITY,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
        sum / self.points.len() as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Centres the cloud on its centroid and scales it into the unit ball. The
/// recorded normalization composes with any earlier one, so
/// [`denormalize_point_cloud`] always recovers the original coordinates.
pub fn normalize_point_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.points.is_empty() {
        return Err(Error::DegenerateCloud("point cloud is empty".into()));
    }
    let centroid = cloud.centroid();
    let scale = cloud
        .points
        .iter()
        .map(|&p| (p - centroid).norm())
        .fold(0.0, f64::max);
    if !(scale > 1e-12) {
        return Err(Error::DegenerateCloud(
            "all points coincide; scale is undefined".into(),
        ));
    }
    let prior = cloud.normalization;
    Ok(PointCloud {
        points: cloud.points.iter().map(|&p| (p - centroid) / scale).collect(),
        normalization: Normalization {
            centroid: prior.centroid + centroid * prior.scale,
            scale: prior.scale * scale,
        },
        source: cloud.source.clone(),
    })
}

pub fn denormalize_point_cloud(cloud: &PointCloud) -> PointCloud {
    let n = cloud.normalization;
    PointCloud {
        points: cloud.points.iter().map(|&p| p * n.scale + n.centroid).collect(),
        normalization: Normalization::IDENTITY,
        source: cloud.source.clone(),
    }
}
