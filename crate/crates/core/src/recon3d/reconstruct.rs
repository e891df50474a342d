use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{read_obj, TriangleMesh, Vec3};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RgbImage};

/// Single-image body reconstruction provider.
pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &str;

    /// Stable identifier of the provider build and its parameters.
    fn digest(&self) -> String;

    /// Reconstructs a closed body mesh from a masked, tight-cropped
    /// single-subject image (background black).
    fn reconstruct(&self, image: &RgbImage) -> Result<TriangleMesh>;
}

/// Runs a provider and rejects output that is not a closed, oriented surface.
pub fn reconstruct_checked(provider: &dyn Reconstructor, image: &RgbImage) -> Result<TriangleMesh> {
    let mesh = provider.reconstruct(image)?.cleanup();
    if mesh.faces().is_empty() {
        return Err(Error::Topology(format!(
            "provider `{}` returned an empty mesh",
            provider.name()
        )));
    }
    if !mesh.is_watertight() {
        return Err(Error::Topology(format!(
            "provider `{}` returned a mesh that is not watertight",
            provider.name()
        )));
    }
    Ok(mesh)
}

fn subject_mask(image: &RgbImage) -> BinaryMask {
    BinaryMask::from_fn(image.width(), image.height(), |x, y| image.get(x, y) != [0, 0, 0])
        .expect("image dimensions are positive")
}

/// Digest of the non-black silhouette; invariant to photometric changes that
/// keep black at black.
pub fn silhouette_digest(image: &RgbImage) -> String {
    subject_mask(image).digest()
}

/// Stand-in reconstructor: an ellipsoid spanning the silhouette's bounding
/// box, with depth proportional to its width.
#[derive(Debug, Clone)]
pub struct EllipsoidReconstructor {
    pub depth_ratio: f64,
    pub rings: usize,
    pub segments: usize,
}

impl Default for EllipsoidReconstructor {
    fn default() -> Self {
        Self {
            depth_ratio: 0.6,
            rings: 16,
            segments: 24,
        }
    }
}

impl Reconstructor for EllipsoidReconstructor {
    fn name(&self) -> &str {
        "synthetic-ellipsoid"
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "{}|v1|{}|{}|{}",
            self.name(),
            self.depth_ratio,
            self.rings,
            self.segments
        ));
        hex::encode(h.finalize())
    }

    fn reconstruct(&self, image: &RgbImage) -> Result<TriangleMesh> {
        let bbox = subject_mask(image)
            .bounding_box()
            .ok_or_else(|| Error::NoSubject("reconstruction input is blank".into()))?;
        let half_w = bbox.width as f64 / 2.0;
        let half_h = bbox.height as f64 / 2.0;
        TriangleMesh::ellipsoid(
            Vec3::new(half_w, half_h, self.depth_ratio * half_w),
            self.rings,
            self.segments,
        )
    }
}

/// Serves stored meshes for known inputs, matched by silhouette.
#[derive(Debug, Clone, Default)]
pub struct FixtureReconstructor {
    meshes: HashMap<String, TriangleMesh>,
}

impl FixtureReconstructor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key_image: &RgbImage, mesh: TriangleMesh) {
        self.meshes.insert(silhouette_digest(key_image), mesh);
    }

    /// Loads every `<name>.png` that has a sibling `<name>.obj`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut out = Self::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir.as_ref())?
            .collect::<std::result::Result<Vec<_>, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let obj = path.with_extension("obj");
            if obj.exists() {
                out.insert(&RgbImage::open(&path)?, read_obj(&obj)?);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }
}

impl Reconstructor for FixtureReconstructor {
    fn name(&self) -> &str {
        "fixture-mesh"
    }

    fn digest(&self) -> String {
        let mut keys: Vec<_> = self.meshes.keys().collect();
        keys.sort();
        let mut h = Sha256::new();
        h.update("fixture-mesh|v1");
        for k in keys {
            h.update(k.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn reconstruct(&self, image: &RgbImage) -> Result<TriangleMesh> {
        if subject_mask(image).count() == 0 {
            return Err(Error::NoSubject("reconstruction input is blank".into()));
        }
        self.meshes
            .get(&silhouette_digest(image))
            .cloned()
            .ok_or_else(|| Error::provider(self.name(), "no stored mesh for this input"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn silhouette(w: u32, h: u32, rect: (u32, u32, u32, u32)) -> RgbImage {
        let mut img = RgbImage::new(w, h).unwrap();
        for y in rect.1..rect.1 + rect.3 {
            for x in rect.0..rect.0 + rect.2 {
                img.put(x, y, [120, 90, 80]);
            }
        }
        img
    }

    #[test]
    fn ellipsoid_matches_mask_aspect() {
        let img = silhouette(100, 240, (20, 10, 60, 220));
        let mesh = reconstruct_checked(&EllipsoidReconstructor::default(), &img).unwrap();
        let (lo, hi) = mesh.bounding_box().unwrap();
        let aspect = (hi.x - lo.x) / (hi.y - lo.y);
        assert!((aspect / (60.0 / 220.0) - 1.0).abs() < 0.05, "aspect {aspect}");
    }

    #[test]
    fn blank_input_is_no_subject() {
        let img = RgbImage::new(20, 20).unwrap();
        assert!(matches!(
            EllipsoidReconstructor::default().reconstruct(&img),
            Err(Error::NoSubject(_))
        ));
        assert!(matches!(
            FixtureReconstructor::new().reconstruct(&img),
            Err(Error::NoSubject(_))
        ));
    }

    #[test]
    fn fixture_passthrough_and_miss() {
        let img = silhouette(30, 40, (5, 5, 10, 30));
        let mut fx = FixtureReconstructor::new();
        fx.insert(&img, TriangleMesh::unit_cube());
        assert_eq!(fx.reconstruct(&img).unwrap(), TriangleMesh::unit_cube());
        let brighter = img.map_channels(|v| if v == 0 { 0 } else { v + 10 });
        assert_eq!(fx.reconstruct(&brighter).unwrap(), TriangleMesh::unit_cube());
        let other = silhouette(30, 40, (6, 5, 10, 30));
        assert!(matches!(fx.reconstruct(&other), Err(Error::Provider { .. })));
    }

    struct OpenSurface;

    impl Reconstructor for OpenSurface {
        fn name(&self) -> &str {
            "open"
        }
        fn digest(&self) -> String {
            "open".into()
        }
        fn reconstruct(&self, _: &RgbImage) -> Result<TriangleMesh> {
            TriangleMesh::new(
                vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
                vec![[0, 1, 2]],
            )
        }
    }

    #[test]
    fn non_watertight_provider_output_is_rejected() {
        let img = silhouette(10, 10, (1, 1, 3, 3));
        assert!(matches!(
            reconstruct_checked(&OpenSurface, &img),
            Err(Error::Topology(_))
        ));
    }
}
