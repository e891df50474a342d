//! Deterministic image-space preprocessing.
//!
//! Everything here is a pure function of its inputs. Learned detectors live
//! behind the provider traits in [`crate::perception`].

mod affine;
mod confidence;
mod crop;
mod face;
mod gamma;

pub use affine::{bilinear_sample, solve_affine, warp_affine, AffineTransform};
pub use confidence::{render_confidence_map, scaled_sigma, ConfidenceMap, DEFAULT_SIGMA_PX, SIGMA_REFERENCE_PX};
pub use crop::tight_crop;
pub use face::{
    align_face, default_face_template, BodyKeypoints, FaceLandmarks, Keypoint, ALIGNMENT_LANDMARKS,
    BODY_KEYPOINT_COUNT, FACE_LANDMARK_COUNT,
};
pub use gamma::{apply_gamma, apply_gamma_with, GammaDirection};

use serde::{Deserialize, Serialize};

/// Pixel coordinate; `x` grows right, `y` grows down.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub(crate) fn inside(self, width: u32, height: u32) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x <= (width - 1) as f64
            && self.y <= (height - 1) as f64
    }
}

/// Twice the signed area of the triangle `a b c`.
pub(crate) fn twice_signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)
}
