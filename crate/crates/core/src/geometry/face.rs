use serde::{Deserialize, Serialize};

use super::{solve_affine, twice_signed_area, warp_affine, Point2};
use crate::error::{Error, Result};
use crate::raster::RgbImage;

pub const FACE_LANDMARK_COUNT: usize = 68;
pub const BODY_KEYPOINT_COUNT: usize = 18;

/// 68-point indices of the inner corners of both eyes and the bottom of the
/// lower lip, in the order the alignment template expects.
pub const ALIGNMENT_LANDMARKS: [usize; 3] = [39, 42, 57];

/// 68-point facial landmarks in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceLandmarks {
    points: Vec<Point2>,
    pub detection_confidence: f64,
}

impl FaceLandmarks {
    pub fn new(points: Vec<Point2>, detection_confidence: f64) -> Result<Self> {
        if points.len() != FACE_LANDMARK_COUNT {
            return Err(Error::param(format!(
                "expected {FACE_LANDMARK_COUNT} face landmarks, got {}",
                points.len()
            )));
        }
        if !(0.0..=1.0).contains(&detection_confidence) {
            return Err(Error::param(format!(
                "detection confidence {detection_confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            points,
            detection_confidence,
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn alignment_points(&self) -> [Point2; 3] {
        ALIGNMENT_LANDMARKS.map(|i| self.points[i])
    }

    pub fn validate_within(&self, width: u32, height: u32) -> Result<()> {
        match self.points.iter().position(|p| !p.inside(width, height)) {
            Some(i) => Err(Error::Geometry(format!(
                "face landmark {i} lies outside the {width}x{height} image"
            ))),
            None => Ok(()),
        }
    }
}

/// Single keypoint observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub position: Point2,
    pub confidence: f64,
}

/// 18 body-part slots (COCO-18 order); undetected parts are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyKeypoints {
    slots: Vec<Option<Keypoint>>,
}

impl BodyKeypoints {
    pub fn new(slots: Vec<Option<Keypoint>>) -> Result<Self> {
        if slots.len() != BODY_KEYPOINT_COUNT {
            return Err(Error::param(format!(
                "expected {BODY_KEYPOINT_COUNT} body keypoint slots, got {}",
                slots.len()
            )));
        }
        if let Some(k) = slots
            .iter()
            .flatten()
            .find(|k| !(0.0..=1.0).contains(&k.confidence))
        {
            return Err(Error::param(format!(
                "keypoint confidence {} outside [0, 1]",
                k.confidence
            )));
        }
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[Option<Keypoint>] {
        &self.slots
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, Keypoint)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, k)| k.map(|k| (i, k)))
    }

    pub fn validate_within(&self, width: u32, height: u32) -> Result<()> {
        match self.present().find(|(_, k)| !k.position.inside(width, height)) {
            Some((i, _)) => Err(Error::Geometry(format!(
                "body keypoint {i} lies outside the {width}x{height} image"
            ))),
            None => Ok(()),
        }
    }
}

/// Canonical positions of [`ALIGNMENT_LANDMARKS`] in an `out_size` crop.
pub fn default_face_template(out_size: u32) -> [Point2; 3] {
    let s = out_size as f64;
    [
        Point2::new(0.40 * s, 0.40 * s),
        Point2::new(0.60 * s, 0.40 * s),
        Point2::new(0.50 * s, 0.80 * s),
    ]
}

/// Warps the face so the inner eye corners and bottom lip land on `template`
/// inside an `out_size`×`out_size` crop.
pub fn align_face(
    image: &RgbImage,
    landmarks: &FaceLandmarks,
    template: [Point2; 3],
    out_size: u32,
) -> Result<RgbImage> {
    if out_size == 0 {
        return Err(Error::param("aligned face size must be positive"));
    }
    if twice_signed_area(template[0], template[1], template[2]).abs() / 2.0 <= 1e-9 {
        return Err(Error::Geometry("alignment template is collinear".into()));
    }
    landmarks.validate_within(image.width(), image.height())?;
    let output_to_source = solve_affine(template, landmarks.alignment_points())?;
    warp_affine(image, &output_to_source, out_size, out_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn landmarks_with(anchors: [Point2; 3]) -> FaceLandmarks {
        let mut pts = vec![Point2::new(1.0, 1.0); FACE_LANDMARK_COUNT];
        for (i, p) in ALIGNMENT_LANDMARKS.iter().zip(anchors) {
            pts[*i] = p;
        }
        FaceLandmarks::new(pts, 0.9).unwrap()
    }

    fn textured(w: u32, h: u32) -> RgbImage {
        let mut img = RgbImage::new(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                img.put(x, y, [(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        img
    }

    #[test]
    fn landmarks_at_template_give_identity_crop() {
        let img = textured(64, 64);
        let template = default_face_template(40);
        let out = align_face(&img, &landmarks_with(template), template, 40).unwrap();
        let expected = img
            .crop(crate::raster::Rect {
                x: 0,
                y: 0,
                width: 40,
                height: 40,
            })
            .unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn anchors_land_on_template() {
        let template = default_face_template(96);
        let anchors = [
            Point2::new(140.0, 90.0),
            Point2::new(180.0, 96.0),
            Point2::new(158.0, 170.0),
        ];
        let t = solve_affine(anchors, template).unwrap();
        for (a, d) in anchors.iter().zip(template) {
            assert!(t.apply(*a).distance(d) < 1.0);
        }
    }

    #[test]
    fn collinear_template_is_rejected() {
        let img = textured(32, 32);
        let template = [
            Point2::new(0.0, 0.0),
            Point2::new(5.0, 5.0),
            Point2::new(10.0, 10.0),
        ];
        let lm = landmarks_with(default_face_template(32));
        assert!(matches!(
            align_face(&img, &lm, template, 32),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn landmark_count_is_enforced() {
        assert!(FaceLandmarks::new(vec![Point2::default(); 67], 0.5).is_err());
        assert!(BodyKeypoints::new(vec![None; 17]).is_err());
    }
}
