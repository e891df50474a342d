//! Pixel-per-metric height estimation.
//!
//! A calibration subject of known height fixes the pixels-per-centimetre ratio
//! for one capture setup (device plus camera geometry). Later subjects captured
//! with the same setup are measured by dividing their tight-crop pixel height
//! by that ratio.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample, Point2};
use crate::raster::{BinaryMask, RgbImage};

/// Default capture geometry: lens 1 m above the floor, subject 1.5 m away,
/// lens parallel to the subject.
pub const PROTOCOL_SETUP_NOTE: &str =
    "camera 1.0 m above ground, subject at 1.5 m, lens parallel to subject";

/// Anything with a subject pixel height: a tight crop or its mask.
pub trait PixelHeight {
    fn pixel_height(&self) -> u32;
}

impl PixelHeight for RgbImage {
    fn pixel_height(&self) -> u32 {
        self.height()
    }
}

impl PixelHeight for BinaryMask {
    fn pixel_height(&self) -> u32 {
        self.height()
    }
}

impl PixelHeight for u32 {
    fn pixel_height(&self) -> u32 {
        *self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpmCalibration {
    /// Pixels per centimetre.
    pub ppm: f64,
    pub device_id: String,
    #[serde(default)]
    pub setup_note: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

impl PpmCalibration {
    pub fn new(ppm: f64, device_id: impl Into<String>, setup_note: impl Into<String>) -> Result<Self> {
        let cal = Self {
            ppm,
            device_id: device_id.into(),
            setup_note: setup_note.into(),
            created_at: None,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ppm.is_finite() && self.ppm > 0.0) {
            return Err(Error::param(format!(
                "ppm must be positive and finite, got {}",
                self.ppm
            )));
        }
        Ok(())
    }
}

/// Fixes the pixel-per-centimetre ratio from a subject of known height.
pub fn calibrate_ppm(
    crop: &impl PixelHeight,
    true_height_cm: f64,
    device_id: impl Into<String>,
    setup_note: impl Into<String>,
) -> Result<PpmCalibration> {
    if !(true_height_cm.is_finite() && true_height_cm > 0.0) {
        return Err(Error::param(format!(
            "true height must be positive, got {true_height_cm}"
        )));
    }
    let px = crop.pixel_height();
    if px == 0 {
        return Err(Error::param("crop has zero pixel height"));
    }
    PpmCalibration::new(px as f64 / true_height_cm, device_id, setup_note)
}

/// Height in centimetres of a subject captured with the calibrated setup.
pub fn estimate_height(crop: &impl PixelHeight, calibration: &PpmCalibration) -> Result<f64> {
    calibration.validate()?;
    let px = crop.pixel_height();
    if px == 0 {
        return Err(Error::param("crop has zero pixel height"));
    }
    Ok(px as f64 / calibration.ppm)
}

/// Per-setup calibrations keyed by device id, persisted as a JSON table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRegistry {
    entries: BTreeMap<String, PpmCalibration>,
}

impl CalibrationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, calibration: PpmCalibration) -> Result<()> {
        calibration.validate()?;
        self.entries
            .insert(calibration.device_id.clone(), calibration);
        Ok(())
    }

    pub fn get(&self, device_id: &str) -> Result<&PpmCalibration> {
        self.entries.get(device_id).ok_or_else(|| {
            Error::Configuration(format!("no ppm calibration registered for device `{device_id}`"))
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn device_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let reg: Self = serde_json::from_str(&text)?;
        for cal in reg.entries.values() {
            cal.validate()?;
        }
        Ok(reg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Pinhole intrinsics plus Brown-Conrady distortion `[k1, k2, p1, p2, k3]`
/// (shorter lists are zero-padded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: [[f64; 3]; 3],
    pub distortion: Vec<f64>,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, distortion: Vec<f64>) -> Self {
        Self {
            intrinsics: [[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]],
            distortion,
        }
    }

    fn fx(&self) -> f64 {
        self.intrinsics[0][0]
    }
    fn fy(&self) -> f64 {
        self.intrinsics[1][1]
    }
    fn skew(&self) -> f64 {
        self.intrinsics[0][1]
    }
    fn cx(&self) -> f64 {
        self.intrinsics[0][2]
    }
    fn cy(&self) -> f64 {
        self.intrinsics[1][2]
    }

    fn coefficients(&self) -> [f64; 5] {
        let mut k = [0.0; 5];
        for (slot, v) in k.iter_mut().zip(&self.distortion) {
            *slot = *v;
        }
        k
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if !self.intrinsics.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::param("camera intrinsics must be finite"));
        }
        if self.fx() <= 0.0 || self.fy() <= 0.0 {
            return Err(Error::param(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx(),
                self.fy()
            )));
        }
        if self.intrinsics[1][0] != 0.0 || self.intrinsics[2] != [0.0, 0.0, 1.0] {
            return Err(Error::param("intrinsic matrix must be upper triangular with K[2][2] = 1"));
        }
        let (cx, cy) = (self.cx(), self.cy());
        if cx < 0.0 || cy < 0.0 || cx > width as f64 || cy > height as f64 {
            return Err(Error::param(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        if self.distortion.len() > 5 || !self.distortion.iter().all(|v| v.is_finite()) {
            return Err(Error::param(
                "distortion must be at most 5 finite coefficients [k1, k2, p1, p2, k3]",
            ));
        }
        Ok(())
    }

    pub fn is_distortion_free(&self) -> bool {
        self.distortion.iter().all(|&k| k == 0.0)
    }

    fn to_normalized(&self, p: Point2) -> (f64, f64) {
        let y = (p.y - self.cy()) / self.fy();
        let x = (p.x - self.cx() - self.skew() * y) / self.fx();
        (x, y)
    }

    fn to_pixel(&self, x: f64, y: f64) -> Point2 {
        Point2::new(self.fx() * x + self.skew() * y + self.cx(), self.fy() * y + self.cy())
    }

    fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, p1, p2, k3] = self.coefficients();
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        (
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    /// Forward lens model: ideal pixel to where the lens images it.
    pub fn distort_point(&self, p: Point2) -> Point2 {
        let (x, y) = self.to_normalized(p);
        let (xd, yd) = self.distort_normalized(x, y);
        self.to_pixel(xd, yd)
    }

    /// Inverts [`Self::distort_point`] by fixed-point iteration.
    pub fn undistort_point(&self, p: Point2) -> Point2 {
        let (xd, yd) = self.to_normalized(p);
        let [k1, k2, p1, p2, k3] = self.coefficients();
        let (mut x, mut y) = (xd, yd);
        for _ in 0..50 {
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
            let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
            let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
            let (nx, ny) = ((xd - dx) / radial, (yd - dy) / radial);
            let converged = (nx - x).abs() < 1e-14 && (ny - y).abs() < 1e-14;
            x = nx;
            y = ny;
            if converged {
                break;
            }
        }
        self.to_pixel(x, y)
    }
}

/// Resamples a captured image onto the ideal pinhole grid. Pixels whose
/// source falls off the sensor are black.
pub fn undistort(image: &RgbImage, camera: &CameraModel) -> Result<RgbImage> {
    camera.validate(image.width(), image.height())?;
    if camera.is_distortion_free() {
        return Ok(image.clone());
    }
    let mut out = RgbImage::new(image.width(), image.height())?;
    for v in 0..image.height() {
        for u in 0..image.width() {
            let src = camera.distort_point(Point2::new(u as f64, v as f64));
            if let Some(rgb) = bilinear_sample(image, src.x, src.y) {
                out.put(u, v, rgb.map(|c| c.round().clamp(0.0, 255.0) as u8));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_ppm(&800u32, 160.0, "d", "").unwrap().ppm, 5.0);
        assert_eq!(calibrate_ppm(&350u32, 175.0, "d", "").unwrap().ppm, 2.0);
        assert!(matches!(
            calibrate_ppm(&350u32, 0.0, "d", ""),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn estimate_example() {
        let cal = PpmCalibration::new(5.0, "d", "").unwrap();
        assert_eq!(estimate_height(&875u32, &cal).unwrap(), 175.0);
    }

    #[test]
    fn missing_device_is_configuration_error() {
        let reg = CalibrationRegistry::new();
        assert!(matches!(reg.get("phone"), Err(Error::Configuration(_))));
    }

    #[test]
    fn registry_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.json");
        let mut reg = CalibrationRegistry::new();
        let mut cal = PpmCalibration::new(2.25, "lab-cam", PROTOCOL_SETUP_NOTE).unwrap();
        cal.created_at = Some("2024-01-01T00:00:00Z".into());
        reg.insert(cal).unwrap();
        reg.save(&path).unwrap();
        assert_eq!(CalibrationRegistry::load(&path).unwrap(), reg);
    }

    #[test]
    fn image_crop_height_ignores_width_and_content() {
        let cal = PpmCalibration::new(2.0, "d", "").unwrap();
        let a = RgbImage::filled(10, 300, [1, 2, 3]).unwrap();
        let b = RgbImage::filled(97, 300, [200, 0, 9]).unwrap();
        assert_eq!(estimate_height(&a, &cal).unwrap(), estimate_height(&b, &cal).unwrap());
    }

    #[test]
    fn zero_distortion_is_identity() {
        let mut img = RgbImage::new(16, 12).unwrap();
        img.put(3, 4, [10, 20, 30]);
        let cam = CameraModel::new(20.0, 20.0, 8.0, 6.0, vec![0.0; 5]);
        assert_eq!(undistort(&img, &cam).unwrap(), img);
    }

    #[test]
    fn negative_focal_length_is_rejected() {
        let img = RgbImage::new(16, 12).unwrap();
        let cam = CameraModel::new(-20.0, 20.0, 8.0, 6.0, vec![]);
        assert!(matches!(undistort(&img, &cam), Err(Error::Parameter(_))));
    }

    #[test]
    fn undistort_point_inverts_distort_point() {
        let cam = CameraModel::new(180.0, 175.0, 100.0, 90.0, vec![-0.2, 0.05, 0.001, -0.002, 0.0]);
        for &(x, y) in &[(10.0, 12.0), (100.0, 90.0), (190.0, 170.0), (55.5, 140.25)] {
            let p = Point2::new(x, y);
            let back = cam.distort_point(cam.undistort_point(p));
            assert!(back.distance(p) < 1e-9, "{p:?} -> {back:?}");
        }
    }

    proptest! {
        #[test]
        fn calibration_round_trip(px in 1u32..5000, h in 1.0..250.0f64) {
            let cal = calibrate_ppm(&px, h, "d", "").unwrap();
            prop_assert!((estimate_height(&px, &cal).unwrap() - h).abs() < 1e-9);
        }

        #[test]
        fn height_is_linear_in_pixels(px in 1u32..2500, ppm in 0.5..10.0f64) {
            let cal = PpmCalibration::new(ppm, "d", "").unwrap();
            let one = estimate_height(&px, &cal).unwrap();
            let two = estimate_height(&(2 * px), &cal).unwrap();
            prop_assert!((two - 2.0 * one).abs() < 1e-9);
        }
    }
}
