use super::Point2;
use crate::error::{Error, Result};

/// Default Gaussian spread at the reference input resolution.
pub const DEFAULT_SIGMA_PX: f64 = 8.0;
/// Input side length the default spread is specified for.
pub const SIGMA_REFERENCE_PX: f64 = 368.0;

/// Spread for an image of the given size, scaled linearly from the default.
pub fn scaled_sigma(width: u32, height: u32) -> f64 {
    DEFAULT_SIGMA_PX * width.max(height) as f64 / SIGMA_REFERENCE_PX
}

/// Gaussian keypoint heatmap for a single keypoint of a single subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub width: u32,
    pub height: u32,
    pub sigma: f64,
    pub keypoint_index: usize,
    pub keypoint: Point2,
    values: Vec<f64>,
}

impl ConfidenceMap {
    #[inline]
    pub fn value(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pixel holding the largest value (first in row-major order on ties).
    pub fn argmax(&self) -> (u32, u32) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (
            (best % self.width as usize) as u32,
            (best / self.width as usize) as u32,
        )
    }

    /// 8-bit grayscale rendering (`255 * value`).
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Renders `exp(-|p - keypoint|^2 / sigma^2)` at every pixel `p`.
///
/// Values that underflow are held at the smallest positive normal `f64` so
/// the map stays strictly positive.
pub fn render_confidence_map(
    keypoint_index: usize,
    keypoint: Point2,
    width: u32,
    height: u32,
    sigma: f64,
) -> Result<ConfidenceMap> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::param("confidence map dimensions must be positive"));
    }
    if !keypoint.inside(width, height) {
        return Err(Error::Geometry(format!(
            "keypoint ({}, {}) outside {width}x{height} map",
            keypoint.x, keypoint.y
        )));
    }
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        let dy = y as f64 - keypoint.y;
        for x in 0..width {
            let dx = x as f64 - keypoint.x;
            let v = (-(dx * dx + dy * dy) * inv_s2).exp();
            values.push(v.max(f64::MIN_POSITIVE));
        }
    }
    Ok(ConfidenceMap {
        width,
        height,
        sigma,
        keypoint_index,
        keypoint,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn peak_and_unit_distance() {
        let map = render_confidence_map(0, Point2::new(10.0, 10.0), 32, 32, 8.0).unwrap();
        assert_eq!(map.value(10, 10), 1.0);
        assert!((map.value(18, 10) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((map.value(18, 10) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn corner_keypoint_value() {
        // exp(-25/16) evaluated independently: 0.20961138715109...
        let map = render_confidence_map(3, Point2::new(0.0, 0.0), 8, 8, 4.0).unwrap();
        assert!((map.value(3, 4) - 0.209_611_387_151_097_8).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            render_confidence_map(0, Point2::new(1.0, 1.0), 4, 4, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            render_confidence_map(0, Point2::new(1.0, 1.0), 4, 4, -2.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            render_confidence_map(0, Point2::new(4.0, 1.0), 4, 4, 2.0),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn tiny_sigma_stays_positive() {
        let map = render_confidence_map(0, Point2::new(0.0, 0.0), 64, 64, 0.5).unwrap();
        assert!(map.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn sigma_scales_with_resolution() {
        assert_eq!(scaled_sigma(368, 200), 8.0);
        assert_eq!(scaled_sigma(368, 736), 16.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn argmax_is_rounded_keypoint(
            kx in 0.0..39.0f64, ky in 0.0..29.0f64, sigma in 0.5..20.0f64,
        ) {
            // Exact half-pixel ties have two valid argmax pixels.
            prop_assume!((kx.fract() - 0.5).abs() > 1e-6 && (ky.fract() - 0.5).abs() > 1e-6);
            let map = render_confidence_map(1, Point2::new(kx, ky), 40, 30, sigma).unwrap();
            prop_assert_eq!(map.argmax(), (kx.round() as u32, ky.round() as u32));
            prop_assert!(map.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn translation_equivariance(
            kx in 10.0..20.0f64, ky in 10.0..20.0f64, dx in -5i32..5, dy in -5i32..5, sigma in 1.0..6.0f64,
        ) {
            let a = render_confidence_map(0, Point2::new(kx, ky), 40, 40, sigma).unwrap();
            let b = render_confidence_map(
                0, Point2::new(kx + dx as f64, ky + dy as f64), 40, 40, sigma,
            ).unwrap();
            for y in 6..34i32 {
                for x in 6..34i32 {
                    let va = a.value(x as u32, y as u32);
                    let vb = b.value((x + dx) as u32, (y + dy) as u32);
                    prop_assert!((va - vb).abs() < 1e-12);
                }
            }
        }
    }
}
