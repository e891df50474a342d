use serde::{Deserialize, Serialize};

use super::{twice_signed_area, Point2};
use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// Source triangles smaller than this (px²) are treated as collinear.
const MIN_TRIANGLE_AREA: f64 = 1e-9;
const MIN_DETERMINANT: f64 = 1e-12;

/// 2×3 affine map `[a b tx; c d ty]` applied as `(a x + b y + tx, c x + d y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [[f64; 3]; 2],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        let t = Self { m };
        if !m.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::param("affine matrix has non-finite entries"));
        }
        if t.determinant().abs() <= MIN_DETERMINANT {
            return Err(Error::Geometry(format!(
                "affine linear part is singular (det = {:e})",
                t.determinant()
            )));
        }
        Ok(t)
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2 {
            x: self.m[0][0] * p.x + self.m[0][1] * p.y + self.m[0][2],
            y: self.m[1][0] * p.x + self.m[1][1] * p.y + self.m[1][2],
        }
    }

    pub fn inverse(&self) -> Self {
        let det = self.determinant();
        let [[a, b, tx], [c, d, ty]] = self.m;
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        Self {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
            ],
        }
    }
}

/// Exact affine map sending each `src[i]` to `dst[i]`.
pub fn solve_affine(src: [Point2; 3], dst: [Point2; 3]) -> Result<AffineTransform> {
    if src.iter().chain(dst.iter()).any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::param("affine correspondences must be finite"));
    }
    let area2 = twice_signed_area(src[0], src[1], src[2]);
    if area2.abs() / 2.0 <= MIN_TRIANGLE_AREA {
        return Err(Error::Geometry(
            "source points are collinear; affine map is undetermined".into(),
        ));
    }
    // Cramer's rule on [x y 1] rows, solved once per output coordinate.
    let solve_row = |target: [f64; 3]| -> [f64; 3] {
        let [p0, p1, p2] = src;
        let a = (target[0] * (p1.y - p2.y) + target[1] * (p2.y - p0.y) + target[2] * (p0.y - p1.y))
            / area2;
        let b = (target[0] * (p2.x - p1.x) + target[1] * (p0.x - p2.x) + target[2] * (p1.x - p0.x))
            / area2;
        let t = (target[0] * (p1.x * p2.y - p2.x * p1.y)
            + target[1] * (p2.x * p0.y - p0.x * p2.y)
            + target[2] * (p0.x * p1.y - p1.x * p0.y))
            / area2;
        [a, b, t]
    };
    let row_x = solve_row([dst[0].x, dst[1].x, dst[2].x]);
    let row_y = solve_row([dst[0].y, dst[1].y, dst[2].y]);
    AffineTransform::new([row_x, row_y])
}

/// Bilinear sample at a sub-pixel position; `None` outside the pixel grid.
pub fn bilinear_sample(image: &RgbImage, x: f64, y: f64) -> Option<[f64; 3]> {
    const EDGE_EPS: f64 = 1e-9;
    let max_x = (image.width() - 1) as f64;
    let max_y = (image.height() - 1) as f64;
    if !(x >= -EDGE_EPS && y >= -EDGE_EPS && x <= max_x + EDGE_EPS && y <= max_y + EDGE_EPS) {
        return None;
    }
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = image.get(x0, y0);
    let p10 = image.get(x1, y0);
    let p01 = image.get(x0, y1);
    let p11 = image.get(x1, y1);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 + (p10[c] as f64 - p00[c] as f64) * fx;
        let bottom = p01[c] as f64 + (p11[c] as f64 - p01[c] as f64) * fx;
        out[c] = top + (bottom - top) * fy;
    }
    Some(out)
}

/// Resample `image` into a `width`×`height` canvas. `output_to_source` maps
/// output pixel centres to source coordinates; samples off the source are black.
pub fn warp_affine(
    image: &RgbImage,
    output_to_source: &AffineTransform,
    width: u32,
    height: u32,
) -> Result<RgbImage> {
    let mut out = RgbImage::new(width, height)?;
    for v in 0..height {
        for u in 0..width {
            let p = output_to_source.apply(Point2::new(u as f64, v as f64));
            if let Some(rgb) = bilinear_sample(image, p.x, p.y) {
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

    const UNIT: [Point2; 3] = [
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(0.0, 1.0),
    ];

    #[test]
    fn identity_correspondence_gives_identity() {
        let t = solve_affine(UNIT, UNIT).unwrap();
        for (a, b) in t.m.iter().flatten().zip(AffineTransform::IDENTITY.m.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pure_scale() {
        let dst = UNIT.map(|p| Point2::new(2.0 * p.x, 2.0 * p.y));
        let t = solve_affine(UNIT, dst).unwrap();
        assert_eq!(t.m, [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(t.apply(Point2::new(1.0, 1.0)), Point2::new(2.0, 2.0));
    }

    #[test]
    fn collinear_source_is_rejected() {
        let src = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(2.0, 2.0),
        ];
        assert!(matches!(solve_affine(src, UNIT), Err(Error::Geometry(_))));
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = AffineTransform::new([[1.5, 0.3, 4.0], [-0.2, 0.9, -7.0]]).unwrap();
        let p = Point2::new(12.5, -3.25);
        let q = t.inverse().apply(t.apply(p));
        assert!(p.distance(q) < 1e-12);
    }

    #[test]
    fn identity_warp_is_lossless() {
        let mut img = RgbImage::new(7, 5).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                img.put(x, y, [(x * 30) as u8, (y * 50) as u8, 9]);
            }
        }
        let out = warp_affine(&img, &AffineTransform::IDENTITY, 7, 5).unwrap();
        assert_eq!(out, img);
    }

    fn triple() -> impl Strategy<Value = [Point2; 3]> {
        prop::array::uniform3((-500.0..500.0f64, -500.0..500.0f64))
            .prop_map(|a| a.map(|(x, y)| Point2::new(x, y)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn solved_transform_reproduces_targets(src in triple(), dst in triple()) {
            prop_assume!(twice_signed_area(src[0], src[1], src[2]).abs() > 1.0);
            let t = solve_affine(src, dst).unwrap();
            for (s, d) in src.iter().zip(dst.iter()) {
                prop_assert!(t.apply(*s).distance(*d) < 1e-9);
            }
        }

        #[test]
        fn distance_ratios_along_a_line_are_preserved(
            src in triple(), dst in triple(), s in 0.0..1.0f64,
        ) {
            prop_assume!(twice_signed_area(src[0], src[1], src[2]).abs() > 1.0);
            prop_assume!(twice_signed_area(dst[0], dst[1], dst[2]).abs() > 1.0);
            let t = solve_affine(src, dst).unwrap();
            let (a, b) = (src[0], src[1]);
            let m = Point2::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y));
            let (ta, tb, tm) = (t.apply(a), t.apply(b), t.apply(m));
            let ab = ta.distance(tb);
            prop_assume!(ab > 1e-3);
            prop_assert!((ta.distance(tm) / ab - s).abs() < 1e-6);
        }
    }
}
