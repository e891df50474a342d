//! Parametric synthetic subjects: a flat-shaded mannequin rendered against a
//! white backdrop, together with its exact landmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BodyKeypoints, FaceLandmarks, Keypoint, Point2, FACE_LANDMARK_COUNT};
use crate::health::Gender;
use crate::perception::Annotations;
use crate::raster::RgbImage;

pub const SKIN_RGB: [u8; 3] = [170, 140, 120];
pub const FEATURE_RGB: [u8; 3] = [90, 60, 50];
pub const BACKDROP_RGB: [u8; 3] = [255, 255, 255];
pub const SCENE_WIDTH: u32 = 256;
pub const SCENE_HEIGHT: u32 = 420;
/// Pixels per centimetre of the synthetic camera.
pub const SCENE_PPM: f64 = 2.0;
const FLOOR_Y: f64 = 409.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub gender: Gender,
    pub age_years: f64,
    pub height_cm: f64,
    pub weight_kg: f64,
}

impl SubjectSpec {
    pub fn bmi(&self) -> f64 {
        let m = self.height_cm / 100.0;
        self.weight_kg / (m * m)
    }

    /// Body build relative to a BMI of 22, which drives every width in the
    /// rendered figure.
    pub fn adiposity(&self) -> f64 {
        (self.bmi() / 22.0).clamp(0.5, 2.0)
    }
}

/// Draws a cohort of `n` subjects. Heights and BMIs follow rough adult
/// distributions; roughly one in eight subjects is underweight.
pub fn synthetic_cohort(n: usize, seed: u64) -> Vec<SubjectSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let male_h = Normal::new(176.0, 7.0).unwrap();
    let female_h = Normal::new(163.0, 6.5).unwrap();
    let log_bmi = Normal::new(23.0f64.ln(), 0.17).unwrap();
    (0..n)
        .map(|_| {
            let gender = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
            let h: f64 = match gender {
                Gender::Male => male_h.sample(&mut rng),
                Gender::Female => female_h.sample(&mut rng),
            };
            let height_cm = h.clamp(145.0, 195.0);
            let bmi = log_bmi.sample(&mut rng).exp().clamp(15.0, 40.0);
            let m = height_cm / 100.0;
            SubjectSpec {
                gender,
                age_years: rng.random_range(18.0..70.0f64).round(),
                height_cm: (height_cm * 10.0).round() / 10.0,
                weight_kg: (bmi * m * m * 10.0).round() / 10.0,
            }
        })
        .collect()
}

pub struct Scene {
    pub image: RgbImage,
    pub annotations: Annotations,
}

struct Figure {
    cx: f64,
    top: f64,
    tall: f64,
    head_h: f64,
    head_w: f64,
    torso_w: f64,
    arm_w: f64,
    leg_w: f64,
}

impl Figure {
    fn new(spec: &SubjectSpec) -> Self {
        let a = spec.adiposity();
        let tall = spec.height_cm * SCENE_PPM;
        let head_h = 0.13 * tall;
        Self {
            cx: SCENE_WIDTH as f64 / 2.0,
            top: FLOOR_Y + 1.0 - tall,
            tall,
            head_h,
            head_w: head_h * (0.35 + 0.3 * a),
            torso_w: 0.16 * tall * (0.4 + 0.6 * a),
            arm_w: 0.045 * tall * (0.5 + 0.5 * a),
            leg_w: 0.07 * tall * (0.5 + 0.5 * a),
        }
    }

    fn y(&self, frac: f64) -> f64 {
        self.top + frac * self.tall
    }

    fn head_centre(&self) -> Point2 {
        Point2::new(self.cx, self.top + self.head_h / 2.0)
    }

    fn arm_x(&self, side: f64) -> f64 {
        self.cx + side * (self.torso_w / 2.0 + 3.0 + self.arm_w / 2.0)
    }

    fn leg_x(&self, side: f64) -> f64 {
        self.cx + side * (0.01 * self.tall + self.leg_w / 2.0)
    }

    fn body_contains(&self, x: f64, y: f64) -> bool {
        let hc = self.head_centre();
        let in_ellipse = |c: Point2, rx: f64, ry: f64| {
            let (dx, dy) = ((x - c.x) / rx, (y - c.y) / ry);
            dx * dx + dy * dy <= 1.0
        };
        let in_rect = |x0: f64, x1: f64, y0: f64, y1: f64| x >= x0 && x <= x1 && y >= y0 && y <= y1;
        if in_ellipse(hc, self.head_w / 2.0, self.head_h / 2.0) {
            return true;
        }
        let neck_w = 0.35 * self.head_w;
        if in_rect(self.cx - neck_w / 2.0, self.cx + neck_w / 2.0, self.y(0.12), self.y(0.18)) {
            return true;
        }
        if in_rect(self.cx - self.torso_w / 2.0, self.cx + self.torso_w / 2.0, self.y(0.17), self.y(0.53)) {
            return true;
        }
        for side in [-1.0, 1.0] {
            let ax = self.arm_x(side);
            if in_rect(ax - self.arm_w / 2.0, ax + self.arm_w / 2.0, self.y(0.18), self.y(0.50)) {
                return true;
            }
            let lx = self.leg_x(side);
            if in_rect(lx - self.leg_w / 2.0, lx + self.leg_w / 2.0, self.y(0.52), FLOOR_Y + 0.5) {
                return true;
            }
        }
        false
    }

    fn landmarks(&self) -> Vec<Point2> {
        let c = self.head_centre();
        let hh = self.head_h;
        let (rx, ry) = (self.head_w / 2.0, self.head_h / 2.0);
        let at = |u: f64, v: f64| Point2::new(c.x + u * hh, c.y + v * hh);
        let mut pts = Vec::with_capacity(FACE_LANDMARK_COUNT);
        // jaw, left ear to right ear along the lower half of the head
        for i in 0..17 {
            let t = std::f64::consts::PI * i as f64 / 16.0;
            pts.push(Point2::new(c.x - 0.95 * rx * t.cos(), c.y + 0.95 * ry * t.sin()));
        }
        for side in [-1.0, 1.0] {
            for k in 0..5 {
                let u = 0.05 + 0.05 * k as f64;
                let u = if side < 0.0 { -0.30 + u } else { u };
                pts.push(at(u, -0.20));
            }
        }
        for k in 0..4 {
            pts.push(at(0.0, -0.12 + 0.0667 * k as f64));
        }
        for k in 0..5 {
            pts.push(at(-0.06 + 0.03 * k as f64, 0.12));
        }
        // eyes: corner, upper x2, far corner, lower x2 (36 and 45 are outer)
        for (o, i) in [(-0.22, -0.10), (0.10, 0.22)] {
            let mid = (o + i) / 2.0;
            let q = (i - o) / 4.0;
            let ring = [
                (o, -0.10),
                (mid - q, -0.125),
                (mid + q, -0.125),
                (i, -0.10),
                (mid + q, -0.075),
                (mid - q, -0.075),
            ];
            for (u, v) in ring {
                pts.push(at(u, v));
            }
        }
        let mouth = |n: usize, ru: f64, rv: f64, out: &mut Vec<Point2>| {
            for k in 0..n {
                let phi = std::f64::consts::PI - k as f64 * 2.0 * std::f64::consts::PI / n as f64;
                out.push(at(ru * phi.cos(), 0.24 - rv * phi.sin()));
            }
        };
        mouth(12, 0.12, 0.06, &mut pts);
        mouth(8, 0.08, 0.025, &mut pts);
        pts
    }

    fn keypoints(&self) -> Vec<Option<Keypoint>> {
        let c = self.head_centre();
        let hh = self.head_h;
        let kp = |x: f64, y: f64| {
            Some(Keypoint {
                position: Point2::new(x, y),
                confidence: 0.9,
            })
        };
        let (rs, ls) = (-1.0, 1.0);
        vec![
            kp(c.x, c.y + 0.05 * hh),
            kp(self.cx, self.y(0.17)),
            kp(self.cx + rs * self.torso_w / 2.0, self.y(0.18)),
            kp(self.arm_x(rs), self.y(0.33)),
            kp(self.arm_x(rs), self.y(0.49)),
            kp(self.cx + ls * self.torso_w / 2.0, self.y(0.18)),
            kp(self.arm_x(ls), self.y(0.33)),
            kp(self.arm_x(ls), self.y(0.49)),
            kp(self.leg_x(rs), self.y(0.53)),
            kp(self.leg_x(rs), self.y(0.76)),
            kp(self.leg_x(rs), FLOOR_Y - 2.0),
            kp(self.leg_x(ls), self.y(0.53)),
            kp(self.leg_x(ls), self.y(0.76)),
            kp(self.leg_x(ls), FLOOR_Y - 2.0),
            kp(c.x - 0.16 * hh, c.y - 0.10 * hh),
            kp(c.x + 0.16 * hh, c.y - 0.10 * hh),
            kp(c.x - self.head_w / 2.0 + 1.0, c.y),
            kp(c.x + self.head_w / 2.0 - 1.0, c.y),
        ]
    }
}

/// Renders one subject. The silhouette is exactly `height_cm * SCENE_PPM`
/// pixels tall (to the nearest pixel).
pub fn render_scene(spec: &SubjectSpec) -> Result<Scene> {
    if !(140.0..=200.0).contains(&spec.height_cm) {
        return Err(Error::param(format!(
            "synthetic subjects must be 140..200 cm tall, got {}",
            spec.height_cm
        )));
    }
    if !(spec.weight_kg.is_finite() && spec.weight_kg > 0.0) {
        return Err(Error::param(format!("weight must be positive, got {}", spec.weight_kg)));
    }
    let fig = Figure::new(spec);
    let landmarks = fig.landmarks();
    let mut img = RgbImage::filled(SCENE_WIDTH, SCENE_HEIGHT, BACKDROP_RGB)?;
    for y in 0..SCENE_HEIGHT {
        for x in 0..SCENE_WIDTH {
            if fig.body_contains(x as f64, y as f64) {
                img.put(x, y, SKIN_RGB);
            }
        }
    }
    // Eyes and mouth: fill the landmark rings' bounding ellipses.
    let c = fig.head_centre();
    let hh = fig.head_h;
    let features = [
        (Point2::new(c.x - 0.16 * hh, c.y - 0.10 * hh), 0.06 * hh, 0.025 * hh),
        (Point2::new(c.x + 0.16 * hh, c.y - 0.10 * hh), 0.06 * hh, 0.025 * hh),
        (Point2::new(c.x, c.y + 0.24 * hh), 0.12 * hh, 0.06 * hh),
    ];
    for (centre, rx, ry) in features {
        let (x0, x1) = ((centre.x - rx).floor() as u32, (centre.x + rx).ceil() as u32);
        let (y0, y1) = ((centre.y - ry).floor() as u32, (centre.y + ry).ceil() as u32);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = ((x as f64 - centre.x) / rx, (y as f64 - centre.y) / ry);
                if dx * dx + dy * dy <= 1.0 {
                    img.put(x, y, FEATURE_RGB);
                }
            }
        }
    }
    Ok(Scene {
        image: img,
        annotations: Annotations {
            face: FaceLandmarks::new(landmarks, 0.95)?,
            body: BodyKeypoints::new(fig.keypoints())?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ALIGNMENT_LANDMARKS;
    use crate::height::PixelHeight;
    use crate::perception::{Segmenter, ThresholdSegmenter};

    fn spec(h: f64, w: f64) -> SubjectSpec {
        SubjectSpec {
            gender: Gender::Female,
            age_years: 30.0,
            height_cm: h,
            weight_kg: w,
        }
    }

    #[test]
    fn silhouette_height_matches_scale() {
        for h in [145.0, 162.3, 180.0, 195.0] {
            let scene = render_scene(&spec(h, 60.0)).unwrap();
            let mask = ThresholdSegmenter::default().segment(&scene.image).unwrap();
            let px = mask.bounding_box().unwrap().height.pixel_height() as f64;
            assert!((px - h * SCENE_PPM).abs() <= 1.0, "{h}: {px}");
        }
    }

    #[test]
    fn landmarks_lie_on_the_subject() {
        let scene = render_scene(&spec(170.0, 70.0)).unwrap();
        let (w, h) = (scene.image.width(), scene.image.height());
        scene.annotations.face.validate_within(w, h).unwrap();
        scene.annotations.body.validate_within(w, h).unwrap();
        for i in ALIGNMENT_LANDMARKS {
            let p = scene.annotations.face.points()[i];
            assert_ne!(scene.image.get(p.x as u32, p.y as u32), BACKDROP_RGB);
        }
    }

    #[test]
    fn heavier_subjects_are_wider() {
        let seg = ThresholdSegmenter::default();
        let thin = seg.segment(&render_scene(&spec(170.0, 50.0)).unwrap().image).unwrap();
        let wide = seg.segment(&render_scene(&spec(170.0, 95.0)).unwrap().image).unwrap();
        assert!(wide.count() > thin.count());
    }

    #[test]
    fn cohort_is_seeded() {
        let a = synthetic_cohort(50, 4);
        assert_eq!(a, synthetic_cohort(50, 4));
        assert_ne!(a, synthetic_cohort(50, 5));
        assert!(a.iter().all(|s| (145.0..=195.0).contains(&s.height_cm) && s.weight_kg > 0.0));
        assert!(a.iter().all(|s| render_scene(s).is_ok()));
    }
}
