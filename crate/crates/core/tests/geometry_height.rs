use std::time::Instant;

use nutriscan_core::geometry::{bilinear_sample, render_confidence_map, Point2};
use nutriscan_core::height::{calibrate_ppm, estimate_height, undistort, CameraModel};
use nutriscan_core::raster::{BinaryMask, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn confidence_map_matches_scalar_formula() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (64u32, 48u32);
    let mut checked = 0;
    while checked < 10_000 {
        let kp = Point2::new(rng.random_range(0.0..(w - 1) as f64), rng.random_range(0.0..(h - 1) as f64));
        let sigma = rng.random_range(0.5..30.0);
        let map = render_confidence_map(0, kp, w, h, sigma).unwrap();
        for _ in 0..100 {
            let (px, py) = (rng.random_range(0..w), rng.random_range(0..h));
            let d2 = (px as f64 - kp.x).powi(2) + (py as f64 - kp.y).powi(2);
            let expected = (-d2 / (sigma * sigma)).exp();
            assert!((map.value(px, py) - expected).abs() < 1e-9);
            checked += 1;
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn ppm_round_trip_on_random_masks() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let px: u32 = rng.random_range(1..4000);
        let h = rng.random_range(30.0..250.0);
        let cal = calibrate_ppm(&px, h, "dev", "").unwrap();
        assert!((estimate_height(&px, &cal).unwrap() - h).abs() < 1e-9);
        // doubling the crop doubles the height
        let twice = estimate_height(&(2 * px), &cal).unwrap();
        assert!((twice - 2.0 * h).abs() < 1e-9);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn height_ignores_crop_width_and_content() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cal = calibrate_ppm(&300u32, 150.0, "dev", "").unwrap();
    for _ in 0..20 {
        let w = rng.random_range(1..50);
        let pixels: Vec<u8> = (0..w * 300 * 3).map(|_| rng.random()).collect();
        let img = RgbImage::from_raw(w, 300, pixels).unwrap();
        let mask = BinaryMask::from_fn(w, 300, |_, _| rng.random_bool(0.5)).unwrap();
        assert_eq!(estimate_height(&img, &cal).unwrap(), 150.0);
        assert_eq!(estimate_height(&mask, &cal).unwrap(), 150.0);
    }
}

const GRID: u32 = 40;

fn ideal_grid(w: u32, h: u32) -> RgbImage {
    let mut img = RgbImage::filled(w, h, [255, 255, 255]).unwrap();
    for y in 0..h {
        for x in 0..w {
            let on = |v: u32| (v % GRID) as i32 - (GRID / 2) as i32;
            if on(x).abs() <= 1 || on(y).abs() <= 1 {
                img.put(x, y, [0, 0, 0]);
            }
        }
    }
    img
}

/// Max distance of dark-band centroids from their least-squares lines.
fn max_line_deviation(img: &RgbImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    let dark = |x: u32, y: u32| 255.0 - img.get(x, y)[0] as f64;
    let mut worst = 0.0f64;
    // horizontal lines at y = GRID/2 + k*GRID; sample columns away from the crossings
    for k in 1..(h / GRID) - 1 {
        let y0 = GRID / 2 + k * GRID;
        let mut pts = Vec::new();
        for x in (GRID..w - GRID).filter(|x| (x % GRID) as i32 - (GRID / 2) as i32 != 0) {
            if ((x % GRID) as i32 - (GRID / 2) as i32).abs() <= 4 {
                continue;
            }
            let (mut m, mut s) = (0.0, 0.0);
            for y in y0 - 8..=y0 + 8 {
                m += dark(x, y);
                s += dark(x, y) * y as f64;
            }
            if m > 0.0 {
                pts.push((x as f64, s / m));
            }
        }
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        for p in &pts {
            worst = worst.max((p.1 - (my + slope * (p.0 - mx))).abs());
        }
    }
    worst
}

#[test]
fn barrel_distorted_grid_is_straightened() {
    let (w, h) = (320u32, 240u32);
    let cam = CameraModel::new(300.0, 300.0, 160.0, 120.0, vec![-0.25, 0.05]);
    let ideal = ideal_grid(w, h);
    // Captured image: each sensor pixel sees the ideal point the lens maps onto it.
    let mut captured = RgbImage::filled(w, h, [255, 255, 255]).unwrap();
    for v in 0..h {
        for u in 0..w {
            let src = cam.undistort_point(Point2::new(u as f64, v as f64));
            if let Some(rgb) = bilinear_sample(&ideal, src.x, src.y) {
                captured.put(u, v, rgb.map(|c| c.round() as u8));
            }
        }
    }
    let before = max_line_deviation(&captured);
    let fixed = undistort(&captured, &cam).unwrap();
    let after = max_line_deviation(&fixed);
    assert!(before > 2.0, "distortion too weak to test: {before}");
    assert!(after < 1.0, "residual bow {after} px");
}

#[test]
fn zero_distortion_is_pixel_identical() {
    let img = ideal_grid(80, 60);
    let cam = CameraModel::new(100.0, 100.0, 40.0, 30.0, vec![0.0; 5]);
    assert_eq!(undistort(&img, &cam).unwrap(), img);
}
