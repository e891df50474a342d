use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Rect, RgbImage};

/// Crops `image` to the mask's bounding box grown by `margin` pixels (clamped
/// to the image) and blacks out every pixel outside the mask.
///
/// Returns the crop and the rectangle it was taken from.
pub fn tight_crop(image: &RgbImage, mask: &BinaryMask, margin: u32) -> Result<(RgbImage, Rect)> {
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::param(format!(
            "mask is {}x{} but image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    let bbox = mask
        .bounding_box()
        .ok_or_else(|| Error::NoSubject("segmentation mask is empty".into()))?;
    let x0 = bbox.x.saturating_sub(margin);
    let y0 = bbox.y.saturating_sub(margin);
    let x1 = (bbox.x + bbox.width - 1).saturating_add(margin).min(image.width() - 1);
    let y1 = (bbox.y + bbox.height - 1).saturating_add(margin).min(image.height() - 1);
    let rect = Rect {
        x: x0,
        y: y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    };
    let mut out = RgbImage::new(rect.width, rect.height)?;
    for y in 0..rect.height {
        for x in 0..rect.width {
            let (sx, sy) = (rect.x + x, rect.y + y);
            if mask.get(sx, sy) {
                out.put(x, y, image.get(sx, sy));
            }
        }
    }
    Ok((out, rect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        let mut img = RgbImage::new(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                img.put(x, y, [x as u8 + 1, y as u8 + 1, 200]);
            }
        }
        img
    }

    #[test]
    fn full_mask_returns_whole_image() {
        let img = gradient(9, 6);
        let mask = BinaryMask::from_fn(9, 6, |_, _| true).unwrap();
        let (crop, rect) = tight_crop(&img, &mask, 0).unwrap();
        assert_eq!(crop, img);
        assert_eq!((rect.x, rect.y, rect.width, rect.height), (0, 0, 9, 6));
    }

    #[test]
    fn single_pixel_with_margin() {
        let img = gradient(12, 12);
        let mask = BinaryMask::from_fn(12, 12, |x, y| x == 5 && y == 5).unwrap();
        let (crop, rect) = tight_crop(&img, &mask, 2).unwrap();
        assert_eq!((crop.width(), crop.height()), (5, 5));
        assert_eq!((rect.x, rect.y), (3, 3));
        assert_eq!(crop.get(2, 2), img.get(5, 5));
        assert_eq!(crop.get(0, 0), [0, 0, 0]);
    }

    #[test]
    fn empty_mask_is_no_subject() {
        let img = gradient(4, 4);
        let mask = BinaryMask::new(4, 4).unwrap();
        assert!(matches!(tight_crop(&img, &mask, 1), Err(Error::NoSubject(_))));
    }

    #[test]
    fn margin_is_clamped_at_borders() {
        let img = gradient(6, 6);
        let mask = BinaryMask::from_fn(6, 6, |x, y| x == 0 && y == 5).unwrap();
        let (_, rect) = tight_crop(&img, &mask, 3).unwrap();
        assert_eq!((rect.x, rect.y, rect.width, rect.height), (0, 2, 4, 4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn crop_stays_in_bounds_and_covers_mask(
            bits in prop::collection::vec(prop::bool::weighted(0.1), 20 * 15),
            margin in 0u32..8,
        ) {
            prop_assume!(bits.iter().any(|&b| b));
            let mask = BinaryMask::from_fn(20, 15, |x, y| bits[(y * 20 + x) as usize]).unwrap();
            let img = gradient(20, 15);
            let (crop, rect) = tight_crop(&img, &mask, margin).unwrap();
            prop_assert!(rect.x + rect.width <= 20 && rect.y + rect.height <= 15);
            prop_assert_eq!((crop.width(), crop.height()), (rect.width, rect.height));
            for y in 0..15 {
                for x in 0..20 {
                    if mask.get(x, y) {
                        prop_assert!(rect.contains(x, y));
                        prop_assert_eq!(crop.get(x - rect.x, y - rect.y), img.get(x, y));
                    } else if rect.contains(x, y) {
                        prop_assert_eq!(crop.get(x - rect.x, y - rect.y), [0, 0, 0]);
                    }
                }
            }
        }
    }
}
