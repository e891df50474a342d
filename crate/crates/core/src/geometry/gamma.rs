use crate::error::{Error, Result};
use crate::raster::RgbImage;

/// Which way a gamma above one moves intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaDirection {
    /// `v' = 255 (v/255)^(1/gamma)`: gamma > 1 brightens.
    #[default]
    Brighten,
    /// `v' = 255 (v/255)^gamma`: gamma > 1 darkens.
    Darken,
}

/// Power-law intensity remap with the default (brightening) convention.
pub fn apply_gamma(image: &RgbImage, gamma: f64) -> Result<RgbImage> {
    apply_gamma_with(image, gamma, GammaDirection::Brighten)
}

pub fn apply_gamma_with(
    image: &RgbImage,
    gamma: f64,
    direction: GammaDirection,
) -> Result<RgbImage> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::param(format!("gamma must be positive, got {gamma}")));
    }
    let exponent = match direction {
        GammaDirection::Brighten => 1.0 / gamma,
        GammaDirection::Darken => gamma,
    };
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = (255.0 * (v as f64 / 255.0).powf(exponent)).round() as u8;
    }
    Ok(image.map_channels(|v| lut[v as usize]))
}
