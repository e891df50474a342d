use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    synthetic_embed, EmbeddingProvider, EmbeddingVector, ExtractorDescriptor, Modality,
    ModalityInput, SyntheticSignal,
};
use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::recon3d::PointCloud;
use crate::synth::SKIN_RGB;

/// Built-in synthetic variants: name, modality, measurement jitter.
///
/// Each stands in for one extractor architecture so the ablation grid can
/// enumerate combinations.
pub const SYNTHETIC_VARIANTS: [(&str, Modality, f64); 7] = [
    ("vggface-sim", Modality::Face, 0.01),
    ("facenet-sim", Modality::Face, 0.03),
    ("xception-sim", Modality::Body, 0.01),
    ("resnet152-sim", Modality::Body, 0.03),
    ("pointnet-sim", Modality::Cloud, 0.01),
    ("dgcnn-sim", Modality::Cloud, 0.04),
    ("gbnet-sim", Modality::Cloud, 0.025),
];

const SYNTHETIC_VERSION: &str = "2";

/// Proxy measured on the BMI-22 mannequin, per modality.
const REFERENCE_PROXY: [f64; 3] = [0.67, 0.255, 0.272];

/// Emitted signal is `PROXY_GAIN * (proxy / reference - 1)`, so a 10% wider
/// subject moves the signal coordinate by about 1.
const PROXY_GAIN: f64 = 10.0;

/// Deterministic provider that measures a body-shape proxy from its input and
/// embeds it with [`synthetic_embed`].
///
/// The proxy is the face width in an aligned crop, the torso width of a body
/// crop, or the width/height ratio of a point cloud. With a non-zero
/// `brightness_sensitivity`, image providers inflate the proxy by
/// `s * |ln(m / m_ref)|` where `m` is the median subject brightness, which
/// makes them degrade under exposure changes like a real network would.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    descriptor: ExtractorDescriptor,
    seed: u64,
    jitter: f64,
    brightness_sensitivity: f64,
    reference_brightness: f64,
}

impl SyntheticProvider {
    pub fn new(name: &str, modality: Modality, seed: u64, jitter: f64) -> Result<Self> {
        let reference = (SKIN_RGB[0] as u32 + SKIN_RGB[1] as u32 + SKIN_RGB[2] as u32) as f64 / 765.0;
        Self::build(name, modality, seed, jitter, 0.0, reference)
    }

    pub fn with_brightness_sensitivity(self, sensitivity: f64) -> Result<Self> {
        Self::build(
            &self.descriptor.provider_name,
            self.descriptor.modality,
            self.seed,
            self.jitter,
            sensitivity,
            self.reference_brightness,
        )
    }

    fn build(
        name: &str,
        modality: Modality,
        seed: u64,
        jitter: f64,
        brightness_sensitivity: f64,
        reference_brightness: f64,
    ) -> Result<Self> {
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(Error::param(format!("jitter must be >= 0, got {jitter}")));
        }
        if !(brightness_sensitivity.is_finite() && brightness_sensitivity >= 0.0) {
            return Err(Error::param(format!(
                "brightness sensitivity must be >= 0, got {brightness_sensitivity}"
            )));
        }
        let mut h = Sha256::new();
        for part in [name, SYNTHETIC_VERSION, modality.as_str()] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        h.update(seed.to_le_bytes());
        h.update(jitter.to_le_bytes());
        h.update(brightness_sensitivity.to_le_bytes());
        h.update(reference_brightness.to_le_bytes());
        Ok(Self {
            descriptor: ExtractorDescriptor {
                modality,
                provider_name: name.to_string(),
                version: SYNTHETIC_VERSION.to_string(),
                digest: hex::encode(h.finalize()),
            },
            seed,
            jitter,
            brightness_sensitivity,
            reference_brightness,
        })
    }

    fn measure(&self, input: &ModalityInput<'_>) -> f64 {
        let (mut proxy, brightness) = match input {
            ModalityInput::Face(img) => (band_width(img, 0.45, 0.65, img.width()), median_brightness(img)),
            ModalityInput::Body(img) => (band_width(img, 0.25, 0.50, img.height()), median_brightness(img)),
            ModalityInput::Cloud(cloud) => (cloud_aspect(cloud), None),
        };
        if let Some(m) = brightness {
            if self.brightness_sensitivity > 0.0 && m > 0.0 {
                proxy *= 1.0 + self.brightness_sensitivity * (m / self.reference_brightness).ln().abs();
            }
        }
        proxy
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn descriptor(&self) -> &ExtractorDescriptor {
        &self.descriptor
    }

    fn embed(&self, input: &ModalityInput<'_>) -> Result<EmbeddingVector> {
        let payload = input.payload();
        let mut proxy = self.measure(input);
        if self.jitter > 0.0 {
            let mut h = Sha256::new();
            h.update(self.descriptor.digest.as_bytes());
            h.update(&payload);
            let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
            let n: f64 = StandardNormal.sample(&mut rng);
            proxy += self.jitter * n;
        }
        let reference = REFERENCE_PROXY[self.descriptor.modality.index()];
        let signal = SyntheticSignal {
            adiposity: PROXY_GAIN * (proxy / reference - 1.0),
            ..Default::default()
        };
        synthetic_embed(&payload, self.descriptor.modality, self.seed, signal)
            .map_err(|e| Error::provider(&self.descriptor.provider_name, e.to_string()))
    }
}

/// A pixel that is neither zeroed background nor near-white backdrop.
fn is_subject_tone(rgb: [u8; 3]) -> bool {
    rgb.iter().any(|&c| c > 0) && rgb.iter().any(|&c| c < 250)
}

/// Mean count of subject pixels per row over the `[lo, hi)` fraction of rows,
/// divided by `denom`.
fn band_width(img: &RgbImage, lo: f64, hi: f64, denom: u32) -> f64 {
    let h = img.height() as f64;
    let y0 = (lo * h).round() as u32;
    let y1 = ((hi * h).round() as u32).clamp(y0 + 1, img.height());
    let y0 = y0.min(y1 - 1);
    let mut total = 0u64;
    for y in y0..y1 {
        total += (0..img.width()).filter(|&x| is_subject_tone(img.get(x, y))).count() as u64;
    }
    total as f64 / (y1 - y0) as f64 / denom as f64
}

/// Median over subject pixels of the mean channel value, in [0, 1].
fn median_brightness(img: &RgbImage) -> Option<f64> {
    let mut sums: Vec<u32> = img
        .pixels()
        .chunks_exact(3)
        .filter(|p| is_subject_tone([p[0], p[1], p[2]]))
        .map(|p| p[0] as u32 + p[1] as u32 + p[2] as u32)
        .collect();
    if sums.is_empty() {
        return None;
    }
    let mid = sums.len() / 2;
    let (_, m, _) = sums.select_nth_unstable(mid);
    Some(*m as f64 / 765.0)
}

fn cloud_aspect(cloud: &PointCloud) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &cloud.points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if y1 - y0 > 1e-12 {
        (x1 - x0) / (y1 - y0)
    } else {
        0.0
    }
}

/// Providers addressable by name from configuration.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    providers: BTreeMap<String, Arc<dyn EmbeddingProvider>>,
}

impl ProviderRegistry {
    /// All [`SYNTHETIC_VARIANTS`] with the given seed and brightness sensitivity.
    pub fn synthetic(seed: u64, brightness_sensitivity: f64) -> Result<Self> {
        let mut reg = Self::default();
        for (name, modality, jitter) in SYNTHETIC_VARIANTS {
            let p = SyntheticProvider::new(name, modality, seed, jitter)?
                .with_brightness_sensitivity(brightness_sensitivity)?;
            reg.insert(Arc::new(p));
        }
        Ok(reg)
    }

    pub fn insert(&mut self, provider: Arc<dyn EmbeddingProvider>) {
        self.providers
            .insert(provider.descriptor().provider_name.clone(), provider);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn EmbeddingProvider>> {
        self.providers
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Configuration(format!("no embedding provider named `{name}`")))
    }

    /// Looks up `name` and checks it serves `modality`.
    pub fn get_for(&self, name: &str, modality: Modality) -> Result<Arc<dyn EmbeddingProvider>> {
        let p = self.get(name)?;
        if p.descriptor().modality != modality {
            return Err(Error::Configuration(format!(
                "provider `{name}` serves {}, not {modality}",
                p.descriptor().modality
            )));
        }
        Ok(p)
    }

    pub fn names(&self, modality: Modality) -> Vec<String> {
        self.providers
            .values()
            .filter(|p| p.descriptor().modality == modality)
            .map(|p| p.descriptor().provider_name.clone())
            .collect()
    }
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.providers.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::extract;
    use crate::recon3d::Vec3;

    fn figure(width: u32, color: [u8; 3]) -> RgbImage {
        let mut img = RgbImage::filled(40, 40, [255, 255, 255]).unwrap();
        for y in 5..35 {
            for x in (20 - width / 2)..(20 + width / 2) {
                img.put(x, y, color);
            }
        }
        img
    }

    #[test]
    fn proxy_tracks_width() {
        let p = SyntheticProvider::new("t", Modality::Face, 0, 0.0).unwrap();
        let narrow = p.embed(&ModalityInput::Face(&figure(10, SKIN_RGB))).unwrap();
        let wide = p.embed(&ModalityInput::Face(&figure(20, SKIN_RGB))).unwrap();
        let signal = |proxy: f64| PROXY_GAIN * (proxy / REFERENCE_PROXY[0] - 1.0);
        assert!((narrow.values()[2] - signal(0.25)).abs() < 1e-12);
        assert!((wide.values()[2] - signal(0.5)).abs() < 1e-12);
    }

    #[test]
    fn brightness_knob_is_zero_at_reference() {
        let base = SyntheticProvider::new("t", Modality::Body, 0, 0.0).unwrap();
        let knob = base.clone().with_brightness_sensitivity(1.0).unwrap();
        let img = figure(12, SKIN_RGB);
        let a = base.embed(&ModalityInput::Body(&img)).unwrap();
        let b = knob.embed(&ModalityInput::Body(&img)).unwrap();
        assert_eq!(a.values()[2], b.values()[2]);

        let bright = figure(12, [220, 190, 170]);
        let c = knob.embed(&ModalityInput::Body(&bright)).unwrap();
        assert!(c.values()[2] > a.values()[2]);
        assert_ne!(base.descriptor().digest, knob.descriptor().digest);
    }

    #[test]
    fn modality_mismatch_is_contract_error() {
        let reg = ProviderRegistry::synthetic(0, 0.0).unwrap();
        let face = reg.get("vggface-sim").unwrap();
        let pts = (0..256)
            .map(|i| Vec3::new(i as f64, (i * 7 % 13) as f64, 1.0))
            .collect();
        let cloud = PointCloud::new(pts, "t").unwrap();
        assert!(matches!(
            extract(face.as_ref(), &ModalityInput::Cloud(&cloud)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn registry_lookup() {
        let reg = ProviderRegistry::synthetic(1, 0.0).unwrap();
        assert_eq!(reg.names(Modality::Cloud).len(), 3);
        assert!(matches!(reg.get("nope"), Err(Error::Configuration(_))));
        assert!(reg.get_for("dgcnn-sim", Modality::Face).is_err());
        let a = reg.get("pointnet-sim").unwrap().descriptor().digest.clone();
        let b = ProviderRegistry::synthetic(1, 0.0).unwrap().get("pointnet-sim").unwrap().descriptor().digest.clone();
        assert_eq!(a, b);
    }
}
