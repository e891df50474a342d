//! 512-dimensional unimodal embeddings and the provider contract.

mod synthetic;

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::RgbImage;
use crate::recon3d::PointCloud;

pub use synthetic::{ProviderRegistry, SyntheticProvider, SYNTHETIC_VARIANTS};

pub const EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Body,
    Cloud,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Face, Modality::Body, Modality::Cloud];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Body => "body",
            Modality::Cloud => "cloud",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(Modality::Face),
            "body" => Ok(Modality::Body),
            "cloud" => Ok(Modality::Cloud),
            other => Err(Error::param(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    modality: Modality,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, modality: Modality) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::Contract(format!(
                "{modality} embedding has {} values, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "{modality} embedding value {i} is not finite"
            )));
        }
        Ok(Self { values, modality })
    }

    /// All-zero vector, used when a modality is ablated.
    pub fn zeros(modality: Modality) -> Self {
        Self {
            values: vec![0.0; EMBEDDING_DIM],
            modality,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Writes `# modality=... digest=...` followed by one value per line.
    pub fn to_text(&self, descriptor_digest: &str) -> String {
        let mut out = format!("# modality={} digest={descriptor_digest}\n", self.modality);
        for v in &self.values {
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    /// Parses [`EmbeddingVector::to_text`] output, returning the vector and the
    /// descriptor digest it was pinned to.
    pub fn from_text(text: &str) -> Result<(Self, String)> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty embedding file".into()))?;
        let mut modality = None;
        let mut digest = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("modality", m)) => modality = Some(m.parse::<Modality>()?),
                Some(("digest", d)) => digest = Some(d.to_string()),
                _ => {}
            }
        }
        let (Some(modality), Some(digest)) = (modality, digest) else {
            return Err(Error::Format("embedding header lacks modality or digest".into()));
        };
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad embedding value `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((Self::new(values, modality)?, digest))
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<(Self, String)> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Identity of an extractor build.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorDescriptor {
    pub modality: Modality,
    pub provider_name: String,
    pub version: String,
    /// Opaque digest of the provider's internal parameters.
    pub digest: String,
}

/// Preprocessed input for one modality.
#[derive(Debug, Clone, Copy)]
pub enum ModalityInput<'a> {
    /// Aligned face crop.
    Face(&'a RgbImage),
    /// Subject crop with background pixels zeroed.
    Body(&'a RgbImage),
    /// Normalized point cloud.
    Cloud(&'a PointCloud),
}

impl ModalityInput<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            ModalityInput::Face(_) => Modality::Face,
            ModalityInput::Body(_) => Modality::Body,
            ModalityInput::Cloud(_) => Modality::Cloud,
        }
    }

    /// Canonical byte encoding used to seed synthetic noise.
    pub fn payload(&self) -> Vec<u8> {
        match self {
            ModalityInput::Face(img) | ModalityInput::Body(img) => {
                let mut out = Vec::with_capacity(8 + img.pixels().len());
                out.extend_from_slice(&img.width().to_le_bytes());
                out.extend_from_slice(&img.height().to_le_bytes());
                out.extend_from_slice(img.pixels());
                out
            }
            ModalityInput::Cloud(cloud) => {
                let mut out = Vec::with_capacity(cloud.points.len() * 24);
                for p in &cloud.points {
                    for c in p.to_array() {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                out
            }
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> &ExtractorDescriptor;

    /// Called only with inputs whose modality matches the descriptor.
    fn embed(&self, input: &ModalityInput<'_>) -> Result<EmbeddingVector>;
}

/// Runs `provider` on `input`, enforcing the modality and output contract.
pub fn extract(provider: &dyn EmbeddingProvider, input: &ModalityInput<'_>) -> Result<EmbeddingVector> {
    let desc = provider.descriptor();
    if input.modality() != desc.modality {
        return Err(Error::Contract(format!(
            "{} input given to {} provider `{}`",
            input.modality(),
            desc.modality,
            desc.provider_name
        )));
    }
    let out = provider.embed(input)?;
    if out.modality() != desc.modality || out.values().len() != EMBEDDING_DIM {
        return Err(Error::Contract(format!(
            "provider `{}` returned a malformed {} embedding",
            desc.provider_name,
            out.modality()
        )));
    }
    Ok(out)
}

/// Ground-truth quantities the synthetic embedding encodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSignal {
    pub weight_kg: f64,
    pub height_cm: f64,
    pub adiposity: f64,
}

/// Seeded stand-in for a pretrained extractor.
///
/// Coordinates 0, 1, 2 hold `weight_kg / 100`, `height_cm / 100` and
/// `adiposity`. Coordinates 3.. hold a unit-norm Gaussian direction drawn from
/// a generator keyed by the payload, the modality and `seed`.
pub fn synthetic_embed(
    payload: &[u8],
    modality: Modality,
    seed: u64,
    signal: SyntheticSignal,
) -> Result<EmbeddingVector> {
    let encoded = [signal.weight_kg / 100.0, signal.height_cm / 100.0, signal.adiposity];
    if encoded.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("synthetic signal is not finite: {signal:?}")));
    }
    let mut h = Sha256::new();
    h.update(b"nutriscan-synthetic-embedding");
    h.update([modality as u8]);
    h.update(seed.to_le_bytes());
    h.update(payload);
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());

    let mut values = vec![0.0; EMBEDDING_DIM];
    let mut norm2 = 0.0;
    for v in &mut values[3..] {
        let x: f64 = StandardNormal.sample(&mut rng);
        *v = x;
        norm2 += x * x;
    }
    let inv = 1.0 / norm2.sqrt();
    for v in &mut values[3..] {
        *v *= inv;
    }
    values[..3].copy_from_slice(&encoded);
    EmbeddingVector::new(values, modality)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_is_unit_noise() {
        for seed in 0..5 {
            let v = synthetic_embed(b"abc", Modality::Body, seed, SyntheticSignal::default()).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-9);
            assert_eq!(&v.values()[..3], &[0.0; 3]);
        }
    }

    #[test]
    fn weight_only_moves_coordinate_zero() {
        let s = SyntheticSignal {
            weight_kg: 70.0,
            height_cm: 170.0,
            adiposity: 1.1,
        };
        let a = synthetic_embed(b"same", Modality::Face, 3, s).unwrap();
        let b = synthetic_embed(b"same", Modality::Face, 3, SyntheticSignal { weight_kg: 85.0, ..s }).unwrap();
        let diff: Vec<usize> = (0..EMBEDDING_DIM)
            .filter(|&i| a.values()[i] != b.values()[i])
            .collect();
        assert_eq!(diff, vec![0]);
    }

    #[test]
    fn modality_and_seed_change_noise() {
        let s = SyntheticSignal::default();
        let a = synthetic_embed(b"x", Modality::Face, 1, s).unwrap();
        let b = synthetic_embed(b"x", Modality::Body, 1, s).unwrap();
        let c = synthetic_embed(b"x", Modality::Face, 2, s).unwrap();
        assert_ne!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        assert_eq!(a, synthetic_embed(b"x", Modality::Face, 1, s).unwrap());
    }

    #[test]
    fn non_finite_signal_is_rejected() {
        let s = SyntheticSignal {
            weight_kg: f64::NAN,
            ..Default::default()
        };
        assert!(matches!(synthetic_embed(b"", Modality::Cloud, 0, s), Err(Error::Data(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let v = synthetic_embed(b"rt", Modality::Cloud, 9, SyntheticSignal { weight_kg: 61.3, height_cm: 158.2, adiposity: 0.93 }).unwrap();
        let (back, digest) = EmbeddingVector::from_text(&v.to_text("abc123")).unwrap();
        assert_eq!(back, v);
        assert_eq!(digest, "abc123");
    }

    #[test]
    fn wrong_length_is_a_contract_error() {
        assert!(matches!(
            EmbeddingVector::new(vec![0.0; 511], Modality::Face),
            Err(Error::Contract(_))
        ));
    }
}
