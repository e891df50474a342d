//! End-to-end single-image estimate: segmentation, height, alignment,
//! reconstruction, embedding, fusion and health metrics.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, ReconstructorKind};
use crate::embedding::{extract, EmbeddingProvider, Modality, ModalityInput, ProviderRegistry};
use crate::error::{Error, Result};
use crate::fusion::{load_params, save_params, FusionModelParams, SubjectFeatures};
use crate::geometry::{align_face, default_face_template, tight_crop};
use crate::health::{ActivityLevel, Gender, HealthReport};
use crate::height::{estimate_height, undistort, CalibrationRegistry, CameraModel};
use crate::perception::{Annotations, Annotator, FixtureAnnotator, Segmenter, ThresholdSegmenter};
use crate::raster::{Rect, RgbImage};
use crate::recon3d::{
    normalize_point_cloud, reconstruct_checked, sample_point_cloud, EllipsoidReconstructor,
    FixtureReconstructor, PointCloud, Reconstructor,
};

pub const PIPELINE_VERSION: &str = concat!("nutriscan-", env!("CARGO_PKG_VERSION"));

/// Keypoints a usable body pose must contain.
const MIN_BODY_KEYPOINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Decode,
    Undistort,
    Segment,
    Height,
    Face,
    Body,
    Reconstruct,
    Sample,
    Embed,
    Fuse,
    Health,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::Decode => "decode",
            Stage::Undistort => "undistort",
            Stage::Segment => "segment",
            Stage::Height => "height",
            Stage::Face => "face",
            Stage::Body => "body",
            Stage::Reconstruct => "reconstruct",
            Stage::Sample => "sample",
            Stage::Embed => "embed",
            Stage::Fuse => "fuse",
            Stage::Health => "health",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

/// One embedding provider per modality.
#[derive(Clone)]
pub struct ProviderSet {
    pub face: Arc<dyn EmbeddingProvider>,
    pub body: Arc<dyn EmbeddingProvider>,
    pub cloud: Arc<dyn EmbeddingProvider>,
}

impl ProviderSet {
    pub fn from_registry(reg: &ProviderRegistry, face: &str, body: &str, cloud: &str) -> Result<Self> {
        Ok(Self {
            face: reg.get_for(face, Modality::Face)?,
            body: reg.get_for(body, Modality::Body)?,
            cloud: reg.get_for(cloud, Modality::Cloud)?,
        })
    }

    pub fn get(&self, m: Modality) -> &Arc<dyn EmbeddingProvider> {
        match m {
            Modality::Face => &self.face,
            Modality::Body => &self.body,
            Modality::Cloud => &self.cloud,
        }
    }
}

impl fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderSet")
            .field("face", &self.face.descriptor().provider_name)
            .field("body", &self.body.descriptor().provider_name)
            .field("cloud", &self.cloud.descriptor().provider_name)
            .finish()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanRequest<'a> {
    pub image: &'a RgbImage,
    pub age_years: f64,
    pub gender: Gender,
    /// Falls back to the pipeline's default device.
    pub device_id: Option<&'a str>,
    /// Precomputed annotations in the (undistorted) image frame; otherwise the
    /// annotator is asked.
    pub annotations: Option<&'a Annotations>,
}

/// Per-image products shared by every provider combination.
#[derive(Debug, Clone)]
pub struct Perception {
    pub height_cm: f64,
    pub subject_rect: Rect,
    pub face_crop: RgbImage,
    pub body_crop: RgbImage,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pipeline_version: String,
    pub device_id: String,
    pub face_provider: String,
    pub body_provider: String,
    pub cloud_provider: String,
    pub reconstructor: String,
    pub params_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub height_cm: f64,
    pub weight_kg: f64,
    pub health: HealthReport,
    /// `[w_F, w_B, w_R]`.
    pub modality_weights: [f64; 3],
    pub provenance: Provenance,
}

/// What the CLI prints and the service returns for one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub record_id: String,
    /// Digest of the uploaded (encoded) image bytes.
    pub image_sha256: String,
    #[serde(flatten)]
    pub estimate: Estimate,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable id for the `ordinal`-th estimate of the same image and inputs.
pub fn record_id(image_sha256: &str, age_years: f64, gender: Gender, device_id: &str, ordinal: u64) -> String {
    let mut h = Sha256::new();
    h.update(b"nutriscan-record\0");
    h.update(image_sha256.as_bytes());
    h.update(age_years.to_le_bytes());
    h.update(gender.as_str().as_bytes());
    h.update([0]);
    h.update(device_id.as_bytes());
    h.update([0]);
    h.update(ordinal.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

pub struct Pipeline {
    pub segmenter: Arc<dyn Segmenter>,
    pub annotator: Arc<dyn Annotator>,
    pub reconstructor: Arc<dyn Reconstructor>,
    pub providers: ProviderSet,
    pub calibrations: CalibrationRegistry,
    pub default_device: String,
    pub camera: Option<CameraModel>,
    pub face_size: u32,
    pub sample_count: usize,
    pub sample_seed: u64,
    pub activity: ActivityLevel,
    params: Arc<FusionModelParams>,
    params_digest: String,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("providers", &self.providers)
            .field("reconstructor", &self.reconstructor.name())
            .field("default_device", &self.default_device)
            .field("params_sha256", &self.params_digest)
            .finish_non_exhaustive()
    }
}

fn params_digest(params: &FusionModelParams) -> Result<String> {
    Ok(hex::encode(Sha256::digest(save_params(params)?)))
}

impl Pipeline {
    /// Pipeline with the threshold segmenter, the ellipsoid reconstructor and
    /// no annotator fixtures.
    pub fn new(
        providers: ProviderSet,
        params: FusionModelParams,
        calibrations: CalibrationRegistry,
        default_device: impl Into<String>,
    ) -> Result<Self> {
        let mut p = Self {
            segmenter: Arc::new(ThresholdSegmenter::default()),
            annotator: Arc::new(FixtureAnnotator::default()),
            reconstructor: Arc::new(EllipsoidReconstructor::default()),
            providers,
            calibrations,
            default_device: default_device.into(),
            camera: None,
            face_size: 112,
            sample_count: crate::recon3d::DEFAULT_SAMPLE_COUNT,
            sample_seed: 0,
            activity: ActivityLevel::Sedentary,
            params: Arc::new(FusionModelParams::zeros(&params.architecture())?),
            params_digest: String::new(),
        };
        p.set_params(params)?;
        Ok(p)
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let bytes = std::fs::read(&cfg.model.params).map_err(|e| {
            Error::Configuration(format!("cannot read model {}: {e}", cfg.model.params.display()))
        })?;
        Self::from_config_with_params(cfg, load_params(&bytes)?)
    }

    /// As [`Pipeline::from_config`] but with `params` instead of the
    /// configured model file, e.g. before a first training run.
    pub fn from_config_with_params(cfg: &Config, params: FusionModelParams) -> Result<Self> {
        let calibrations = CalibrationRegistry::load(&cfg.calibration.registry).map_err(|e| {
            Error::Configuration(format!(
                "calibration registry {}: {e}",
                cfg.calibration.registry.display()
            ))
        })?;
        calibrations.get(&cfg.calibration.default_device)?;
        let registry =
            ProviderRegistry::synthetic(cfg.providers.seed, cfg.providers.brightness_sensitivity)?;
        let providers = ProviderSet::from_registry(
            &registry,
            &cfg.providers.face,
            &cfg.providers.body,
            &cfg.providers.cloud,
        )?;
        let mut p = Self::new(providers, params, calibrations, cfg.calibration.default_device.clone())?;
        let segmenter = ThresholdSegmenter {
            threshold: cfg.perception.segment_threshold,
        };
        if let Some(dir) = &cfg.perception.annotations_dir {
            p.annotator = Arc::new(FixtureAnnotator::from_dir(dir, &segmenter)?);
        }
        p.segmenter = Arc::new(segmenter);
        p.reconstructor = match cfg.perception.reconstructor {
            ReconstructorKind::Ellipsoid => Arc::new(EllipsoidReconstructor::default()),
            ReconstructorKind::Fixture => {
                let dir = cfg.perception.meshes_dir.as_ref().ok_or_else(|| {
                    Error::Configuration("fixture reconstructor needs perception.meshes_dir".into())
                })?;
                Arc::new(FixtureReconstructor::from_dir(dir)?)
            }
        };
        if let Some(path) = &cfg.calibration.camera {
            let text = std::fs::read_to_string(path)?;
            p.camera = Some(serde_json::from_str(&text)?);
        }
        p.face_size = cfg.pipeline.face_size;
        p.sample_count = cfg.pipeline.sample_count;
        p.sample_seed = cfg.pipeline.sample_seed;
        p.activity = cfg.pipeline.activity;
        Ok(p)
    }

    pub fn params(&self) -> &FusionModelParams {
        &self.params
    }

    pub fn params_sha256(&self) -> &str {
        &self.params_digest
    }

    /// Swaps the model; rejects parameters whose embedding width does not
    /// match the providers.
    pub fn set_params(&mut self, params: FusionModelParams) -> Result<()> {
        params.validate()?;
        if params.embed_dim() != crate::embedding::EMBEDDING_DIM {
            return Err(Error::Configuration(format!(
                "model expects {}-value embeddings, providers emit {}",
                params.embed_dim(),
                crate::embedding::EMBEDDING_DIM
            )));
        }
        self.params_digest = params_digest(&params)?;
        self.params = Arc::new(params);
        Ok(())
    }

    pub fn provenance(&self, device_id: &str) -> Provenance {
        let tag = |m: Modality| {
            let d = self.providers.get(m).descriptor();
            format!("{}@{}", d.provider_name, &d.digest[..12.min(d.digest.len())])
        };
        Provenance {
            pipeline_version: PIPELINE_VERSION.to_string(),
            device_id: device_id.to_string(),
            face_provider: tag(Modality::Face),
            body_provider: tag(Modality::Body),
            cloud_provider: tag(Modality::Cloud),
            reconstructor: format!("{}@{}", self.reconstructor.name(), &self.reconstructor.digest()[..12]),
            params_sha256: self.params_digest.clone(),
        }
    }

    fn check_request(req: &ScanRequest<'_>) -> Result<()> {
        if !req.age_years.is_finite() || req.age_years <= 0.0 || req.age_years > 130.0 {
            return Err(Error::param(format!("age must be in (0, 130] years, got {}", req.age_years)));
        }
        Ok(())
    }

    /// Runs everything up to, but not including, embedding extraction.
    pub fn perceive(&self, req: &ScanRequest<'_>) -> StageResult<Perception> {
        Self::check_request(req).at(Stage::Input)?;
        let device = req.device_id.unwrap_or(&self.default_device);
        let calibration = self.calibrations.get(device).at(Stage::Height)?;

        let corrected;
        let image = match &self.camera {
            Some(cam) => {
                corrected = undistort(req.image, cam).at(Stage::Undistort)?;
                &corrected
            }
            None => req.image,
        };

        let mask = self.segmenter.segment(image).at(Stage::Segment)?;
        let (body_crop, subject_rect) = tight_crop(image, &mask, 0).at(Stage::Segment)?;
        let height_cm = estimate_height(&subject_rect.height, calibration).at(Stage::Height)?;

        let annotated;
        let ann = match req.annotations {
            Some(a) => a,
            None => {
                annotated = self.annotator.annotate(image, &mask).at(Stage::Face)?;
                &annotated
            }
        };
        let template = default_face_template(self.face_size);
        let face_crop = align_face(image, &ann.face, template, self.face_size).at(Stage::Face)?;

        ann.body
            .validate_within(image.width(), image.height())
            .at(Stage::Body)?;
        let present = ann.body.present().count();
        if present < MIN_BODY_KEYPOINTS {
            return Err(Error::NoSubject(format!(
                "only {present} body keypoints detected, need {MIN_BODY_KEYPOINTS}"
            )))
            .at(Stage::Body);
        }

        let mesh = reconstruct_checked(self.reconstructor.as_ref(), &body_crop).at(Stage::Reconstruct)?;
        let cloud = sample_point_cloud(&mesh, self.sample_count, self.sample_seed)
            .and_then(|c| normalize_point_cloud(&c))
            .at(Stage::Sample)?;

        Ok(Perception {
            height_cm,
            subject_rect,
            face_crop,
            body_crop,
            cloud,
        })
    }

    /// Extracts the three embeddings with `providers` (or the pipeline's own).
    pub fn features(
        &self,
        perception: &Perception,
        gender: Gender,
        age_years: f64,
        providers: Option<&ProviderSet>,
    ) -> StageResult<SubjectFeatures> {
        let ps = providers.unwrap_or(&self.providers);
        let z_face = extract(ps.face.as_ref(), &ModalityInput::Face(&perception.face_crop)).at(Stage::Embed)?;
        let z_body = extract(ps.body.as_ref(), &ModalityInput::Body(&perception.body_crop)).at(Stage::Embed)?;
        let z_cloud = extract(ps.cloud.as_ref(), &ModalityInput::Cloud(&perception.cloud)).at(Stage::Embed)?;
        Ok(SubjectFeatures {
            z_face,
            z_body,
            z_cloud,
            gender,
            height_cm: perception.height_cm,
            age_years,
        })
    }

    pub fn estimate(&self, req: &ScanRequest<'_>) -> StageResult<Estimate> {
        let perception = self.perceive(req)?;
        let features = self.features(&perception, req.gender, req.age_years, None)?;
        let weight_kg = self.params.predict(&features).at(Stage::Fuse)?;
        if !weight_kg.is_finite() || weight_kg <= 0.0 {
            return Err(Error::Numeric(format!("model predicted {weight_kg} kg"))).at(Stage::Fuse);
        }
        let health = HealthReport::compute(
            weight_kg,
            perception.height_cm,
            req.age_years,
            req.gender,
            self.activity,
        )
        .at(Stage::Health)?;
        let device = req.device_id.unwrap_or(&self.default_device);
        Ok(Estimate {
            height_cm: perception.height_cm,
            weight_kg,
            health,
            modality_weights: self.params.weights(),
            provenance: self.provenance(device),
        })
    }

    pub fn resolve_device<'a>(&'a self, device_id: Option<&'a str>) -> &'a str {
        device_id.unwrap_or(&self.default_device)
    }

    /// Decodes, estimates and wraps the result with its record id.
    pub fn respond(
        &self,
        bytes: &[u8],
        age_years: f64,
        gender: Gender,
        device_id: Option<&str>,
        ordinal: u64,
    ) -> StageResult<EstimateResponse> {
        let estimate = self.estimate_bytes(bytes, age_years, gender, device_id)?;
        let image_sha256 = sha256_hex(bytes);
        Ok(EstimateResponse {
            record_id: record_id(&image_sha256, age_years, gender, self.resolve_device(device_id), ordinal),
            image_sha256,
            estimate,
        })
    }

    /// Decodes an encoded image and runs [`Pipeline::estimate`].
    pub fn estimate_bytes(
        &self,
        bytes: &[u8],
        age_years: f64,
        gender: Gender,
        device_id: Option<&str>,
    ) -> StageResult<Estimate> {
        let image = RgbImage::decode(bytes).at(Stage::Decode)?;
        self.estimate(&ScanRequest {
            image: &image,
            age_years,
            gender,
            device_id,
            annotations: None,
        })
    }
}
