//! TOML configuration shared by the CLI and the service. Relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::health::ActivityLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(default)]
    pub perception: PerceptionConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub store: StoreConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub params: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub registry: PathBuf,
    pub default_device: String,
    /// Optional JSON camera model; when set, captures are undistorted first.
    #[serde(default)]
    pub camera: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProvidersConfig {
    pub face: String,
    pub body: String,
    pub cloud: String,
    pub seed: u64,
    pub brightness_sensitivity: f64,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            face: "vggface-sim".into(),
            body: "xception-sim".into(),
            cloud: "pointnet-sim".into(),
            seed: 0,
            brightness_sensitivity: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructorKind {
    #[default]
    Ellipsoid,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionConfig {
    /// Directory of images with annotation sidecars replayed by the fixture
    /// annotator.
    pub annotations_dir: Option<PathBuf>,
    pub segment_threshold: u8,
    pub reconstructor: ReconstructorKind,
    /// Directory of `name.png` / `name.obj` pairs for the fixture reconstructor.
    pub meshes_dir: Option<PathBuf>,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            annotations_dir: None,
            segment_threshold: 250,
            reconstructor: ReconstructorKind::Ellipsoid,
            meshes_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub face_size: u32,
    pub sample_count: usize,
    pub sample_seed: u64,
    pub activity: ActivityLevel,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            face_size: 112,
            sample_count: crate::recon3d::DEFAULT_SAMPLE_COUNT,
            sample_seed: 0,
            activity: ActivityLevel::Sedentary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoreConfig {
    pub dir: PathBuf,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("store"),
        }
    }
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Config =
            toml::from_str(text).map_err(|e| Error::Configuration(e.message().to_string()))?;
        cfg.resolve(base_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Applies a dotted `section.key=value` override, e.g. `providers.seed=3`.
    pub fn apply_override(&mut self, assignment: &str, base_dir: &Path) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Configuration(format!("override `{assignment}` is not key=value")))?;
        let mut doc: toml::Table = toml::from_str(
            &toml::to_string(self).map_err(|e| Error::Configuration(e.to_string()))?,
        )
        .map_err(|e| Error::Configuration(e.to_string()))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, sections) = parts.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for s in sections {
            table = table
                .entry(s.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .ok_or_else(|| Error::Configuration(format!("`{s}` is not a section")))?;
        }
        let raw = value.trim();
        let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        table.insert(last.to_string(), parsed);
        let text = toml::to_string(&doc).map_err(|e| Error::Configuration(e.to_string()))?;
        *self = Self::parse(&text, base_dir)?;
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.model.params);
        fix(&mut self.calibration.registry);
        if let Some(p) = self.calibration.camera.as_mut() {
            fix(p);
        }
        if let Some(p) = self.perception.annotations_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.perception.meshes_dir.as_mut() {
            fix(p);
        }
        fix(&mut self.store.dir);
    }
}
