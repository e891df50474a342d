//! Injected detectors: subject segmentation and face/body annotation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{BodyKeypoints, FaceLandmarks, Keypoint, Point2, BODY_KEYPOINT_COUNT, FACE_LANDMARK_COUNT};
use crate::raster::{BinaryMask, RgbImage};

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &RgbImage) -> Result<BinaryMask>;
}

/// Marks a pixel as subject when any channel is below `threshold`. Suits
/// captures against a bright uniform backdrop.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdSegmenter {
    pub threshold: u8,
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        Self { threshold: 250 }
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&self, image: &RgbImage) -> Result<BinaryMask> {
        BinaryMask::from_fn(image.width(), image.height(), |x, y| {
            image.get(x, y).iter().any(|&c| c < self.threshold)
        })
    }
}

/// Landmarks and keypoints for the single subject in an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations {
    pub face: FaceLandmarks,
    pub body: BodyKeypoints,
}

impl Annotations {
    /// Sidecar text: a `# face` section of 68 `index x y confidence` lines and a
    /// `# body` section listing the detected keypoints the same way.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::from("# face\n");
        let conf = self.face.detection_confidence;
        for (i, p) in self.face.points().iter().enumerate() {
            let _ = writeln!(out, "{i} {:?} {:?} {conf:?}", p.x, p.y);
        }
        out.push_str("# body\n");
        for (i, k) in self.body.present() {
            let _ = writeln!(out, "{i} {:?} {:?} {:?}", k.position.x, k.position.y, k.confidence);
        }
        out
    }

    pub fn parse_sidecar(text: &str) -> Result<Self> {
        enum Section {
            None,
            Face,
            Body,
        }
        let mut section = Section::None;
        let mut face: Vec<Option<(Point2, f64)>> = vec![None; FACE_LANDMARK_COUNT];
        let mut body: Vec<Option<Keypoint>> = vec![None; BODY_KEYPOINT_COUNT];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(tag) = line.strip_prefix('#') {
                section = match tag.trim() {
                    "face" => Section::Face,
                    "body" => Section::Body,
                    _ => section,
                };
                continue;
            }
            let bad = |msg: &str| Error::Ingestion {
                line: n + 1,
                message: format!("{msg}: `{line}`"),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad("expected `index x y confidence`"));
            }
            let idx: usize = fields[0].parse().map_err(|_| bad("bad index"))?;
            let nums: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad number"))?;
            let (p, c) = (Point2::new(nums[0], nums[1]), nums[2]);
            match section {
                Section::Face if idx < FACE_LANDMARK_COUNT => face[idx] = Some((p, c)),
                Section::Body if idx < BODY_KEYPOINT_COUNT => {
                    body[idx] = Some(Keypoint {
                        position: p,
                        confidence: c,
                    })
                }
                Section::None => return Err(bad("line outside a section")),
                _ => return Err(bad("index out of range")),
            }
        }
        if let Some(i) = face.iter().position(Option::is_none) {
            return Err(Error::Ingestion {
                line: 0,
                message: format!("face landmark {i} missing from sidecar"),
            });
        }
        let face: Vec<(Point2, f64)> = face.into_iter().flatten().collect();
        let conf = face.iter().map(|f| f.1).fold(1.0, f64::min);
        Ok(Self {
            face: FaceLandmarks::new(face.into_iter().map(|f| f.0).collect(), conf)?,
            body: BodyKeypoints::new(body)?,
        })
    }

    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_sidecar(&std::fs::read_to_string(path)?)
    }
}

/// Sidecar path for an image: `scene.png` -> `scene.keypoints.txt`.
pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.keypoints.txt"))
}

pub trait Annotator: Send + Sync {
    /// Detects the subject's face landmarks and body keypoints. `mask` is the
    /// segmentation of `image`.
    fn annotate(&self, image: &RgbImage, mask: &BinaryMask) -> Result<Annotations>;
}

/// Replays recorded annotations, looked up by the digest of the subject mask.
#[derive(Debug, Clone, Default)]
pub struct FixtureAnnotator {
    by_mask: BTreeMap<String, Annotations>,
}

impl FixtureAnnotator {
    pub fn insert(&mut self, mask: &BinaryMask, annotations: Annotations) {
        self.by_mask.insert(mask.digest(), annotations);
    }

    pub fn len(&self) -> usize {
        self.by_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_mask.is_empty()
    }

    /// Loads every `*.png` in `dir` that has a sidecar, segmenting it with
    /// `segmenter` to build the lookup key.
    pub fn from_dir(dir: impl AsRef<Path>, segmenter: &dyn Segmenter) -> Result<Self> {
        let mut out = Self::default();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        entries.sort();
        for png in entries {
            let side = sidecar_path(&png);
            if !side.exists() {
                continue;
            }
            let mask = segmenter.segment(&RgbImage::open(&png)?)?;
            out.insert(&mask, Annotations::load_sidecar(&side)?);
        }
        Ok(out)
    }
}

impl Annotator for FixtureAnnotator {
    fn annotate(&self, _image: &RgbImage, mask: &BinaryMask) -> Result<Annotations> {
        self.by_mask
            .get(&mask.digest())
            .cloned()
            .ok_or_else(|| Error::NoSubject("no face or body annotations recorded for this subject".into()))
    }
}
