//! Manifest ingestion, regression and confusion metrics, provider/feature
//! ablations and lighting sweeps.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingVector, Modality, ProviderRegistry};
use crate::error::{Error, Result};
use crate::fusion::{fit_with_validation, FusionModelParams, Sample, SubjectFeatures, TrainingConfig};
use crate::geometry::apply_gamma;
use crate::health::{classify_malnutrition, Classification, Gender};
use crate::perception::{sidecar_path, Annotations};
use crate::pipeline::{Perception, Pipeline, ProviderSet, ScanRequest, StageError};
use crate::raster::RgbImage;
use crate::synth::{render_scene, synthetic_cohort, SubjectSpec};

pub use crate::fusion::feature_importance;

pub const MANIFEST_SCHEMA: u32 = 1;

/// Relative slack on `rmse >= mae`, which can fail by an ulp when every
/// absolute error is equal.
const JENSEN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Heldout,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Heldout => "heldout",
        }
    }
}

fn default_schema() -> u32 {
    MANIFEST_SCHEMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRecord {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub record_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image_path: PathBuf,
    pub subject_id: String,
    pub gender: Gender,
    pub age_years: f64,
    #[serde(default)]
    pub true_height_cm: Option<f64>,
    pub true_weight_kg: f64,
    pub split: Split,
    #[serde(default)]
    pub device_tag: String,
    #[serde(default)]
    pub pose_tag: String,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::Data(format!(
                "unsupported manifest schema {} (expected {MANIFEST_SCHEMA})",
                self.schema
            )));
        }
        if self.record_id.trim().is_empty() {
            return Err(Error::Data("record_id is empty".into()));
        }
        if self.image_path.as_os_str().is_empty() {
            return Err(Error::Data("image_path is empty".into()));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Data(format!("{name} must be positive, got {v}")))
            }
        };
        positive("true_weight_kg", self.true_weight_kg)?;
        positive("age_years", self.age_years)?;
        if let Some(h) = self.true_height_cm {
            positive("true_height_cm", h)?;
        }
        Ok(())
    }

    pub fn resolved_image(&self, base_dir: &Path) -> PathBuf {
        if self.image_path.is_relative() {
            base_dir.join(&self.image_path)
        } else {
            self.image_path.clone()
        }
    }
}

/// Parses line-delimited records. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_manifest(text: &str) -> Result<Vec<SubjectRecord>> {
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ingest = |message: String| Error::Ingestion {
            line: line_no,
            message,
        };
        let rec: SubjectRecord = serde_json::from_str(line).map_err(|e| ingest(e.to_string()))?;
        rec.validate().map_err(|e| ingest(e.to_string()))?;
        if let Some(first) = seen.insert(rec.record_id.clone(), line_no) {
            return Err(ingest(format!(
                "duplicate record_id `{}` (first seen on line {first})",
                rec.record_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SubjectRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let records = parse_manifest(&text)?;
    let counts = split_counts(&records);
    tracing::info!(path = %path.display(), ?counts, "manifest loaded");
    Ok(records)
}

pub fn write_manifest(records: &[SubjectRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn split_counts(records: &[SubjectRecord]) -> BTreeMap<Split, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.split).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl RegressionMetrics {
    /// `rmse >= mae >= 0` and `r2 <= 1`.
    pub fn check(&self) -> Result<()> {
        let ok = self.mae >= 0.0
            && self.rmse >= self.mae * (1.0 - JENSEN_SLACK)
            && self.r2 <= 1.0
            && [self.mae, self.rmse, self.r2].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric(format!("inconsistent regression metrics {self:?}")))
        }
    }
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::param(format!(
            "{} predictions for {} ground-truth values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::param("metrics need at least one value"));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::Data("metrics inputs must be finite".into()));
    }
    let n = pred.len() as f64;
    let mean_t = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean_t).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Numeric("r2 undefined: ground truth has zero variance".into()));
    }
    let abs: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let m = RegressionMetrics {
        mae: abs / n,
        rmse: (ss_res / n).sqrt(),
        r2: 1.0 - ss_res / ss_tot,
    };
    m.check()?;
    Ok(m)
}

/// Counts over the malnourished (positive) class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: Classification, actual: Classification) {
        let p = predicted == Classification::Malnourished;
        let a = actual == Classification::Malnourished;
        match (p, a) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Fractions in `[0, 1]`; `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn confusion_metrics(c: &ConfusionCounts) -> Result<ConfusionMetrics> {
    if c.total() == 0 {
        return Err(Error::param("confusion counts are all zero"));
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(ConfusionMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
    })
}

/// One evaluated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub device_tag: String,
    pub pred_weight_kg: f64,
    pub true_weight_kg: f64,
    pub pred_height_cm: f64,
    pub true_height_cm: Option<f64>,
}

impl Prediction {
    pub fn predicted_bmi(&self) -> f64 {
        self.pred_weight_kg / (self.pred_height_cm / 100.0).powi(2)
    }

    /// Uses the measured height when known, else the estimated one.
    pub fn true_bmi(&self) -> f64 {
        let h = self.true_height_cm.unwrap_or(self.pred_height_cm);
        self.true_weight_kg / (h / 100.0).powi(2)
    }
}

/// Malnutrition confusion counts from predicted versus actual BMI.
pub fn classify_predictions(preds: &[Prediction]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for p in preds {
        c.record(classify_malnutrition(p.predicted_bmi()), classify_malnutrition(p.true_bmi()));
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub face: String,
    pub body: String,
    pub cloud: String,
    pub mask: String,
    pub gamma: Option<f64>,
    pub n: usize,
    pub weight: RegressionMetrics,
    pub height: Option<RegressionMetrics>,
    pub modality_weights: [f64; 3],
}

impl EvalReport {
    fn build(cell: &AblationCell, gamma: Option<f64>, preds: &[Prediction], params: &FusionModelParams) -> Result<Self> {
        let pw: Vec<f64> = preds.iter().map(|p| p.pred_weight_kg).collect();
        let tw: Vec<f64> = preds.iter().map(|p| p.true_weight_kg).collect();
        let weight = regression_metrics(&pw, &tw)?;
        let height = if preds.iter().all(|p| p.true_height_cm.is_some()) {
            let ph: Vec<f64> = preds.iter().map(|p| p.pred_height_cm).collect();
            let th: Vec<f64> = preds.iter().filter_map(|p| p.true_height_cm).collect();
            regression_metrics(&ph, &th).ok()
        } else {
            None
        };
        Ok(Self {
            face: cell.face.clone(),
            body: cell.body.clone(),
            cloud: cell.cloud.clone(),
            mask: mask_label(cell.mask),
            gamma,
            n: preds.len(),
            weight,
            height,
            modality_weights: feature_importance(params),
        })
    }
}

/// `FF`, `BF` and `DF` for face, body and 3D features, joined with `+`.
pub fn mask_label(mask: [bool; 3]) -> String {
    let names = ["FF", "BF", "DF"];
    let on: Vec<&str> = names.iter().zip(mask).filter(|(_, m)| *m).map(|(n, _)| *n).collect();
    if on.is_empty() {
        "none".into()
    } else {
        on.join("+")
    }
}

pub fn parse_mask(label: &str) -> Result<[bool; 3]> {
    let mut mask = [false; 3];
    for part in label.split('+') {
        let i = match part.trim() {
            "FF" => 0,
            "BF" => 1,
            "DF" => 2,
            other => return Err(Error::param(format!("unknown feature set `{other}`"))),
        };
        mask[i] = true;
    }
    Ok(mask)
}

/// Every non-empty subset: singles, pairs, then all three.
pub fn feature_subsets() -> Vec<[bool; 3]> {
    vec![
        [true, false, false],
        [false, true, false],
        [false, false, true],
        [true, true, false],
        [true, false, true],
        [false, true, true],
        [true, true, true],
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub face: String,
    pub body: String,
    pub cloud: String,
    pub mask: [bool; 3],
}

/// Cartesian product of extractor choices with every modality enabled.
pub fn provider_grid(face: &[String], body: &[String], cloud: &[String]) -> Vec<AblationCell> {
    let mut out = Vec::new();
    for f in face {
        for b in body {
            for c in cloud {
                out.push(AblationCell {
                    face: f.clone(),
                    body: b.clone(),
                    cloud: c.clone(),
                    mask: [true; 3],
                });
            }
        }
    }
    out
}

pub fn mask_grid(face: &str, body: &str, cloud: &str, masks: &[[bool; 3]]) -> Vec<AblationCell> {
    masks
        .iter()
        .map(|&mask| AblationCell {
            face: face.into(),
            body: body.into(),
            cloud: cloud.into(),
            mask,
        })
        .collect()
}

/// A manifest record with its per-image pipeline products.
#[derive(Debug, Clone)]
pub struct PerceivedRecord {
    pub record: SubjectRecord,
    pub perception: Perception,
}

fn stage_error(rec: &SubjectRecord, e: StageError) -> Error {
    Error::Data(format!("record `{}`: {e}", rec.record_id))
}

/// Loads the record's image (gamma-corrected unless `gamma` is 1) and
/// sidecar, and runs perception.
pub fn perceive_record(
    pipeline: &Pipeline,
    base_dir: &Path,
    rec: &SubjectRecord,
    gamma: f64,
) -> Result<Perception> {
    let path = rec.resolved_image(base_dir);
    let mut image = RgbImage::open(&path)?;
    if gamma != 1.0 {
        image = apply_gamma(&image, gamma)?;
    }
    let side = sidecar_path(&path);
    let annotations = if side.exists() {
        Some(Annotations::load_sidecar(&side)?)
    } else {
        None
    };
    let device = pipeline
        .calibrations
        .get(&rec.device_tag)
        .is_ok()
        .then_some(rec.device_tag.as_str());
    pipeline
        .perceive(&ScanRequest {
            image: &image,
            age_years: rec.age_years,
            gender: rec.gender,
            device_id: device,
            annotations: annotations.as_ref(),
        })
        .map_err(|e| stage_error(rec, e))
}

pub fn perceive_records(
    pipeline: &Pipeline,
    base_dir: &Path,
    records: &[SubjectRecord],
    gamma: f64,
) -> Result<Vec<PerceivedRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(PerceivedRecord {
                record: r.clone(),
                perception: perceive_record(pipeline, base_dir, r, gamma)?,
            })
        })
        .collect()
}

/// Predicts every record with the pipeline's own providers and model.
pub fn predict_records(pipeline: &Pipeline, data: &[PerceivedRecord]) -> Result<Vec<Prediction>> {
    data.iter()
        .map(|d| {
            let f = pipeline
                .features(&d.perception, d.record.gender, d.record.age_years, None)
                .map_err(|e| stage_error(&d.record, e))?;
            Ok(prediction(&d.record, &d.perception, pipeline.params().predict(&f)?))
        })
        .collect()
}

fn prediction(rec: &SubjectRecord, p: &Perception, weight: f64) -> Prediction {
    Prediction {
        record_id: rec.record_id.clone(),
        device_tag: rec.device_tag.clone(),
        pred_weight_kg: weight,
        true_weight_kg: rec.true_weight_kg,
        pred_height_cm: p.height_cm,
        true_height_cm: rec.true_height_cm,
    }
}

/// Report for the pipeline's configured providers and model.
pub fn evaluate(pipeline: &Pipeline, data: &[PerceivedRecord]) -> Result<(EvalReport, Vec<Prediction>)> {
    let preds = predict_records(pipeline, data)?;
    let d = |m: Modality| pipeline.providers.get(m).descriptor().provider_name.clone();
    let cell = AblationCell {
        face: d(Modality::Face),
        body: d(Modality::Body),
        cloud: d(Modality::Cloud),
        mask: pipeline.params().modality_mask,
    };
    Ok((EvalReport::build(&cell, None, &preds, pipeline.params())?, preds))
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub report: EvalReport,
    pub params: FusionModelParams,
    pub predictions: Vec<Prediction>,
}

/// Trains one model per cell on the train split (validating on val) and
/// reports on the test split. Training uses measured heights when known;
/// evaluation always uses estimated heights.
pub fn run_ablation(
    cells: &[AblationCell],
    data: &[PerceivedRecord],
    registry: &ProviderRegistry,
    config: &TrainingConfig,
) -> Result<Vec<AblationResult>> {
    if cells.is_empty() {
        return Err(Error::param("ablation grid is empty"));
    }
    let mut sets = Vec::with_capacity(cells.len());
    for c in cells {
        sets.push(ProviderSet::from_registry(registry, &c.face, &c.body, &c.cloud)?);
        if !c.mask.iter().any(|&m| m) {
            return Err(Error::Configuration("ablation cell enables no modality".into()));
        }
    }
    config.validate()?;

    let pick = |s: Split| data.iter().filter(move |d| d.record.split == s);
    let train: Vec<&PerceivedRecord> = pick(Split::Train).chain(pick(Split::Val)).collect();
    let n_train = pick(Split::Train).count();
    let test: Vec<&PerceivedRecord> = pick(Split::Test).collect();
    if n_train == 0 || n_train == train.len() || test.is_empty() {
        return Err(Error::Data(format!(
            "ablation needs train, val and test records (have {n_train}, {}, {})",
            train.len() - n_train,
            test.len()
        )));
    }
    let val_idx: Vec<usize> = (n_train..train.len()).collect();

    // Embeddings per provider name, extracted once.
    let mut cache: HashMap<String, Vec<EmbeddingVector>> = HashMap::new();
    let all: Vec<&PerceivedRecord> = train.iter().chain(&test).copied().collect();
    for set in &sets {
        for m in Modality::ALL {
            let provider = set.get(m);
            let name = provider.descriptor().provider_name.clone();
            if cache.contains_key(&name) {
                continue;
            }
            let vecs = all
                .iter()
                .map(|d| {
                    let p = &d.perception;
                    let input = match m {
                        Modality::Face => crate::embedding::ModalityInput::Face(&p.face_crop),
                        Modality::Body => crate::embedding::ModalityInput::Body(&p.body_crop),
                        Modality::Cloud => crate::embedding::ModalityInput::Cloud(&p.cloud),
                    };
                    crate::embedding::extract(provider.as_ref(), &input)
                })
                .collect::<Result<Vec<_>>>()?;
            cache.insert(name, vecs);
        }
    }

    let features = |cell: &AblationCell, i: usize, d: &PerceivedRecord| SubjectFeatures {
        z_face: cache[&cell.face][i].clone(),
        z_body: cache[&cell.body][i].clone(),
        z_cloud: cache[&cell.cloud][i].clone(),
        gender: d.record.gender,
        height_cm: d.perception.height_cm,
        age_years: d.record.age_years,
    };

    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let samples: Vec<Sample> = train
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut f = features(cell, i, d);
                if let Some(h) = d.record.true_height_cm {
                    f.height_cm = h;
                }
                f.to_sample(d.record.true_weight_kg)
            })
            .collect();
        let cfg = TrainingConfig {
            modality_mask: cell.mask,
            ..config.clone()
        };
        let fit = fit_with_validation(&samples, &val_idx, &cfg)?;
        let preds = test
            .iter()
            .enumerate()
            .map(|(j, d)| {
                let f = features(cell, train.len() + j, d);
                Ok(prediction(&d.record, &d.perception, fit.params.predict(&f)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let report = EvalReport::build(cell, None, &preds, &fit.params)?;
        tracing::info!(
            face = %cell.face, body = %cell.body, cloud = %cell.cloud, mask = %report.mask,
            mae = report.weight.mae, epochs = fit.log.len(), "ablation cell done"
        );
        out.push(AblationResult {
            report,
            params: fit.params,
            predictions: preds,
        });
    }
    Ok(out)
}

/// Re-runs perception and prediction on gamma-corrected images of `records`.
/// A gamma of exactly 1 uses the untouched images.
pub fn lighting_sweep(
    pipeline: &Pipeline,
    base_dir: &Path,
    records: &[SubjectRecord],
    gammas: &[f64],
) -> Result<Vec<(f64, EvalReport, Vec<Prediction>)>> {
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::param(format!("gamma must be positive, got {g}")));
    }
    gammas
        .iter()
        .map(|&g| {
            let data = perceive_records(pipeline, base_dir, records, g)?;
            let (mut report, preds) = evaluate(pipeline, &data)?;
            report.gamma = Some(g);
            tracing::info!(gamma = g, mae = report.weight.mae, "lighting sweep point");
            Ok((g, report, preds))
        })
        .collect()
}

/// Weight metrics per device tag.
pub fn group_by_device(preds: &[Prediction]) -> Result<BTreeMap<String, RegressionMetrics>> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in preds {
        let g = groups.entry(p.device_tag.clone()).or_default();
        g.0.push(p.pred_weight_kg);
        g.1.push(p.true_weight_kg);
    }
    groups
        .into_iter()
        .map(|(k, (p, t))| Ok((k, regression_metrics(&p, &t)?)))
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(
        "face,body,cloud,mask,gamma,n,mae,rmse,r2,height_mae,height_rmse,height_r2,w_F,w_B,w_R\n",
    );
    for r in reports {
        let h = r.height;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.face,
            r.body,
            r.cloud,
            r.mask,
            opt(r.gamma),
            r.n,
            r.weight.mae,
            r.weight.rmse,
            r.weight.r2,
            opt(h.map(|m| m.mae)),
            opt(h.map(|m| m.rmse)),
            opt(h.map(|m| m.r2)),
            r.modality_weights[0],
            r.modality_weights[1],
            r.modality_weights[2],
        );
    }
    s
}

pub fn reports_jsonl(reports: &[EvalReport]) -> Result<String> {
    let mut s = String::new();
    for r in reports {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_reports_jsonl(text: &str) -> Result<Vec<EvalReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Ingestion {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// `record_id,pred_kg,true_kg` rows for correlation plots.
pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut s = String::from("record_id,pred_kg,true_kg\n");
    for p in preds {
        let _ = writeln!(s, "{},{},{}", p.record_id, p.pred_weight_kg, p.true_weight_kg);
    }
    s
}

/// `gamma,mae` rows for the brightness curve.
pub fn gamma_mae_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("gamma,mae\n");
    for r in reports {
        let _ = writeln!(s, "{},{}", opt(r.gamma), r.weight.mae);
    }
    s
}

/// Renders `n` synthetic subjects plus `heldout` extra ones (a third of them
/// underweight) into `dir/images`, writes `dir/manifest.jsonl`, and returns
/// the records. The first `n` split 60/20/20 into train/val/test.
pub fn write_synthetic_dataset(
    dir: &Path,
    n: usize,
    heldout: usize,
    seed: u64,
    device_tags: &[&str],
) -> Result<Vec<SubjectRecord>> {
    if n < 5 {
        return Err(Error::param(format!("synthetic dataset needs at least 5 subjects, got {n}")));
    }
    if device_tags.is_empty() {
        return Err(Error::param("at least one device tag is required"));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut specs = synthetic_cohort(n + heldout, seed);
    for (i, s) in specs[n..].iter_mut().enumerate() {
        if i % 3 == 0 {
            let bmi = 15.5 + (i % 5) as f64 * 0.5;
            s.weight_kg = (bmi * (s.height_cm / 100.0).powi(2) * 10.0).round() / 10.0;
        }
    }
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let mut records = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let split = if i >= n {
            Split::Heldout
        } else if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let id = format!("s{seed}-{i:04}");
        let rel = PathBuf::from("images").join(format!("{id}.png"));
        write_scene(spec, &dir.join(&rel))?;
        records.push(SubjectRecord {
            schema: MANIFEST_SCHEMA,
            record_id: id.clone(),
            image_path: rel,
            subject_id: id,
            gender: spec.gender,
            age_years: spec.age_years,
            true_height_cm: Some(spec.height_cm),
            true_weight_kg: spec.weight_kg,
            split,
            device_tag: device_tags[i % device_tags.len()].to_string(),
            pose_tag: "frontal".into(),
        });
    }
    write_manifest(&records, dir.join("manifest.jsonl"))?;
    Ok(records)
}

fn write_scene(spec: &SubjectSpec, png: &Path) -> Result<()> {
    let scene = render_scene(spec)?;
    scene.image.save_png(png)?;
    std::fs::write(sidecar_path(png), scene.annotations.to_sidecar())?;
    Ok(())
}
