use std::sync::Arc;

use nutriscan_core::embedding::{
    synthetic_embed, EmbeddingProvider, EmbeddingVector, ExtractorDescriptor, Modality, ModalityInput,
    ProviderRegistry, SyntheticSignal,
};
use nutriscan_core::eval::{
    evaluate, feature_subsets, lighting_sweep, mask_grid, perceive_records, provider_grid, regression_metrics,
    reports_csv, run_ablation, write_synthetic_dataset, PerceivedRecord, Split, SubjectRecord,
};
use nutriscan_core::fusion::{Architecture, FusionModelParams, TrainingConfig};
use nutriscan_core::height::{CalibrationRegistry, PpmCalibration};
use nutriscan_core::pipeline::{Pipeline, ProviderSet};
use nutriscan_core::synth::SCENE_PPM;
use nutriscan_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(pred: &[f64], truth: &[f64]) -> (f64, f64, f64) {
    let n = pred.len();
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut mean = 0.0;
    for i in 0..n {
        mean += truth[i];
    }
    mean /= n as f64;
    let mut tot = 0.0;
    for i in 0..n {
        let e = pred[i] - truth[i];
        abs += if e < 0.0 { -e } else { e };
        sq += e * e;
        tot += (truth[i] - mean) * (truth[i] - mean);
    }
    (abs / n as f64, (sq / n as f64).sqrt(), 1.0 - sq / tot)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(2..200);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(30.0..150.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-20.0..20.0)).collect();
        let m = regression_metrics(&pred, &truth).unwrap();
        let (mae, rmse, r2) = brute_force(&pred, &truth);
        assert!((m.mae - mae).abs() < 1e-12);
        assert!((m.rmse - rmse).abs() < 1e-12);
        assert!((m.r2 - r2).abs() < 1e-12);
        assert!(m.rmse >= m.mae);
    }
}

fn calibrations(tags: &[&str]) -> CalibrationRegistry {
    let mut cals = CalibrationRegistry::new();
    for t in tags {
        cals.insert(PpmCalibration::new(SCENE_PPM, *t, "").unwrap()).unwrap();
    }
    cals
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        architecture: Architecture {
            embed_dim: 512,
            hidden: vec![32, 16],
        },
        epochs: 300,
        ..TrainingConfig::default()
    }
}

fn pipeline(registry: &ProviderRegistry) -> Pipeline {
    let ps = ProviderSet::from_registry(registry, "vggface-sim", "xception-sim", "pointnet-sim").unwrap();
    let params = FusionModelParams::init(&small_config().architecture, 0).unwrap();
    let mut p = Pipeline::new(ps, params, calibrations(&["cam-a", "cam-b"]), "cam-a").unwrap();
    p.sample_count = 512;
    p
}

struct Dataset {
    _dir: tempfile::TempDir,
    records: Vec<SubjectRecord>,
    base: std::path::PathBuf,
}

fn dataset(n: usize, seed: u64) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let records = write_synthetic_dataset(dir.path(), n, 0, seed, &["cam-a", "cam-b"]).unwrap();
    let base = dir.path().to_path_buf();
    Dataset {
        _dir: dir,
        records,
        base,
    }
}

fn perceived(p: &Pipeline, d: &Dataset) -> Vec<PerceivedRecord> {
    perceive_records(p, &d.base, &d.records, 1.0).unwrap()
}

#[test]
fn synthetic_dataset_round_trips_through_manifest() {
    let d = dataset(10, 3);
    let loaded = nutriscan_core::eval::load_manifest(d.base.join("manifest.jsonl")).unwrap();
    assert_eq!(loaded, d.records);
    let counts = nutriscan_core::eval::split_counts(&loaded);
    assert_eq!((counts[&Split::Train], counts[&Split::Val], counts[&Split::Test]), (6, 2, 2));
    let p = pipeline(&ProviderRegistry::synthetic(0, 0.0).unwrap());
    for r in perceived(&p, &d) {
        let truth = r.record.true_height_cm.unwrap();
        assert!((r.perception.height_cm - truth).abs() <= 1.0, "{} vs {truth}", r.perception.height_cm);
    }
}

#[test]
fn grid_reruns_are_byte_identical() {
    let reg = ProviderRegistry::synthetic(1, 0.0).unwrap();
    let p = pipeline(&reg);
    let d = dataset(30, 5);
    let data = perceived(&p, &d);
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let cells = provider_grid(
        &s(&["vggface-sim", "facenet-sim"]),
        &s(&["xception-sim", "resnet152-sim"]),
        &s(&["pointnet-sim", "dgcnn-sim", "gbnet-sim"]),
    );
    let cfg = TrainingConfig {
        epochs: 40,
        ..small_config()
    };
    let a = run_ablation(&cells, &data, &reg, &cfg).unwrap();
    let b = run_ablation(&cells, &data, &reg, &cfg).unwrap();
    assert_eq!(a.len(), 12);
    let ra: Vec<_> = a.iter().map(|r| r.report.clone()).collect();
    let rb: Vec<_> = b.iter().map(|r| r.report.clone()).collect();
    assert_eq!(reports_csv(&ra), reports_csv(&rb));
    for r in &ra {
        assert!(r.weight.rmse >= r.weight.mae);
        assert!(r.height.is_some());
    }

    let single = run_ablation(&cells[..1], &data, &reg, &cfg).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].report, ra[0]);
}

/// Body provider that sees nothing but noise.
struct BlindBody(ExtractorDescriptor);

impl EmbeddingProvider for BlindBody {
    fn descriptor(&self) -> &ExtractorDescriptor {
        &self.0
    }

    fn embed(&self, input: &ModalityInput<'_>) -> Result<EmbeddingVector> {
        synthetic_embed(&input.payload(), Modality::Body, 99, SyntheticSignal::default())
    }
}

#[test]
fn face_only_signal_makes_face_features_win() {
    let mut reg = ProviderRegistry::synthetic(2, 0.0).unwrap();
    reg.insert(Arc::new(BlindBody(ExtractorDescriptor {
        modality: Modality::Body,
        provider_name: "blind-body".into(),
        version: "1".into(),
        digest: "blind".into(),
    })));
    let p = pipeline(&reg);
    let d = dataset(60, 8);
    let data = perceived(&p, &d);
    let cells = mask_grid(
        "vggface-sim",
        "blind-body",
        "pointnet-sim",
        &[[true, false, false], [false, true, false]],
    );
    let out = run_ablation(&cells, &data, &reg, &small_config()).unwrap();
    let (ff, bf) = (&out[0].report, &out[1].report);
    assert_eq!((ff.mask.as_str(), bf.mask.as_str()), ("FF", "BF"));
    assert!(ff.weight.mae < bf.weight.mae, "FF {} vs BF {}", ff.weight.mae, bf.weight.mae);
    // masked-out modalities carry zero fusion weight
    assert_eq!(ff.modality_weights, [1.0, 0.0, 0.0]);
    assert_eq!(bf.modality_weights, [0.0, 1.0, 0.0]);
}

#[test]
fn feature_subsets_all_train() {
    let reg = ProviderRegistry::synthetic(4, 0.0).unwrap();
    let p = pipeline(&reg);
    let d = dataset(20, 9);
    let data = perceived(&p, &d);
    let cfg = TrainingConfig {
        epochs: 20,
        ..small_config()
    };
    let out = run_ablation(
        &mask_grid("vggface-sim", "xception-sim", "pointnet-sim", &feature_subsets()),
        &data,
        &reg,
        &cfg,
    )
    .unwrap();
    assert_eq!(out.len(), 7);
    for r in &out {
        let w = r.report.modality_weights;
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn trained_sweep_pipeline(sensitivity: f64, d: &Dataset) -> Pipeline {
    let reg = ProviderRegistry::synthetic(6, sensitivity).unwrap();
    let mut p = pipeline(&reg);
    let data = perceived(&p, d);
    let cells = mask_grid("vggface-sim", "xception-sim", "pointnet-sim", &[[true; 3]]);
    let fit = run_ablation(&cells, &data, &reg, &small_config()).unwrap();
    p.set_params(fit.into_iter().next().unwrap().params).unwrap();
    p
}

fn test_records(d: &Dataset) -> Vec<SubjectRecord> {
    d.records.iter().filter(|r| r.split == Split::Test).cloned().collect()
}

#[test]
fn unit_gamma_reproduces_baseline_bitwise() {
    let d = dataset(20, 12);
    let p = trained_sweep_pipeline(1.0, &d);
    let test = test_records(&d);
    let (baseline, base_preds) = evaluate(&p, &perceive_records(&p, &d.base, &test, 1.0).unwrap()).unwrap();
    let sweep = lighting_sweep(&p, &d.base, &test, &[1.0]).unwrap();
    assert_eq!(sweep.len(), 1);
    let (g, report, preds) = &sweep[0];
    assert_eq!(*g, 1.0);
    assert_eq!(report.weight.mae.to_bits(), baseline.weight.mae.to_bits());
    assert_eq!(report.weight.rmse.to_bits(), baseline.weight.rmse.to_bits());
    assert_eq!(report.weight.r2.to_bits(), baseline.weight.r2.to_bits());
    assert_eq!(preds, &base_preds);
}

#[test]
fn degradation_knob_puts_minimum_at_unit_gamma() {
    let d = dataset(40, 13);
    let p = trained_sweep_pipeline(1.0, &d);
    let sweep = lighting_sweep(&p, &d.base, &test_records(&d), &[0.5, 1.0, 2.0]).unwrap();
    let mae: Vec<f64> = sweep.iter().map(|s| s.1.weight.mae).collect();
    assert!(mae[1] <= mae[0] && mae[1] <= mae[2], "{mae:?}");
}

#[test]
fn without_knob_gamma_leaves_geometry_alone() {
    let d = dataset(10, 14);
    let reg = ProviderRegistry::synthetic(6, 0.0).unwrap();
    let p = pipeline(&reg);
    let a = perceive_records(&p, &d.base, &d.records, 1.0).unwrap();
    let b = perceive_records(&p, &d.base, &d.records, 2.0).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.perception.height_cm, y.perception.height_cm);
        assert_eq!(x.perception.cloud, y.perception.cloud);
    }
}
