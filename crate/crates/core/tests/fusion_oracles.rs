use std::time::Instant;

use nutriscan_core::embedding::{synthetic_embed, Modality, SyntheticSignal};
use nutriscan_core::fusion::{
    feature_importance, fit, fit_with_observer, loss_and_gradients, Architecture, FusionModelParams,
    RidgeScope, Sample, TrainingConfig,
};
use nutriscan_core::Gender;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loss recomputed from scratch with plain loops.
fn oracle_loss(p: &FusionModelParams, samples: &[Sample]) -> f64 {
    let m = p.modality_mask;
    let max = (0..3).filter(|&i| m[i]).map(|i| p.weight_logits[i]).fold(f64::MIN, f64::max);
    let ex: Vec<f64> = (0..3)
        .map(|i| if m[i] { (p.weight_logits[i] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = ex.iter().sum();
    let w: Vec<f64> = ex.iter().map(|e| e / total).collect();

    let mut se = 0.0;
    for s in samples {
        let d = s.embeddings[0].len();
        let mut h: Vec<f64> = (0..d)
            .map(|k| (0..3).map(|j| w[j] * s.embeddings[j][k]).sum())
            .collect();
        h.extend(s.gender.one_hot());
        h.push(s.height_cm / 100.0);
        for (li, layer) in p.layers.iter().enumerate() {
            let (fi, fo) = layer.w.dim();
            let mut next = vec![0.0; fo];
            for o in 0..fo {
                let mut acc = layer.b[o];
                for i in 0..fi {
                    acc += h[i] * layer.w[[i, o]];
                }
                next[o] = if li + 1 < p.layers.len() { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        se += (h[0] - s.target_kg).powi(2);
    }
    let penal: f64 = match p.ridge_scope {
        RidgeScope::OutputLayer => p.layers.last().unwrap().w.iter().map(|v| v * v).sum(),
        RidgeScope::AllLayers => p.layers.iter().flat_map(|l| l.w.iter()).map(|v| v * v).sum(),
    };
    se / samples.len() as f64 + p.ridge_lambda * penal
}

/// Smallest |pre-activation| over the hidden layers.
fn closest_kink(p: &FusionModelParams, samples: &[Sample]) -> f64 {
    let w = p.weights();
    let mut best = f64::INFINITY;
    for s in samples {
        let d = s.embeddings[0].len();
        let mut h: Vec<f64> = (0..d)
            .map(|k| (0..3).map(|j| w[j] * s.embeddings[j][k]).sum())
            .collect();
        h.extend(s.gender.one_hot());
        h.push(s.height_cm / 100.0);
        for layer in &p.layers[..p.layers.len() - 1] {
            let (fi, fo) = layer.w.dim();
            let z: Vec<f64> = (0..fo)
                .map(|o| layer.b[o] + (0..fi).map(|i| h[i] * layer.w[[i, o]]).sum::<f64>())
                .collect();
            best = z.iter().fold(best, |b, v| b.min(v.abs()));
            h = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    best
}

fn random_instance(rng: &mut ChaCha8Rng) -> (FusionModelParams, Vec<Sample>) {
    let arch = Architecture {
        embed_dim: 5,
        hidden: vec![8, 8, 4],
    };
    loop {
        let mut p = FusionModelParams::init(&arch, rng.random()).unwrap();
        p.weight_logits = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        p.ridge_lambda = rng.random_range(0.0..0.5);
        p.ridge_scope = if rng.random_bool(0.5) { RidgeScope::OutputLayer } else { RidgeScope::AllLayers };
        for l in &mut p.layers {
            l.b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        let samples: Vec<Sample> = (0..6)
            .map(|_| Sample {
                embeddings: std::array::from_fn(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()),
                gender: if rng.random_bool(0.5) { Gender::Male } else { Gender::Female },
                height_cm: rng.random_range(140.0..200.0),
                target_kg: rng.random_range(-2.0..2.0),
            })
            .collect();
        // Finite differences straddling a ReLU kink are meaningless; redraw.
        if closest_kink(&p, &samples) > 1e-3 {
            return (p, samples);
        }
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (p, samples) = random_instance(&mut rng);
        let refs: Vec<&Sample> = samples.iter().collect();
        let (l, g) = loss_and_gradients(&p, &refs).unwrap();
        assert!((l - oracle_loss(&p, &samples)).abs() < 1e-10);
        let analytic: Vec<f64> = g.slices().concat();
        let mut k = 0;
        let n_tensors = p.slices().len();
        for t in 0..n_tensors {
            let len = p.slices()[t].len();
            for i in 0..len {
                let mut plus = p.clone();
                plus.slices_mut()[t][i] += h;
                let mut minus = p.clone();
                minus.slices_mut()[t][i] -= h;
                let numeric = (oracle_loss(&plus, &samples) - oracle_loss(&minus, &samples)) / (2.0 * h);
                let a = analytic[k];
                let scale = a.abs().max(numeric.abs());
                if scale > 1e-7 {
                    let rel = (a - numeric).abs() / scale;
                    worst = worst.max(rel);
                    assert!(rel < 1e-4, "tensor {t} index {i}: analytic {a} numeric {numeric}");
                } else {
                    assert!((a - numeric).abs() < 1e-9);
                }
                k += 1;
            }
        }
    }
    eprintln!("worst relative error {worst:e} in {:?}", start.elapsed());
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn weights_stay_on_simplex_for_500_steps() {
    let arch = Architecture {
        embed_dim: 16,
        hidden: vec![16, 8],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<Sample> = (0..32)
        .map(|_| Sample {
            embeddings: std::array::from_fn(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()),
            gender: Gender::Male,
            height_cm: rng.random_range(150.0..190.0),
            target_kg: rng.random_range(50.0..90.0),
        })
        .collect();
    let cfg = TrainingConfig {
        architecture: arch,
        epochs: 500,
        batch_size: 32,
        learning_rate: 0.05,
        patience: usize::MAX,
        validation_fraction: 0.0,
        ..Default::default()
    };
    let mut checked = 0;
    let out = fit_with_observer(&samples, &cfg, &mut |_, p| {
        let w = p.weights();
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)), "{w:?}");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        checked += 1;
    })
    .unwrap();
    assert_eq!(checked, 500);
    assert_eq!(out.steps, 500);
}

fn linear_signal_dataset(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let payload = (i as u64).to_le_bytes();
            let wkg = rng.random_range(40.0..110.0);
            let zf = synthetic_embed(
                &payload,
                Modality::Face,
                seed,
                SyntheticSignal {
                    weight_kg: wkg,
                    ..Default::default()
                },
            )
            .unwrap();
            let noise = |m| synthetic_embed(&payload, m, seed, SyntheticSignal::default()).unwrap();
            Sample {
                target_kg: 40.0 + 60.0 * zf.values()[0],
                embeddings: [
                    zf.values().to_vec(),
                    noise(Modality::Body).values().to_vec(),
                    noise(Modality::Cloud).values().to_vec(),
                ],
                gender: if i % 2 == 0 { Gender::Male } else { Gender::Female },
                height_cm: rng.random_range(150.0..195.0),
            }
        })
        .collect()
}

#[test]
fn training_oracle_recovers_linear_face_signal() {
    let start = Instant::now();
    let samples = linear_signal_dataset(200, 17);
    let cfg = TrainingConfig {
        epochs: 500,
        validation_fraction: 0.0,
        target_train_mae: Some(1.0),
        ..Default::default()
    };
    let out = fit(&samples, &cfg).unwrap();
    let last = out.log.last().unwrap();
    let w = feature_importance(&out.params);
    eprintln!(
        "epochs {} train MAE {:.3} weights {:?} in {:?}",
        last.epoch,
        last.train_mae,
        w,
        start.elapsed()
    );
    assert!(last.train_mae < 1.0);
    assert!(w[0] > w[1] && w[0] > w[2]);
    assert!(start.elapsed().as_secs_f64() < 120.0);
}

#[test]
fn fixed_seed_gives_identical_parameter_files() {
    let samples = linear_signal_dataset(40, 3);
    let cfg = TrainingConfig {
        epochs: 3,
        architecture: Architecture {
            embed_dim: 512,
            hidden: vec![32, 16],
        },
        ..Default::default()
    };
    let a = nutriscan_core::fusion::save_params(&fit(&samples, &cfg).unwrap().params).unwrap();
    let b = nutriscan_core::fusion::save_params(&fit(&samples, &cfg).unwrap().params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zeroing_uninformative_body_features_barely_moves_mae() {
    let samples = linear_signal_dataset(200, 23);
    let blind: Vec<Sample> = samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.embeddings[1] = vec![0.0; s.embeddings[1].len()];
            s
        })
        .collect();
    let cfg = TrainingConfig {
        epochs: 60,
        patience: 60,
        validation_fraction: 0.0,
        ..Default::default()
    };
    let full = fit(&samples, &cfg).unwrap();
    let zeroed = fit(&blind, &cfg).unwrap();
    let best = |o: &nutriscan_core::fusion::FitOutcome| {
        o.log.iter().map(|r| r.train_mae).fold(f64::INFINITY, f64::min)
    };
    let (a, b) = (best(&full), best(&zeroed));
    eprintln!("converged MAE with z_B {a:.4}, zeroed {b:.4}");
    assert!((a - b).abs() < 0.2, "{a} vs {b}");
}
