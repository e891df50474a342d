use nutriscan_core::embedding::{extract, synthetic_embed, Modality, ModalityInput, ProviderRegistry, SyntheticSignal};
use nutriscan_core::synth::{render_scene, synthetic_cohort};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signals(n: usize, seed: u64) -> Vec<SyntheticSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| SyntheticSignal {
            weight_kg: rng.random_range(35.0..130.0),
            height_cm: rng.random_range(140.0..200.0),
            adiposity: rng.random_range(0.6..1.8),
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn weight_is_linearly_recoverable_from_coordinate_zero() {
    let sig = signals(500, 1);
    let xs: Vec<f64> = sig
        .iter()
        .enumerate()
        .map(|(i, s)| synthetic_embed(&(i as u32).to_le_bytes(), Modality::Body, 7, *s).unwrap().values()[0])
        .collect();
    let ys: Vec<f64> = sig.iter().map(|s| s.weight_kg).collect();
    // ordinary least squares y = a + b x
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let b = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let a = my - b * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    assert!(1.0 - ss_res / ss_tot > 0.99);
}

#[test]
fn noise_subspace_is_uncorrelated_with_signal() {
    let sig = signals(1000, 2);
    let vecs: Vec<Vec<f64>> = sig
        .iter()
        .enumerate()
        .map(|(i, s)| synthetic_embed(&(i as u64).to_le_bytes(), Modality::Face, 3, *s).unwrap().values().to_vec())
        .collect();
    let w: Vec<f64> = sig.iter().map(|s| s.weight_kg).collect();
    let h: Vec<f64> = sig.iter().map(|s| s.height_cm).collect();
    let a: Vec<f64> = sig.iter().map(|s| s.adiposity).collect();
    for k in [3, 4, 100, 257, 511] {
        let col: Vec<f64> = vecs.iter().map(|v| v[k]).collect();
        for target in [&w, &h, &a] {
            let r = pearson(&col, target);
            assert!(r.abs() < 0.1, "coordinate {k}: r = {r}");
        }
    }
}

#[test]
fn providers_are_deterministic_and_finite_on_scenes() {
    let reg = ProviderRegistry::synthetic(5, 1.0).unwrap();
    for spec in synthetic_cohort(4, 8) {
        let scene = render_scene(&spec).unwrap();
        for name in ["vggface-sim", "xception-sim"] {
            let p = reg.get(name).unwrap();
            let input = if name.starts_with("vgg") {
                ModalityInput::Face(&scene.image)
            } else {
                ModalityInput::Body(&scene.image)
            };
            let a = extract(p.as_ref(), &input).unwrap();
            let b = extract(p.as_ref(), &input).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.values().len(), 512);
            assert!(a.values().iter().all(|v| v.is_finite()));
        }
    }
}
