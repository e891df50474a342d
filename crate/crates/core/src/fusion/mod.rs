//! Softmax-weighted fusion of the three embeddings followed by an MLP
//! regression head.

mod format;
mod train;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingVector, Modality, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::health::Gender;

pub use format::{load_params, save_params, PARAMS_MAGIC, PARAMS_VERSION};
pub use train::{
    fit, fit_with_observer, fit_with_validation, loss, loss_and_gradients, EpochLog, FitOutcome, Gradients, HeightSource,
    StopReason, TrainingConfig,
};

/// Extra input slots after the fused embedding: gender one-hot and height in metres.
pub const EXTRA_INPUTS: usize = 3;
pub const DEFAULT_HIDDEN: [usize; 3] = [512, 512, 256];

/// Which layers the ridge penalty covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RidgeScope {
    #[default]
    OutputLayer,
    AllLayers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            embed_dim: EMBEDDING_DIM,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.embed_dim + EXTRA_INPUTS
    }

    /// `(fan_in, fan_out)` of every layer including the scalar output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::param(format!("layer widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Affine layer `h W + b` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModelParams {
    pub weight_logits: [f64; 3],
    /// Modalities excluded from fusion get weight 0 and no logit gradient.
    pub modality_mask: [bool; 3],
    pub layers: Vec<DenseLayer>,
    pub ridge_lambda: f64,
    pub ridge_scope: RidgeScope,
    pub l2_normalize: bool,
    pub seed: u64,
    embed_dim: usize,
}

/// Softmax over the unmasked logits; masked entries are 0.
pub fn softmax_weights(logits: [f64; 3], mask: [bool; 3]) -> [f64; 3] {
    let max = (0..3)
        .filter(|&i| mask[i])
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w = [0.0; 3];
    if max == f64::NEG_INFINITY {
        return w;
    }
    let mut sum = 0.0;
    for i in 0..3 {
        if mask[i] {
            w[i] = (logits[i] - max).exp();
            sum += w[i];
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

impl FusionModelParams {
    /// He-initialised hidden layers, small output layer, equal fusion logits.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let std = if i == last {
                    (1.0 / fan_in as f64).sqrt()
                } else {
                    (2.0 / fan_in as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                DenseLayer {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut rng)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            weight_logits: [0.0; 3],
            modality_mask: [true; 3],
            layers,
            ridge_lambda: 1e-3,
            ridge_scope: RidgeScope::OutputLayer,
            l2_normalize: false,
            seed,
            embed_dim: arch.embed_dim,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| DenseLayer {
                w: Array2::zeros((i, o)),
                b: Array1::zeros(o),
            })
            .collect();
        Ok(Self {
            weight_logits: [0.0; 3],
            modality_mask: [true; 3],
            layers,
            ridge_lambda: 0.0,
            ridge_scope: RidgeScope::OutputLayer,
            l2_normalize: false,
            seed: 0,
            embed_dim: arch.embed_dim,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            embed_dim: self.embed_dim,
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| l.b.len())
                .collect(),
        }
    }

    pub fn weights(&self) -> [f64; 3] {
        softmax_weights(self.weight_logits, self.modality_mask)
    }

    /// Checks shapes, finiteness and the simplex constraint.
    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture();
        arch.validate()?;
        for (i, ((fi, fo), layer)) in arch.layer_shapes().into_iter().zip(&self.layers).enumerate() {
            if layer.w.dim() != (fi, fo) || layer.b.len() != fo {
                return Err(Error::param(format!(
                    "layer {i} has shape {:?}/{}, expected ({fi}, {fo})",
                    layer.w.dim(),
                    layer.b.len()
                )));
            }
        }
        let finite = self.weight_logits.iter().all(|v| v.is_finite())
            && self
                .layers
                .iter()
                .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numeric("parameters contain non-finite values".into()));
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(Error::param(format!("ridge lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        if !self.modality_mask.iter().any(|&m| m) {
            return Err(Error::param("at least one modality must be enabled"));
        }
        let w = self.weights();
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("fusion weights off the simplex: {w:?}")));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        3 + self.layers.iter().map(|l| l.w.len() + l.b.len()).sum::<usize>()
    }

    /// Predicted weight in kg for one assembled input vector.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::param(e.to_string()))?;
        Ok(self.forward_batch(&x)?[0])
    }

    pub(crate) fn forward_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let expected = self.embed_dim + EXTRA_INPUTS;
        if x.ncols() != expected {
            return Err(Error::param(format!(
                "input has {} components, expected {expected}",
                x.ncols()
            )));
        }
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite activation in layer {i}")));
            }
            h = z;
        }
        Ok(h.index_axis_move(Axis(1), 0))
    }

    /// End-to-end prediction for one subject.
    pub fn predict(&self, features: &SubjectFeatures) -> Result<f64> {
        let e = fuse(&features.z_face, &features.z_body, &features.z_cloud, self)?;
        self.forward(&assemble_input(&e, features.gender, features.height_cm)?)
    }
}

/// Learned modality weights `(w_F, w_B, w_R)`.
pub fn feature_importance(params: &FusionModelParams) -> [f64; 3] {
    params.weights()
}

/// Per-subject model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub z_face: EmbeddingVector,
    pub z_body: EmbeddingVector,
    pub z_cloud: EmbeddingVector,
    pub gender: Gender,
    pub height_cm: f64,
    pub age_years: f64,
}

impl SubjectFeatures {
    /// Replaces masked-out modalities with zero vectors.
    pub fn masked(&self, mask: [bool; 3]) -> Self {
        let mut out = self.clone();
        for (m, z) in Modality::ALL.iter().zip([&mut out.z_face, &mut out.z_body, &mut out.z_cloud]) {
            if !mask[m.index()] {
                *z = EmbeddingVector::zeros(*m);
            }
        }
        out
    }

    pub fn to_sample(&self, target_kg: f64) -> Sample {
        Sample {
            embeddings: [
                self.z_face.values().to_vec(),
                self.z_body.values().to_vec(),
                self.z_cloud.values().to_vec(),
            ],
            gender: self.gender,
            height_cm: self.height_cm,
            target_kg,
        }
    }
}

/// Training row with raw embeddings of any width.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub embeddings: [Vec<f64>; 3],
    pub gender: Gender,
    pub height_cm: f64,
    pub target_kg: f64,
}

fn l2_normalized(z: &[f64]) -> Vec<f64> {
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        z.iter().map(|v| v / n).collect()
    } else {
        z.to_vec()
    }
}

pub(crate) fn fuse_raw(z: [&[f64]; 3], params: &FusionModelParams) -> Result<Vec<f64>> {
    let d = params.embed_dim;
    for (m, zi) in Modality::ALL.iter().zip(z) {
        if zi.len() != d {
            return Err(Error::param(format!("{m} embedding has {} values, expected {d}", zi.len())));
        }
        if zi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{m} embedding is not finite")));
        }
    }
    let w = params.weights();
    let mut e = vec![0.0; d];
    for (j, zj) in z.iter().enumerate() {
        if w[j] == 0.0 {
            continue;
        }
        let zj = if params.l2_normalize { l2_normalized(zj) } else { zj.to_vec() };
        for (ei, v) in e.iter_mut().zip(zj) {
            *ei += w[j] * v;
        }
    }
    Ok(e)
}

/// `E = w_F z_F + w_B z_B + w_R z_R` with weights from the softmax of the logits.
pub fn fuse(
    z_face: &EmbeddingVector,
    z_body: &EmbeddingVector,
    z_cloud: &EmbeddingVector,
    params: &FusionModelParams,
) -> Result<Vec<f64>> {
    fuse_raw([z_face.values(), z_body.values(), z_cloud.values()], params)
}

/// `[fused, gender one-hot, height_cm / 100]`.
pub fn assemble_input(fused: &[f64], gender: Gender, height_cm: f64) -> Result<Vec<f64>> {
    if !(height_cm.is_finite() && height_cm > 0.0) {
        return Err(Error::param(format!("height must be positive, got {height_cm}")));
    }
    let mut out = Vec::with_capacity(fused.len() + EXTRA_INPUTS);
    out.extend_from_slice(fused);
    out.extend_from_slice(&gender.one_hot());
    out.push(height_cm / 100.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(i: usize, m: Modality) -> EmbeddingVector {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[i] = 1.0;
        EmbeddingVector::new(v, m).unwrap()
    }

    #[test]
    fn equal_logits_on_identical_vectors() {
        let p = FusionModelParams::zeros(&Architecture::default()).unwrap();
        let v: Vec<f64> = (0..EMBEDDING_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        let z = |m| EmbeddingVector::new(v.clone(), m).unwrap();
        let e = fuse(&z(Modality::Face), &z(Modality::Body), &z(Modality::Cloud), &p).unwrap();
        for (a, b) in e.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logits_select_face() {
        let mut p = FusionModelParams::zeros(&Architecture::default()).unwrap();
        p.weight_logits = [30.0, -30.0, -30.0];
        let zf = basis(7, Modality::Face);
        let e = fuse(&zf, &basis(8, Modality::Body), &basis(9, Modality::Cloud), &p).unwrap();
        for (a, b) in e.iter().zip(zf.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forced_weights_on_basis_vectors() {
        let mut p = FusionModelParams::zeros(&Architecture::default()).unwrap();
        p.weight_logits = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
        let e = fuse(&basis(0, Modality::Face), &basis(1, Modality::Body), &basis(2, Modality::Cloud), &p).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-12);
        assert!((e[1] - 0.3).abs() < 1e-12);
        assert!((e[2] - 0.2).abs() < 1e-12);
        assert!(e[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assembled_tail() {
        let fused = vec![0.0; EMBEDDING_DIM];
        let m = assemble_input(&fused, Gender::Male, 175.0).unwrap();
        assert_eq!(m.len(), 515);
        assert_eq!(&m[512..], &[1.0, 0.0, 1.75]);
        let f = assemble_input(&fused, Gender::Female, 160.0).unwrap();
        assert_eq!(&f[512..], &[0.0, 1.0, 1.60]);
        assert!(assemble_input(&fused, Gender::Female, 0.0).is_err());
    }

    #[test]
    fn zero_params_give_zero() {
        let p = FusionModelParams::zeros(&Architecture::default()).unwrap();
        let x: Vec<f64> = (0..515).map(|i| i as f64 - 200.0).collect();
        assert_eq!(p.forward(&x).unwrap(), 0.0);
    }

    #[test]
    fn single_active_unit_chain_passes_height_through() {
        let mut p = FusionModelParams::zeros(&Architecture::default()).unwrap();
        p.layers[0].w[[514, 0]] = 1.0;
        p.layers[1].w[[0, 0]] = 1.0;
        p.layers[2].w[[0, 0]] = 1.0;
        p.layers[3].w[[0, 0]] = 1.0;
        let x = assemble_input(&vec![0.3; EMBEDDING_DIM], Gender::Male, 182.0).unwrap();
        assert_eq!(p.forward(&x).unwrap(), x[514]);
    }

    #[test]
    fn masked_modality_gets_zero_weight() {
        let w = softmax_weights([1.0, 2.0, 3.0], [true, false, true]);
        assert_eq!(w[1], 0.0);
        assert!((w[0] + w[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_activation_is_reported() {
        let mut p = FusionModelParams::zeros(&Architecture::default()).unwrap();
        p.layers[3].b[0] = f64::MAX;
        p.layers[2].b[0] = f64::MAX;
        p.layers[3].w[[0, 0]] = 10.0;
        assert!(matches!(p.forward(&vec![0.0; 515]), Err(Error::Numeric(_))));
    }

    #[test]
    fn default_shapes() {
        let p = FusionModelParams::init(&Architecture::default(), 1).unwrap();
        let shapes: Vec<_> = p.layers.iter().map(|l| l.w.dim()).collect();
        assert_eq!(shapes, vec![(515, 512), (512, 512), (512, 256), (256, 1)]);
        p.validate().unwrap();
    }
}
