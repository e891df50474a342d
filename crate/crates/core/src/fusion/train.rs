use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{l2_normalized, Architecture, DenseLayer, FusionModelParams, RidgeScope, Sample, EXTRA_INPUTS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ridge_lambda: f64,
    pub ridge_scope: RidgeScope,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of samples held out for validation; 0 validates on the training set.
    pub validation_fraction: f64,
    /// Stop as soon as training MAE drops below this value.
    pub target_train_mae: Option<f64>,
    pub l2_normalize: bool,
    pub modality_mask: [bool; 3],
    pub architecture: Architecture,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 32,
            ridge_lambda: 1e-3,
            ridge_scope: RidgeScope::OutputLayer,
            seed: 0,
            patience: 20,
            validation_fraction: 0.2,
            target_train_mae: None,
            l2_normalize: false,
            modality_mask: [true; 3],
            architecture: Architecture::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return Err(Error::param(format!("ridge lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::param(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !self.modality_mask.iter().any(|&m| m) {
            return Err(Error::param("at least one modality must be enabled"));
        }
        Ok(())
    }
}

/// Where the height input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeightSource {
    GroundTruth,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    #[serde(rename = "w_F")]
    pub w_face: f64,
    #[serde(rename = "w_B")]
    pub w_body: f64,
    #[serde(rename = "w_R")]
    pub w_cloud: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EpochLimit,
    TargetReached,
    EarlyStopped,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: FusionModelParams,
    pub log: Vec<EpochLog>,
    pub stop_reason: StopReason,
    pub steps: usize,
    pub height_source: HeightSource,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl FitOutcome {
    /// One JSON object per epoch.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
            .collect()
    }
}

/// Gradient of the loss with respect to every parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weight_logits: [f64; 3],
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.weight_logits[..]];
        for l in &self.layers {
            v.push(l.w.as_slice().expect("standard layout"));
            v.push(l.b.as_slice().expect("standard layout"));
        }
        v
    }
}

impl FusionModelParams {
    /// Parameter tensors in a fixed order: logits, then `W`, `b` per layer.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.weight_logits[..]];
        for l in &self.layers {
            v.push(l.w.as_slice().expect("standard layout"));
            v.push(l.b.as_slice().expect("standard layout"));
        }
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.weight_logits[..]];
        for l in &mut self.layers {
            v.push(l.w.as_slice_mut().expect("standard layout"));
            v.push(l.b.as_slice_mut().expect("standard layout"));
        }
        v
    }

    fn ridge_penalty(&self) -> f64 {
        let sq = |l: &DenseLayer| l.w.iter().map(|v| v * v).sum::<f64>();
        let sum = match self.ridge_scope {
            RidgeScope::OutputLayer => sq(self.layers.last().expect("output layer")),
            RidgeScope::AllLayers => self.layers.iter().map(sq).sum(),
        };
        self.ridge_lambda * sum
    }

    /// Predictions for many samples at once.
    pub fn predict_samples(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        let batch = Batch::build(samples, self)?;
        let (x, _) = batch.inputs(self);
        Ok(self.forward_batch(&x)?.to_vec())
    }
}

/// Mean squared error plus the ridge penalty.
pub fn loss(predictions: &[f64], targets: &[f64], params: &FusionModelParams) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::param("loss of an empty batch"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::param(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse + params.ridge_penalty())
}

struct Batch {
    z: [Array2<f64>; 3],
    tail: Array2<f64>,
    targets: Array1<f64>,
}

impl Batch {
    fn build(samples: &[&Sample], params: &FusionModelParams) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("empty batch"));
        }
        let n = samples.len();
        let d = params.embed_dim();
        let mut z = [Array2::zeros((n, d)), Array2::zeros((n, d)), Array2::zeros((n, d))];
        let mut tail = Array2::zeros((n, EXTRA_INPUTS));
        let mut targets = Array1::zeros(n);
        for (r, s) in samples.iter().enumerate() {
            for j in 0..3 {
                let e = &s.embeddings[j];
                if e.len() != d {
                    return Err(Error::param(format!(
                        "sample {r} embedding {j} has {} values, expected {d}",
                        e.len()
                    )));
                }
                if e.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("sample {r} embedding {j} is not finite")));
                }
                let e = if params.l2_normalize { l2_normalized(e) } else { e.clone() };
                z[j].row_mut(r).assign(&Array1::from(e));
            }
            if !(s.height_cm.is_finite() && s.height_cm > 0.0) {
                return Err(Error::param(format!("sample {r} height must be positive")));
            }
            let g = s.gender.one_hot();
            tail[[r, 0]] = g[0];
            tail[[r, 1]] = g[1];
            tail[[r, 2]] = s.height_cm / 100.0;
            targets[r] = s.target_kg;
        }
        Ok(Self { z, tail, targets })
    }

    /// Assembled inputs and the softmax weights used to build them.
    fn inputs(&self, params: &FusionModelParams) -> (Array2<f64>, [f64; 3]) {
        let w = params.weights();
        let mut e = Array2::zeros(self.z[0].dim());
        for j in 0..3 {
            if w[j] != 0.0 {
                e.scaled_add(w[j], &self.z[j]);
            }
        }
        (
            concatenate(Axis(1), &[e.view(), self.tail.view()]).expect("row counts agree"),
            w,
        )
    }
}

/// Loss over `samples` and its exact gradient.
pub fn loss_and_gradients(params: &FusionModelParams, samples: &[&Sample]) -> Result<(f64, Gradients)> {
    let batch = Batch::build(samples, params)?;
    backprop(params, &batch)
}

fn backprop(params: &FusionModelParams, batch: &Batch) -> Result<(f64, Gradients)> {
    let n = batch.targets.len() as f64;
    let (x, w) = batch.inputs(params);
    let last = params.layers.len() - 1;

    // forward, keeping the input of every layer
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut h = x;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = h.dot(&layer.w) + &layer.b;
        if i < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        inputs.push(h);
        h = z;
    }
    let y = h.column(0).to_owned();
    let resid = &y - &batch.targets;
    let mse = resid.mapv(|r| r * r).sum() / n;
    let loss = mse + params.ridge_penalty();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }

    let mut grads: Vec<DenseLayer> = Vec::with_capacity(params.layers.len());
    let mut delta = (resid * (2.0 / n)).insert_axis(Axis(1));
    for i in (0..=last).rev() {
        let layer = &params.layers[i];
        let input = &inputs[i];
        let mut gw = input.t().dot(&delta);
        let penalised = match params.ridge_scope {
            RidgeScope::OutputLayer => i == last,
            RidgeScope::AllLayers => true,
        };
        if penalised && params.ridge_lambda > 0.0 {
            gw.scaled_add(2.0 * params.ridge_lambda, &layer.w);
        }
        let gb = delta.sum_axis(Axis(0));
        let back = delta.dot(&layer.w.t());
        let gw = if gw.is_standard_layout() {
            gw
        } else {
            gw.as_standard_layout().into_owned()
        };
        grads.push(DenseLayer { w: gw, b: gb });
        delta = if i > 0 {
            // input[i] is the ReLU output of layer i - 1; positive exactly where active
            let mask = input.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            back * mask
        } else {
            back
        };
    }
    grads.reverse();

    let d = params.embed_dim();
    let de = delta.slice(s![.., ..d]);
    let g: [f64; 3] = std::array::from_fn(|j| (&de * &batch.z[j]).sum());
    let mean: f64 = (0..3).map(|j| w[j] * g[j]).sum();
    let mut glog = [0.0; 3];
    for k in 0..3 {
        if params.modality_mask[k] {
            glog[k] = w[k] * (g[k] - mean);
        }
    }
    Ok((
        loss,
        Gradients {
            weight_logits: glog,
            layers: grads,
        },
    ))
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(params: &FusionModelParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, params: &mut FusionModelParams, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

fn mae(pred: &Array1<f64>, target: &Array1<f64>) -> f64 {
    (pred - target).mapv(f64::abs).mean().unwrap_or(0.0)
}

pub fn fit(samples: &[Sample], config: &TrainingConfig) -> Result<FitOutcome> {
    fit_with_observer(samples, config, &mut |_, _| {})
}

/// Adam with mini-batches. `observer` sees the parameters after every
/// optimizer step.
pub fn fit_with_observer(
    samples: &[Sample],
    config: &TrainingConfig,
    observer: &mut dyn FnMut(usize, &FusionModelParams),
) -> Result<FitOutcome> {
    fit_inner(samples, config, None, observer)
}

/// Like [`fit`], but validates on the given sample indices instead of a
/// random share; `validation_fraction` is ignored.
pub fn fit_with_validation(
    samples: &[Sample],
    val_indices: &[usize],
    config: &TrainingConfig,
) -> Result<FitOutcome> {
    fit_inner(samples, config, Some(val_indices), &mut |_, _| {})
}

fn fit_inner(
    samples: &[Sample],
    config: &TrainingConfig,
    explicit_val: Option<&[usize]>,
    observer: &mut dyn FnMut(usize, &FusionModelParams),
) -> Result<FitOutcome> {
    config.validate()?;
    if samples.len() < 2 {
        return Err(Error::param(format!("need at least 2 samples, got {}", samples.len())));
    }
    if let Some(i) = samples.iter().position(|s| !s.target_kg.is_finite()) {
        return Err(Error::Data(format!("sample {i} target is not finite")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f00d);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (samples.len() as f64 * config.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = if let Some(val) = explicit_val {
        if let Some(&bad) = val.iter().find(|&&i| i >= samples.len()) {
            return Err(Error::param(format!("validation index {bad} out of range")));
        }
        let is_val: std::collections::HashSet<usize> = val.iter().copied().collect();
        let train: Vec<usize> = order.iter().copied().filter(|i| !is_val.contains(i)).collect();
        if train.is_empty() || val.is_empty() {
            return Err(Error::param("explicit split leaves an empty train or validation set"));
        }
        (val.to_vec(), train)
    } else if n_val == 0 || n_val >= samples.len() {
        (order.clone(), order.clone())
    } else {
        let (v, t) = order.split_at(n_val);
        (v.to_vec(), t.to_vec())
    };
    let mut train_idx = train_idx;
    let mut val_idx = val_idx;
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let mut params = FusionModelParams::init(&config.architecture, config.seed)?;
    params.ridge_lambda = config.ridge_lambda;
    params.ridge_scope = config.ridge_scope;
    params.l2_normalize = config.l2_normalize;
    params.modality_mask = config.modality_mask;
    let mean_target =
        train_idx.iter().map(|&i| samples[i].target_kg).sum::<f64>() / train_idx.len() as f64;
    params.layers.last_mut().expect("output layer").b[0] = mean_target;

    let gather = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
    let train_all = Batch::build(&gather(&train_idx), &params)?;
    let val_all = Batch::build(&gather(&val_idx), &params)?;

    let mut adam = Adam::new(&params, config.learning_rate);
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;
    let mut steps = 0;
    let mut stop_reason = StopReason::EpochLimit;
    let mut shuffled = train_idx.clone();

    for epoch in 1..=config.epochs {
        shuffled.shuffle(&mut rng);
        for chunk in shuffled.chunks(config.batch_size) {
            let batch = Batch::build(&gather(chunk), &params)?;
            let (l, grads) = backprop(&params, &batch).map_err(|e| Error::Training {
                epoch,
                message: format!("step {}: {e}", steps + 1),
            })?;
            if !l.is_finite() || grads.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
                return Err(Error::Training {
                    epoch,
                    message: format!(
                        "non-finite loss or gradient at step {} (last train MAE {:?})",
                        steps + 1,
                        log.last().map(|r: &EpochLog| r.train_mae)
                    ),
                });
            }
            adam.step(&mut params, &grads);
            steps += 1;
            observer(steps, &params);
        }

        let eval = |b: &Batch| -> Result<f64> {
            let (x, _) = b.inputs(&params);
            Ok(mae(&params.forward_batch(&x)?, &b.targets))
        };
        let to_training = |e: Error| Error::Training {
            epoch,
            message: e.to_string(),
        };
        let train_mae = eval(&train_all).map_err(to_training)?;
        let val_mae = eval(&val_all).map_err(to_training)?;
        let w = params.weights();
        log.push(EpochLog {
            epoch,
            train_mae,
            val_mae,
            w_face: w[0],
            w_body: w[1],
            w_cloud: w[2],
        });
        tracing::debug!(epoch, train_mae, val_mae, "epoch done");

        if config.target_train_mae.is_some_and(|t| train_mae < t) {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if val_mae < best.0 {
            best = (val_mae, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                params = best.1.clone();
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }

    Ok(FitOutcome {
        params,
        log,
        stop_reason,
        steps,
        height_source: HeightSource::GroundTruth,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
