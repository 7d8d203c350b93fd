//! AdamW training with cosine annealing, clipping, early stopping and
//! binary checkpoints.

use std::path::Path;

use eagle_autodiff::{Precision, Real, Shape, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::auc;
use crate::model::{forward, init_params, loss, predict, GraphInput, ModelConfig, ModelParams};
use crate::snapshots::{SplitBundle, SplitTag, StandardizationStats};
use crate::util::{read_file, write_file, Container};
use crate::{EagleError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub clip_norm: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 40,
            early_stop_patience: 10,
            clip_norm: 1.0,
            seeds: vec![0, 1, 2, 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EagleError::Config(format!("train: {m}")));
        if !(self.lr > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return bad(format!("need 0 <= lr_min <= lr and lr > 0 (lr {}, lr_min {})", self.lr, self.lr_min));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("invalid AdamW moments".into());
        }
        Ok(())
    }
}

/// Cosine annealing from `lr` at step 0 to `lr_min` at step `total - 1`.
pub fn cosine_lr(step: usize, total: usize, lr: f64, lr_min: f64) -> f64 {
    if total <= 1 {
        return lr;
    }
    let frac = step.min(total - 1) as f64 / (total - 1) as f64;
    lr_min + 0.5 * (lr - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *v = *v * s;
        }
    }
    norm
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ModelParams<T>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.entries().iter().map(|(_, t)| vec![T::zero(); t.values.len()]).collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[Vec<T>], lr: f64) {
        self.t += 1;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(self.t as i32));
        let eps = T::from_f64_lossy(self.eps);
        let lr_t = T::from_f64_lossy(lr);
        let decay = T::from_f64_lossy(lr * self.weight_decay);
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - decay * p[i] - lr_t * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

/// Trained parameters plus everything needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub n_nodes: usize,
    pub stats: Option<StandardizationStats>,
    pub params: ModelParams<T>,
}

pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
}

const RNG_STREAM: u64 = 0x5eed_0f_da7a;

fn split_auc<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, graph: &GraphInput, bundle: &SplitBundle, tag: SplitTag) -> Result<f64> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in bundle.split(tag) {
        scores.extend(predict(params, cfg, graph, s)?.prob);
        labels.extend_from_slice(&s.y_class);
    }
    auc(&scores, &labels)
}

/// One optimizer step per training snapshot, in a per-epoch shuffled
/// order; keeps the parameters of the best validation-AUC epoch.
pub fn train<T: Real>(
    bundle: &SplitBundle,
    graph: &GraphInput,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if graph.n_nodes != bundle.n_nodes {
        return Err(EagleError::Compatibility(format!(
            "graph has {} nodes, bundle {}",
            graph.n_nodes, bundle.n_nodes
        )));
    }
    if bundle.stats.is_none() {
        return Err(EagleError::Data("bundle is not standardized".into()));
    }
    if model_cfg.window != bundle.config.window {
        return Err(EagleError::Config(format!(
            "model window {} differs from snapshot window {}",
            model_cfg.window, bundle.config.window
        )));
    }
    let val = bundle.counts.val;
    if val.positives == 0 || val.negatives == 0 {
        return Err(EagleError::Calibration(
            "validation split has a single class; model selection by AUC is undefined".into(),
        ));
    }
    let train = bundle.split(SplitTag::Train);
    let mut params: ModelParams<T> = init_params(model_cfg, bundle.counts.train.positive_rate(), seed)?;
    let mut opt = AdamW::new(&params, train_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RNG_STREAM);
    let total_steps = train_cfg.epochs * train.len();
    let mut step = 0usize;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<T>)> = None;
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let s = &train[i];
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = forward(&mut tape, &bound, model_cfg, graph, &s.features, Some(&mut rng))?;
            let parts = loss(&mut tape, model_cfg, &out, &s.y_class, &s.y_reg)?;
            let total = tape.value(parts.total)[0].as_f64();
            if !total.is_finite() {
                let bce = tape.value(parts.bce)[0].as_f64();
                let huber = parts.huber.map(|h| tape.value(h)[0].as_f64());
                return Err(EagleError::Numeric(format!(
                    "non-finite loss at epoch {epoch}, snapshot t={}: total {total}, bce {bce}, huber {huber:?}",
                    s.t
                )));
            }
            loss_sum += total;
            let grads = tape.backward(parts.total)?;
            let mut g = params.collect_grads(&bound, &grads);
            clip_global_norm(&mut g, train_cfg.clip_norm);
            opt.step(&mut params, &g, cosine_lr(step, total_steps, train_cfg.lr, train_cfg.lr_min));
            step += 1;
        }
        let val_auc = split_auc(&params, model_cfg, graph, bundle, SplitTag::Val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_auc,
        });
        if best.as_ref().is_none_or(|b| val_auc > b.0) {
            best = Some((val_auc, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_cfg.early_stop_patience {
                break;
            }
        }
    }
    let (best_val_auc, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            seed,
            best_epoch,
            best_val_auc,
            n_nodes: bundle.n_nodes,
            stats: bundle.stats.clone(),
            params,
        },
        history,
    })
}

/// One row per (snapshot, node) of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub t: u32,
    pub node: usize,
    pub score: f64,
    pub delay: Option<f64>,
    pub y_class: bool,
    pub y_reg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPredictions {
    pub rows: Vec<PredictionRow>,
    /// Per snapshot, per layer attention (see [`crate::model::Prediction`]).
    pub attention: Vec<Vec<Vec<f64>>>,
}

impl SplitPredictions {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.y_class).collect()
    }

    pub fn delays(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.delay).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y_reg).collect()
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn check_compatible(&self, bundle: &SplitBundle) -> Result<()> {
        if self.n_nodes != bundle.n_nodes {
            return Err(EagleError::Compatibility(format!(
                "checkpoint expects {} nodes, bundle has {}",
                self.n_nodes, bundle.n_nodes
            )));
        }
        if self.stats != bundle.stats {
            return Err(EagleError::Compatibility(
                "checkpoint and bundle were standardized with different statistics".into(),
            ));
        }
        if self.model.window != bundle.config.window {
            return Err(EagleError::Compatibility("window length differs".into()));
        }
        Ok(())
    }

    /// Dropout-free predictions for every node-window of a split.
    pub fn predict_split(&self, bundle: &SplitBundle, graph: &GraphInput, tag: SplitTag) -> Result<SplitPredictions> {
        self.check_compatible(bundle)?;
        let mut rows = Vec::new();
        let mut attention = Vec::new();
        for s in bundle.split(tag) {
            let p = predict(&self.params, &self.model, graph, s)?;
            for node in 0..bundle.n_nodes {
                rows.push(PredictionRow {
                    t: s.t,
                    node,
                    score: p.prob[node],
                    delay: p.delay.as_ref().map(|d| d[node]),
                    y_class: s.y_class[node],
                    y_reg: s.y_reg[node],
                });
            }
            attention.push(p.attention);
        }
        Ok(SplitPredictions { rows, attention })
    }
}

const CKPT_MAGIC: &[u8; 8] = b"EAGLECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    precision_bits: u32,
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
    best_epoch: usize,
    best_val_auc: f64,
    n_nodes: usize,
    stats: Option<StandardizationStats>,
    tensors: Vec<(String, Vec<usize>)>,
}

fn precision_of(bits: u32) -> Result<Precision> {
    match bits {
        32 => Ok(Precision::F32),
        64 => Ok(Precision::F64),
        b => Err(EagleError::Format(format!("checkpoint: unsupported precision {b}"))),
    }
}

/// Precision a checkpoint was written at.
pub fn checkpoint_precision(bytes: &[u8]) -> Result<Precision> {
    let c = Container::decode(bytes, CKPT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let h: CkptHeader = serde_json::from_slice(&c.header)?;
    precision_of(h.precision_bits)
}

impl<T: Real> Checkpoint<T> {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = CkptHeader {
            precision_bits: T::PRECISION.bits(),
            model: self.model.clone(),
            train: self.train.clone(),
            seed: self.seed,
            best_epoch: self.best_epoch,
            best_val_auc: self.best_val_auc,
            n_nodes: self.n_nodes,
            stats: self.stats.clone(),
            tensors: self.params.entries().iter().map(|(n, t)| (n.clone(), t.shape.dims().to_vec())).collect(),
        };
        let mut payload = Vec::with_capacity(self.params.n_scalars() * T::PRECISION.byte_width());
        for (_, t) in self.params.entries() {
            for &v in &t.values {
                v.write_le(&mut payload);
            }
        }
        Ok(Container {
            version: CHECKPOINT_VERSION,
            header: serde_json::to_vec(&header)?,
            payload,
        }
        .encode(CKPT_MAGIC))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, CKPT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
        let h: CkptHeader = serde_json::from_slice(&c.header)?;
        let precision = precision_of(h.precision_bits)?;
        if precision != T::PRECISION {
            return Err(EagleError::Compatibility(format!(
                "checkpoint was written at {}-bit precision, requested {}-bit",
                precision.bits(),
                T::PRECISION.bits()
            )));
        }
        let width = precision.byte_width();
        let total: usize = h.tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if c.payload.len() != total * width {
            return Err(EagleError::Format(format!(
                "checkpoint: payload is {} bytes, tensors need {}",
                c.payload.len(),
                total * width
            )));
        }
        let mut chunks = c.payload.chunks_exact(width);
        let mut entries = Vec::with_capacity(h.tensors.len());
        for (name, dims) in h.tensors {
            let n: usize = dims.iter().product();
            let values: Vec<T> = chunks.by_ref().take(n).map(T::read_le).collect();
            let t = Tensor::new(Shape::new(dims), values).map_err(|e| EagleError::Format(e.to_string()))?;
            entries.push((name, t));
        }
        let params = ModelParams::from_entries(entries)?;
        let expected: ModelParams<T> = init_params(&h.model, 0.5, 0)?;
        let shapes = |p: &ModelParams<T>| p.entries().iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect::<Vec<_>>();
        if shapes(&params) != shapes(&expected) {
            return Err(EagleError::Format("checkpoint: tensors do not match the model config".into()));
        }
        Ok(Checkpoint {
            model: h.model,
            train: h.train,
            seed: h.seed,
            best_epoch: h.best_epoch,
            best_val_auc: h.best_val_auc,
            n_nodes: h.n_nodes,
            stats: h.stats,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests;
