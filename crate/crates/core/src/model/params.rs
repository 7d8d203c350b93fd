use std::collections::HashMap;

use eagle_autodiff::{Gradients, Real, Shape, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::{EagleError, Result};

/// Named parameter tensors in a fixed creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    entries: Vec<(String, Tensor<T>)>,
    lookup: HashMap<String, usize>,
}

/// Parameters recorded on a tape for one forward pass.
pub struct Bound {
    vars: Vec<Var>,
    lookup: HashMap<String, usize>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        match self.lookup.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name} is not part of this model"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.lookup.get(name).map(|&i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ModelParams<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut lookup = HashMap::new();
        for (i, (name, _)) in entries.iter().enumerate() {
            if lookup.insert(name.clone(), i).is_some() {
                return Err(EagleError::Format(format!("duplicate parameter {name}")));
            }
        }
        Ok(ModelParams { entries, lookup })
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.lookup.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.lookup.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.values.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.entries.iter_mut().map(|(_, t)| &mut t.values)
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.param(t.shape.clone(), t.values.clone()).expect("parameter shape matches values"))
            .collect();
        Bound {
            vars,
            lookup: self.lookup.clone(),
        }
    }

    /// Binds already-recorded leaves, one per entry in order.
    pub fn bound_from(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.entries.len() {
            return Err(EagleError::Format(format!("{} vars for {} parameters", vars.len(), self.entries.len())));
        }
        Ok(Bound {
            vars: vars.to_vec(),
            lookup: self.lookup.clone(),
        })
    }

    /// Gradients in entry order; zeros for parameters the loss did not reach.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients<T>) -> Vec<Vec<T>> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .map(|((_, t), &v)| grads.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.values.len()]))
            .collect()
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let values = t.values.iter().map(|v| v.as_f64()).collect();
                (n.clone(), Tensor::new(t.shape.clone(), values).expect("same shape"))
            })
            .collect();
        ModelParams {
            entries,
            lookup: self.lookup.clone(),
        }
    }
}

pub fn prior_logit(pi: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(EagleError::Config(format!("positive rate {pi} must lie strictly inside (0, 1)")));
    }
    Ok((pi / (1.0 - pi)).ln())
}

struct Init {
    rng: ChaCha8Rng,
    entries: Vec<(String, Tensor<f64>)>,
}

impl Init {
    fn glorot(&mut self, name: String, dims: &[usize], fan_in: usize, fan_out: usize) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-limit..=limit)).collect();
        self.push(name, dims, values);
    }

    fn fill(&mut self, name: String, dims: &[usize], v: f64) {
        let n: usize = dims.iter().product();
        self.push(name, dims, vec![v; n]);
    }

    fn push(&mut self, name: String, dims: &[usize], values: Vec<f64>) {
        let t = Tensor::new(Shape::new(dims.to_vec()), values).expect("init shape");
        self.entries.push((name, t));
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, fan_in: usize, fan_out: usize) {
        self.glorot(format!("{prefix}.{w}"), &[fan_in, fan_out], fan_in, fan_out);
        self.fill(format!("{prefix}.{b}"), &[fan_out], 0.0);
    }
}

/// Glorot-uniform weights from a seeded ChaCha stream, zero biases, unit
/// layer-norm gains, and the classification output bias at the prior logit
/// of `pos_rate`.
pub fn init_params<T: Real>(cfg: &ModelConfig, pos_rate: f64, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let bias = prior_logit(pos_rate)?;
    let d = cfg.d_model;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        entries: Vec::new(),
    };
    if cfg.ablation.uses_temporal() {
        init.linear("enc.patch", "w", "b", cfg.patch_len, d);
        init.glorot("enc.pos".into(), &[cfg.n_patches(), d], cfg.n_patches(), d);
        let ffn = cfg.ffn_mult * d;
        for l in 0..cfg.encoder_layers {
            let p = format!("enc.{l}");
            init.fill(format!("{p}.ln1.g"), &[d], 1.0);
            init.fill(format!("{p}.ln1.b"), &[d], 0.0);
            for (w, b) in [("wq", "bq"), ("wv", "bv"), ("wo", "bo")] {
                init.linear(&format!("{p}.attn"), w, b, d, d);
            }
            init.glorot(format!("{p}.attn.wk"), &[d, d], d, d);
            init.fill(format!("{p}.ln2.g"), &[d], 1.0);
            init.fill(format!("{p}.ln2.b"), &[d], 0.0);
            init.linear(&format!("{p}.ffn"), "w1", "b1", d, ffn);
            init.linear(&format!("{p}.ffn"), "w2", "b2", ffn, d);
        }
        init.fill("enc.norm.g".into(), &[d], 1.0);
        init.fill("enc.norm.b".into(), &[d], 0.0);
    } else {
        init.linear("static", "w", "b", cfg.node_dim, d);
    }
    let heads = cfg.gat_heads;
    let dh = d / heads;
    for l in 0..cfg.gat_layers {
        init.glorot(format!("gat.{l}.w"), &[d, d], d, d);
        if cfg.ablation.uses_edges() {
            init.glorot(format!("gat.{l}.we"), &[cfg.edge_dim, d], cfg.edge_dim, d);
        }
        init.glorot(format!("gat.{l}.a_dst"), &[heads, dh], dh, 1);
        init.glorot(format!("gat.{l}.a_src"), &[heads, dh], dh, 1);
        if cfg.ablation.uses_edges() {
            init.glorot(format!("gat.{l}.a_edge"), &[heads, dh], dh, 1);
        }
    }
    init.linear("cls", "w1", "b1", d, cfg.head_hidden);
    init.glorot("cls.w2".into(), &[cfg.head_hidden, 1], cfg.head_hidden, 1);
    init.fill("cls.b2".into(), &[1], bias);
    if cfg.ablation.has_regression() {
        init.linear("reg", "w1", "b1", d, cfg.head_hidden);
        init.linear("reg", "w2", "b2", cfg.head_hidden, 1);
    }
    let entries = init
        .entries
        .into_iter()
        .map(|(n, t)| {
            let values = t.values.iter().map(|&v| T::from_f64_lossy(v)).collect();
            (n, Tensor::new(t.shape, values).expect("same shape"))
        })
        .collect();
    ModelParams::from_entries(entries)
}
