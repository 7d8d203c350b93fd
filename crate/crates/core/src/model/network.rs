use std::sync::Arc;

use eagle_autodiff::{Real, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelParams};
use crate::graph::SupplyGraph;
use crate::snapshots::Snapshot;
use crate::{EagleError, Result};

/// Model-side view of the graph: directed edges plus one self-loop per
/// node, with edge features z-scored per column over the real edges.
/// Self-loops carry the zero vector.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub n_nodes: usize,
    /// Number of real (non self-loop) edges; self-loops follow them.
    pub n_edges: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// `(n_edges + n_nodes) x edge_dim`, row-major.
    pub edge_feats: Vec<f64>,
    pub edge_dim: usize,
}

impl GraphInput {
    pub fn new(n_nodes: usize, pairs: &[(usize, usize)], raw_feats: &[Vec<f64>], std_floor: f64) -> Result<Self> {
        if raw_feats.len() != pairs.len() {
            return Err(EagleError::Graph(format!("{} feature rows for {} edges", raw_feats.len(), pairs.len())));
        }
        let edge_dim = raw_feats.first().map_or(crate::graph::EDGE_DIM, Vec::len);
        if let Some(&(s, d)) = pairs.iter().find(|&&(s, d)| s >= n_nodes || d >= n_nodes) {
            return Err(EagleError::Graph(format!("edge ({s}, {d}) out of range for {n_nodes} nodes")));
        }
        if raw_feats.iter().any(|r| r.len() != edge_dim) {
            return Err(EagleError::Graph("ragged edge feature rows".into()));
        }
        let e = pairs.len();
        let mut mean = vec![0.0; edge_dim];
        let mut std = vec![0.0; edge_dim];
        if e > 0 {
            for row in raw_feats {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v / e as f64;
                }
            }
            for row in raw_feats {
                for ((s, m), v) in std.iter_mut().zip(&mean).zip(row) {
                    *s += (v - m).powi(2) / e as f64;
                }
            }
        }
        let mut edge_feats = Vec::with_capacity((e + n_nodes) * edge_dim);
        for row in raw_feats {
            for c in 0..edge_dim {
                edge_feats.push((row[c] - mean[c]) / std[c].sqrt().max(std_floor));
            }
        }
        edge_feats.resize((e + n_nodes) * edge_dim, 0.0);
        let src = pairs.iter().map(|p| p.0).chain(0..n_nodes).collect();
        let dst = pairs.iter().map(|p| p.1).chain(0..n_nodes).collect();
        Ok(GraphInput {
            n_nodes,
            n_edges: e,
            src,
            dst,
            edge_feats,
            edge_dim,
        })
    }

    pub fn from_graph(graph: &SupplyGraph) -> Result<Self> {
        let rows: Vec<Vec<f64>> = graph.edge_features.rows.iter().map(|r| r.to_vec()).collect();
        Self::new(graph.n_nodes(), &graph.edges.pairs, &rows, 1e-8)
    }

    /// Edges including self-loops.
    pub fn n_total_edges(&self) -> usize {
        self.src.len()
    }

    fn segments(&self, heads: usize) -> Arc<[usize]> {
        self.dst.iter().flat_map(|&u| (0..heads).map(move |h| u * heads + h)).collect()
    }
}

/// Inverted dropout through a constant mask; identity when `rng` is absent.
pub fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let shape = tape.shape(x).clone();
    let mask = (0..shape.numel())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let m = tape.constant(shape, mask)?;
    Ok(tape.mul(x, m)?)
}

fn linear<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, b)?)
}

fn cast<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64_lossy(x)).collect()
}

fn check_features(cfg: &ModelConfig, n: usize, features: &[f64]) -> Result<()> {
    let want = n * cfg.window * cfg.node_dim;
    if features.len() != want {
        return Err(EagleError::Numeric(format!(
            "snapshot has {} feature values, model expects {n} x {} x {}",
            features.len(),
            cfg.window,
            cfg.node_dim
        )));
    }
    if let Some(v) = features.iter().find(|v| !v.is_finite()) {
        return Err(EagleError::Numeric(format!("non-finite input feature {v}")));
    }
    Ok(())
}

/// Channel-independent patch transformer. `features` is `n x window x
/// node_dim`; returns the `n x d_model` mean-pooled token embedding.
pub fn encode_temporal<T: Real>(
    tape: &mut Tape<T>,
    p: &super::Bound,
    cfg: &ModelConfig,
    n: usize,
    features: &[f64],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    check_features(cfg, n, features)?;
    let (c, plen, np, d) = (cfg.node_dim, cfg.patch_len, cfg.n_patches(), cfg.d_model);
    let (heads, dh) = (cfg.encoder_heads, cfg.d_model / cfg.encoder_heads);
    let seqs = n * c;
    let mut tokens = Vec::with_capacity(seqs * cfg.window);
    for node in 0..n {
        for ch in 0..c {
            for day in 0..cfg.window {
                tokens.push(features[(node * cfg.window + day) * c + ch]);
            }
        }
    }
    let x = tape.constant([seqs * np, plen], cast(&tokens))?;
    let x = linear(tape, x, p.get("enc.patch.w"), p.get("enc.patch.b"))?;
    let x = tape.reshape(x, [seqs, np, d])?;
    let mut x = tape.add(x, p.get("enc.pos"))?;

    let seg: Arc<[usize]> = (0..seqs * np * np * heads)
        .map(|k| {
            let h = k % heads;
            let row = k / (np * heads);
            row * heads + h
        })
        .collect();
    let inv_sqrt = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let eps = T::from_f64_lossy(cfg.ln_eps);
    for l in 0..cfg.encoder_layers {
        let name = |s: &str| format!("enc.{l}.{s}");
        let h = tape.layer_norm(x, p.get(&name("ln1.g")), p.get(&name("ln1.b")), eps)?;
        let h = tape.reshape(h, [seqs * np, d])?;
        let q = linear(tape, h, p.get(&name("attn.wq")), p.get(&name("attn.bq")))?;
        let k = tape.matmul(h, p.get(&name("attn.wk")))?;
        let v = linear(tape, h, p.get(&name("attn.wv")), p.get(&name("attn.bv")))?;
        let q = tape.reshape(q, [seqs, np, 1, heads, dh])?;
        let k = tape.reshape(k, [seqs, 1, np, heads, dh])?;
        let qk = tape.mul(q, k)?;
        let scores = tape.sum(qk, 4)?;
        let scores = tape.scale(scores, inv_sqrt);
        let att = tape.segment_softmax(scores, &seg, seqs * np * heads)?;
        let att = dropout(tape, att, cfg.dropout, rng.as_deref_mut())?;
        let att = tape.reshape(att, [seqs, np, np, heads, 1])?;
        let v = tape.reshape(v, [seqs, 1, np, heads, dh])?;
        let ctx = tape.mul(att, v)?;
        let ctx = tape.sum(ctx, 2)?;
        let ctx = tape.reshape(ctx, [seqs * np, d])?;
        let o = linear(tape, ctx, p.get(&name("attn.wo")), p.get(&name("attn.bo")))?;
        let o = tape.reshape(o, [seqs, np, d])?;
        x = tape.add(x, o)?;

        let h = tape.layer_norm(x, p.get(&name("ln2.g")), p.get(&name("ln2.b")), eps)?;
        let h = tape.reshape(h, [seqs * np, d])?;
        let f = linear(tape, h, p.get(&name("ffn.w1")), p.get(&name("ffn.b1")))?;
        let f = tape.gelu(f);
        let f = linear(tape, f, p.get(&name("ffn.w2")), p.get(&name("ffn.b2")))?;
        let f = dropout(tape, f, cfg.dropout, rng.as_deref_mut())?;
        let f = tape.reshape(f, [seqs, np, d])?;
        x = tape.add(x, f)?;
    }
    let x = tape.layer_norm(x, p.get("enc.norm.g"), p.get("enc.norm.b"), eps)?;
    let x = tape.reshape(x, [n, c * np, d])?;
    Ok(tape.mean(x, 1)?)
}

/// Linear map of the time-averaged node features.
pub fn encode_static<T: Real>(
    tape: &mut Tape<T>,
    p: &super::Bound,
    cfg: &ModelConfig,
    n: usize,
    features: &[f64],
) -> Result<Var> {
    check_features(cfg, n, features)?;
    let x = tape.constant([n, cfg.window, cfg.node_dim], cast(features))?;
    let x = tape.mean(x, 1)?;
    linear(tape, x, p.get("static.w"), p.get("static.b"))
}

/// One edge-aware attention layer. Returns the updated `n x d` embeddings
/// and the `(edges + self-loops) x heads` attention coefficients.
pub fn egat_layer<T: Real>(
    tape: &mut Tape<T>,
    p: &super::Bound,
    cfg: &ModelConfig,
    layer: usize,
    h: Var,
    graph: &GraphInput,
    edge_feats: Option<Var>,
) -> Result<(Var, Var)> {
    let n = graph.n_nodes;
    let (heads, d) = (cfg.gat_heads, cfg.d_model);
    let dh = d / heads;
    let et = graph.n_total_edges();
    let name = |s: &str| format!("gat.{layer}.{s}");

    let wh = tape.matmul(h, p.get(&name("w")))?;
    let wh = tape.reshape(wh, [n, heads, dh])?;
    let recv = tape.mul(wh, p.get(&name("a_dst")))?;
    let recv = tape.sum(recv, 2)?;
    let send = tape.mul(wh, p.get(&name("a_src")))?;
    let send = tape.sum(send, 2)?;
    let recv = tape.gather_rows(recv, &graph.dst)?;
    let send = tape.gather_rows(send, &graph.src)?;
    let mut score = tape.add(recv, send)?;
    if let (true, Some(e)) = (cfg.ablation.uses_edges(), edge_feats) {
        let we = tape.matmul(e, p.get(&name("we")))?;
        let we = tape.reshape(we, [et, heads, dh])?;
        let ee = tape.mul(we, p.get(&name("a_edge")))?;
        let ee = tape.sum(ee, 2)?;
        score = tape.add(score, ee)?;
    }
    let score = tape.leaky_relu(score, T::from_f64_lossy(cfg.leaky_slope));
    let alpha = tape.segment_softmax(score, &graph.segments(heads), n * heads)?;

    let msg = tape.gather_rows(wh, &graph.src)?;
    let a3 = tape.reshape(alpha, [et, heads, 1])?;
    let msg = tape.mul(msg, a3)?;
    let z = tape.segment_sum(msg, &graph.dst, n)?;
    let z = tape.reshape(z, [n, d])?;
    Ok((tape.elu(z, T::from_f64_lossy(cfg.elu_alpha)), alpha))
}

/// Tape handles for one forward pass.
pub struct Forward {
    pub embedding: Var,
    pub node_repr: Var,
    pub prob: Var,
    pub delay: Option<Var>,
    pub attention: Vec<Var>,
}

fn head<T: Real>(tape: &mut Tape<T>, p: &super::Bound, prefix: &str, z: Var, n: usize) -> Result<Var> {
    let h = linear(tape, z, p.get(&format!("{prefix}.w1")), p.get(&format!("{prefix}.b1")))?;
    let h = tape.relu(h);
    let o = linear(tape, h, p.get(&format!("{prefix}.w2")), p.get(&format!("{prefix}.b2")))?;
    Ok(tape.reshape(o, [n])?)
}

pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    p: &super::Bound,
    cfg: &ModelConfig,
    graph: &GraphInput,
    features: &[f64],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Forward> {
    let n = graph.n_nodes;
    let embedding = if cfg.ablation.uses_temporal() {
        encode_temporal(tape, p, cfg, n, features, rng.as_deref_mut())?
    } else {
        encode_static(tape, p, cfg, n, features)?
    };
    let edge_feats = if cfg.ablation.uses_edges() {
        if graph.edge_dim != cfg.edge_dim {
            return Err(EagleError::Graph(format!(
                "edge features have width {}, model expects {}",
                graph.edge_dim, cfg.edge_dim
            )));
        }
        Some(tape.constant([graph.n_total_edges(), graph.edge_dim], cast(&graph.edge_feats))?)
    } else {
        None
    };
    let mut z = embedding;
    let mut attention = Vec::with_capacity(cfg.gat_layers);
    for l in 0..cfg.gat_layers {
        let (next, alpha) = egat_layer(tape, p, cfg, l, z, graph, edge_feats)?;
        z = next;
        attention.push(alpha);
    }
    let logit = head(tape, p, "cls", z, n)?;
    let prob = tape.sigmoid(logit);
    let delay = if cfg.ablation.has_regression() {
        let r = head(tape, p, "reg", z, n)?;
        Some(tape.softplus(r))
    } else {
        None
    };
    Ok(Forward {
        embedding,
        node_repr: z,
        prob,
        delay,
        attention,
    })
}

pub struct LossParts {
    pub total: Var,
    pub bce: Var,
    pub huber: Option<Var>,
}

/// Positive-weighted binary cross-entropy on clamped probabilities.
pub fn bce_weighted<T: Real>(tape: &mut Tape<T>, cfg: &ModelConfig, prob: Var, y: &[bool]) -> Result<Var> {
    let n = y.len();
    let lo = T::from_f64_lossy(cfg.prob_clamp);
    let p = tape.clamp(prob, lo, T::one() - lo);
    let lp = tape.log(p)?;
    let q = tape.neg(p);
    let q = tape.add_scalar(q, T::one());
    let lq = tape.log(q)?;
    let w = T::from_f64_lossy(cfg.pos_weight);
    let wp = tape.constant([n], y.iter().map(|&v| if v { w } else { T::zero() }).collect())?;
    let wn = tape.constant([n], y.iter().map(|&v| if v { T::zero() } else { T::one() }).collect())?;
    let a = tape.mul(lp, wp)?;
    let b = tape.mul(lq, wn)?;
    let s = tape.add(a, b)?;
    let m = tape.mean_all(s);
    Ok(tape.neg(m))
}

pub fn huber_mean<T: Real>(tape: &mut Tape<T>, cfg: &ModelConfig, delay: Var, y: &[f64]) -> Result<Var> {
    let t = tape.constant([y.len()], cast(y))?;
    let r = tape.sub(delay, t)?;
    let h = tape.huber(r, T::from_f64_lossy(cfg.huber_delta));
    Ok(tape.mean_all(h))
}

/// `lambda * bce + (1 - lambda) * huber`, or the weighted BCE alone
/// without a regression head.
pub fn loss<T: Real>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    out: &Forward,
    y_class: &[bool],
    y_reg: &[f64],
) -> Result<LossParts> {
    let n = tape.shape(out.prob).numel();
    if y_class.len() != n || y_reg.len() != n {
        return Err(EagleError::Numeric(format!(
            "{} predictions against {} class and {} regression targets",
            n,
            y_class.len(),
            y_reg.len()
        )));
    }
    if let Some(v) = y_reg.iter().find(|v| !v.is_finite()) {
        return Err(EagleError::Numeric(format!("non-finite regression target {v}")));
    }
    let nonfinite = |tape: &Tape<T>, v: Var| tape.value(v).iter().any(|x| !x.is_finite());
    if nonfinite(tape, out.prob) || out.delay.is_some_and(|d| nonfinite(tape, d)) {
        return Err(EagleError::Numeric("non-finite model output".into()));
    }
    let bce = bce_weighted(tape, cfg, out.prob, y_class)?;
    let Some(delay) = out.delay else {
        return Ok(LossParts {
            total: bce,
            bce,
            huber: None,
        });
    };
    let huber = huber_mean(tape, cfg, delay, y_reg)?;
    let lam = T::from_f64_lossy(cfg.lambda);
    let a = tape.scale(bce, lam);
    let b = tape.scale(huber, T::one() - lam);
    let total = tape.add(a, b)?;
    Ok(LossParts {
        total,
        bce,
        huber: Some(huber),
    })
}

/// Evaluation-mode outputs as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prob: Vec<f64>,
    pub delay: Option<Vec<f64>>,
    /// Per layer, `(edges + self-loops) x heads`, row-major.
    pub attention: Vec<Vec<f64>>,
}

pub fn predict<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, graph: &GraphInput, snapshot: &Snapshot) -> Result<Prediction> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, &bound, cfg, graph, &snapshot.features, None)?;
    let to64 = |v: Var| tape.value(v).iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let prob = to64(out.prob);
    if prob.iter().any(|p| !p.is_finite()) {
        return Err(EagleError::Numeric("non-finite predicted probability".into()));
    }
    Ok(Prediction {
        prob,
        delay: out.delay.map(to64),
        attention: out.attention.iter().map(|&a| to64(a)).collect(),
    })
}
