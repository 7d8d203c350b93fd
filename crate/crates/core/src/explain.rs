//! Per-node risk from accumulated graph-attention mass.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use eagle_autodiff::Real;
use serde::{Deserialize, Serialize};

use crate::graph::{xml_escape, SupplyGraph};
use crate::model::GraphInput;
use crate::snapshots::{SplitBundle, SplitTag};
use crate::train::Checkpoint;
use crate::util::write_file;
use crate::{EagleError, Result};

/// Which endpoint of an edge its attention mass is credited to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    #[default]
    Receiver,
    Sender,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskNode {
    pub id: usize,
    pub label: String,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGraph {
    pub attribution: Attribution,
    pub split: SplitTag,
    pub snapshots: usize,
    pub nodes: Vec<RiskNode>,
    pub edges: Vec<(usize, usize)>,
}

/// Min-max scaling to `[0, 1]`; all-equal input maps to zeros.
pub fn min_max(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Sums attention over non-self-loop edges into per-node raw risk.
/// `attention[s][l]` is the `(edges + self-loops) x heads` matrix of
/// snapshot `s`, layer `l`.
pub fn accumulate_attention(graph: &GraphInput, attention: &[Vec<Vec<f64>>], attribution: Attribution) -> Result<Vec<f64>> {
    let mut raw = vec![0.0; graph.n_nodes];
    let et = graph.n_total_edges();
    for layers in attention {
        for alpha in layers {
            if et == 0 || alpha.len() % et != 0 {
                return Err(EagleError::Data(format!("attention of length {} for {et} edges", alpha.len())));
            }
            let heads = alpha.len() / et;
            for e in 0..graph.n_edges {
                let node = match attribution {
                    Attribution::Receiver => graph.dst[e],
                    Attribution::Sender => graph.src[e],
                };
                raw[node] += alpha[e * heads..(e + 1) * heads].iter().sum::<f64>();
            }
        }
    }
    Ok(raw)
}

pub fn aggregate_risk<T: Real>(
    checkpoint: &Checkpoint<T>,
    bundle: &SplitBundle,
    graph: &GraphInput,
    tag: SplitTag,
    attribution: Attribution,
) -> Result<RiskGraph> {
    if bundle.split(tag).is_empty() {
        return Err(EagleError::EmptyInput(format!("{} split has no snapshots", tag.as_str())));
    }
    let preds = checkpoint.predict_split(bundle, graph, tag)?;
    let raw = accumulate_attention(graph, &preds.attention, attribution)?;
    Ok(build_risk_graph(&bundle.graph, raw, attribution, tag, preds.attention.len()))
}

pub fn build_risk_graph(graph: &SupplyGraph, raw: Vec<f64>, attribution: Attribution, split: SplitTag, snapshots: usize) -> RiskGraph {
    let normalized = min_max(&raw);
    RiskGraph {
        attribution,
        split,
        snapshots,
        nodes: raw
            .iter()
            .zip(&normalized)
            .enumerate()
            .map(|(id, (&r, &n))| RiskNode {
                id,
                label: graph.nodes.label(id),
                raw: r,
                normalized: n,
            })
            .collect(),
        edges: graph.edges.pairs.clone(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskFormat {
    #[default]
    Json,
    Dot,
    Graphml,
}

impl RiskFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RiskFormat::Json => "json",
            RiskFormat::Dot => "dot",
            RiskFormat::Graphml => "graphml",
        }
    }
}

impl FromStr for RiskFormat {
    type Err = EagleError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(RiskFormat::Json),
            "dot" => Ok(RiskFormat::Dot),
            "graphml" => Ok(RiskFormat::Graphml),
            other => Err(EagleError::Config(format!("unknown risk format {other:?} (json, dot, graphml)"))),
        }
    }
}

impl RiskGraph {
    pub fn top(&self, k: usize) -> Vec<&RiskNode> {
        let mut v: Vec<&RiskNode> = self.nodes.iter().collect();
        v.sort_by(|a, b| b.raw.total_cmp(&a.raw).then(a.id.cmp(&b.id)));
        v.truncate(k);
        v
    }

    pub fn render(&self, format: RiskFormat) -> Result<Vec<u8>> {
        if self.nodes.is_empty() {
            return Err(EagleError::Format("risk graph has no nodes".into()));
        }
        Ok(match format {
            RiskFormat::Json => serde_json::to_vec_pretty(self)?,
            RiskFormat::Dot => self.to_dot().into_bytes(),
            RiskFormat::Graphml => self.to_graphml().into_bytes(),
        })
    }

    fn to_dot(&self) -> String {
        let mut s = String::from("digraph risk {\n");
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "  n{} [label=\"{}\", risk={:.6}, raw_risk={}];",
                n.id,
                n.label.replace('"', "'"),
                n.normalized,
                n.raw
            );
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "  n{a} -> n{b};");
        }
        s.push_str("}\n");
        s
    }

    fn to_graphml(&self) -> String {
        let mut s = String::from(concat!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
            "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
            "  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n",
            "  <key id=\"risk\" for=\"node\" attr.name=\"risk\" attr.type=\"double\"/>\n",
            "  <key id=\"raw_risk\" for=\"node\" attr.name=\"raw_risk\" attr.type=\"double\"/>\n",
            "  <graph id=\"risk\" edgedefault=\"directed\">\n",
        ));
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "    <node id=\"n{}\"><data key=\"label\">{}</data><data key=\"risk\">{}</data><data key=\"raw_risk\">{}</data></node>",
                n.id,
                xml_escape(&n.label),
                n.normalized,
                n.raw
            );
        }
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let _ = writeln!(s, "    <edge id=\"e{e}\" source=\"n{a}\" target=\"n{b}\"/>");
        }
        s.push_str("  </graph>\n</graphml>\n");
        s
    }
}

pub fn export_risk(risk: &RiskGraph, format: RiskFormat, path: &Path) -> Result<()> {
    write_file(path, &risk.render(format)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, predict, Ablation, ModelConfig, ModelParams};
    use crate::snapshots::Snapshot;
    use proptest::prelude::*;

    fn path_input(edge_feats: Vec<f64>) -> GraphInput {
        // A=0, B=1, C=2; real edges A->B, B->A, B->C, C->B, then self-loops.
        GraphInput {
            n_nodes: 3,
            n_edges: 4,
            src: vec![0, 1, 1, 2, 0, 1, 2].into(),
            dst: vec![1, 0, 2, 1, 0, 1, 2].into(),
            edge_feats,
            edge_dim: 1,
        }
    }

    #[test]
    fn min_max_conventions() {
        assert_eq!(min_max(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
        assert_eq!(min_max(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max(&[10.0, 30.0, 20.0]), min_max(&[1.0, 3.0, 2.0]));
    }

    #[test]
    fn concentrated_attention_marks_the_hub() {
        let cfg = ModelConfig {
            d_model: 4,
            encoder_heads: 2,
            gat_heads: 2,
            edge_dim: 1,
            head_hidden: 2,
            dropout: 0.0,
            ablation: Ablation::Full,
            ..ModelConfig::default()
        };
        let mut p: ModelParams<f64> = init_params(&cfg, 0.2, 0).unwrap();
        for l in 0..cfg.gat_layers {
            for name in ["w", "a_dst", "a_src"] {
                p.get_mut(&format!("gat.{l}.{name}")).unwrap().values.iter_mut().for_each(|v| *v = 0.0);
            }
            p.get_mut(&format!("gat.{l}.we")).unwrap().values.iter_mut().for_each(|v| *v = 1.0);
            p.get_mut(&format!("gat.{l}.a_edge")).unwrap().values.iter_mut().for_each(|v| *v = 10.0);
        }
        // Edges into B score high, edges out of B score low, self-loops zero.
        let g = path_input(vec![2.0, -2.0, -2.0, 2.0, 0.0, 0.0, 0.0]);
        let s = Snapshot {
            t: 0,
            features: vec![0.1; 3 * cfg.window * cfg.node_dim],
            y_class: vec![false; 3],
            y_reg: vec![0.0; 3],
            split: SplitTag::Test,
        };
        let pred = predict(&p, &cfg, &g, &s).unwrap();
        let raw = accumulate_attention(&g, &[pred.attention], Attribution::Receiver).unwrap();
        let norm = min_max(&raw);
        assert_eq!(norm[1], 1.0);
        assert!(raw[1] > 3.9 && raw[0] < 1e-2 && raw[2] < 1e-2);
    }

    proptest! {
        #[test]
        fn aggregation_conserves_mass(
            snaps in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 14), 1..5),
            sender in any::<bool>(),
        ) {
            let g = path_input(vec![0.0; 7]);
            let attention: Vec<Vec<Vec<f64>>> = snaps.iter().map(|a| vec![a.clone()]).collect();
            let attribution = if sender { Attribution::Sender } else { Attribution::Receiver };
            let raw = accumulate_attention(&g, &attention, attribution).unwrap();
            let want: f64 = snaps.iter().map(|a| a[..8].iter().sum::<f64>()).sum();
            prop_assert!((raw.iter().sum::<f64>() - want).abs() < 1e-9);
        }

        #[test]
        fn normalization_ignores_positive_rescaling(
            raw in proptest::collection::vec(0.0f64..100.0, 2..20),
            c in 0.01f64..100.0,
        ) {
            let a = min_max(&raw);
            let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
            let b = min_max(&scaled);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|p, q| p.1.total_cmp(q.1)).map(|p| p.0);
            prop_assert_eq!(argmax(&raw), argmax(&scaled));
        }
    }

    fn sample_risk() -> RiskGraph {
        RiskGraph {
            attribution: Attribution::Receiver,
            split: SplitTag::Test,
            snapshots: 2,
            nodes: (0..3)
                .map(|id| RiskNode {
                    id,
                    label: format!("R{id}<&>"),
                    raw: id as f64 * 0.3,
                    normalized: id as f64 / 2.0,
                })
                .collect(),
            edges: vec![(0, 1), (1, 0), (1, 2), (2, 1)],
        }
    }

    #[test]
    fn exports() {
        let r = sample_risk();
        let json = r.render(RiskFormat::Json).unwrap();
        let back: RiskGraph = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, r);
        let dot = String::from_utf8(r.render(RiskFormat::Dot).unwrap()).unwrap();
        assert_eq!(dot.lines().filter(|l| l.contains("[label=")).count(), 3);
        let gml = String::from_utf8(r.render(RiskFormat::Graphml).unwrap()).unwrap();
        assert_eq!(gml.matches("<node ").count(), 3);
        assert!(gml.contains("R0&lt;&amp;&gt;"));
        let empty = RiskGraph {
            nodes: vec![],
            ..r
        };
        assert!(matches!(empty.render(RiskFormat::Json), Err(EagleError::Format(_))));
        assert_eq!("GraphML".parse::<RiskFormat>().unwrap(), RiskFormat::Graphml);
    }
}
