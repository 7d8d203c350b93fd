use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Snapshot, SnapshotConfig, SplitBundle, SplitCounts, SplitPlan, SplitTag, StandardizationStats, NODE_DIM};
use crate::graph::SupplyGraph;
use crate::util::{read_file, write_file, Container};
use crate::{EagleError, Result};

const MAGIC: &[u8; 8] = b"EAGLEBDL";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: SnapshotConfig,
    n_nodes: usize,
    node_dim: usize,
    plan: SplitPlan,
    baselines: Vec<f64>,
    stats: Option<StandardizationStats>,
    counts: SplitCounts,
    graph: SupplyGraph,
    snapshots: Vec<SnapshotMeta>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    t: u32,
    split: SplitTag,
    y_class: Vec<u8>,
    y_reg: Vec<f64>,
}

pub fn encode_bundle(bundle: &SplitBundle) -> Result<Vec<u8>> {
    let header = Header {
        config: bundle.config.clone(),
        n_nodes: bundle.n_nodes,
        node_dim: NODE_DIM,
        plan: bundle.plan,
        baselines: bundle.baselines.clone(),
        stats: bundle.stats.clone(),
        counts: bundle.counts,
        graph: bundle.graph.clone(),
        snapshots: bundle
            .snapshots
            .iter()
            .map(|s| SnapshotMeta {
                t: s.t,
                split: s.split,
                y_class: s.y_class.iter().map(|&y| y as u8).collect(),
                y_reg: s.y_reg.clone(),
            })
            .collect(),
    };
    let mut payload = Vec::new();
    for s in &bundle.snapshots {
        for v in &s.features {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(Container {
        version: BUNDLE_VERSION,
        header: serde_json::to_vec(&header)?,
        payload,
    }
    .encode(MAGIC))
}

pub fn decode_bundle(bytes: &[u8]) -> Result<SplitBundle> {
    let c = Container::decode(bytes, MAGIC, BUNDLE_VERSION, "snapshot bundle")?;
    let h: Header = serde_json::from_slice(&c.header)?;
    let bad = |m: String| EagleError::Format(format!("snapshot bundle: {m}"));
    if h.node_dim != NODE_DIM {
        return Err(bad(format!("node feature width {} (expected {NODE_DIM})", h.node_dim)));
    }
    h.graph.validate()?;
    if h.graph.n_nodes() != h.n_nodes {
        return Err(bad(format!("graph has {} nodes, bundle {}", h.graph.n_nodes(), h.n_nodes)));
    }
    let per = h.n_nodes * h.config.window * NODE_DIM;
    if c.payload.len() != h.snapshots.len() * per * 8 {
        return Err(bad(format!("payload is {} bytes, expected {}", c.payload.len(), h.snapshots.len() * per * 8)));
    }
    if h.plan.total() != h.snapshots.len() {
        return Err(bad("split plan does not cover the snapshots".into()));
    }
    let mut values = c.payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut snapshots = Vec::with_capacity(h.snapshots.len());
    for (i, m) in h.snapshots.into_iter().enumerate() {
        if m.y_class.len() != h.n_nodes || m.y_reg.len() != h.n_nodes {
            return Err(bad(format!("snapshot {i} has labels for the wrong node count")));
        }
        if m.split != h.plan.tag_of(i) {
            return Err(bad(format!("snapshot {i} is tagged {} against the split plan", m.split.as_str())));
        }
        snapshots.push(Snapshot {
            t: m.t,
            features: values.by_ref().take(per).collect(),
            y_class: m.y_class.iter().map(|&b| b != 0).collect(),
            y_reg: m.y_reg,
            split: m.split,
        });
    }
    let bundle = SplitBundle {
        config: h.config,
        n_nodes: h.n_nodes,
        plan: h.plan,
        baselines: h.baselines,
        stats: h.stats,
        counts: h.counts,
        graph: h.graph,
        snapshots,
    };
    if bundle.recount() != bundle.counts {
        return Err(bad("stored class counts disagree with the labels".into()));
    }
    Ok(bundle)
}

pub fn save_bundle(bundle: &SplitBundle, path: &Path) -> Result<()> {
    write_file(path, &encode_bundle(bundle)?)
}

pub fn load_bundle(path: &Path) -> Result<SplitBundle> {
    decode_bundle(&read_file(path)?)
}
