//! Static supply graph: region/role nodes, lanes, and lane statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{OrderTable, ShippingMode};
use crate::util::{read_file, write_file};
use crate::{EagleError, Result};

pub const EDGE_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Origin,
    Destination,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Origin => "origin",
            Role::Destination => "destination",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub region: String,
    pub role: Role,
}

/// Bijection between `(region, role)` pairs and dense node ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Node>", into = "Vec<Node>")]
pub struct NodeIndex {
    nodes: Vec<Node>,
    lookup: HashMap<(Role, String), usize>,
}

impl From<Vec<Node>> for NodeIndex {
    fn from(nodes: Vec<Node>) -> Self {
        let lookup = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| ((n.role, n.region.clone()), i))
            .collect();
        NodeIndex { nodes, lookup }
    }
}

impl From<NodeIndex> for Vec<Node> {
    fn from(index: NodeIndex) -> Self {
        index.nodes
    }
}

impl NodeIndex {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn id(&self, region: &str, role: Role) -> Option<usize> {
        self.lookup.get(&(role, region.to_string())).copied()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn label(&self, id: usize) -> String {
        let n = &self.nodes[id];
        format!("{}:{}", n.role.as_str(), n.region)
    }

    /// `(origin node, destination node)` of an order.
    pub fn endpoints(&self, origin_region: &str, dest_region: &str) -> Option<(usize, usize)> {
        Some((self.id(origin_region, Role::Origin)?, self.id(dest_region, Role::Destination)?))
    }
}

/// Assigns node ids in lexicographic `(role, region)` order.
pub fn build_node_index(table: &OrderTable) -> Result<NodeIndex> {
    if table.is_empty() {
        return Err(EagleError::EmptyInput("order table has no rows".into()));
    }
    let mut keys = BTreeSet::new();
    for r in &table.records {
        keys.insert((Role::Origin, r.origin_region.clone()));
        keys.insert((Role::Destination, r.dest_region.clone()));
    }
    if keys.len() < 2 {
        return Err(EagleError::DegenerateGraph(format!("{} distinct node(s)", keys.len())));
    }
    let nodes = keys.into_iter().map(|(role, region)| Node { region, role }).collect::<Vec<_>>();
    Ok(NodeIndex::from(nodes))
}

/// Directed edges sorted by `(src, dst)`; each lane appears in both directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeList {
    pub pairs: Vec<(usize, usize)>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn lane_count(&self) -> usize {
        self.pairs.len() / 2
    }

    /// Undirected lane key of an edge: `(min, max)` endpoint ids.
    pub fn lane_of(&self, edge: usize) -> (usize, usize) {
        let (a, b) = self.pairs[edge];
        (a.min(b), a.max(b))
    }
}

pub fn build_edges(table: &OrderTable, index: &NodeIndex) -> Result<EdgeList> {
    let mut lanes = BTreeSet::new();
    for r in &table.records {
        let (o, d) = index
            .endpoints(&r.origin_region, &r.dest_region)
            .ok_or_else(|| EagleError::Graph(format!("order {} has regions outside the node index", r.order_id)))?;
        lanes.insert((o.min(d), o.max(d)));
    }
    let mut pairs: Vec<(usize, usize)> = lanes.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    pairs.sort_unstable();
    Ok(EdgeList { pairs })
}

/// Per-edge `[transit_mean, transit_std, flow_volume, mode fractions x4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    pub rows: Vec<[f64; EDGE_DIM]>,
}

#[derive(Default)]
struct LaneAcc {
    scheduled: Vec<f64>,
    modes: [usize; 4],
}

/// Lane statistics over every order on the lane (whole table).
pub fn compute_edge_features(table: &OrderTable, index: &NodeIndex, edges: &EdgeList) -> Result<EdgeFeatures> {
    let mut acc: BTreeMap<(usize, usize), LaneAcc> = BTreeMap::new();
    for r in &table.records {
        let (o, d) = index
            .endpoints(&r.origin_region, &r.dest_region)
            .ok_or_else(|| EagleError::Graph(format!("order {} has regions outside the node index", r.order_id)))?;
        let a = acc.entry((o.min(d), o.max(d))).or_default();
        a.scheduled.push(r.scheduled_days as f64);
        a.modes[r.shipping_mode.index()] += 1;
    }
    let rows = (0..edges.len())
        .map(|e| {
            let Some(a) = acc.get(&edges.lane_of(e)) else {
                return [0.0; EDGE_DIM];
            };
            let n = a.scheduled.len() as f64;
            let mean = a.scheduled.iter().sum::<f64>() / n;
            let var = a.scheduled.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            let mut row = [mean, var.sqrt(), n, 0.0, 0.0, 0.0, 0.0];
            for m in ShippingMode::ALL {
                row[3 + m.index()] = a.modes[m.index()] as f64 / n;
            }
            row
        })
        .collect();
    Ok(EdgeFeatures { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyGraph {
    pub nodes: NodeIndex,
    pub edges: EdgeList,
    pub edge_features: EdgeFeatures,
}

impl SupplyGraph {
    pub fn build(table: &OrderTable) -> Result<Self> {
        let nodes = build_node_index(table)?;
        let edges = build_edges(table, &nodes)?;
        let edge_features = compute_edge_features(table, &nodes, &edges)?;
        Ok(SupplyGraph {
            nodes,
            edges,
            edge_features,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        for &(s, d) in &self.edges.pairs {
            if s >= n || d >= n {
                return Err(EagleError::Graph(format!("edge ({s}, {d}) out of range for {n} nodes")));
            }
            if s == d {
                return Err(EagleError::Graph(format!("self edge on node {s}")));
            }
        }
        if self.edge_features.rows.len() != self.n_edges() {
            return Err(EagleError::Graph(format!(
                "{} edge feature rows for {} edges",
                self.edge_features.rows.len(),
                self.n_edges()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let g: SupplyGraph = serde_json::from_slice(&read_file(path)?)?;
        g.validate()?;
        Ok(g)
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.n_nodes();
        let mut in_deg = vec![0usize; n];
        let mut out_deg = vec![0usize; n];
        for &(s, d) in &self.edges.pairs {
            out_deg[s] += 1;
            in_deg[d] += 1;
        }
        let mut degree_histogram = BTreeMap::new();
        for &d in &in_deg {
            *degree_histogram.entry(d).or_insert(0) += 1;
        }
        GraphStats {
            nodes: n,
            directed_edges: self.n_edges(),
            lanes: self.edges.lane_count(),
            isolated_nodes: in_deg.iter().filter(|&&d| d == 0).count(),
            max_degree: in_deg.iter().copied().max().unwrap_or(0),
            degree_histogram,
        }
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph supply {\n");
        for i in 0..self.n_nodes() {
            let _ = writeln!(s, "  n{i} [label=\"{}\"];", self.nodes.label(i).replace('"', "'"));
        }
        for &(a, b) in &self.edges.pairs {
            let _ = writeln!(s, "  n{a} -> n{b};");
        }
        s.push_str("}\n");
        s
    }

    pub fn to_graphml(&self) -> String {
        let mut s = String::from(concat!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
            "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
            "  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n",
            "  <key id=\"flow\" for=\"edge\" attr.name=\"flow_volume\" attr.type=\"double\"/>\n",
            "  <graph id=\"supply\" edgedefault=\"directed\">\n"
        ));
        for i in 0..self.n_nodes() {
            let _ = writeln!(
                s,
                "    <node id=\"n{i}\"><data key=\"label\">{}</data></node>",
                xml_escape(&self.nodes.label(i))
            );
        }
        for (e, &(a, b)) in self.edges.pairs.iter().enumerate() {
            let _ = writeln!(
                s,
                "    <edge source=\"n{a}\" target=\"n{b}\"><data key=\"flow\">{}</data></edge>",
                self.edge_features.rows[e][2]
            );
        }
        s.push_str("  </graph>\n</graphml>\n");
        s
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub directed_edges: usize,
    pub lanes: usize,
    pub isolated_nodes: usize,
    pub max_degree: usize,
    /// In-degree -> node count.
    pub degree_histogram: BTreeMap<usize, usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::OrderRecord;
    use chrono::NaiveDate;

    fn order(id: &str, o: &str, d: &str, sched: u32, mode: ShippingMode) -> OrderRecord {
        OrderRecord {
            order_id: id.into(),
            order_day: 0,
            origin_region: o.into(),
            dest_region: d.into(),
            scheduled_days: sched,
            real_days: sched,
            discount_rate: 0.0,
            shipping_mode: mode,
            delay_days: 0.0,
        }
    }

    fn table(records: Vec<OrderRecord>) -> OrderTable {
        OrderTable {
            epoch: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            raw_rows: records.len(),
            dropped: Default::default(),
            records,
        }
    }

    #[test]
    fn two_regions_both_roles() {
        let t = table(vec![
            order("1", "A", "B", 1, ShippingMode::SameDay),
            order("2", "B", "A", 1, ShippingMode::SameDay),
        ]);
        let idx = build_node_index(&t).unwrap();
        assert_eq!(idx.len(), 4);
        assert_eq!(idx.id("A", Role::Origin), Some(0));
        assert_eq!(idx.id("B", Role::Origin), Some(1));
        assert_eq!(idx.id("A", Role::Destination), Some(2));
        for i in 0..idx.len() {
            let n = idx.node(i);
            assert_eq!(idx.id(&n.region, n.role), Some(i));
        }
    }

    #[test]
    fn single_order_is_one_lane_two_edges() {
        let t = table(vec![order("1", "A", "B", 3, ShippingMode::SameDay)]);
        let g = SupplyGraph::build(&t).unwrap();
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.edges.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(g.edge_features.rows[0], g.edge_features.rows[1]);
    }

    #[test]
    fn degenerate_graph() {
        let t = table(Vec::new());
        assert!(build_node_index(&t).is_err());
    }

    #[test]
    fn constant_lane_features() {
        let t = table(vec![
            order("1", "A", "B", 4, ShippingMode::StandardClass),
            order("2", "A", "B", 4, ShippingMode::StandardClass),
        ]);
        let g = SupplyGraph::build(&t).unwrap();
        assert_eq!(g.edge_features.rows[0], [4.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn population_std_of_lane() {
        let t = table(vec![
            order("1", "A", "B", 2, ShippingMode::StandardClass),
            order("2", "A", "B", 6, ShippingMode::FirstClass),
        ]);
        let g = SupplyGraph::build(&t).unwrap();
        let row = g.edge_features.rows[0];
        assert_eq!(row[0], 4.0);
        assert_eq!(row[1], 2.0);
        assert_eq!(row[3] + row[5], 1.0);
    }

    #[test]
    fn exports_list_every_node() {
        let t = table(vec![
            order("1", "A", "B", 2, ShippingMode::StandardClass),
            order("2", "C", "B", 6, ShippingMode::FirstClass),
        ]);
        let g = SupplyGraph::build(&t).unwrap();
        let dot = g.to_dot();
        assert_eq!(dot.matches("[label=").count(), g.n_nodes());
        assert_eq!(g.to_graphml().matches("<node ").count(), g.n_nodes());
        let back: SupplyGraph = serde_json::from_slice(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        let st = g.stats();
        assert_eq!((st.nodes, st.directed_edges, st.lanes), (3, 4, 2));
    }
}
