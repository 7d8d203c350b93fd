//! Sliding-window snapshots with next-window labels and chronological splits.
//!
//! Features of snapshot `t` come from days `[t, t + window)`; labels come
//! from `[t + window, t + window + horizon)`. Every order contributes to both
//! its origin-role and destination-role node.

mod bundle;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use bundle::{decode_bundle, encode_bundle, load_bundle, save_bundle, BUNDLE_VERSION};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::graph::{NodeIndex, SupplyGraph};
use crate::ingest::OrderTable;
use crate::{EagleError, Result};

/// Node feature width: order volume, mean and std of scheduled transit,
/// mean discount, mean realized delay.
pub const NODE_DIM: usize = 5;

pub const FEATURE_NAMES: [&str; NODE_DIM] = [
    "order_vol",
    "mean_scheduled_transit",
    "std_scheduled_transit",
    "mean_discount_rate",
    "prev_delay_days",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotConfig {
    pub window: usize,
    pub stride: usize,
    pub horizon: usize,
    /// Train / validation / test fractions of the snapshot count.
    pub fractions: [f64; 3],
    pub std_floor: f64,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        SnapshotConfig {
            window: 14,
            stride: 1,
            horizon: 14,
            fractions: [0.70, 0.15, 0.15],
            std_floor: 1e-8,
        }
    }
}

impl SnapshotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.horizon == 0 {
            return Err(EagleError::Config("window, stride and horizon must be positive".into()));
        }
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| !(*f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(EagleError::Config(format!("split fractions {:?} must be positive and sum to 1", self.fractions)));
        }
        if !(self.std_floor > 0.0) {
            return Err(EagleError::Config("std_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn min_span(&self) -> usize {
        self.window + self.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// First day of the feature window.
    pub t: u32,
    /// `n_nodes x window x NODE_DIM`, node-major.
    pub features: Vec<f64>,
    /// Empty until labels are assigned.
    pub y_class: Vec<bool>,
    pub y_reg: Vec<f64>,
    pub split: SplitTag,
}

impl Snapshot {
    pub fn is_labeled(&self) -> bool {
        !self.y_reg.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y_class.iter().filter(|&&y| y).count()
    }
}

/// Per-(day, node) aggregates shared by feature and label construction.
#[derive(Debug, Clone)]
pub struct DailyAggregates {
    pub n_days: usize,
    pub n_nodes: usize,
    features: Vec<[f64; NODE_DIM]>,
    delay_sum: Vec<f64>,
    count: Vec<usize>,
}

impl DailyAggregates {
    pub fn from_table(table: &OrderTable, index: &NodeIndex) -> Result<Self> {
        let n_days = table.day_span();
        let n_nodes = index.len();
        let cells = n_days * n_nodes;
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells];
        for (i, r) in table.records.iter().enumerate() {
            let (o, d) = index.endpoints(&r.origin_region, &r.dest_region).ok_or_else(|| {
                EagleError::Graph(format!("order {} has regions outside the node index", r.order_id))
            })?;
            let day = r.order_day as usize;
            buckets[day * n_nodes + o].push(i);
            buckets[day * n_nodes + d].push(i);
        }
        let mut features = vec![[0.0; NODE_DIM]; cells];
        let mut delay_sum = vec![0.0; cells];
        let mut count = vec![0; cells];
        for (cell, orders) in buckets.iter().enumerate() {
            if orders.is_empty() {
                continue;
            }
            let n = orders.len() as f64;
            let recs = orders.iter().map(|&i| &table.records[i]);
            let sched_mean = recs.clone().map(|r| r.scheduled_days as f64).sum::<f64>() / n;
            let sched_var =
                recs.clone().map(|r| (r.scheduled_days as f64 - sched_mean).powi(2)).sum::<f64>() / n;
            let discount = recs.clone().map(|r| r.discount_rate).sum::<f64>() / n;
            let delay: f64 = recs.map(|r| r.delay_days).sum();
            features[cell] = [n, sched_mean, sched_var.sqrt(), discount, delay / n];
            delay_sum[cell] = delay;
            count[cell] = orders.len();
        }
        Ok(DailyAggregates {
            n_days,
            n_nodes,
            features,
            delay_sum,
            count,
        })
    }

    pub fn day_features(&self, day: usize, node: usize) -> &[f64; NODE_DIM] {
        &self.features[day * self.n_nodes + node]
    }

    /// Mean delay of orders touching `node` placed in `[start, end)`; zero
    /// when there are none.
    pub fn window_mean_delay(&self, node: usize, start: usize, end: usize) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for day in start..end.min(self.n_days) {
            sum += self.delay_sum[day * self.n_nodes + node];
            n += self.count[day * self.n_nodes + node];
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Unlabeled snapshots for every start day whose feature and label windows
/// both fit in the data span.
pub fn build_snapshots(table: &OrderTable, index: &NodeIndex, cfg: &SnapshotConfig) -> Result<Vec<Snapshot>> {
    let daily = DailyAggregates::from_table(table, index)?;
    snapshots_from_daily(&daily, cfg)
}

pub fn snapshots_from_daily(daily: &DailyAggregates, cfg: &SnapshotConfig) -> Result<Vec<Snapshot>> {
    cfg.validate()?;
    if daily.n_days < cfg.min_span() {
        return Err(EagleError::InsufficientData {
            span: daily.n_days,
            minimum: cfg.min_span(),
        });
    }
    let last = daily.n_days - cfg.min_span();
    let n = daily.n_nodes;
    Ok((0..=last)
        .step_by(cfg.stride)
        .map(|t| {
            let mut features = Vec::with_capacity(n * cfg.window * NODE_DIM);
            for node in 0..n {
                for day in t..t + cfg.window {
                    features.extend_from_slice(daily.day_features(day, node));
                }
            }
            Snapshot {
                t: t as u32,
                features,
                y_class: Vec::new(),
                y_reg: Vec::new(),
                split: SplitTag::Train,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitPlan {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn range(&self, tag: SplitTag) -> std::ops::Range<usize> {
        match tag {
            SplitTag::Train => 0..self.train,
            SplitTag::Val => self.train..self.train + self.val,
            SplitTag::Test => self.train + self.val..self.total(),
        }
    }

    pub fn tag_of(&self, i: usize) -> SplitTag {
        if i < self.train {
            SplitTag::Train
        } else if i < self.train + self.val {
            SplitTag::Val
        } else {
            SplitTag::Test
        }
    }
}

/// Contiguous prefix / middle / suffix by count: train and validation sizes
/// are floored, test takes the remainder. Empty splits are filled by moving
/// one snapshot across the nearest boundary.
pub fn chronological_split(n: usize, fractions: [f64; 3]) -> Result<SplitPlan> {
    if n < 3 {
        return Err(EagleError::Split(format!("{n} snapshots cannot fill three non-empty splits")));
    }
    let mut train = (n as f64 * fractions[0]).floor() as usize;
    let mut val = (n as f64 * fractions[1]).floor() as usize;
    train = train.min(n);
    val = val.min(n - train);
    let mut test = n - train - val;
    if val == 0 {
        if train > 1 {
            train -= 1;
        } else {
            test -= 1;
        }
        val = 1;
    }
    if test == 0 {
        if val > 1 {
            val -= 1;
        } else {
            train -= 1;
        }
        test = 1;
    }
    if train == 0 {
        if val > 1 {
            val -= 1;
        } else {
            test -= 1;
        }
        train = 1;
    }
    let plan = SplitPlan { train, val, test };
    debug_assert_eq!(plan.total(), n);
    if plan.train == 0 || plan.val == 0 || plan.test == 0 {
        return Err(EagleError::Split(format!("could not balance {n} snapshots: {plan:?}")));
    }
    Ok(plan)
}

/// Per-node baseline: mean over training snapshots of the label-window mean
/// delay (windows without orders count as zero).
pub fn compute_baselines(train: &[Snapshot], daily: &DailyAggregates, cfg: &SnapshotConfig) -> Vec<f64> {
    let n = daily.n_nodes;
    if train.is_empty() {
        return vec![0.0; n];
    }
    (0..n)
        .map(|node| {
            let total: f64 = train
                .iter()
                .map(|s| {
                    let start = s.t as usize + cfg.window;
                    daily.window_mean_delay(node, start, start + cfg.horizon)
                })
                .sum();
            total / train.len() as f64
        })
        .collect()
}

/// Relative label: positive iff the next-window mean delay exceeds the
/// node's baseline; with a zero baseline, iff there is any delay.
pub fn relative_label(next_mean: f64, baseline: f64) -> bool {
    if baseline > 0.0 {
        next_mean > baseline
    } else {
        next_mean > 0.0
    }
}

pub fn assign_labels(snapshot: &mut Snapshot, daily: &DailyAggregates, baselines: &[f64], cfg: &SnapshotConfig) {
    let start = snapshot.t as usize + cfg.window;
    snapshot.y_reg = (0..daily.n_nodes)
        .map(|node| daily.window_mean_delay(node, start, start + cfg.horizon))
        .collect();
    snapshot.y_class = snapshot
        .y_reg
        .iter()
        .zip(baselines)
        .map(|(&y, &mu)| relative_label(y, mu))
        .collect();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: [f64; NODE_DIM],
    pub std: [f64; NODE_DIM],
    /// Features whose raw train std fell below the floor.
    pub floored: [bool; NODE_DIM],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub snapshots: usize,
    pub positives: usize,
    pub negatives: usize,
}

impl ClassCounts {
    pub fn positive_rate(&self) -> f64 {
        let total = self.positives + self.negatives;
        if total == 0 {
            0.0
        } else {
            self.positives as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: ClassCounts,
    pub val: ClassCounts,
    pub test: ClassCounts,
}

impl SplitCounts {
    pub fn get(&self, tag: SplitTag) -> &ClassCounts {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub config: SnapshotConfig,
    pub n_nodes: usize,
    pub plan: SplitPlan,
    pub baselines: Vec<f64>,
    pub stats: Option<StandardizationStats>,
    pub counts: SplitCounts,
    pub graph: SupplyGraph,
    pub snapshots: Vec<Snapshot>,
}

impl SplitBundle {
    pub fn split(&self, tag: SplitTag) -> &[Snapshot] {
        &self.snapshots[self.plan.range(tag)]
    }

    pub fn recount(&self) -> SplitCounts {
        let count = |tag| {
            let snaps = self.split(tag);
            let positives: usize = snaps.iter().map(Snapshot::positives).sum();
            ClassCounts {
                snapshots: snaps.len(),
                positives,
                negatives: snaps.len() * self.n_nodes - positives,
            }
        };
        SplitCounts {
            train: count(SplitTag::Train),
            val: count(SplitTag::Val),
            test: count(SplitTag::Test),
        }
    }

    /// Number of baseline-zero (cold-start) nodes.
    pub fn cold_start_nodes(&self) -> usize {
        self.baselines.iter().filter(|&&m| m == 0.0).count()
    }

    /// One past the last day read by any training snapshot, features or
    /// labels. Orders on or after this day cannot affect training data.
    pub fn train_day_end(&self) -> usize {
        self.split(SplitTag::Train)
            .iter()
            .map(|s| s.t as usize + self.config.window + self.config.horizon)
            .max()
            .unwrap_or(0)
    }

    pub fn window(&self) -> usize {
        self.config.window
    }
}

/// z-scores every feature with statistics of the training split's
/// `(snapshot, node, day)` cells.
pub fn standardize(bundle: &mut SplitBundle) -> Result<()> {
    if bundle.stats.is_some() {
        return Err(EagleError::Data("bundle is already standardized".into()));
    }
    let train = bundle.plan.range(SplitTag::Train);
    let mut sum = [0.0; NODE_DIM];
    let mut cells = 0usize;
    for s in &bundle.snapshots[train.clone()] {
        for cell in s.features.chunks_exact(NODE_DIM) {
            for f in 0..NODE_DIM {
                sum[f] += cell[f];
            }
            cells += 1;
        }
    }
    if cells == 0 {
        return Err(EagleError::EmptyInput("training split has no feature cells".into()));
    }
    let mean = sum.map(|s| s / cells as f64);
    let mut sq = [0.0; NODE_DIM];
    for s in &bundle.snapshots[train] {
        for cell in s.features.chunks_exact(NODE_DIM) {
            for f in 0..NODE_DIM {
                sq[f] += (cell[f] - mean[f]).powi(2);
            }
        }
    }
    let raw_std = sq.map(|s| (s / cells as f64).sqrt());
    let floor = bundle.config.std_floor;
    let floored = raw_std.map(|s| s < floor);
    let std = raw_std.map(|s| s.max(floor));
    for s in &mut bundle.snapshots {
        for cell in s.features.chunks_exact_mut(NODE_DIM) {
            for f in 0..NODE_DIM {
                cell[f] = (cell[f] - mean[f]) / std[f];
            }
        }
    }
    bundle.stats = Some(StandardizationStats { mean, std, floored });
    Ok(())
}

/// Full snapshot pipeline: windows, split, baselines, labels, z-scoring.
pub fn build_bundle(table: &OrderTable, graph: &SupplyGraph, cfg: &SnapshotConfig) -> Result<SplitBundle> {
    let daily = DailyAggregates::from_table(table, &graph.nodes)?;
    let mut snapshots = snapshots_from_daily(&daily, cfg)?;
    let plan = chronological_split(snapshots.len(), cfg.fractions)?;
    for (i, s) in snapshots.iter_mut().enumerate() {
        s.split = plan.tag_of(i);
    }
    let baselines = compute_baselines(&snapshots[plan.range(SplitTag::Train)], &daily, cfg);
    for s in &mut snapshots {
        assign_labels(s, &daily, &baselines, cfg);
    }
    let mut bundle = SplitBundle {
        config: cfg.clone(),
        n_nodes: graph.n_nodes(),
        plan,
        baselines,
        stats: None,
        counts: SplitCounts::default(),
        graph: graph.clone(),
        snapshots,
    };
    bundle.counts = bundle.recount();
    standardize(&mut bundle)?;
    Ok(bundle)
}

/// Largest |Pearson r| between a node-window feature mean and the binary
/// label over training node-windows.
pub fn max_feature_label_correlation(bundle: &SplitBundle) -> f64 {
    let window = bundle.window();
    let mut best: f64 = 0.0;
    for f in 0..NODE_DIM {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in bundle.split(SplitTag::Train) {
            for node in 0..bundle.n_nodes {
                let base = node * window * NODE_DIM;
                let m = (0..window).map(|d| s.features[base + d * NODE_DIM + f]).sum::<f64>() / window as f64;
                xs.push(m);
                ys.push(if s.y_class[node] { 1.0 } else { 0.0 });
            }
        }
        let n = xs.len() as f64;
        if n < 2.0 {
            continue;
        }
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        if sxx > 0.0 && syy > 0.0 {
            best = best.max((sxy / (sxx * syy).sqrt()).abs());
        }
    }
    best
}
