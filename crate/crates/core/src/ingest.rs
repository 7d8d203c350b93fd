//! Raw order CSV parsing and the feature leakage audit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::util::{read_file, write_file};
use crate::{EagleError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShippingMode {
    #[serde(rename = "Standard Class")]
    StandardClass,
    #[serde(rename = "Second Class")]
    SecondClass,
    #[serde(rename = "First Class")]
    FirstClass,
    #[serde(rename = "Same Day")]
    SameDay,
}

impl ShippingMode {
    pub const ALL: [ShippingMode; 4] = [
        ShippingMode::StandardClass,
        ShippingMode::SecondClass,
        ShippingMode::FirstClass,
        ShippingMode::SameDay,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ShippingMode::StandardClass => "Standard Class",
            ShippingMode::SecondClass => "Second Class",
            ShippingMode::FirstClass => "First Class",
            ShippingMode::SameDay => "Same Day",
        }
    }

    /// Position in the edge-feature mode block.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|m| m.label().to_ascii_lowercase() == norm)
    }
}

impl fmt::Display for ShippingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRecord {
    pub order_id: String,
    /// Days since the earliest order date in the source file.
    pub order_day: u32,
    pub origin_region: String,
    pub dest_region: String,
    pub scheduled_days: u32,
    pub real_days: u32,
    pub discount_rate: f64,
    pub shipping_mode: ShippingMode,
    /// `max(0, real_days - scheduled_days)`.
    pub delay_days: f64,
}

impl OrderRecord {
    pub fn delay_from(real_days: u32, scheduled_days: u32) -> f64 {
        real_days.saturating_sub(scheduled_days) as f64
    }
}

/// Why a raw row was dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub bad_date: usize,
    pub bad_transit: usize,
    pub unknown_mode: usize,
    pub bad_discount: usize,
    pub missing_region: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.bad_date + self.bad_transit + self.unknown_mode + self.bad_discount + self.missing_region
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTable {
    /// Calendar date of day index 0.
    pub epoch: NaiveDate,
    pub raw_rows: usize,
    pub dropped: DropCounts,
    pub records: Vec<OrderRecord>,
}

impl OrderTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of calendar days covered, counting from day 0.
    pub fn day_span(&self) -> usize {
        self.records.iter().map(|r| r.order_day as usize + 1).max().unwrap_or(0)
    }

    pub fn date_of(&self, day: u32) -> NaiveDate {
        self.epoch + chrono::Days::new(day as u64)
    }

    fn sort(&mut self) {
        self.records
            .sort_by(|a, b| a.order_day.cmp(&b.order_day).then_with(|| a.order_id.cmp(&b.order_id)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageRule {
    /// The column encodes the label directly.
    DirectLabel,
    /// The column is algebraically derived from label inputs.
    CoDerivation,
    /// The value is only known after the prediction time.
    Temporal,
}

impl fmt::Display for LeakageRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeakageRule::DirectLabel => "direct label leakage",
            LeakageRule::CoDerivation => "co-derivation leakage",
            LeakageRule::Temporal => "temporal leakage",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenColumn {
    pub header: String,
    pub rule: LeakageRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub order_id: String,
    pub order_date: String,
    pub scheduled_days: String,
    pub real_days: String,
    pub discount_rate: String,
    pub shipping_mode: String,
}

/// Mapping from logical fields to CSV headers plus the leakage blacklist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub columns: ColumnMap,
    pub origin_region: String,
    pub dest_region: String,
    pub date_format: String,
    pub forbidden: Vec<ForbiddenColumn>,
    #[serde(default = "default_max_drop_rate")]
    pub max_drop_rate: f64,
}

fn default_max_drop_rate() -> f64 {
    0.01
}

impl SchemaConfig {
    /// Headers of the public DataCo supply-chain export.
    ///
    /// The origin side uses the `Market` column and the destination side
    /// uses `Order Region`; other pairings are a config change.
    pub fn dataco() -> Self {
        SchemaConfig {
            columns: ColumnMap {
                order_id: "Order Item Id".into(),
                order_date: "order date (DateOrders)".into(),
                scheduled_days: "Days for shipment (scheduled)".into(),
                real_days: "Days for shipping (real)".into(),
                discount_rate: "Order Item Discount Rate".into(),
                shipping_mode: "Shipping Mode".into(),
            },
            origin_region: "Market".into(),
            dest_region: "Order Region".into(),
            date_format: "%m/%d/%Y %H:%M".into(),
            forbidden: vec![
                forbid("Delivery Status", LeakageRule::DirectLabel),
                forbid("Days for shipping (real)", LeakageRule::DirectLabel),
                forbid("Late_delivery_risk", LeakageRule::CoDerivation),
                forbid("shipping date (DateOrders)", LeakageRule::Temporal),
                forbid("Order Status", LeakageRule::Temporal),
            ],
            max_drop_rate: default_max_drop_rate(),
        }
    }

    /// Schema of the clean table written by [`write_table`] and produced by
    /// the synthetic generator.
    pub fn clean() -> Self {
        SchemaConfig {
            columns: ColumnMap {
                order_id: "order_id".into(),
                order_date: "order_date".into(),
                scheduled_days: "scheduled_days".into(),
                real_days: "real_days".into(),
                discount_rate: "discount_rate".into(),
                shipping_mode: "shipping_mode".into(),
            },
            origin_region: "origin_region".into(),
            dest_region: "dest_region".into(),
            date_format: "%Y-%m-%d".into(),
            forbidden: vec![
                forbid("delivery_status", LeakageRule::DirectLabel),
                forbid("real_days", LeakageRule::DirectLabel),
                forbid("late_delivery_risk", LeakageRule::CoDerivation),
            ],
            max_drop_rate: default_max_drop_rate(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.forbidden.is_empty() {
            return Err(EagleError::Schema("forbidden-column list must not be empty".into()));
        }
        if !self.is_forbidden(&self.columns.real_days) {
            return Err(EagleError::Schema(format!(
                "realized shipping days column `{}` must be listed as forbidden for features",
                self.columns.real_days
            )));
        }
        for header in self.feature_headers() {
            if let Some(f) = self.forbidden_entry(header) {
                return Err(EagleError::Leakage {
                    column: f.header.clone(),
                    rule: f.rule.to_string(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.max_drop_rate) {
            return Err(EagleError::Schema(format!("max_drop_rate {} outside [0, 1]", self.max_drop_rate)));
        }
        Ok(())
    }

    /// Headers whose values may flow into features or identifiers. The real
    /// transit column is excluded: it is read only to derive delay days.
    fn feature_headers(&self) -> [&str; 7] {
        [
            &self.columns.order_id,
            &self.columns.order_date,
            &self.columns.scheduled_days,
            &self.columns.discount_rate,
            &self.columns.shipping_mode,
            &self.origin_region,
            &self.dest_region,
        ]
    }

    fn required_headers(&self) -> Vec<&str> {
        let mut h = self.feature_headers().to_vec();
        h.push(&self.columns.real_days);
        h
    }

    pub fn forbidden_entry(&self, header: &str) -> Option<&ForbiddenColumn> {
        self.forbidden.iter().find(|f| f.header == header)
    }

    pub fn is_forbidden(&self, header: &str) -> bool {
        self.forbidden_entry(header).is_some()
    }

    /// Resolves a logical field name to its CSV header; unknown names are
    /// taken to be headers already.
    pub fn resolve<'a>(&'a self, source: &'a str) -> &'a str {
        match source {
            "order_id" => &self.columns.order_id,
            "order_date" => &self.columns.order_date,
            "scheduled_days" => &self.columns.scheduled_days,
            "real_days" => &self.columns.real_days,
            "discount_rate" => &self.columns.discount_rate,
            "shipping_mode" => &self.columns.shipping_mode,
            "origin_region" => &self.origin_region,
            "dest_region" => &self.dest_region,
            other => other,
        }
    }
}

fn forbid(header: &str, rule: LeakageRule) -> ForbiddenColumn {
    ForbiddenColumn {
        header: header.into(),
        rule,
    }
}

fn parse_timestamp(raw: &str, format: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDateTime::parse_from_str(raw, format)
        .map(|dt| dt.date())
        .or_else(|_| NaiveDate::parse_from_str(raw, format))
        .ok()
}

fn parse_days(raw: &str) -> Option<std::result::Result<u32, ()>> {
    let v: i64 = raw.trim().parse().ok()?;
    if v < 0 {
        return Some(Err(()));
    }
    u32::try_from(v).ok().map(Ok)
}

struct RawRow {
    order_id: String,
    date: NaiveDate,
    origin_region: String,
    dest_region: String,
    scheduled_days: u32,
    real_days: u32,
    discount_rate: f64,
    shipping_mode: ShippingMode,
}

/// Parses an order CSV into a typed table sorted by `(order_day, order_id)`.
///
/// Only the mapped columns are read. Malformed rows are dropped and counted;
/// if more than `schema.max_drop_rate` of the rows are dropped the parse
/// fails.
pub fn parse_orders<R: Read>(source: R, schema: &SchemaConfig) -> Result<OrderTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let headers = reader.byte_headers()?.clone();
    let position: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (String::from_utf8_lossy(h).trim().trim_start_matches('\u{feff}').to_string(), i))
        .collect();
    let col = |name: &str| -> Result<usize> {
        position.get(name).copied().ok_or_else(|| EagleError::MissingColumn(name.to_string()))
    };
    for h in schema.required_headers() {
        col(h)?;
    }
    let c = &schema.columns;
    let (i_id, i_date, i_sched, i_real, i_disc, i_mode, i_orig, i_dest) = (
        col(&c.order_id)?,
        col(&c.order_date)?,
        col(&c.scheduled_days)?,
        col(&c.real_days)?,
        col(&c.discount_rate)?,
        col(&c.shipping_mode)?,
        col(&schema.origin_region)?,
        col(&schema.dest_region)?,
    );

    let mut dropped = DropCounts::default();
    let mut raw_rows = 0usize;
    let mut rows: Vec<RawRow> = Vec::new();
    let mut record = csv::ByteRecord::new();
    while reader.read_byte_record(&mut record)? {
        raw_rows += 1;
        let field = |i: usize| String::from_utf8_lossy(record.get(i).unwrap_or_default()).into_owned();
        let Some(date) = parse_timestamp(&field(i_date), &schema.date_format) else {
            dropped.bad_date += 1;
            continue;
        };
        let (Some(Ok(scheduled_days)), Some(Ok(real_days))) = (parse_days(&field(i_sched)), parse_days(&field(i_real)))
        else {
            dropped.bad_transit += 1;
            continue;
        };
        let Some(shipping_mode) = ShippingMode::parse(&field(i_mode)) else {
            dropped.unknown_mode += 1;
            continue;
        };
        let discount_rate = match field(i_disc).trim().parse::<f64>() {
            Ok(d) if (0.0..=1.0).contains(&d) => d,
            _ => {
                dropped.bad_discount += 1;
                continue;
            }
        };
        let origin_region = field(i_orig).trim().to_string();
        let dest_region = field(i_dest).trim().to_string();
        if origin_region.is_empty() || dest_region.is_empty() {
            dropped.missing_region += 1;
            continue;
        }
        rows.push(RawRow {
            order_id: field(i_id).trim().to_string(),
            date,
            origin_region,
            dest_region,
            scheduled_days,
            real_days,
            discount_rate,
            shipping_mode,
        });
    }

    if rows.is_empty() {
        return Err(EagleError::EmptyInput(format!("no parseable order rows out of {raw_rows}")));
    }
    let drop_rate = dropped.total() as f64 / raw_rows as f64;
    if drop_rate > schema.max_drop_rate {
        return Err(EagleError::Data(format!(
            "dropped {} of {raw_rows} rows ({:.2}%), above the {:.2}% limit: {dropped:?}",
            dropped.total(),
            100.0 * drop_rate,
            100.0 * schema.max_drop_rate
        )));
    }

    let epoch = rows.iter().map(|r| r.date).min().unwrap();
    let records = rows
        .into_iter()
        .map(|r| OrderRecord {
            order_id: r.order_id,
            order_day: (r.date - epoch).num_days() as u32,
            origin_region: r.origin_region,
            dest_region: r.dest_region,
            scheduled_days: r.scheduled_days,
            real_days: r.real_days,
            discount_rate: r.discount_rate,
            shipping_mode: r.shipping_mode,
            delay_days: OrderRecord::delay_from(r.real_days, r.scheduled_days),
        })
        .collect();
    let mut table = OrderTable {
        epoch,
        raw_rows,
        dropped,
        records,
    };
    table.sort();
    Ok(table)
}

#[derive(Debug, Serialize, Deserialize)]
struct TableMeta {
    epoch: NaiveDate,
    raw_rows: usize,
    dropped: DropCounts,
    rows: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CleanRow {
    order_id: String,
    order_date: NaiveDate,
    origin_region: String,
    dest_region: String,
    scheduled_days: u32,
    real_days: u32,
    discount_rate: f64,
    shipping_mode: ShippingMode,
}

pub const ORDERS_FILE: &str = "orders.csv";
pub const TABLE_META_FILE: &str = "table.json";
pub const AUDIT_FILE: &str = "audit.json";

/// CSV text of the clean table, readable by [`parse_orders`] with
/// [`SchemaConfig::clean`].
pub fn table_to_csv(table: &OrderTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &table.records {
        w.serialize(CleanRow {
            order_id: r.order_id.clone(),
            order_date: table.date_of(r.order_day),
            origin_region: r.origin_region.clone(),
            dest_region: r.dest_region.clone(),
            scheduled_days: r.scheduled_days,
            real_days: r.real_days,
            discount_rate: r.discount_rate,
            shipping_mode: r.shipping_mode,
        })?;
    }
    w.into_inner().map_err(|e| EagleError::Data(format!("csv flush: {e}")))
}

/// The `orders.csv` and `table.json` files describing `table`.
pub fn table_files(table: &OrderTable) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let meta = TableMeta {
        epoch: table.epoch,
        raw_rows: table.raw_rows,
        dropped: table.dropped.clone(),
        rows: table.len(),
    };
    Ok(vec![
        (ORDERS_FILE, table_to_csv(table)?),
        (TABLE_META_FILE, serde_json::to_vec_pretty(&meta)?),
    ])
}

/// Writes [`table_files`] into `dir`.
pub fn write_table(table: &OrderTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| EagleError::io(dir, e))?;
    for (name, bytes) in table_files(table)? {
        write_file(&dir.join(name), &bytes)?;
    }
    Ok(())
}

pub fn read_table(dir: &Path) -> Result<OrderTable> {
    let meta: TableMeta = serde_json::from_slice(&read_file(&dir.join(TABLE_META_FILE))?)?;
    let bytes = read_file(&dir.join(ORDERS_FILE))?;
    let mut table = parse_orders(bytes.as_slice(), &SchemaConfig::clean())?;
    if table.len() != meta.rows {
        return Err(EagleError::Format(format!(
            "{} lists {} rows but {} were read",
            TABLE_META_FILE,
            meta.rows,
            table.len()
        )));
    }
    // Day indices are relative to the original file's first date.
    let shift = (table.epoch - meta.epoch).num_days();
    if shift < 0 {
        return Err(EagleError::Format("table epoch after first order".into()));
    }
    for r in &mut table.records {
        r.order_day += shift as u32;
    }
    table.epoch = meta.epoch;
    table.raw_rows = meta.raw_rows;
    table.dropped = meta.dropped;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Node,
    Edge,
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScope {
    /// `[t, t + window)`.
    FeatureWindow,
    /// Aggregated once over the whole table.
    GlobalStatic,
    TrainSplitOnly,
    /// `[t + window, t + window + horizon)`.
    LabelWindow,
}

/// One declared quantity the pipeline computes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Logical field (see [`SchemaConfig::resolve`]), a CSV header, or
    /// `delay_days` for the derived delay.
    pub source: String,
    pub aggregate: String,
    pub scope: TimeScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub name: String,
    pub kind: FeatureKind,
    pub time_scope: TimeScope,
    pub source_column: String,
    /// `None` for prediction targets.
    pub future_info: Option<bool>,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub dropped_columns: Vec<String>,
    /// Largest |Pearson r| between a node feature and the binary label on
    /// the training split, when measured.
    pub max_abs_correlation: Option<f64>,
}

fn spec(name: &str, kind: FeatureKind, source: &str, aggregate: &str, scope: TimeScope) -> FeatureSpec {
    FeatureSpec {
        name: name.into(),
        kind,
        source: source.into(),
        aggregate: aggregate.into(),
        scope,
    }
}

/// Every node, edge and label quantity the pipeline computes.
pub fn default_manifest() -> Vec<FeatureSpec> {
    use FeatureKind::*;
    use TimeScope::*;
    vec![
        spec("order_vol", Node, "order_id", "count", FeatureWindow),
        spec("mean_scheduled_transit", Node, "scheduled_days", "mean", FeatureWindow),
        spec("std_scheduled_transit", Node, "scheduled_days", "std", FeatureWindow),
        spec("mean_discount_rate", Node, "discount_rate", "mean", FeatureWindow),
        spec("prev_delay_days", Node, "delay_days", "mean", FeatureWindow),
        spec("transit_mean", Edge, "scheduled_days", "mean", GlobalStatic),
        spec("transit_std", Edge, "scheduled_days", "std", GlobalStatic),
        spec("flow_volume", Edge, "order_id", "count", GlobalStatic),
        spec("mode_distribution", Edge, "shipping_mode", "fraction x4", GlobalStatic),
        spec("baseline_mu", Label, "delay_days", "mean of window means", TrainSplitOnly),
        spec("y_class", Label, "delay_days", "indicator(mean > baseline)", LabelWindow),
        spec("y_reg", Label, "delay_days", "mean", LabelWindow),
    ]
}

fn justification(spec: &FeatureSpec) -> &'static str {
    use FeatureKind::*;
    match (spec.kind, spec.scope, spec.source.as_str()) {
        (Node, TimeScope::FeatureWindow, "delay_days") => "realized outcomes of the feature window only",
        (Node, TimeScope::FeatureWindow, "order_id") => "counted inside the feature window",
        (Node, TimeScope::FeatureWindow, _) => "fixed when the order is placed",
        (Edge, _, "shipping_mode") => "mode is chosen at placement, not a delivery outcome",
        (Edge, _, "order_id") => "lane volume, independent of outcomes",
        (Edge, _, _) => "scheduled transit, known at placement",
        (Label, TimeScope::TrainSplitOnly, _) => "derived from training-split label windows only",
        (Label, _, _) => "prediction target",
        _ => "declared",
    }
}

/// Checks a feature manifest against the schema's leakage rules.
///
/// Fails on the first violation: a forbidden source column, a non-label
/// quantity drawn from the label window, an edge statistic built from
/// realized delays, or a duplicated name.
pub fn audit_features(schema: &SchemaConfig, manifest: &[FeatureSpec]) -> Result<AuditReport> {
    let mut seen = BTreeSet::new();
    let mut rows = Vec::with_capacity(manifest.len());
    for f in manifest {
        if !seen.insert(f.name.as_str()) {
            return Err(EagleError::Schema(format!("feature `{}` declared twice", f.name)));
        }
        let header = schema.resolve(&f.source);
        if let Some(bad) = schema.forbidden_entry(header) {
            return Err(EagleError::Leakage {
                column: bad.header.clone(),
                rule: format!("{} (feature `{}`)", bad.rule, f.name),
            });
        }
        let outcome = f.source == "delay_days";
        match f.kind {
            FeatureKind::Label => {}
            FeatureKind::Node | FeatureKind::Edge if f.scope == TimeScope::LabelWindow => {
                return Err(EagleError::Leakage {
                    column: f.name.clone(),
                    rule: format!("{} (non-label feature reads the label window)", LeakageRule::Temporal),
                });
            }
            FeatureKind::Edge if outcome => {
                return Err(EagleError::Leakage {
                    column: f.name.clone(),
                    rule: format!("{} (global edge statistic of realized delay)", LeakageRule::Temporal),
                });
            }
            FeatureKind::Node if outcome && f.scope != TimeScope::FeatureWindow => {
                return Err(EagleError::Leakage {
                    column: f.name.clone(),
                    rule: format!("{} (realized delay outside the feature window)", LeakageRule::Temporal),
                });
            }
            _ => {}
        }
        let is_target = f.kind == FeatureKind::Label && f.scope == TimeScope::LabelWindow;
        rows.push(AuditRow {
            name: f.name.clone(),
            kind: f.kind,
            time_scope: f.scope,
            source_column: if outcome {
                format!("{} - {}", schema.columns.real_days, schema.columns.scheduled_days)
            } else {
                header.to_string()
            },
            future_info: if is_target { None } else { Some(false) },
            justification: justification(f).to_string(),
        });
    }
    Ok(AuditReport {
        rows,
        dropped_columns: schema.forbidden.iter().map(|f| f.header.clone()).collect(),
        max_abs_correlation: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: usize,
    pub day_span: usize,
    pub origin_regions: usize,
    pub dest_regions: usize,
    pub mode_counts: BTreeMap<String, usize>,
    pub delayed_fraction: f64,
    /// Delay days at the 50th, 90th, 99th percentiles and the maximum.
    pub delay_quantiles: [f64; 4],
}

pub fn ingest_stats(table: &OrderTable) -> Result<IngestStats> {
    if table.is_empty() {
        return Err(EagleError::EmptyInput("order table has no rows".into()));
    }
    let first = table.records.iter().map(|r| r.order_day).min().unwrap();
    let last = table.records.iter().map(|r| r.order_day).max().unwrap();
    let origins: BTreeSet<&str> = table.records.iter().map(|r| r.origin_region.as_str()).collect();
    let dests: BTreeSet<&str> = table.records.iter().map(|r| r.dest_region.as_str()).collect();
    let mut mode_counts = BTreeMap::new();
    for r in &table.records {
        *mode_counts.entry(r.shipping_mode.label().to_string()).or_insert(0) += 1;
    }
    let mut delays: Vec<f64> = table.records.iter().map(|r| r.delay_days).collect();
    delays.sort_by(f64::total_cmp);
    let q = |p: f64| delays[((delays.len() - 1) as f64 * p).round() as usize];
    Ok(IngestStats {
        rows: table.len(),
        day_span: (last - first + 1) as usize,
        origin_regions: origins.len(),
        dest_regions: dests.len(),
        mode_counts,
        delayed_fraction: delays.iter().filter(|&&d| d > 0.0).count() as f64 / delays.len() as f64,
        delay_quantiles: [q(0.5), q(0.9), q(0.99), *delays.last().unwrap()],
    })
}
