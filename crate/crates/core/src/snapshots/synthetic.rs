use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::ingest::{DropCounts, OrderRecord, OrderTable, ShippingMode};
use crate::{EagleError, Result};

/// Order-stream generator for tests and demos. Region `k` is named
/// `R{k:02}`; every region ships and receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_regions: usize,
    pub n_days: usize,
    /// Per-order delay probability before hub risk and disruptions.
    pub base_delay_rate: f64,
    /// Relative amplitude of the weekly volume cycle, in `[0, 1)`.
    pub seasonal_amplitude: f64,
    /// Delay-probability multiplier per origin region; missing regions use 1.
    pub hub_risk_map: BTreeMap<String, f64>,
    pub orders_per_day: f64,
    /// Destinations served per origin: `o -> o+1, ..., o+lanes` (mod K).
    pub lanes_per_origin: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_regions: 10,
            n_days: 120,
            base_delay_rate: 0.15,
            seasonal_amplitude: 0.3,
            hub_risk_map: BTreeMap::new(),
            orders_per_day: 60.0,
            lanes_per_origin: 2,
        }
    }
}

impl SyntheticConfig {
    pub fn region_name(k: usize) -> String {
        format!("R{k:02}")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EagleError::Config(format!("synthetic: {m}")));
        if self.n_regions < 2 {
            return bad(format!("n_regions = {} (need at least 2)", self.n_regions));
        }
        if self.n_days < 28 {
            return bad(format!("n_days = {} (need at least 28)", self.n_days));
        }
        if !(0.0..=1.0).contains(&self.base_delay_rate) {
            return bad(format!("base_delay_rate = {} outside [0, 1]", self.base_delay_rate));
        }
        if !(0.0..1.0).contains(&self.seasonal_amplitude) {
            return bad(format!("seasonal_amplitude = {} outside [0, 1)", self.seasonal_amplitude));
        }
        if !(self.orders_per_day > 0.0) || !self.orders_per_day.is_finite() {
            return bad(format!("orders_per_day = {} must be positive", self.orders_per_day));
        }
        if self.lanes_per_origin == 0 || self.lanes_per_origin >= self.n_regions {
            return bad(format!("lanes_per_origin = {} must be in 1..{}", self.lanes_per_origin, self.n_regions));
        }
        for (region, risk) in &self.hub_risk_map {
            let known = (0..self.n_regions).any(|k| Self::region_name(k) == *region);
            if !known {
                return bad(format!("hub_risk_map names unknown region {region}"));
            }
            if !(*risk >= 0.0) || !risk.is_finite() {
                return bad(format!("hub risk for {region} must be non-negative"));
            }
        }
        Ok(())
    }
}

const MODE_WEIGHTS: [(ShippingMode, f64, u32); 4] = [
    (ShippingMode::StandardClass, 0.60, 4),
    (ShippingMode::SecondClass, 0.20, 2),
    (ShippingMode::FirstClass, 0.15, 1),
    (ShippingMode::SameDay, 0.05, 0),
];

const DISRUPTION_ON: f64 = 0.02;
const DISRUPTION_OFF: f64 = 0.05;
const DISRUPTION_FACTOR: f64 = 4.0;

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<OrderTable> {
    cfg.validate()?;
    let k = cfg.n_regions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..k).map(SyntheticConfig::region_name).collect();
    let risk: Vec<f64> = names.iter().map(|n| cfg.hub_risk_map.get(n).copied().unwrap_or(1.0)).collect();
    let mut disrupted = vec![false; k];
    let mut records = Vec::new();

    for day in 0..cfg.n_days {
        for state in disrupted.iter_mut() {
            let flip = if *state { DISRUPTION_OFF } else { DISRUPTION_ON };
            if rng.random::<f64>() < flip {
                *state = !*state;
            }
        }
        let phase = 2.0 * std::f64::consts::PI * (day % 7) as f64 / 7.0;
        let rate = cfg.orders_per_day * (1.0 + cfg.seasonal_amplitude * phase.sin());
        let volume = Poisson::new(rate).map_err(|e| EagleError::Config(format!("synthetic volume: {e}")))?;
        let mut n_orders = volume.sample(&mut rng) as usize;
        if day == 0 {
            n_orders = n_orders.max(k);
        }
        for i in 0..n_orders {
            let origin = if day == 0 && i < k { i } else { rng.random_range(0..k) };
            let offset = if day == 0 && i < k { 1 } else { rng.random_range(1..=cfg.lanes_per_origin) };
            let dest = (origin + offset) % k;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = MODE_WEIGHTS[0];
            for w in MODE_WEIGHTS {
                acc += w.1;
                if u < acc {
                    choice = w;
                    break;
                }
            }
            let (mode, _, scheduled) = choice;
            let regime = if disrupted[origin] { DISRUPTION_FACTOR } else { 1.0 };
            let p = (cfg.base_delay_rate * risk[origin] * regime).min(1.0);
            let late = p > 0.0 && rng.random::<f64>() < p;
            let real = if late { scheduled + rng.random_range(1..=3) } else { scheduled };
            let discount = rng.random_range(0..=25) as f64 / 100.0;
            records.push(OrderRecord {
                order_id: format!("S{day:05}-{i:04}"),
                order_day: day as u32,
                origin_region: names[origin].clone(),
                dest_region: names[dest].clone(),
                scheduled_days: scheduled,
                real_days: real,
                discount_rate: discount,
                shipping_mode: mode,
                delay_days: OrderRecord::delay_from(real, scheduled),
            });
        }
    }
    Ok(OrderTable {
        epoch: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid epoch"),
        raw_rows: records.len(),
        dropped: DropCounts::default(),
        records,
    })
}
