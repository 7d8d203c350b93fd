//! Multi-seed experiments, ablations and their reports.

use std::fmt::Write as _;

use eagle_autodiff::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{calibrate_threshold, evaluate, summarize, EvalMetrics, Summary};
use crate::model::{Ablation, GraphInput, ModelConfig};
use crate::snapshots::{SplitBundle, SplitTag};
use crate::train::{train, Checkpoint, EpochRecord, TrainConfig};
use crate::{EagleError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub f1_macro: f64,
    pub auc: Option<f64>,
    pub mae: f64,
    pub threshold: f64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub f1_macro: Summary,
    pub auc: Option<Summary>,
    pub mae: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Ablation,
    pub precision_bits: u32,
    pub n_nodes: usize,
    pub test_rows: usize,
    pub test_positives: usize,
    /// Error of always predicting zero delay on the test split.
    pub zero_baseline_mae: f64,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

pub struct SeedRun<T> {
    pub report: SeedReport,
    pub test: EvalMetrics,
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
}

/// Calibrates the threshold on validation and scores the test split.
pub fn score_checkpoint<T: Real>(
    checkpoint: &Checkpoint<T>,
    bundle: &SplitBundle,
    graph: &GraphInput,
    epochs_run: usize,
) -> Result<(SeedReport, EvalMetrics)> {
    let val = checkpoint.predict_split(bundle, graph, SplitTag::Val)?;
    let theta = calibrate_threshold(&val.scores(), &val.labels())?;
    let test = checkpoint.predict_split(bundle, graph, SplitTag::Test)?;
    let delays = test.delays();
    let m = evaluate(&test.scores(), &test.labels(), delays.as_deref(), &test.targets(), theta)?;
    let report = SeedReport {
        seed: checkpoint.seed,
        f1_macro: m.f1_macro,
        auc: m.auc,
        mae: m.mae,
        threshold: theta,
        best_epoch: checkpoint.best_epoch,
        best_val_auc: checkpoint.best_val_auc,
        epochs_run,
    };
    Ok((report, m))
}

/// Train one seed, calibrate the threshold on validation, score the test split.
pub fn run_seed<T: Real>(
    bundle: &SplitBundle,
    graph: &GraphInput,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<SeedRun<T>> {
    let out = train::<T>(bundle, graph, model_cfg, train_cfg, seed)?;
    let (report, test) = score_checkpoint(&out.checkpoint, bundle, graph, out.history.len())?;
    Ok(SeedRun {
        report,
        test,
        checkpoint: out.checkpoint,
        history: out.history,
    })
}

pub struct ExperimentOutcome<T> {
    pub report: MetricsReport,
    pub runs: Vec<SeedRun<T>>,
}

pub fn aggregate_report(variant: Ablation, precision_bits: u32, n_nodes: usize, runs: &[(SeedReport, EvalMetrics)]) -> Result<MetricsReport> {
    let Some((_, first)) = runs.first() else {
        return Err(EagleError::Config("experiment has no seeds".into()));
    };
    let f1: Vec<f64> = runs.iter().map(|r| r.0.f1_macro).collect();
    let mae: Vec<f64> = runs.iter().map(|r| r.0.mae).collect();
    let auc: Option<Vec<f64>> = runs.iter().map(|r| r.0.auc).collect();
    Ok(MetricsReport {
        variant,
        precision_bits,
        n_nodes,
        test_rows: first.rows,
        test_positives: first.positives,
        zero_baseline_mae: first.zero_baseline_mae,
        seeds: runs.iter().map(|r| r.0.clone()).collect(),
        aggregate: Aggregate {
            f1_macro: summarize(&f1).expect("non-empty"),
            auc: auc.and_then(|a| summarize(&a)),
            mae: summarize(&mae).expect("non-empty"),
        },
    })
}

/// Runs every configured seed (in parallel, results in seed order) and
/// aggregates mean and sample standard deviation.
pub fn run_experiment<T: Real>(
    bundle: &SplitBundle,
    graph: &GraphInput,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<ExperimentOutcome<T>> {
    train_cfg.validate()?;
    let runs: Vec<SeedRun<T>> = train_cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            run_seed::<T>(bundle, graph, model_cfg, train_cfg, seed)
                .map_err(|e| e.in_stage(&format!("seed {seed}")))
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(SeedReport, EvalMetrics)> = runs.iter().map(|r| (r.report.clone(), r.test)).collect();
    let report = aggregate_report(model_cfg.ablation, T::PRECISION.bits(), bundle.n_nodes, &pairs)?;
    Ok(ExperimentOutcome { report, runs })
}

pub fn run_ablation<T: Real>(
    bundle: &SplitBundle,
    graph: &GraphInput,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variant: Ablation,
) -> Result<ExperimentOutcome<T>> {
    run_experiment(bundle, graph, &base.with_ablation(variant), train_cfg)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_auc\n");
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_auc);
    }
    s
}

/// Several variant reports side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    pub reports: Vec<MetricsReport>,
}

impl CombinedReport {
    pub fn new(mut reports: Vec<MetricsReport>) -> Self {
        reports.sort_by_key(|r| r.variant);
        CombinedReport { reports }
    }

    pub fn get(&self, variant: Ablation) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn to_markdown(&self) -> String {
        let fmt = |s: &Summary| match s.std {
            Some(sd) => format!("{:.4} ± {:.4}", s.mean, sd),
            None => format!("{:.4}", s.mean),
        };
        let mut out = String::from("| Variant | F1 (macro) | AUC-ROC | MAE (days) | Zero-baseline MAE | Seeds |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for r in &self.reports {
            let auc = r.aggregate.auc.as_ref().map_or_else(|| "n/a".to_string(), fmt);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.4} | {} |",
                r.variant.short(),
                fmt(&r.aggregate.f1_macro),
                auc,
                fmt(&r.aggregate.mae),
                r.zero_baseline_mae,
                r.seeds.len()
            );
        }
        out
    }
}
