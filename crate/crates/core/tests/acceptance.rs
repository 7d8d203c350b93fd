//! Acceptance suite: one status line per criterion.
//!
//! Criteria that need the public DataCo export run only when
//! `EAGLE_DATACO_CSV` points at it; otherwise they report BLOCKED after
//! running whatever part can be checked on synthetic data.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use eagle_autodiff::{grad_check, Shape, Tape, Tensor, Var};
use eagle_core::experiment::{CombinedReport, MetricsReport};
use eagle_core::graph::SupplyGraph;
use eagle_core::ingest::{audit_features, default_manifest, parse_orders, FeatureKind, FeatureSpec, OrderRecord, OrderTable, SchemaConfig, TimeScope};
use eagle_core::metrics::{auc, calibrate_threshold, macro_f1};
use eagle_core::model::{forward, init_params, loss, predict, Ablation, GraphInput, ModelConfig, ModelParams};
use eagle_core::pipeline::{end_to_end, DataSource, ExperimentConfig, StageCache};
use eagle_core::snapshots::{build_bundle, generate_synthetic, snapshots_from_daily, DailyAggregates, Snapshot, SnapshotConfig, SplitBundle, SplitTag, SyntheticConfig};
use eagle_core::{EagleError, ErrorClass};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DATACO_ENV: &str = "EAGLE_DATACO_CSV";

// Published reference values and tolerances.
const TARGET_N: usize = 46;
const TARGET_E: usize = 1478;
const TARGET_SPLITS: [usize; 3] = [698, 117, 191];
const TARGET_RATES: [f64; 3] = [0.0615, 0.0284, 0.0399];
const RATE_TOL: f64 = 0.015;
const SNAPSHOT_BUDGET: Duration = Duration::from_secs(5 * 60);
const MIN_F1: f64 = 0.84;
const MIN_AUC: f64 = 0.96;
const MAX_MAE: f64 = 0.05;
const MAX_F1_STD: f64 = 0.03;
const SEED_BUDGET: Duration = Duration::from_secs(30 * 60);
const A1_GAP: f64 = 0.10;
const MODEL_GRAD_TOL: f64 = 1e-4;
const OP_GRAD_TOL: f64 = 1e-6;
const LEAKAGE_BUDGET: Duration = Duration::from_secs(60);
const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn blocked(detail: impl Into<String>) -> Outcome {
    Outcome { status: Status::Blocked, detail: detail.into() }
}

fn dataco_path() -> Option<PathBuf> {
    std::env::var_os(DATACO_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn synthetic_table(seed: u64) -> OrderTable {
    let mut cfg = SyntheticConfig::default();
    cfg.hub_risk_map.insert(SyntheticConfig::region_name(0), 3.0);
    generate_synthetic(&cfg, seed).unwrap()
}

fn synthetic_bundle(seed: u64) -> (OrderTable, SupplyGraph, SplitBundle) {
    let table = synthetic_table(seed);
    let graph = SupplyGraph::build(&table).unwrap();
    let bundle = build_bundle(&table, &graph, &SnapshotConfig::default()).unwrap();
    (table, graph, bundle)
}

fn count_identity(bundle: &SplitBundle) -> bool {
    SplitTag::ALL.iter().all(|&t| {
        let c = bundle.counts.get(t);
        c.snapshots * bundle.n_nodes == c.positives + c.negatives
    })
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::smoke();
    cfg.synthetic.n_regions = 6;
    cfg.synthetic.n_days = 80;
    cfg.train.epochs = 3;
    cfg.train.seeds = vec![0, 1];
    cfg.run.formats = vec![eagle_core::explain::RiskFormat::Json, eagle_core::explain::RiskFormat::Graphml];
    cfg
}

// ---------------------------------------------------------------- DataCo run

struct DatacoRun {
    report: CombinedReport,
    /// Per variant, per seed: (train_loss, val_auc) by epoch.
    histories: Vec<(Ablation, u64, Vec<(f64, f64)>)>,
    seconds_per_seed: f64,
}

fn dataco_run() -> &'static Result<DatacoRun, String> {
    static RUN: OnceLock<Result<DatacoRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let path = dataco_path().ok_or_else(|| format!("{DATACO_ENV} not set"))?;
        let mut cfg = ExperimentConfig::paper();
        cfg.data.source = DataSource::Csv;
        cfg.data.path = Some(path);
        cfg.run.explain = false;
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cache = StageCache::resolve(out.path());
        let started = Instant::now();
        let result = end_to_end(&cfg, out.path(), &cache).map_err(|e| e.to_string())?;
        let trained = result.manifest.artifacts.iter().filter(|a| a.stage.starts_with("train-") && !a.cache_hit).count();
        let seconds_per_seed = started.elapsed().as_secs_f64() / trained.max(1) as f64;
        let mut histories = Vec::new();
        for &v in &cfg.run.variants {
            for &seed in &cfg.train.seeds {
                let text = fs::read_to_string(out.path().join(format!("history/{}-seed{seed}.csv", v.as_str()))).map_err(|e| e.to_string())?;
                let rows = text
                    .lines()
                    .skip(1)
                    .map(|l| {
                        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
                        (f[1], f[2])
                    })
                    .collect();
                histories.push((v, seed, rows));
            }
        }
        Ok(DatacoRun {
            report: result.report,
            histories,
            seconds_per_seed,
        })
    })
}

// ---------------------------------------------------------------- criteria

fn c1_dataset_statistics() -> Outcome {
    let (_, _, syn) = synthetic_bundle(11);
    assert!(count_identity(&syn), "synthetic count identity");
    let Some(path) = dataco_path() else {
        return blocked(format!("{DATACO_ENV} not set; synthetic snapshots x N = positives + negatives holds on every split"));
    };
    let started = Instant::now();
    let bytes = fs::read(&path).unwrap();
    let table = parse_orders(bytes.as_slice(), &SchemaConfig::dataco()).unwrap();
    let graph = SupplyGraph::build(&table).unwrap();
    let bundle = build_bundle(&table, &graph, &SnapshotConfig::default()).unwrap();
    let elapsed = started.elapsed();
    let splits: Vec<usize> = SplitTag::ALL.iter().map(|&t| bundle.counts.get(t).snapshots).collect();
    let rates: Vec<f64> = SplitTag::ALL.iter().map(|&t| bundle.counts.get(t).positive_rate()).collect();
    let exact = graph.n_nodes() == TARGET_N && graph.n_edges() == TARGET_E && splits == TARGET_SPLITS;
    let rates_ok = rates.iter().zip(TARGET_RATES).all(|(r, t)| (r - t).abs() <= RATE_TOL);
    let ok = count_identity(&bundle) && rates_ok && elapsed <= SNAPSHOT_BUDGET;
    verdict(
        ok,
        format!(
            "N={} E={} splits={:?} rates={:.4}/{:.4}/{:.4} cold-start={} exact={} identity={} rates within ±{:.1}pp={} time={:.1}s",
            graph.n_nodes(),
            graph.n_edges(),
            splits,
            rates[0],
            rates[1],
            rates[2],
            bundle.cold_start_nodes(),
            exact,
            count_identity(&bundle),
            RATE_TOL * 100.0,
            rates_ok,
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_metric_reproduction() -> Outcome {
    let run = match dataco_run() {
        Ok(r) => r,
        Err(e) => return blocked(e.clone()),
    };
    let full = run.report.get(Ablation::Full).unwrap();
    let agg = &full.aggregate;
    let auc = agg.auc.as_ref().map_or(f64::NAN, |a| a.mean);
    let std = agg.f1_macro.std.unwrap_or(0.0);
    let ok = agg.f1_macro.mean >= MIN_F1
        && auc >= MIN_AUC
        && agg.mae.mean <= MAX_MAE
        && std <= MAX_F1_STD
        && run.seconds_per_seed <= SEED_BUDGET.as_secs_f64();
    verdict(
        ok,
        format!(
            "F1 {:.4} (>= {MIN_F1}), AUC {:.4} (>= {MIN_AUC}), MAE {:.4} (<= {MAX_MAE}), F1 std {:.4} (<= {MAX_F1_STD}), {:.0}s/seed",
            agg.f1_macro.mean, auc, agg.mae.mean, std, run.seconds_per_seed
        ),
    )
}

fn c3_ablation_ordering() -> Outcome {
    // The exact A3 identity is checkable anywhere.
    let out = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.run.variants = vec![Ablation::A1NoTemporal, Ablation::A3SingleTask];
    cfg.run.explain = false;
    let r = end_to_end(&cfg, out.path(), &StageCache::new(out.path().join("cache"))).unwrap();
    let a3 = r.report.get(Ablation::A3SingleTask).unwrap();
    let a1 = r.report.get(Ablation::A1NoTemporal).unwrap();
    let a3_exact = a3.seeds.iter().all(|s| s.mae == a3.zero_baseline_mae);
    let synthetic = format!(
        "synthetic: A3 MAE == zero baseline exactly: {a3_exact}; A1 MAE {:.4} vs baseline {:.4}",
        a1.aggregate.mae.mean, a1.zero_baseline_mae
    );
    if !a3_exact {
        return verdict(false, synthetic);
    }
    let run = match dataco_run() {
        Ok(r) => r,
        Err(e) => return blocked(format!("{e}; {synthetic}")),
    };
    let f1 = |v: Ablation| run.report.get(v).unwrap().aggregate.f1_macro.mean;
    let [full, a1f, a2f, a3f] = [Ablation::Full, Ablation::A1NoTemporal, Ablation::A2NoEdge, Ablation::A3SingleTask].map(f1);
    let order = a1f < a2f && a2f < a3f && a3f < full;
    let gap = full - a1f >= A1_GAP;
    let d_a3: &MetricsReport = run.report.get(Ablation::A3SingleTask).unwrap();
    let d_a1: &MetricsReport = run.report.get(Ablation::A1NoTemporal).unwrap();
    let a3_id = d_a3.seeds.iter().all(|s| s.mae == d_a3.zero_baseline_mae);
    let a1_worse = d_a1.aggregate.mae.mean > d_a1.zero_baseline_mae;
    verdict(
        order && gap && a3_id && a1_worse,
        format!(
            "F1 A1 {a1f:.4} < A2 {a2f:.4} < A3 {a3f:.4} < Full {full:.4}: {order}; gap {:.4} >= {A1_GAP}: {gap}; A3 MAE == baseline: {a3_id}; A1 MAE {:.4} > baseline {:.4}: {a1_worse}",
            full - a1f,
            d_a1.aggregate.mae.mean,
            d_a1.zero_baseline_mae
        ),
    )
}

fn toy_graph(rng: &mut ChaCha8Rng, n: usize, edge_dim: usize) -> GraphInput {
    let mut pairs = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(0.4) {
                pairs.push((s, d));
            }
        }
    }
    let rows: Vec<Vec<f64>> = pairs.iter().map(|_| (0..edge_dim).map(|_| rng.random_range(0.0..5.0)).collect()).collect();
    GraphInput::new(n, &pairs, &rows, 1e-8).unwrap()
}

fn small_model(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        encoder_heads: 2,
        gat_heads: 2,
        head_hidden: 4,
        dropout: 0.0,
        ablation,
        ..ModelConfig::default()
    }
}

fn to_ad(e: EagleError) -> eagle_autodiff::AutodiffError {
    match e {
        EagleError::Autodiff(a) => a,
        other => eagle_autodiff::AutodiffError::NonFinite(other.to_string()),
    }
}

fn weighted(tape: &mut Tape<f64>, out: Var) -> eagle_autodiff::Result<Var> {
    let n = tape.value(out).len();
    let shape = tape.shape(out).clone();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 7.0).collect();
    let w = tape.constant(shape, w)?;
    let p = tape.mul(out, w)?;
    Ok(tape.sum_all(p))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(Shape::new(shape.to_vec()), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn c4_gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_model: f64 = 0.0;
    for ablation in Ablation::ALL {
        let cfg = small_model(ablation);
        let g = GraphInput::new(
            4,
            &[(0, 1), (1, 0), (1, 2), (2, 3)],
            &(0..4).map(|_| (0..cfg.edge_dim).map(|_| rng.random_range(0.0..5.0)).collect()).collect::<Vec<_>>(),
            1e-8,
        )
        .unwrap();
        let params: ModelParams<f64> = init_params(&cfg, 0.3, 21).unwrap();
        let x: Vec<f64> = (0..4 * cfg.window * cfg.node_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y_class = [true, false, false, true];
        let y_reg = [1.5, 0.0, 0.2, 3.0];
        let tensors: Vec<Tensor<f64>> = params.entries().iter().map(|(_, t)| t.clone()).collect();
        let report = grad_check(
            |tape, vars| {
                let b = params.bound_from(vars).unwrap();
                let out = forward(tape, &b, &cfg, &g, &x, None).map_err(to_ad)?;
                Ok(loss(tape, &cfg, &out, &y_class, &y_reg).map_err(to_ad)?.total)
            },
            &tensors,
            1e-4,
        )
        .unwrap();
        worst_model = worst_model.max(report.max_relative_error);
    }

    let x = random_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    let b = random_tensor(&mut rng, &[4, 2], -1.5, 1.5);
    let gain = random_tensor(&mut rng, &[4], 0.5, 1.5);
    let bias = random_tensor(&mut rng, &[4], -1.0, 1.0);
    let pos = random_tensor(&mut rng, &[3, 4], 0.2, 3.0);
    let seg: Arc<[usize]> = vec![1, 0, 1, 2, 0, 1, 2].into();
    let idx: Arc<[usize]> = vec![2, 0, 2, 1].into();
    type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> eagle_autodiff::Result<Var>>;
    let ops: Vec<(&str, Vec<Tensor<f64>>, OpFn)> = vec![
        ("matmul", vec![x.clone(), b], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("layer_norm", vec![x.clone(), gain, bias.clone()], Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("mul_broadcast", vec![x.clone(), bias], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("gelu", vec![x.clone()], Box::new(|t, v| Ok(t.gelu(v[0])))),
        ("sigmoid", vec![x.clone()], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("softplus", vec![x.clone()], Box::new(|t, v| Ok(t.softplus(v[0])))),
        ("log", vec![pos], Box::new(|t, v| t.log(v[0]))),
        ("mean", vec![x.clone()], Box::new(|t, v| t.mean(v[0], 1))),
        ("segment_softmax", vec![random_tensor(&mut rng, &[7], -2.0, 2.0)], Box::new(move |t, v| t.segment_softmax(v[0], &seg, 3))),
        ("gather_rows", vec![random_tensor(&mut rng, &[3, 2], -1.0, 1.0)], {
            let idx = Arc::clone(&idx);
            Box::new(move |t, v| t.gather_rows(v[0], &idx))
        }),
        ("segment_sum", vec![random_tensor(&mut rng, &[4, 2], -1.0, 1.0)], Box::new(move |t, v| t.segment_sum(v[0], &idx, 3))),
        ("huber", vec![Tensor::new([4], vec![-2.2, -0.4, 0.3, 1.8]).unwrap()], Box::new(|t, v| Ok(t.huber(v[0], 1.0)))),
    ];
    let mut worst_op = (0.0f64, "");
    for (name, params, f) in &ops {
        let r = grad_check(|t, v| { let o = f(t, v)?; weighted(t, o) }, params, 1e-4).unwrap();
        if r.max_relative_error >= worst_op.0 {
            worst_op = (r.max_relative_error, name);
        }
    }
    verdict(
        worst_model < MODEL_GRAD_TOL && worst_op.0 < OP_GRAD_TOL,
        format!(
            "full loss over 4-node toy, all variants: max rel err {worst_model:.2e} (< {MODEL_GRAD_TOL:.0e}); per-op max {:.2e} at {} (< {OP_GRAD_TOL:.0e})",
            worst_op.0, worst_op.1
        ),
    )
}

fn delay_order(r: &mut OrderRecord, extra: u32) {
    r.real_days += extra;
    r.delay_days = OrderRecord::delay_from(r.real_days, r.scheduled_days);
}

fn c5_leakage_suite() -> Outcome {
    let started = Instant::now();
    let (table, graph, bundle) = synthetic_bundle(5);
    let cfg = &bundle.config;

    // (a) Orders on or after a snapshot's first label day never reach its features.
    let daily = DailyAggregates::from_table(&table, &graph.nodes).unwrap();
    let base: Vec<Snapshot> = snapshots_from_daily(&daily, cfg).unwrap();
    let mut a_ok = base.iter().all(|s| (s.t as usize + cfg.window - 1) < s.t as usize + cfg.window);
    for probe in (0..base.len()).step_by(9) {
        let cut = base[probe].t + cfg.window as u32;
        let mut t2 = table.clone();
        t2.records.iter_mut().filter(|r| r.order_day >= cut).for_each(|r| delay_order(r, 5));
        let d2 = DailyAggregates::from_table(&t2, &graph.nodes).unwrap();
        let s2 = snapshots_from_daily(&d2, cfg).unwrap();
        a_ok &= s2[probe].features == base[probe].features;
    }

    // (b) Val/test-period orders cannot move training data or statistics.
    let end = bundle.train_day_end() as u32;
    let mut t2 = table.clone();
    let mut touched = 0;
    for r in t2.records.iter_mut().filter(|r| r.order_day >= end) {
        delay_order(r, 4);
        touched += 1;
    }
    let b2 = build_bundle(&t2, &graph, cfg).unwrap();
    let train_same = bundle
        .split(SplitTag::Train)
        .iter()
        .zip(b2.split(SplitTag::Train))
        .all(|(x, y)| x.features == y.features && x.y_class == y.y_class && x.y_reg == y.y_reg);
    let later_changed = bundle.split(SplitTag::Test).iter().zip(b2.split(SplitTag::Test)).any(|(x, y)| x.y_reg != y.y_reg);
    let b_ok = touched > 0 && train_same && bundle.baselines == b2.baselines && bundle.stats == b2.stats && later_changed;

    // (c) Every forbidden column is rejected.
    let mut c_ok = true;
    let mut rejected = 0;
    for schema in [SchemaConfig::dataco(), SchemaConfig::clean()] {
        for f in &schema.forbidden {
            let mut manifest = default_manifest();
            manifest.push(FeatureSpec {
                name: "probe".into(),
                kind: FeatureKind::Node,
                source: f.header.clone(),
                aggregate: "mean".into(),
                scope: TimeScope::FeatureWindow,
            });
            match audit_features(&schema, &manifest) {
                Err(e) if e.class() == ErrorClass::Leakage && e.to_string().contains(&f.header) => rejected += 1,
                _ => c_ok = false,
            }
        }
    }
    c_ok &= audit_features(&SchemaConfig::dataco(), &default_manifest()).is_ok();

    // (d) Edge features are inert without the edge term.
    let gi = GraphInput::from_graph(&graph).unwrap();
    let mut gp = gi.clone();
    gp.edge_feats.iter_mut().enumerate().for_each(|(i, v)| *v += 0.25 + (i % 5) as f64 * 0.1);
    let mut d_ok = true;
    for (ablation, must_change) in [(Ablation::A2NoEdge, false), (Ablation::Full, true)] {
        let mcfg = ModelConfig { ablation, ..ModelConfig::default() };
        let p: ModelParams<f64> = init_params(&mcfg, 0.2, 3).unwrap();
        let mut changed = false;
        for s in bundle.split(SplitTag::Test).iter().take(8) {
            let a = predict(&p, &mcfg, &gi, s).unwrap();
            let b = predict(&p, &mcfg, &gp, s).unwrap();
            changed |= a != b;
        }
        d_ok &= changed == must_change;
    }

    let elapsed = started.elapsed();
    verdict(
        a_ok && b_ok && c_ok && d_ok && elapsed <= LEAKAGE_BUDGET,
        format!(
            "(a) feature/label separation {a_ok}; (b) {touched} orders on days >= {end} perturbed, train data, baselines, stats unchanged {b_ok}; (c) {rejected} forbidden columns rejected {c_ok}; (d) A2 bit-identical, full changes {d_ok}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn read_outputs(dir: &Path, names: &[String]) -> Vec<Vec<u8>> {
    names.iter().map(|n| fs::read(dir.join(n)).unwrap()).collect()
}

fn c6_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let cfg = tiny_config();
    let run = |tag: &str| {
        let out = tmp.path().join(tag);
        let cache = StageCache::new(tmp.path().join(format!("cache-{tag}")));
        pool.install(|| end_to_end(&cfg, &out, &cache)).unwrap()
    };
    let a = run("a");
    let b = run("b");
    let fresh = a.manifest.cache_hits == 0 && b.manifest.cache_hits == 0;
    let names: Vec<String> = a.manifest.outputs.iter().map(|f| f.path.clone()).collect();
    let ckpts = names.iter().filter(|n| n.ends_with(".ckpt")).count();
    let same = names == b.manifest.outputs.iter().map(|f| f.path.clone()).collect::<Vec<_>>()
        && read_outputs(&tmp.path().join("a"), &names) == read_outputs(&tmp.path().join("b"), &names);
    let risk = a.risk.is_some() && a.risk == b.risk;
    verdict(
        fresh && same && risk && ckpts > 0,
        format!("two cold runs: {} outputs ({ckpts} checkpoints, reports, risk graphs) byte-identical {same}", names.len()),
    )
}

fn c7_structural_properties() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 48,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let mut results = Vec::new();

    let softmax = runner.run(&(prop::collection::vec((-20.0f64..20.0, 0usize..5), 1..40)), |cells| {
        let scores: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let seg: Arc<[usize]> = cells.iter().map(|c| c.1).collect::<Vec<_>>().into();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant([scores.len()], scores).unwrap();
        let y = tape.segment_softmax(x, &seg, 5).unwrap();
        let mut sums = [0.0; 5];
        for (v, &s) in tape.value(y).iter().zip(seg.iter()) {
            sums[s] += v;
        }
        for s in 0..5 {
            if seg.contains(&s) {
                prop_assert!((sums[s] - 1.0).abs() < 1e-12);
            }
        }
        Ok(())
    });
    results.push(("segment softmax", softmax.is_ok()));

    let codomain = runner.run(&(any::<u64>(), 2usize..7, any::<bool>()), |(seed, n, a3)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_model(if a3 { Ablation::A3SingleTask } else { Ablation::Full });
        let g = toy_graph(&mut rng, n, cfg.edge_dim);
        let p: ModelParams<f64> = init_params(&cfg, rng.random_range(0.01..0.5), seed).unwrap();
        let features = (0..n * cfg.window * cfg.node_dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = Snapshot { t: 0, features, y_class: vec![false; n], y_reg: vec![0.0; n], split: SplitTag::Test };
        let out = predict(&p, &cfg, &g, &s).unwrap();
        prop_assert!(out.prob.iter().all(|&q| q > 0.0 && q < 1.0));
        if let Some(d) = &out.delay {
            prop_assert!(d.iter().all(|&v| v > 0.0));
        }
        Ok(())
    });
    results.push(("p in (0,1), d > 0", codomain.is_ok()));

    let monotone = runner.run(&(prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60), 0.1f64..3.0, -2.0f64..2.0), |(cells, k, c)| {
        let scores: Vec<f64> = cells.iter().map(|x| (x.0 * 4.0).round() / 4.0).collect();
        let labels: Vec<bool> = cells.iter().map(|x| x.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let base = auc(&scores, &labels).unwrap();
        let t1: Vec<f64> = scores.iter().map(|s| (k * s).exp()).collect();
        let t2: Vec<f64> = scores.iter().map(|s| s.powi(3) + k * s + c).collect();
        prop_assert_eq!(auc(&t1, &labels).unwrap(), base);
        prop_assert_eq!(auc(&t2, &labels).unwrap(), base);
        Ok(())
    });
    results.push(("AUC monotone invariance", monotone.is_ok()));

    let grid = runner.run(&prop::collection::vec((0u32..=1000, any::<bool>()), 2..50), |cells| {
        let scores: Vec<f64> = cells.iter().map(|c| c.0 as f64 / 1000.0).collect();
        let labels: Vec<bool> = cells.iter().map(|c| c.1).collect();
        let theta = calibrate_threshold(&scores, &labels).unwrap();
        let best = macro_f1(&scores, &labels, theta);
        let oracle = (0..=4000).map(|i| macro_f1(&scores, &labels, i as f64 / 4000.0)).fold(f64::MIN, f64::max);
        prop_assert!((best - oracle).abs() <= GRID_TOL, "{} vs {}", best, oracle);
        Ok(())
    });
    results.push(("threshold vs dense grid", grid.is_ok()));

    let equivariance = runner.run(&(any::<u64>(), 3usize..7), |(seed, n)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_model(Ablation::Full);
        let g = toy_graph(&mut rng, n, cfg.edge_dim);
        let p: ModelParams<f64> = init_params(&cfg, 0.2, seed).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let per = cfg.window * cfg.node_dim;
        let x: Vec<f64> = (0..n * per).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut x2 = vec![0.0; x.len()];
        for old in 0..n {
            x2[perm[old] * per..(perm[old] + 1) * per].copy_from_slice(&x[old * per..(old + 1) * per]);
        }
        let d = g.edge_dim;
        let pairs: Vec<(usize, usize)> = (0..g.n_edges).map(|e| (perm[g.src[e]], perm[g.dst[e]])).collect();
        let rows: Vec<Vec<f64>> = (0..g.n_edges).map(|e| g.edge_feats[e * d..(e + 1) * d].to_vec()).collect();
        let g1 = GraphInput::new(n, &(0..g.n_edges).map(|e| (g.src[e], g.dst[e])).collect::<Vec<_>>(), &rows, 1e-8).unwrap();
        let g2 = GraphInput::new(n, &pairs, &rows, 1e-8).unwrap();
        let snap = |f: Vec<f64>| Snapshot { t: 0, features: f, y_class: vec![false; n], y_reg: vec![0.0; n], split: SplitTag::Test };
        let a = predict(&p, &cfg, &g1, &snap(x)).unwrap();
        let b = predict(&p, &cfg, &g2, &snap(x2)).unwrap();
        for old in 0..n {
            prop_assert!((a.prob[old] - b.prob[perm[old]]).abs() < 1e-12);
        }
        Ok(())
    });
    results.push(("permutation equivariance", equivariance.is_ok()));

    let ok = results.iter().all(|r| r.1);
    let detail: Vec<String> = results.iter().map(|(n, ok)| format!("{n} {}", if *ok { "ok" } else { "FAILED" })).collect();
    verdict(ok, format!("48 random cases each: {}", detail.join(", ")))
}

fn smoothed(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn c8_behavior_anchors() -> Outcome {
    let run = match dataco_run() {
        Ok(r) => r,
        Err(e) => return blocked(e.clone()),
    };
    let mut details = Vec::new();
    let mut ok = true;
    for (_, seed, rows) in run.histories.iter().filter(|h| h.0 == Ablation::Full) {
        let losses: Vec<f64> = rows.iter().map(|r| r.0).collect();
        // Moving average over epochs 5.. (1-based) must not increase.
        let tail = smoothed(losses.get(4..).unwrap_or(&[]), 3);
        let monotone = tail.windows(2).all(|w| w[1] <= w[0]);
        let best = rows
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, r)| if r.1 > acc.1 { (i + 1, r.1) } else { acc });
        let late = best.0 >= 10;
        ok &= monotone && late;
        details.push(format!("seed {seed}: smoothed loss monotone {monotone}, best val AUC epoch {}", best.0));
    }
    verdict(ok, details.join("; "))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "dataset statistics", c1_dataset_statistics),
        (2, "metric reproduction", c2_metric_reproduction),
        (3, "ablation ordering", c3_ablation_ordering),
        (4, "gradient correctness", c4_gradient_correctness),
        (5, "leakage properties", c5_leakage_suite),
        (6, "determinism", c6_determinism),
        (7, "structural invariants", c7_structural_properties),
        (8, "training behavior", c8_behavior_anchors),
    ];
    let mut failed = 0;
    println!();
    for (id, name, f) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => "BLOCKED",
        };
        println!("acceptance {id} {name}: {tag} ({:.1}s) {}", started.elapsed().as_secs_f64(), outcome.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
