use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eagle_core::experiment::{history_csv, run_ablation, CombinedReport, MetricsReport};
use eagle_core::explain::{aggregate_risk, export_risk, Attribution, RiskFormat};
use eagle_core::graph::SupplyGraph;
use eagle_core::ingest::{audit_features, default_manifest, ingest_stats, parse_orders, read_table, table_to_csv, write_table};
use eagle_core::metrics::{calibrate_threshold, evaluate};
use eagle_core::model::{Ablation, GraphInput};
use eagle_core::pipeline::{end_to_end, load_schema, ExperimentConfig, StageCache};
use eagle_core::snapshots::{build_bundle, generate_synthetic, load_bundle, save_bundle, SnapshotConfig, SplitBundle, SplitTag};
use eagle_core::train::{checkpoint_precision, train, Checkpoint};
use eagle_core::{sha256_hex, EagleError, ErrorClass, Precision, Real, Result};

#[derive(Parser)]
#[command(name = "eagle", version, about = "Node-level delivery delay prediction over a supply graph")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for seed-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Floating point precision for training and inference.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and clean an order CSV.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        /// `dataco`, `clean`, or a schema file.
        #[arg(long, default_value = "dataco")]
        schema: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the supply graph from an ingested order table.
    Graph(GraphArgs),
    /// Cut labelled, split, standardized snapshots.
    Snapshots(SnapshotArgs),
    /// Train one seed.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        variant: Option<Ablation>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV of loss and validation AUC.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitTag,
        /// Decision threshold; calibrated on validation when omitted.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train all seeds of one or more variants.
    Ablate {
        /// full, A1, A2 or A3; repeatable. Defaults to all four.
        #[arg(long)]
        variant: Vec<Ablation>,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine variant reports found in a directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
    /// Export the attention risk graph of a checkpoint.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json")]
        format: RiskFormat,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitTag,
        #[arg(long, default_value = "receiver", value_parser = parse_attribution)]
        attribution: Attribution,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Run every stage from one config, with cached intermediates.
    #[command(name = "end-to-end")]
    EndToEnd {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "paper")]
        preset: String,
        /// Overrides the config's CSV input.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a synthetic order CSV in the clean schema.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct GraphArgs {
    #[command(subcommand)]
    stats: Option<GraphStatsCmd>,
    #[arg(long)]
    orders: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dot: Option<PathBuf>,
    #[arg(long)]
    graphml: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GraphStatsCmd {
    /// Node, edge, lane and degree counts.
    Stats {
        #[arg(long, default_value = "graph.json")]
        graph: PathBuf,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct SnapshotArgs {
    #[command(subcommand)]
    stats: Option<SnapshotStatsCmd>,
    #[arg(long)]
    orders: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value_t = 14)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 14)]
    horizon: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SnapshotStatsCmd {
    /// Split sizes and positive rates.
    Stats {
        #[arg(long, default_value = "bundle.bin")]
        bundle: PathBuf,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print a preset as TOML.
    Dump {
        #[arg(long, default_value = "paper")]
        preset: String,
    },
}

fn parse_split(s: &str) -> std::result::Result<SplitTag, String> {
    SplitTag::parse(s).ok_or_else(|| format!("unknown split {s:?} (train, val, test)"))
}

fn parse_attribution(s: &str) -> std::result::Result<Attribution, String> {
    match s {
        "receiver" => Ok(Attribution::Receiver),
        "sender" => Ok(Attribution::Sender),
        other => Err(format!("unknown attribution {other:?} (receiver, sender)")),
    }
}

/// Result of a command: human text plus the JSON form.
struct Output {
    text: String,
    json: serde_json::Value,
}

impl Output {
    fn new(text: impl Into<String>, value: impl Serialize) -> Result<Self> {
        Ok(Output {
            text: text.into(),
            json: serde_json::to_value(value)?,
        })
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Leakage => 4,
        ErrorClass::Numeric => 5,
        ErrorClass::Io => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    let precision = match cli.precision.as_deref() {
        Some("64") => Some(Precision::F64),
        Some(_) => Some(Precision::F32),
        None => None,
    };
    match run(cli.command, precision) {
        Ok(out) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("json value"));
            } else if !out.text.is_empty() {
                println!("{}", out.text.trim_end());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(e.class());
            if cli.json {
                let v = serde_json::json!({ "error": e.to_string(), "exit_code": code });
                println!("{v}");
            }
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::paper()),
    }
}

fn precision_for(flag: Option<Precision>, cfg: &ExperimentConfig) -> Precision {
    flag.unwrap_or(if cfg.run.precision == 64 { Precision::F64 } else { Precision::F32 })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| EagleError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| EagleError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| EagleError::io(path, e))
}

fn pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn run(command: Command, precision: Option<Precision>) -> Result<Output> {
    match command {
        Command::Ingest { csv, schema, out } => {
            let schema = load_schema(&schema)?;
            let audit = audit_features(&schema, &default_manifest())?;
            let table = parse_orders(read(&csv)?.as_slice(), &schema)?;
            write_table(&table, &out)?;
            write(&out.join("audit.json"), &pretty(&audit)?)?;
            let stats = ingest_stats(&table)?;
            let text = format!(
                "rows {} (dropped {})\ndays {}\norigin regions {}\ndestination regions {}\ndelayed fraction {:.4}",
                stats.rows,
                table.dropped.total(),
                stats.day_span,
                stats.origin_regions,
                stats.dest_regions,
                stats.delayed_fraction
            );
            Output::new(text, serde_json::json!({ "stats": stats, "dropped": table.dropped, "audit": audit }))
        }
        Command::Graph(args) => match args.stats {
            Some(GraphStatsCmd::Stats { graph }) => {
                let stats = SupplyGraph::load(&graph)?.stats();
                let hist: Vec<String> = stats.degree_histogram.iter().map(|(d, c)| format!("{d}:{c}")).collect();
                let text = format!(
                    "nodes {}\ndirected edges {}\nlanes {}\nisolated nodes {}\nmax in-degree {}\nin-degree histogram {}",
                    stats.nodes,
                    stats.directed_edges,
                    stats.lanes,
                    stats.isolated_nodes,
                    stats.max_degree,
                    hist.join(" ")
                );
                Output::new(text, stats)
            }
            None => {
                let orders = args.orders.ok_or_else(|| EagleError::Config("graph: --orders is required".into()))?;
                let out = args.out.ok_or_else(|| EagleError::Config("graph: --out is required".into()))?;
                let graph = SupplyGraph::build(&read_table(&orders)?)?;
                graph.save(&out)?;
                if let Some(p) = args.dot {
                    write(&p, graph.to_dot().as_bytes())?;
                }
                if let Some(p) = args.graphml {
                    write(&p, graph.to_graphml().as_bytes())?;
                }
                let stats = graph.stats();
                Output::new(format!("{} nodes, {} edges -> {}", stats.nodes, stats.directed_edges, out.display()), stats)
            }
        },
        Command::Snapshots(args) => match args.stats {
            Some(SnapshotStatsCmd::Stats { bundle }) => snapshot_stats(&load_bundle(&bundle)?),
            None => {
                let need = |v: Option<PathBuf>, flag: &str| v.ok_or_else(|| EagleError::Config(format!("snapshots: --{flag} is required")));
                let orders = need(args.orders, "orders")?;
                let graph = need(args.graph, "graph")?;
                let out = need(args.out, "out")?;
                let cfg = SnapshotConfig {
                    window: args.window,
                    stride: args.stride,
                    horizon: args.horizon,
                    ..Default::default()
                };
                let bundle = build_bundle(&read_table(&orders)?, &SupplyGraph::load(&graph)?, &cfg)?;
                save_bundle(&bundle, &out)?;
                snapshot_stats(&bundle)
            }
        },
        Command::Train {
            bundle,
            graph,
            config,
            seed,
            variant,
            out,
            history,
        } => {
            let cfg = load_config(config.as_deref())?;
            let bundle = load_bundle(&bundle)?;
            if let Some(g) = graph {
                if SupplyGraph::load(&g)? != bundle.graph {
                    return Err(EagleError::Compatibility("--graph differs from the graph the bundle was built on".into()));
                }
            }
            let model = cfg.model.with_ablation(variant.unwrap_or(cfg.model.ablation));
            match precision_for(precision, &cfg) {
                Precision::F64 => train_cmd::<f64>(&bundle, &cfg, model, seed, &out, history.as_deref()),
                Precision::F32 => train_cmd::<f32>(&bundle, &cfg, model, seed, &out, history.as_deref()),
            }
        }
        Command::Eval {
            ckpt,
            bundle,
            split,
            threshold,
        } => {
            let bytes = read(&ckpt)?;
            let bundle = load_bundle(&bundle)?;
            match checkpoint_precision(&bytes)? {
                Precision::F64 => eval_cmd(&Checkpoint::<f64>::decode(&bytes)?, &bundle, split, threshold),
                Precision::F32 => eval_cmd(&Checkpoint::<f32>::decode(&bytes)?, &bundle, split, threshold),
            }
        }
        Command::Ablate {
            variant,
            bundle,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let bundle = load_bundle(&bundle)?;
            let variants = if variant.is_empty() { Ablation::ALL.to_vec() } else { variant };
            match precision_for(precision, &cfg) {
                Precision::F64 => ablate_cmd::<f64>(&bundle, &cfg, &variants, &out),
                Precision::F32 => ablate_cmd::<f32>(&bundle, &cfg, &variants, &out),
            }
        }
        Command::Report { runs, out, markdown } => {
            let mut reports = Vec::new();
            let dir = std::fs::read_dir(&runs).map_err(|e| EagleError::io(&runs, e))?;
            let mut paths: Vec<PathBuf> = dir.filter_map(|e| e.ok().map(|e| e.path())).collect();
            paths.sort();
            for p in paths.iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
                if let Ok(r) = serde_json::from_slice::<MetricsReport>(&read(p)?) {
                    reports.push(r);
                }
            }
            if reports.is_empty() {
                return Err(EagleError::EmptyInput(format!("no variant reports in {}", runs.display())));
            }
            let combined = CombinedReport::new(reports);
            write(&out, &combined.to_json()?)?;
            let md = combined.to_markdown();
            if let Some(p) = markdown {
                write(&p, md.as_bytes())?;
            }
            Output::new(md, &combined)
        }
        Command::Explain {
            ckpt,
            bundle,
            out,
            format,
            split,
            attribution,
            top,
        } => {
            let bytes = read(&ckpt)?;
            let bundle = load_bundle(&bundle)?;
            match checkpoint_precision(&bytes)? {
                Precision::F64 => explain_cmd(&Checkpoint::<f64>::decode(&bytes)?, &bundle, &out, format, split, attribution, top),
                Precision::F32 => explain_cmd(&Checkpoint::<f32>::decode(&bytes)?, &bundle, &out, format, split, attribution, top),
            }
        }
        Command::EndToEnd { config, preset, csv, out } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::preset(&preset)?,
            };
            if let Some(path) = csv {
                cfg.data.source = eagle_core::pipeline::DataSource::Csv;
                cfg.data.path = Some(path);
            }
            if let Some(p) = precision {
                cfg.run.precision = p.bits();
            }
            let cache = StageCache::resolve(&out);
            let result = end_to_end(&cfg, &out, &cache)?;
            let mut text = result.report.to_markdown();
            if let Some(risk) = &result.risk {
                text.push_str("\nhighest-risk nodes:\n");
                for n in risk.top(5) {
                    text.push_str(&format!("  {} {:.4}\n", n.label, n.normalized));
                }
            }
            text.push_str(&format!(
                "\n{} stages from cache, {} computed; outputs in {}",
                result.manifest.cache_hits,
                result.manifest.cache_misses,
                out.display()
            ));
            Output::new(text, serde_json::json!({ "report": result.report, "manifest": result.manifest }))
        }
        Command::Synth { config, seed, out } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::smoke(),
            };
            let seed = seed.unwrap_or(cfg.data.seed);
            let table = generate_synthetic(&cfg.synthetic, seed)?;
            write(&out, &table_to_csv(&table)?)?;
            Output::new(
                format!("{} orders over {} days -> {}", table.len(), table.day_span(), out.display()),
                serde_json::json!({ "rows": table.len(), "days": table.day_span(), "seed": seed }),
            )
        }
        Command::Config {
            action: ConfigAction::Dump { preset },
        } => {
            let cfg = ExperimentConfig::preset(&preset)?;
            let toml = cfg.to_toml()?;
            Output::new(toml, &cfg)
        }
    }
}

fn snapshot_stats(bundle: &SplitBundle) -> Result<Output> {
    let mut text = format!("nodes {}\n", bundle.n_nodes);
    let mut rows = Vec::new();
    for tag in SplitTag::ALL {
        let c = bundle.counts.get(tag);
        text.push_str(&format!(
            "{:<5} snapshots {:>5}  positives {:>6}  negatives {:>7}  positive rate {:.4}\n",
            tag.as_str(),
            c.snapshots,
            c.positives,
            c.negatives,
            c.positive_rate()
        ));
        rows.push(serde_json::json!({
            "split": tag.as_str(),
            "snapshots": c.snapshots,
            "positives": c.positives,
            "negatives": c.negatives,
            "positive_rate": c.positive_rate(),
        }));
    }
    let cold = bundle.cold_start_nodes();
    text.push_str(&format!("cold-start nodes {cold} of {}", bundle.n_nodes));
    Output::new(text, serde_json::json!({ "nodes": bundle.n_nodes, "splits": rows, "cold_start_nodes": cold }))
}

fn train_cmd<T: Real>(
    bundle: &SplitBundle,
    cfg: &ExperimentConfig,
    model: eagle_core::model::ModelConfig,
    seed: u64,
    out: &Path,
    history: Option<&Path>,
) -> Result<Output> {
    let graph = GraphInput::from_graph(&bundle.graph)?;
    let outcome = train::<T>(bundle, &graph, &model, &cfg.train, seed)?;
    let bytes = outcome.checkpoint.encode()?;
    write(out, &bytes)?;
    if let Some(h) = history {
        write(h, history_csv(&outcome.history).as_bytes())?;
    }
    let digest = sha256_hex(&bytes);
    let ck = &outcome.checkpoint;
    let text = format!(
        "seed {seed}: best epoch {} (val AUC {:.4}), {} epochs\ncheckpoint {} sha256 {digest}",
        ck.best_epoch,
        ck.best_val_auc,
        outcome.history.len(),
        out.display()
    );
    Output::new(
        text,
        serde_json::json!({
            "seed": seed,
            "variant": model.ablation,
            "best_epoch": ck.best_epoch,
            "best_val_auc": ck.best_val_auc,
            "history": outcome.history,
            "checkpoint": out,
            "sha256": digest,
        }),
    )
}

fn eval_cmd<T: Real>(ckpt: &Checkpoint<T>, bundle: &SplitBundle, split: SplitTag, threshold: Option<f64>) -> Result<Output> {
    let graph = GraphInput::from_graph(&bundle.graph)?;
    let theta = match threshold {
        Some(t) => t,
        None => {
            let val = ckpt.predict_split(bundle, &graph, SplitTag::Val)?;
            calibrate_threshold(&val.scores(), &val.labels())?
        }
    };
    let preds = ckpt.predict_split(bundle, &graph, split)?;
    let delays = preds.delays();
    let m = evaluate(&preds.scores(), &preds.labels(), delays.as_deref(), &preds.targets(), theta)?;
    let auc = m.auc.map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
    let text = format!(
        "{} split: {} node-windows, {} positive\nmacro-F1 {:.4}\nAUC-ROC {auc}\nMAE {:.4} (zero baseline {:.4})\nthreshold {:.4}",
        split.as_str(),
        m.rows,
        m.positives,
        m.f1_macro,
        m.mae,
        m.zero_baseline_mae,
        m.threshold
    );
    Output::new(text, serde_json::json!({ "split": split.as_str(), "variant": ckpt.model.ablation, "metrics": m }))
}

fn ablate_cmd<T: Real>(bundle: &SplitBundle, cfg: &ExperimentConfig, variants: &[Ablation], out: &Path) -> Result<Output> {
    let graph = GraphInput::from_graph(&bundle.graph)?;
    let mut reports = Vec::new();
    for &v in variants {
        let outcome = run_ablation::<T>(bundle, &graph, &cfg.model, &cfg.train, v).map_err(|e| e.in_stage(v.as_str()))?;
        for run in &outcome.runs {
            let tag = format!("{}-seed{}", v.as_str(), run.report.seed);
            write(&out.join("checkpoints").join(format!("{tag}.ckpt")), &run.checkpoint.encode()?)?;
            write(&out.join("history").join(format!("{tag}.csv")), history_csv(&run.history).as_bytes())?;
        }
        write(&out.join(format!("{}.json", v.as_str())), &outcome.report.to_json()?)?;
        reports.push(outcome.report);
    }
    let combined = CombinedReport::new(reports);
    Output::new(combined.to_markdown(), &combined)
}

fn explain_cmd<T: Real>(
    ckpt: &Checkpoint<T>,
    bundle: &SplitBundle,
    out: &Path,
    format: RiskFormat,
    split: SplitTag,
    attribution: Attribution,
    top: usize,
) -> Result<Output> {
    let graph = GraphInput::from_graph(&bundle.graph)?;
    let risk = aggregate_risk(ckpt, bundle, &graph, split, attribution)?;
    export_risk(&risk, format, out)?;
    let ranked = risk.top(top);
    let mut text = format!("risk over {} {} snapshots -> {}\n", risk.snapshots, split.as_str(), out.display());
    for n in &ranked {
        text.push_str(&format!("  {:<24} {:.4}\n", n.label, n.normalized));
    }
    Output::new(text, serde_json::json!({ "out": out, "top": ranked }))
}
