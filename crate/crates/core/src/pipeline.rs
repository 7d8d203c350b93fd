//! One-config pipeline runs with a content-addressed stage cache.
//!
//! Every stage output is stored under `<cache>/<stage>/<key>/`, where the key
//! is a digest of the stage inputs (upstream artifact digests plus the
//! relevant config sections). An `entry.json` beside the files records each
//! file's digest and is checked on every cache hit.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::experiment::{aggregate_report, history_csv, score_checkpoint, CombinedReport, MetricsReport};
use crate::explain::{aggregate_risk, Attribution, RiskFormat, RiskGraph};
use crate::graph::SupplyGraph;
use crate::ingest::{audit_features, default_manifest, parse_orders, read_table, table_files, AuditReport, OrderTable, SchemaConfig};
use crate::model::{Ablation, GraphInput, ModelConfig};
use crate::snapshots::{
    build_bundle, decode_bundle, encode_bundle, generate_synthetic, max_feature_label_correlation, SnapshotConfig,
    SplitBundle, SplitTag, SyntheticConfig,
};
use crate::train::{train, Checkpoint, EpochRecord, TrainConfig};
use crate::util::{read_file, sha256_hex, write_file};
use crate::{EagleError, Real, Result};

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "EAGLE_CACHE_DIR";

const CACHE_FORMAT: &str = "eagle-cache-1";
const ENTRY_FILE: &str = "entry.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv,
    #[default]
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// CSV path, used when `source = "csv"`.
    pub path: Option<PathBuf>,
    /// `dataco`, `clean`, or a path to a TOML/JSON schema file.
    pub schema: String,
    /// Generator seed for synthetic data.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            schema: "clean".into(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub variants: Vec<Ablation>,
    /// 32 or 64.
    pub precision: u32,
    pub explain: bool,
    pub attribution: Attribution,
    pub formats: Vec<RiskFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variants: vec![Ablation::Full],
            precision: 32,
            explain: true,
            attribution: Attribution::Receiver,
            formats: vec![RiskFormat::Json],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub snapshots: SnapshotConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Full experiment on the public DataCo export: four seeds, all variants.
    pub fn paper() -> Self {
        ExperimentConfig {
            data: DataConfig {
                source: DataSource::Csv,
                path: Some(PathBuf::from("DataCoSupplyChainDataset.csv")),
                schema: "dataco".into(),
                seed: 0,
            },
            run: RunConfig {
                variants: vec![Ablation::Full, Ablation::A1NoTemporal, Ablation::A2NoEdge, Ablation::A3SingleTask],
                precision: 32,
                explain: true,
                attribution: Attribution::Receiver,
                formats: vec![RiskFormat::Json, RiskFormat::Dot, RiskFormat::Graphml],
            },
            ..Default::default()
        }
    }

    /// Small synthetic run that finishes in well under a minute.
    pub fn smoke() -> Self {
        let mut synthetic = SyntheticConfig::default();
        synthetic.hub_risk_map.insert(SyntheticConfig::region_name(0), 3.0);
        ExperimentConfig {
            data: DataConfig::default(),
            synthetic,
            snapshots: SnapshotConfig::default(),
            model: ModelConfig {
                d_model: 16,
                encoder_layers: 1,
                gat_layers: 1,
                gat_heads: 2,
                head_hidden: 8,
                ..Default::default()
            },
            train: TrainConfig {
                lr: 1e-3,
                epochs: 2,
                early_stop_patience: 2,
                seeds: vec![0, 1],
                ..Default::default()
            },
            run: RunConfig {
                variants: vec![Ablation::Full, Ablation::A1NoTemporal, Ablation::A2NoEdge, Ablation::A3SingleTask],
                ..Default::default()
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "smoke" => Ok(Self::smoke()),
            other => Err(EagleError::Config(format!("unknown preset {other:?} (paper, smoke)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| EagleError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| EagleError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_toml(&String::from_utf8_lossy(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return Err(EagleError::Config("data.path is required for csv input".into()));
        }
        if self.data.source == DataSource::Synthetic {
            self.synthetic.validate()?;
        }
        self.snapshots.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.run.variants.is_empty() {
            return Err(EagleError::Config("run.variants is empty".into()));
        }
        if !matches!(self.run.precision, 32 | 64) {
            return Err(EagleError::Config(format!("run.precision must be 32 or 64, got {}", self.run.precision)));
        }
        Ok(())
    }

    /// Digest of the canonical serialization.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

/// `dataco` and `clean` name the built-in schemas; anything else is read as
/// a TOML (`.toml`) or JSON file.
pub fn load_schema(spec: &str) -> Result<SchemaConfig> {
    let schema = match spec {
        "dataco" => SchemaConfig::dataco(),
        "clean" => SchemaConfig::clean(),
        path => {
            let path = Path::new(path);
            let bytes = read_file(path)?;
            if path.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&String::from_utf8_lossy(&bytes)).map_err(|e| EagleError::Config(e.to_string()))?
            } else {
                serde_json::from_slice(&bytes)?
            }
        }
    };
    schema.validate()?;
    Ok(schema)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub stage: String,
    pub key: String,
    pub format: String,
    pub files: Vec<FileDigest>,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Provenance of one end-to-end run. Reports themselves carry no timings,
/// so reruns reproduce them byte for byte; timings live here only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<ArtifactRecord>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<StageTiming>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    format: String,
    stage: String,
    key: String,
    files: Vec<FileDigest>,
}

/// Digest-keyed store of stage outputs.
#[derive(Debug, Clone)]
pub struct StageCache {
    root: PathBuf,
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StageCache { root: root.into() }
    }

    /// `$EAGLE_CACHE_DIR` if set, else `<out_dir>/.cache`.
    pub fn resolve(out_dir: &Path) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(PathBuf::from(dir)),
            _ => Self::new(out_dir.join(".cache")),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(stage: &str, parts: &[&str]) -> String {
        let mut material = format!("{CACHE_FORMAT}\n{}\n{stage}", env!("CARGO_PKG_VERSION"));
        for p in parts {
            material.push('\n');
            material.push_str(p);
        }
        sha256_hex(material.as_bytes())
    }

    fn dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(key)
    }

    /// Verified files of a cached stage output, or `None` on a miss.
    pub fn lookup(&self, stage: &str, key: &str) -> Result<Option<Vec<(FileDigest, Vec<u8>)>>> {
        let dir = self.dir(stage, key);
        let entry_path = dir.join(ENTRY_FILE);
        if !entry_path.exists() {
            return Ok(None);
        }
        let entry: CacheEntry = serde_json::from_slice(&read_file(&entry_path)?)?;
        if entry.format != CACHE_FORMAT || entry.key != key {
            return Err(EagleError::Format(format!("{}: foreign cache entry", entry_path.display())));
        }
        let mut out = Vec::with_capacity(entry.files.len());
        for f in entry.files {
            let path = dir.join(&f.path);
            let artifact = format!("{stage}/{}", f.path);
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(_) => {
                    return Err(EagleError::DigestMismatch {
                        artifact,
                        expected: f.sha256,
                        found: "missing file".into(),
                    })
                }
            };
            let found = sha256_hex(&bytes);
            if found != f.sha256 {
                return Err(EagleError::DigestMismatch {
                    artifact,
                    expected: f.sha256,
                    found,
                });
            }
            out.push((f, bytes));
        }
        Ok(Some(out))
    }

    pub fn store(&self, stage: &str, key: &str, files: &[(String, Vec<u8>)]) -> Result<Vec<FileDigest>> {
        let dir = self.dir(stage, key);
        let mut digests = Vec::with_capacity(files.len());
        for (name, bytes) in files {
            write_file(&dir.join(name), bytes)?;
            digests.push(FileDigest {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        // Written last: a partial store is a miss, never a bad hit.
        let entry = CacheEntry {
            format: CACHE_FORMAT.into(),
            stage: stage.into(),
            key: key.into(),
            files: digests.clone(),
        };
        write_file(&dir.join(ENTRY_FILE), &serde_json::to_vec_pretty(&entry)?)?;
        Ok(digests)
    }

    /// Path of a cached file, for error messages and tests.
    pub fn file_path(&self, stage: &str, key: &str, name: &str) -> PathBuf {
        self.dir(stage, key).join(name)
    }
}

/// Everything an end-to-end run produced.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub report: CombinedReport,
    pub risk: Option<RiskGraph>,
    pub audit: AuditReport,
    pub manifest: RunManifest,
}

struct Recorder {
    cache: StageCache,
    artifacts: Vec<ArtifactRecord>,
    timings: Vec<StageTiming>,
}

impl Recorder {
    fn record(&mut self, stage: &str, key: &str, format: &str, files: Vec<FileDigest>, hit: bool) {
        self.artifacts.push(ArtifactRecord {
            stage: stage.into(),
            key: key.into(),
            format: format.into(),
            files,
            cache_hit: hit,
        });
    }

    fn time(&mut self, stage: &str, started: Instant) {
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }
}

fn combined_digest(files: &[FileDigest]) -> String {
    let joined: Vec<String> = files.iter().map(|f| format!("{}={}", f.path, f.sha256)).collect();
    sha256_hex(joined.join("\n").as_bytes())
}

fn owned(files: Vec<(&'static str, Vec<u8>)>) -> Vec<(String, Vec<u8>)> {
    files.into_iter().map(|(n, b)| (n.to_string(), b)).collect()
}

fn load_input(cfg: &ExperimentConfig) -> Result<(FileDigest, Option<Vec<u8>>)> {
    match cfg.data.source {
        DataSource::Csv => {
            let path = cfg.data.path.as_ref().expect("validated");
            let bytes = read_file(path)?;
            let digest = FileDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            };
            Ok((digest, Some(bytes)))
        }
        DataSource::Synthetic => {
            let material = serde_json::to_string(&(&cfg.synthetic, cfg.data.seed))?;
            let digest = FileDigest {
                path: format!("synthetic:seed={}", cfg.data.seed),
                sha256: sha256_hex(material.as_bytes()),
            };
            Ok((digest, None))
        }
    }
}

fn ingest_stage(rec: &mut Recorder, cfg: &ExperimentConfig, schema: &SchemaConfig, input: &FileDigest, raw: Option<Vec<u8>>) -> Result<(OrderTable, String)> {
    const STAGE: &str = "ingest";
    let started = Instant::now();
    let schema_json = serde_json::to_string(schema)?;
    let key = StageCache::key(STAGE, &[&input.sha256, &schema_json]);
    if let Some(files) = rec.cache.lookup(STAGE, &key)? {
        let digests: Vec<FileDigest> = files.iter().map(|f| f.0.clone()).collect();
        let table = read_table(&rec.cache.dir(STAGE, &key))?;
        let digest = combined_digest(&digests);
        rec.record(STAGE, &key, "order-table", digests, true);
        rec.time(STAGE, started);
        return Ok((table, digest));
    }
    let table = match raw {
        Some(bytes) => parse_orders(bytes.as_slice(), schema)?,
        None => generate_synthetic(&cfg.synthetic, cfg.data.seed)?,
    };
    let digests = rec.cache.store(STAGE, &key, &owned(table_files(&table)?))?;
    // Re-read so a cold run sees exactly what a warm run would.
    let table = read_table(&rec.cache.dir(STAGE, &key))?;
    let digest = combined_digest(&digests);
    rec.record(STAGE, &key, "order-table", digests, false);
    rec.time(STAGE, started);
    Ok((table, digest))
}

fn graph_stage(rec: &mut Recorder, table: &OrderTable, table_digest: &str) -> Result<(SupplyGraph, String)> {
    const STAGE: &str = "graph";
    const FILE: &str = "graph.json";
    let started = Instant::now();
    let key = StageCache::key(STAGE, &[table_digest]);
    let (bytes, digests, hit) = match rec.cache.lookup(STAGE, &key)? {
        Some(mut files) => {
            let (d, b) = files.remove(0);
            (b, vec![d], true)
        }
        None => {
            let bytes = SupplyGraph::build(table)?.to_json()?;
            let digests = rec.cache.store(STAGE, &key, &[(FILE.to_string(), bytes.clone())])?;
            (bytes, digests, false)
        }
    };
    let graph: SupplyGraph = serde_json::from_slice(&bytes)?;
    graph.validate()?;
    let digest = digests[0].sha256.clone();
    rec.record(STAGE, &key, "graph-json", digests, hit);
    rec.time(STAGE, started);
    Ok((graph, digest))
}

fn snapshot_stage(
    rec: &mut Recorder,
    cfg: &SnapshotConfig,
    table: &OrderTable,
    table_digest: &str,
    graph: &SupplyGraph,
    graph_digest: &str,
) -> Result<(SplitBundle, String)> {
    const STAGE: &str = "snapshots";
    const FILE: &str = "bundle.bin";
    let started = Instant::now();
    let cfg_json = serde_json::to_string(cfg)?;
    let key = StageCache::key(STAGE, &[table_digest, graph_digest, &cfg_json]);
    let (bytes, digests, hit) = match rec.cache.lookup(STAGE, &key)? {
        Some(mut files) => {
            let (d, b) = files.remove(0);
            (b, vec![d], true)
        }
        None => {
            let bytes = encode_bundle(&build_bundle(table, graph, cfg)?)?;
            let digests = rec.cache.store(STAGE, &key, &[(FILE.to_string(), bytes.clone())])?;
            (bytes, digests, false)
        }
    };
    let bundle = decode_bundle(&bytes)?;
    let digest = digests[0].sha256.clone();
    rec.record(STAGE, &key, "split-bundle", digests, hit);
    rec.time(STAGE, started);
    Ok((bundle, digest))
}

const CKPT_FILE: &str = "model.ckpt";
const HISTORY_FILE: &str = "history.json";

struct TrainedSeed<T> {
    checkpoint: Checkpoint<T>,
    history: Vec<EpochRecord>,
    ckpt_bytes: Vec<u8>,
}

fn train_stage<T: Real>(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    variant: Ablation,
    bundle: &SplitBundle,
    bundle_digest: &str,
    graph: &GraphInput,
) -> Result<Vec<TrainedSeed<T>>> {
    let stage = format!("train-{}", variant.as_str());
    let started = Instant::now();
    let model_cfg = cfg.model.with_ablation(variant);
    let model_json = serde_json::to_string(&model_cfg)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seeds.clear();
    let train_json = serde_json::to_string(&train_cfg)?;
    let bits = T::PRECISION.bits().to_string();
    let keys: Vec<String> = cfg
        .train
        .seeds
        .iter()
        .map(|s| StageCache::key("train", &[bundle_digest, &model_json, &train_json, &bits, &s.to_string()]))
        .collect();

    let mut cached: Vec<Option<Vec<(FileDigest, Vec<u8>)>>> = Vec::with_capacity(keys.len());
    for key in &keys {
        cached.push(rec.cache.lookup("train", key)?);
    }
    let missing: Vec<usize> = (0..keys.len()).filter(|&i| cached[i].is_none()).collect();
    let fresh: Vec<(usize, Vec<(String, Vec<u8>)>)> = missing
        .par_iter()
        .map(|&i| {
            let seed = cfg.train.seeds[i];
            let out = train::<T>(bundle, graph, &model_cfg, &cfg.train, seed).map_err(|e| e.in_stage(&format!("seed {seed}")))?;
            let files = vec![
                (CKPT_FILE.to_string(), out.checkpoint.encode()?),
                (HISTORY_FILE.to_string(), serde_json::to_vec(&out.history)?),
            ];
            Ok((i, files))
        })
        .collect::<Result<_>>()?;
    for (i, files) in fresh {
        let digests = rec.cache.store("train", &keys[i], &files)?;
        cached[i] = Some(digests.into_iter().zip(files.into_iter().map(|f| f.1)).collect());
    }

    let mut out = Vec::with_capacity(keys.len());
    for (i, files) in cached.into_iter().enumerate() {
        let files = files.expect("filled above");
        let find = |name: &str| {
            files
                .iter()
                .find(|f| f.0.path == name)
                .map(|f| f.1.clone())
                .ok_or_else(|| EagleError::Format(format!("train/{}: missing {name}", keys[i])))
        };
        let ckpt_bytes = find(CKPT_FILE)?;
        let history: Vec<EpochRecord> = serde_json::from_slice(&find(HISTORY_FILE)?)?;
        let checkpoint = Checkpoint::<T>::decode(&ckpt_bytes)?;
        let digests = files.iter().map(|f| f.0.clone()).collect();
        rec.record(&format!("{stage}/seed{}", cfg.train.seeds[i]), &keys[i], "checkpoint", digests, !missing.contains(&i));
        out.push(TrainedSeed {
            checkpoint,
            history,
            ckpt_bytes,
        });
    }
    rec.time(&stage, started);
    Ok(out)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.dir.join(rel), bytes)?;
        self.files.push(FileDigest {
            path: rel.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }
}

fn run_models<T: Real>(
    rec: &mut Recorder,
    outputs: &mut Outputs,
    cfg: &ExperimentConfig,
    bundle: &SplitBundle,
    bundle_digest: &str,
) -> Result<(CombinedReport, Option<RiskGraph>)> {
    let graph = GraphInput::from_graph(&bundle.graph)?;
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut risk = None;
    for &variant in &cfg.run.variants {
        let stage = format!("train-{}", variant.as_str());
        let seeds = train_stage::<T>(rec, cfg, variant, bundle, bundle_digest, &graph).map_err(|e| e.in_stage(&stage))?;
        let started = Instant::now();
        let eval_stage = format!("eval-{}", variant.as_str());
        let mut pairs = Vec::with_capacity(seeds.len());
        for s in &seeds {
            let pair = score_checkpoint(&s.checkpoint, bundle, &graph, s.history.len()).map_err(|e| e.in_stage(&eval_stage))?;
            let tag = format!("{}-seed{}", variant.as_str(), s.checkpoint.seed);
            outputs.write(&format!("checkpoints/{tag}.ckpt"), &s.ckpt_bytes)?;
            outputs.write(&format!("history/{tag}.csv"), history_csv(&s.history).as_bytes())?;
            pairs.push(pair);
        }
        let report = aggregate_report(variant, T::PRECISION.bits(), bundle.n_nodes, &pairs).map_err(|e| e.in_stage(&eval_stage))?;
        outputs.write(&format!("reports/{}.json", variant.as_str()), &report.to_json()?)?;
        reports.push(report);
        rec.time(&eval_stage, started);

        let explain_variant = if cfg.run.variants.contains(&Ablation::Full) {
            Ablation::Full
        } else {
            cfg.run.variants[0]
        };
        if cfg.run.explain && variant == explain_variant {
            let started = Instant::now();
            let r = aggregate_risk(&seeds[0].checkpoint, bundle, &graph, SplitTag::Test, cfg.run.attribution)
                .map_err(|e| e.in_stage("explain"))?;
            for &format in &cfg.run.formats {
                outputs.write(&format!("risk.{}", format.extension()), &r.render(format)?)?;
            }
            risk = Some(r);
            rec.time("explain", started);
        }
    }
    Ok((CombinedReport::new(reports), risk))
}

/// Runs every stage, serving unchanged stages from `cache`, and writes the
/// reports, risk graph and `manifest.json` into `out_dir`.
pub fn end_to_end(cfg: &ExperimentConfig, out_dir: &Path, cache: &StageCache) -> Result<EndToEnd> {
    cfg.validate()?;
    let mut rec = Recorder {
        cache: cache.clone(),
        artifacts: Vec::new(),
        timings: Vec::new(),
    };
    let mut outputs = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };

    let schema = load_schema(&cfg.data.schema).map_err(|e| e.in_stage("ingest"))?;
    let mut audit = audit_features(&schema, &default_manifest()).map_err(|e| e.in_stage("ingest"))?;
    let (input, raw) = load_input(cfg).map_err(|e| e.in_stage("ingest"))?;
    let (table, table_digest) = ingest_stage(&mut rec, cfg, &schema, &input, raw).map_err(|e| e.in_stage("ingest"))?;
    let (graph, graph_digest) = graph_stage(&mut rec, &table, &table_digest).map_err(|e| e.in_stage("graph"))?;
    let (bundle, bundle_digest) =
        snapshot_stage(&mut rec, &cfg.snapshots, &table, &table_digest, &graph, &graph_digest).map_err(|e| e.in_stage("snapshots"))?;
    drop(table);

    audit.max_abs_correlation = Some(max_feature_label_correlation(&bundle));
    let mut audit_json = serde_json::to_vec_pretty(&audit)?;
    audit_json.push(b'\n');
    outputs.write("audit.json", &audit_json)?;

    let (report, risk) = match cfg.run.precision {
        64 => run_models::<f64>(&mut rec, &mut outputs, cfg, &bundle, &bundle_digest)?,
        _ => run_models::<f32>(&mut rec, &mut outputs, cfg, &bundle, &bundle_digest)?,
    };
    outputs.write("report.json", &report.to_json()?)?;
    outputs.write("report.md", report.to_markdown().as_bytes())?;

    let cache_hits = rec.artifacts.iter().filter(|a| a.cache_hit).count();
    let manifest = RunManifest {
        config_hash: cfg.digest()?,
        inputs: vec![input],
        cache_misses: rec.artifacts.len() - cache_hits,
        artifacts: rec.artifacts,
        seeds: cfg.train.seeds.clone(),
        outputs: outputs.files,
        timings: rec.timings,
        cache_hits,
    };
    write_file(&out_dir.join("manifest.json"), &manifest.to_json()?)?;
    Ok(EndToEnd {
        report,
        risk,
        audit,
        manifest,
    })
}
