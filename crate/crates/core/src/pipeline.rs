//! End-to-end steps behind the `flowloss` binary: generate a database and a
//! workload, label it, train, evaluate and run sensitivity sweeps.
//!
//! Every step writes into its own output directory and finishes with a
//! `manifest.json` holding the config echo, seeds and sha256 hashes of every
//! input and output file. Nothing time-dependent is recorded, so reruns with
//! equal manifests produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost_model::{CardinalityVector, CostParams};
use crate::error::{Error, Result};
use crate::estimator::{
    self, evaluate_vectors, fmt_f, MetricsReport, Model, QuerySample, TrainConfig,
};
use crate::featurize::{FeatureConfig, FeatureSchema, Featurizer};
use crate::flow_loss::{sensitivity_grid, sensitivity_sweep};
use crate::join_model::{Alias, JoinEdge, JoinGraph, Query, SubPlan, DEFAULT_ALIAS_CAP};
use crate::plan_graph::{NodeId, PlanGraph};
use crate::synthdb::{
    generate_db, label_workload, load_db, read_records, write_db, write_records, Database, LabelConfig,
    LabelMode, LabelSource, Labels, SchemaSpec,
};
use crate::workload::{generate_workload, split_workload, SplitMode, Template, TemplateSpec, Workload};

pub const MANIFEST: &str = "manifest.json";
pub const WORKLOAD_FILE: &str = "workload.json";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const EFFORT_FILE: &str = "effort.json";
pub const MODEL_FILE: &str = "model.json";
pub const FEATURES_FILE: &str = "features.json";
pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_QUERY_FILE: &str = "per_query.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const METRICS_HEADER: [&str; 13] = [
    "estimator",
    "queries",
    "subplans",
    "qerror_p50",
    "qerror_p90",
    "qerror_p99",
    "p_cost_mean",
    "p_cost_p90",
    "p_cost_p99",
    "subopt_mean",
    "subopt_p90",
    "subopt_p99",
    "flow_loss_mean",
];
pub const PER_QUERY_HEADER: [&str; 6] = ["estimator", "query_id", "p_cost", "optimal_cost", "subopt", "flow_loss_ratio"];
pub const SWEEP_HEADER: [&str; 5] = ["node", "factor", "q_error", "flow_loss", "p_cost"];
pub const GRID_HEADER: [&str; 7] = ["node_a", "node_b", "factor_a", "factor_b", "q_error", "flow_loss", "p_cost"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<ArtifactHash>,
    pub outputs: Vec<ArtifactHash>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Hashes a file, or every file directly inside a directory.
fn hash_inputs(paths: &[&Path]) -> Result<Vec<ArtifactHash>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for f in sorted_files(p)? {
                out.push(ArtifactHash { path: p.join(&f).display().to_string(), sha256: sha256_file(&p.join(&f))? });
            }
        } else {
            out.push(ArtifactHash { path: p.display().to_string(), sha256: sha256_file(p)? });
        }
    }
    Ok(out)
}

fn sorted_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Writes `manifest.json` into `out` listing every other file already there.
pub fn write_manifest(
    out: &Path,
    subcommand: &str,
    config: &impl Serialize,
    seeds: &[u64],
    inputs: &[&Path],
) -> Result<RunManifest> {
    let outputs = sorted_files(out)?
        .into_iter()
        .filter(|f| f != MANIFEST)
        .map(|f| Ok(ArtifactHash { sha256: sha256_file(&out.join(&f))?, path: f }))
        .collect::<Result<_>>()?;
    let m = RunManifest {
        subcommand: subcommand.to_string(),
        config: serde_json::to_value(config)?,
        seeds: seeds.to_vec(),
        inputs: hash_inputs(inputs)?,
        outputs,
    };
    fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(m)
}

/// `path` itself if it is a file, `path/default` if it is a directory.
pub fn resolve(path: &Path, default: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default)
    } else {
        path.to_path_buf()
    }
}

pub fn gen_db(spec_path: &Path, seed: u64, out: &Path) -> Result<RunManifest> {
    let spec = SchemaSpec::from_json(&fs::read_to_string(spec_path)?)?;
    let db = generate_db(&spec, seed)?;
    write_db(&db, out)?;
    write_manifest(out, "gen-db", &spec, &[seed], &[spec_path])
}

#[derive(Debug, Clone, Serialize)]
struct GenWorkloadEcho<'a> {
    templates: Vec<String>,
    queries_per_template: usize,
    splits: &'a [SplitMode],
}

/// Generates `n` queries per template and stores every split in `modes`
/// computed with `seed`.
pub fn gen_workload(
    db_dir: &Path,
    templates: &[PathBuf],
    n: usize,
    seed: u64,
    modes: &[SplitMode],
    out: &Path,
) -> Result<RunManifest> {
    let db = load_db(db_dir)?;
    let compiled = templates
        .iter()
        .map(|p| Template::compile(TemplateSpec::load(p)?, &db))
        .collect::<Result<Vec<_>>>()?;
    let mut w = generate_workload(&db, &compiled, n, seed)?;
    for &m in modes {
        w.splits.push(split_workload(&w, m, seed)?);
    }
    fs::create_dir_all(out)?;
    w.save(&out.join(WORKLOAD_FILE))?;
    let mut inputs: Vec<&Path> = vec![db_dir];
    inputs.extend(templates.iter().map(PathBuf::as_path));
    let echo = GenWorkloadEcho {
        templates: compiled.iter().map(|t| t.name().to_string()).collect(),
        queries_per_template: n,
        splits: modes,
    };
    write_manifest(out, "gen-workload", &echo, &[seed], &inputs)
}

/// Labelling effort summary written next to the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffortReport {
    pub mode: LabelMode,
    pub queries: usize,
    pub subplans: usize,
    pub timeouts: usize,
    /// Rows scanned, index entries built and probed, tuples produced or
    /// walk steps taken.
    pub effort: u64,
}

pub fn label(db_dir: &Path, workload: &Path, cfg: &LabelConfig, out: &Path) -> Result<(RunManifest, EffortReport)> {
    let db = load_db(db_dir)?;
    let wpath = resolve(workload, WORKLOAD_FILE);
    let w = Workload::load(&wpath)?;
    let ds = label_workload(&db, &w.queries, cfg)?;
    fs::create_dir_all(out)?;
    write_records(&out.join(LABELS_FILE), &ds.records)?;
    let report = EffortReport {
        mode: cfg.mode,
        queries: w.queries.len(),
        subplans: ds.records.len(),
        timeouts: ds.records.iter().filter(|r| r.source == LabelSource::TimeoutConstant).count(),
        effort: ds.effort,
    };
    fs::write(out.join(EFFORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    let m = write_manifest(out, "label", cfg, &[cfg.seed], &[db_dir, &wpath])?;
    Ok((m, report))
}

/// Featurizer settings saved with a model so evaluation rebuilds the same
/// feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub schema: FeatureSchema,
    pub config: FeatureConfig,
}

/// Labelled, featurised samples for `queries`, in the given order.
pub fn build_samples(db: &Database, queries: &[&Query], labels: &Labels, fz: &Featurizer) -> Result<Vec<QuerySample>> {
    queries
        .par_iter()
        .map(|q| {
            let pg = PlanGraph::build(q)?;
            let qf = fz.featurize_query(q, &pg, &db.stats)?;
            let y_true = labels.vector(&q.id, &pg)?;
            let dim = fz.dim();
            let mut flat = Vec::with_capacity(qf.rows.len() * dim);
            for r in &qf.rows {
                flat.extend_from_slice(&r.values);
            }
            Ok(QuerySample {
                query_id: q.id.clone(),
                features: nalgebra::DMatrix::from_row_slice(qf.rows.len(), dim, &flat),
                log_upper: qf.log_upper,
                y_true,
                heuristic: qf.heuristic,
                pg,
            })
        })
        .collect()
}

fn find_split(w: &Workload, mode: SplitMode) -> Result<&crate::workload::WorkloadSplit> {
    w.splits
        .iter()
        .find(|s| s.mode == mode)
        .ok_or_else(|| Error::Config(format!("workload has no {mode:?} split; regenerate it with that split")))
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub db: PathBuf,
    pub workload: PathBuf,
    pub labels: PathBuf,
    pub split: SplitMode,
    pub train: TrainConfig,
    pub features: FeatureConfig,
    pub cost: CostParams,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct TrainEcho<'a> {
    split: SplitMode,
    train: &'a TrainConfig,
    features: &'a FeatureConfig,
    cost: &'a CostParams,
}

/// Data shared by training and evaluation.
pub struct Prepared {
    pub db: Database,
    pub workload: Workload,
    pub labels: Labels,
    pub space: FeatureSpace,
}

pub fn prepare(db: &Path, workload: &Path, labels: &Path, features: &FeatureConfig) -> Result<Prepared> {
    let db = load_db(db)?;
    let workload = Workload::load(&resolve(workload, WORKLOAD_FILE))?;
    let labels = Labels::new(&read_records(&resolve(labels, LABELS_FILE))?);
    let schema = FeatureSchema::from_queries(&db.schema, &workload.queries)?;
    Ok(Prepared { db, workload, labels, space: FeatureSpace { schema, config: features.clone() } })
}

impl Prepared {
    pub fn featurizer(&self) -> Result<Featurizer> {
        Featurizer::new(self.space.schema.clone(), self.space.config.clone())
    }

    pub fn samples(&self, ids: &[String], fz: &Featurizer) -> Result<Vec<QuerySample>> {
        build_samples(&self.db, &self.workload.select(ids), &self.labels, fz)
    }
}

pub fn train(args: &TrainArgs) -> Result<RunManifest> {
    args.cost.validate()?;
    let prep = prepare(&args.db, &args.workload, &args.labels, &args.features)?;
    let split = find_split(&prep.workload, args.split)?;
    let fz = prep.featurizer()?;
    let train_set = prep.samples(&split.train, &fz)?;
    let val = prep.samples(&split.val, &fz)?;
    let test = prep.samples(&split.test, &fz)?;
    let (model, curve) = estimator::train(&train_set, &[("val", &val), ("test", &test)], &args.train, &args.cost)?;
    fs::create_dir_all(&args.out)?;
    model.save(&args.out.join(MODEL_FILE))?;
    fs::write(args.out.join(FEATURES_FILE), serde_json::to_string_pretty(&prep.space)? + "\n")?;
    estimator::write_learning_curve(&args.out.join(LEARNING_CURVE_FILE), &curve)?;
    let echo = TrainEcho { split: args.split, train: &args.train, features: &args.features, cost: &args.cost };
    let wpath = resolve(&args.workload, WORKLOAD_FILE);
    let lpath = resolve(&args.labels, LABELS_FILE);
    write_manifest(&args.out, "train", &echo, &[args.train.seed], &[&args.db, &wpath, &lpath])
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub db: PathBuf,
    pub workload: PathBuf,
    pub labels: PathBuf,
    /// Directory written by [`train`].
    pub model: PathBuf,
    pub split: SplitMode,
    /// Partition to score: `train`, `val` or `test`.
    pub partition: String,
    pub cost: CostParams,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct EvalEcho<'a> {
    split: SplitMode,
    partition: &'a str,
    cost: &'a CostParams,
}

/// Scores the model and the `true` and `heuristic` baselines.
pub fn eval(args: &EvalArgs) -> Result<(RunManifest, Vec<(String, MetricsReport)>)> {
    args.cost.validate()?;
    let space: FeatureSpace = serde_json::from_str(&fs::read_to_string(args.model.join(FEATURES_FILE))?)?;
    let model = Model::load(&args.model.join(MODEL_FILE))?;
    let prep = prepare(&args.db, &args.workload, &args.labels, &space.config)?;
    let fz = Featurizer::new(space.schema, space.config)?;
    if fz.dim() != model.input_dim() {
        return Err(Error::Config(format!(
            "model expects {} features, feature space has {}",
            model.input_dim(),
            fz.dim()
        )));
    }
    let split = find_split(&prep.workload, args.split)?;
    let ids = match args.partition.as_str() {
        "train" => &split.train,
        "val" => &split.val,
        "test" => &split.test,
        other => return Err(Error::Config(format!("unknown partition `{other}` (expected train, val or test)"))),
    };
    let samples = prep.samples(ids, &fz)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("partition `{}` is empty", args.partition)));
    }
    let model_name = format!("model_{}", model.config.loss);
    let estimates: Vec<(String, Vec<CardinalityVector>)> = vec![
        (model_name, samples.iter().map(|s| model.estimate(s)).collect()),
        ("true".into(), samples.iter().map(|s| s.y_true.clone()).collect()),
        ("heuristic".into(), samples.iter().map(|s| s.heuristic.clone()).collect()),
    ];
    let mut reports = Vec::new();
    for (name, ests) in estimates {
        reports.push((name, evaluate_vectors(&samples, &ests, &args.cost)?));
    }
    fs::create_dir_all(&args.out)?;
    write_metrics(&args.out.join(METRICS_FILE), &reports)?;
    write_per_query(&args.out.join(PER_QUERY_FILE), &reports)?;
    let echo = EvalEcho { split: args.split, partition: &args.partition, cost: &args.cost };
    let wpath = resolve(&args.workload, WORKLOAD_FILE);
    let lpath = resolve(&args.labels, LABELS_FILE);
    let m = write_manifest(
        &args.out,
        "eval",
        &echo,
        &[],
        &[&args.db, &wpath, &lpath, &args.model.join(MODEL_FILE), &args.model.join(FEATURES_FILE)],
    )?;
    Ok((m, reports))
}

pub fn write_metrics(path: &Path, reports: &[(String, MetricsReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for (name, r) in reports {
        w.write_record([
            name.clone(),
            r.queries.to_string(),
            r.subplans.to_string(),
            fmt_f(r.qerror_p50),
            fmt_f(r.qerror_p90),
            fmt_f(r.qerror_p99),
            fmt_f(r.p_cost_mean),
            fmt_f(r.p_cost_p90),
            fmt_f(r.p_cost_p99),
            fmt_f(r.subopt_mean),
            fmt_f(r.subopt_p90),
            fmt_f(r.subopt_p99),
            fmt_f(r.flow_loss_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_per_query(path: &Path, reports: &[(String, MetricsReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PER_QUERY_HEADER)?;
    for (name, r) in reports {
        for q in &r.per_query {
            w.write_record([
                name.clone(),
                q.query_id.clone(),
                fmt_f(q.p_cost),
                fmt_f(q.optimal_cost),
                fmt_f(q.p_cost / q.optimal_cost),
                fmt_f(q.flow_loss_ratio),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A hand-built plan-graph instance with true cardinalities, used for
/// sensitivity sweeps without a database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepInstance {
    pub tables: Vec<String>,
    pub joins: Vec<[String; 2]>,
    /// Keyed by comma-separated table names of each connected subset.
    pub cardinalities: BTreeMap<String, f64>,
    /// Node to perturb when none is given explicitly.
    #[serde(default)]
    pub node: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

impl SweepInstance {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The plan graph and its true cardinality vector.
    pub fn build(&self) -> Result<(PlanGraph, CardinalityVector)> {
        let aliases = self.tables.iter().map(|t| Alias { name: t.clone(), relation: t.clone() }).collect();
        let index = |name: &str| {
            self.tables
                .iter()
                .position(|t| t == name)
                .ok_or_else(|| Error::Config(format!("join references unknown table `{name}`")))
        };
        let edges = self
            .joins
            .iter()
            .map(|[l, r]| {
                Ok(JoinEdge { left: index(l)?, right: index(r)?, left_column: "id".into(), right_column: "id".into() })
            })
            .collect::<Result<_>>()?;
        let pg = PlanGraph::from_join_graph(&JoinGraph::new(aliases, edges)?, DEFAULT_ALIAS_CAP)?;
        let mut y = vec![1.0; pg.num_nodes()];
        for (key, &v) in &self.cardinalities {
            let id = node_by_names(&pg, key)?;
            y[id] = v;
        }
        for id in 1..pg.num_nodes() {
            if !self.cardinalities.keys().any(|k| node_by_names(&pg, k).ok() == Some(id)) {
                return Err(Error::Config(format!("no cardinality for sub-plan `{}`", pg.node_label(id))));
            }
        }
        let y = CardinalityVector::new(y);
        y.validate(&pg)?;
        Ok((pg, y))
    }
}

/// Node whose aliases are the comma-separated names in `spec`.
pub fn node_by_names(pg: &PlanGraph, spec: &str) -> Result<NodeId> {
    let mut sp = SubPlan::from_bits(0);
    for name in spec.split(',').map(str::trim) {
        let a = pg
            .alias_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown alias `{name}` in node `{spec}`")))?;
        sp = sp.with(a);
    }
    pg.node_id(sp).ok_or_else(|| Error::Config(format!("`{spec}` is not a connected sub-plan")))
}

fn node_name(pg: &PlanGraph, id: NodeId) -> String {
    pg.node(id).aliases().map(|a| pg.alias_names()[a].as_str()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Serialize)]
pub enum SweepSource {
    /// A [`SweepInstance`] file.
    Instance(PathBuf),
    /// A labelled workload query.
    Query { workload: PathBuf, labels: PathBuf, query: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepArgs {
    pub source: SweepSource,
    pub node: Option<String>,
    /// Second node for the two-node grid.
    pub node_b: Option<String>,
    pub factors: Vec<f64>,
    pub cost: CostParams,
    pub out: PathBuf,
}

pub fn sweep(args: &SweepArgs) -> Result<RunManifest> {
    args.cost.validate()?;
    let (pg, y, default_node, inputs) = match &args.source {
        SweepSource::Instance(p) => {
            let inst = SweepInstance::load(p)?;
            let (pg, y) = inst.build()?;
            (pg, y, inst.node, vec![p.clone()])
        }
        SweepSource::Query { workload, labels, query } => {
            let wpath = resolve(workload, WORKLOAD_FILE);
            let lpath = resolve(labels, LABELS_FILE);
            let w = Workload::load(&wpath)?;
            let q = w.query(query).ok_or_else(|| Error::Config(format!("no query `{query}` in workload")))?;
            let pg = PlanGraph::build(q)?;
            let y = Labels::new(&read_records(&lpath)?).vector(query, &pg)?;
            (pg, y, None, vec![wpath, lpath])
        }
    };
    let node_spec = args
        .node
        .clone()
        .or(default_node)
        .ok_or_else(|| Error::Config("no node to perturb; pass --node".into()))?;
    let node = node_by_names(&pg, &node_spec)?;
    fs::create_dir_all(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join(SWEEP_FILE))?;
    match &args.node_b {
        None => {
            w.write_record(SWEEP_HEADER)?;
            for r in sensitivity_sweep(node, &args.factors, &y, &pg, &args.cost)? {
                w.write_record([
                    node_name(&pg, r.node),
                    fmt_f(r.factor),
                    fmt_f(r.q_error),
                    fmt_f(r.flow_loss),
                    fmt_f(r.p_cost),
                ])?;
            }
        }
        Some(b) => {
            let nb = node_by_names(&pg, b)?;
            w.write_record(GRID_HEADER)?;
            for r in sensitivity_grid(node, nb, &args.factors, &y, &pg, &args.cost)? {
                w.write_record([
                    node_name(&pg, node),
                    node_name(&pg, nb),
                    fmt_f(r.factor_a),
                    fmt_f(r.factor_b),
                    fmt_f(r.q_error),
                    fmt_f(r.flow_loss),
                    fmt_f(r.p_cost),
                ])?;
            }
        }
    }
    w.flush()?;
    drop(w);
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&args.out, "sweep", args, &[], &inputs)
}

/// Default output root: `$FLOWLOSS_OUT` or `./flowloss-out`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os("FLOWLOSS_OUT").map_or_else(|| PathBuf::from("flowloss-out"), PathBuf::from)
}
