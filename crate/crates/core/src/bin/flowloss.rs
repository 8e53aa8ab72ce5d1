use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowloss::cost_model::{CostParams, SEdgeCost};
use flowloss::estimator::{FlowNormalization, LossKind, Optimizer, TrainConfig};
use flowloss::featurize::FeatureConfig;
use flowloss::pipeline::{self, EvalArgs, SweepArgs, SweepSource, TrainArgs};
use flowloss::synthdb::{LabelConfig, LabelMode};
use flowloss::workload::SplitMode;
use flowloss::{Error, Result};

#[derive(Parser)]
#[command(name = "flowloss", version, about = "Flow-Loss experiment pipeline")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CostArgs {
    /// Index factor of the join cost model.
    #[arg(long, default_value_t = 0.001)]
    lambda: f64,
    /// Minimum edge cost.
    #[arg(long, default_value_t = 1.0)]
    cost_floor: f64,
    /// Cost of the first scan: `scan` or `epsilon`.
    #[arg(long, default_value = "scan", value_parser = parse::<SEdgeCost>)]
    s_edge_cost: SEdgeCost,
}

impl CostArgs {
    fn params(&self) -> CostParams {
        CostParams { lambda: self.lambda, cost_floor: self.cost_floor, s_edge: self.s_edge_cost }
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic database from a schema spec.
    GenDb {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate queries from templates and compute splits.
    GenWorkload {
        #[arg(long)]
        db: PathBuf,
        #[arg(long = "template", required = true, num_args = 1..)]
        templates: Vec<PathBuf>,
        /// Queries per template.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Splits to store; repeatable. Defaults to seen and unseen.
        #[arg(long = "split", value_parser = parse::<SplitMode>)]
        splits: Vec<SplitMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label every sub-plan of every query.
    Label {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value = "exact", value_parser = parse::<LabelMode>)]
        mode: LabelMode,
        /// Intermediate-row budget per exact count.
        #[arg(long, default_value_t = 1_000_000)]
        budget: u64,
        /// Random walks per sub-plan in wanderjoin mode.
        #[arg(long, default_value_t = 1000)]
        walks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an estimator.
    Train {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "seen", value_parser = parse::<SplitMode>)]
        split: SplitMode,
        #[arg(long, default_value = "flowloss", value_parser = parse::<LossKind>)]
        loss: LossKind,
        /// TOML training config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Hidden layer widths, comma separated.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// `sgd` or `adam`.
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        clip_norm: Option<f64>,
        #[arg(long)]
        init_scale: Option<f64>,
        /// Flow-Loss divisor: `global` or `per_query`.
        #[arg(long)]
        flow_normalization: Option<String>,
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model and the `true` and `heuristic` baselines.
    Eval {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "seen", value_parser = parse::<SplitMode>)]
        split: SplitMode,
        #[arg(long, default_value = "test")]
        partition: String,
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perturb one (or two) sub-plan cardinalities and report all metrics.
    Sweep {
        /// Hand-built instance file.
        #[arg(long, conflicts_with_all = ["workload", "labels", "query"])]
        instance: Option<PathBuf>,
        #[arg(long, requires_all = ["labels", "query"])]
        workload: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        query: Option<String>,
        /// Comma-separated alias names of the node to perturb.
        #[arg(long)]
        node: Option<String>,
        /// Second node; sweeps the full factor grid.
        #[arg(long)]
        node_b: Option<String>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.125,0.25,0.5,1,2,4,8"
        )]
        factors: Vec<f64>,
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| pipeline::default_out_root().join(name))
}

#[allow(clippy::too_many_arguments)]
fn train_config(
    path: Option<PathBuf>,
    loss: LossKind,
    seed: Option<u64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    hidden: Option<Vec<usize>>,
    optimizer: Option<String>,
    clip_norm: Option<f64>,
    init_scale: Option<f64>,
    flow_normalization: Option<String>,
) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    cfg.loss = loss;
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.epochs = epochs.unwrap_or(cfg.epochs);
    cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
    cfg.hidden = hidden.unwrap_or(cfg.hidden);
    cfg.init_scale = init_scale.unwrap_or(cfg.init_scale);
    if clip_norm.is_some() {
        cfg.clip_norm = clip_norm;
    }
    if let Some(o) = optimizer {
        cfg.optimizer = match o.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::Adam,
            _ => return Err(Error::Config(format!("unknown optimizer `{o}` (expected sgd or adam)"))),
        };
    }
    if let Some(n) = flow_normalization {
        cfg.flow_normalization = match n.as_str() {
            "global" => FlowNormalization::Global,
            "per_query" => FlowNormalization::PerQuery,
            _ => return Err(Error::Config(format!("unknown flow normalization `{n}` (expected global or per_query)"))),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<PathBuf> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
    }
    match cli.command {
        Command::GenDb { spec, seed, out } => {
            let out = out_dir(out, "db");
            pipeline::gen_db(&spec, seed, &out)?;
            Ok(out)
        }
        Command::GenWorkload { db, templates, n, seed, splits, out } => {
            let out = out_dir(out, "workload");
            let splits = if splits.is_empty() { vec![SplitMode::Seen, SplitMode::Unseen] } else { splits };
            pipeline::gen_workload(&db, &templates, n, seed, &splits, &out)?;
            Ok(out)
        }
        Command::Label { db, workload, mode, budget, walks, seed, out } => {
            let out = out_dir(out, &format!("labels-{}", if mode == LabelMode::Exact { "exact" } else { "wanderjoin" }));
            let cfg = LabelConfig { mode, row_budget: budget, walks, seed };
            let (_, report) = pipeline::label(&db, &workload, &cfg, &out)?;
            eprintln!(
                "labelled {} sub-plans of {} queries ({} timeouts), effort {}",
                report.subplans, report.queries, report.timeouts, report.effort
            );
            Ok(out)
        }
        Command::Train {
            db,
            workload,
            labels,
            split,
            loss,
            config,
            seed,
            epochs,
            lr,
            batch_size,
            hidden,
            optimizer,
            clip_norm,
            init_scale,
            flow_normalization,
            cost,
            out,
        } => {
            let train = train_config(
                config,
                loss,
                seed,
                epochs,
                lr,
                batch_size,
                hidden,
                optimizer,
                clip_norm,
                init_scale,
                flow_normalization,
            )?;
            let out = out_dir(out, &format!("model-{loss}"));
            pipeline::train(&TrainArgs {
                db,
                workload,
                labels,
                split,
                train,
                features: FeatureConfig::default(),
                cost: cost.params(),
                out: out.clone(),
            })?;
            Ok(out)
        }
        Command::Eval { db, workload, labels, model, split, partition, cost, out } => {
            let out = out_dir(out, "eval");
            let (_, reports) =
                pipeline::eval(&EvalArgs { db, workload, labels, model, split, partition, cost: cost.params(), out: out.clone() })?;
            for (name, r) in reports {
                eprintln!(
                    "{name:>18}: qerror p50 {:.3} p90 {:.3} p99 {:.3} | p_cost mean {:.4e} | subopt mean {:.4}",
                    r.qerror_p50, r.qerror_p90, r.qerror_p99, r.p_cost_mean, r.subopt_mean
                );
            }
            Ok(out)
        }
        Command::Sweep { instance, workload, labels, query, node, node_b, factors, cost, out } => {
            let source = match (instance, workload, labels, query) {
                (Some(p), ..) => SweepSource::Instance(p),
                (None, Some(workload), Some(labels), Some(query)) => SweepSource::Query { workload, labels, query },
                _ => return Err(Error::Config("sweep needs --instance or --workload, --labels and --query".into())),
            };
            let out = out_dir(out, "sweep");
            pipeline::sweep(&SweepArgs { source, node, node_b, factors, cost: cost.params(), out: out.clone() })?;
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
