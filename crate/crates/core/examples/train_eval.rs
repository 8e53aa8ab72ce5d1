//! The whole pipeline in one process: database, workload, labels, one model
//! per loss and an evaluation table. Artifacts land in a scratch directory
//! (or the one given as the first argument).
//!
//! cargo run --release --example train_eval [out-dir]

use std::path::{Path, PathBuf};

use flowloss::cost_model::CostParams;
use flowloss::estimator::{LossKind, Optimizer, TrainConfig};
use flowloss::featurize::FeatureConfig;
use flowloss::pipeline::{self, EvalArgs, TrainArgs};
use flowloss::synthdb::LabelConfig;
use flowloss::workload::SplitMode;

fn main() -> flowloss::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("flowloss-train-eval"), PathBuf::from);
    let (db, workload, labels) = (out.join("db"), out.join("workload"), out.join("labels"));

    pipeline::gen_db(&data.join("demo_schema.json"), 1, &db)?;
    let templates: Vec<PathBuf> =
        ["cast", "companies", "full", "keywords"].iter().map(|t| data.join(format!("templates/{t}.toml"))).collect();
    pipeline::gen_workload(&db, &templates, 60, 1, &[SplitMode::Seen], &workload)?;
    let (_, effort) = pipeline::label(&db, &workload, &LabelConfig::default(), &labels)?;
    eprintln!("labelled {} sub-plans ({} timeouts)", effort.subplans, effort.timeouts);

    let cost = CostParams::default();
    for loss in [LossKind::Qerror, LossKind::Flowloss] {
        let model = out.join(format!("model-{loss}"));
        let train = TrainConfig {
            loss,
            epochs: 15,
            optimizer: Optimizer::Adam,
            learning_rate: 0.003,
            batch_size: if loss == LossKind::Flowloss { 8 } else { 64 },
            ..TrainConfig::default()
        };
        pipeline::train(&TrainArgs {
            db: db.clone(),
            workload: workload.clone(),
            labels: labels.clone(),
            split: SplitMode::Seen,
            train,
            features: FeatureConfig::default(),
            cost,
            out: model.clone(),
        })?;
        let (_, reports) = pipeline::eval(&EvalArgs {
            db: db.clone(),
            workload: workload.clone(),
            labels: labels.clone(),
            model,
            split: SplitMode::Seen,
            partition: "test".into(),
            cost,
            out: out.join(format!("eval-{loss}")),
        })?;
        for (name, r) in reports.iter().filter(|(n, _)| loss == LossKind::Flowloss || n.starts_with("model")) {
            println!(
                "{name:<16} q-error p50 {:>6.2} p90 {:>8.2} | p-cost mean {:>8.1} p99 {:>8.1} | subopt mean {:.3}",
                r.qerror_p50, r.qerror_p90, r.p_cost_mean, r.p_cost_p99, r.subopt_mean
            );
        }
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
