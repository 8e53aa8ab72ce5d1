//! Lays out the feature space of a small workload and prints the non-zero
//! entries of one sub-plan's vector, segment by segment.
//!
//! cargo run --release --example featurize

use std::path::Path;

use flowloss::featurize::{FeatureConfig, FeatureSchema, Featurizer};
use flowloss::plan_graph::PlanGraph;
use flowloss::synthdb::{generate_db, SchemaSpec};
use flowloss::workload::{generate_queries, Template, TemplateSpec};

fn main() -> flowloss::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let spec = SchemaSpec::from_json(&std::fs::read_to_string(data.join("demo_schema.json"))?)?;
    let db = generate_db(&spec, 1)?;
    let template = Template::compile(TemplateSpec::load(&data.join("templates/keywords.toml"))?, &db)?;
    let queries = generate_queries(&db, &template, 20, 1)?;

    let fz = Featurizer::new(FeatureSchema::from_queries(&db.schema, &queries)?, FeatureConfig::default())?;
    let layout = fz.layout();
    println!("{} features", layout.len);
    for s in &layout.segments {
        println!("  {:<11} offset {:>4} len {:>4}", s.name, s.offset, s.len);
    }

    let q = &queries[0];
    let pg = PlanGraph::build(q)?;
    let qf = fz.featurize_query(q, &pg, &db.stats)?;
    let node = pg.num_nodes() - 1;
    let v = &qf.rows[node - 1].values;
    println!("\n{} node {} (heuristic estimate {:.0} rows):", q.id, pg.node_label(node), qf.heuristic.get(node));
    for s in &layout.segments {
        let nz: Vec<String> = (s.offset..s.offset + s.len)
            .filter(|&i| v[i] != 0.0)
            .map(|i| format!("{}:{:.3}", i - s.offset, v[i]))
            .collect();
        println!("  {:<11} {}", s.name, nz.join(" "));
    }
    Ok(())
}
