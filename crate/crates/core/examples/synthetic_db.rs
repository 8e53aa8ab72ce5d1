//! Generates the demo database, then labels one generated query exactly and
//! with wander join, and reports the effort of each.
//!
//! cargo run --release --example synthetic_db

use std::path::Path;

use flowloss::synthdb::{generate_db, label_query, LabelConfig, LabelMode, SchemaSpec};
use flowloss::workload::{generate_queries, Template, TemplateSpec};

fn main() -> flowloss::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let spec = SchemaSpec::from_json(&std::fs::read_to_string(data.join("demo_schema.json"))?)?;
    let db = generate_db(&spec, 1)?;
    for t in &spec.tables {
        let stats = db.stats.table(&t.name).unwrap();
        println!("{:<16} {:>6} rows, {} columns", t.name, stats.rows, t.columns.len());
    }

    let template = Template::compile(TemplateSpec::load(&data.join("templates/cast.toml"))?, &db)?;
    let query = generate_queries(&db, &template, 1, 7)?.remove(0);
    let exact = label_query(&db, &query, &LabelConfig::default())?;
    let walks = label_query(&db, &query, &LabelConfig { mode: LabelMode::Wanderjoin, ..LabelConfig::default() })?;
    println!("\nquery {} over {} aliases", query.id, query.num_aliases());
    println!("{:<14} {:>10} {:>12}", "sub-plan", "exact", "wander join");
    let names = query.join_graph.aliases();
    for (e, w) in exact.0.iter().zip(&walks.0) {
        let label: Vec<&str> = e.subplan.aliases().map(|a| names[a].name.as_str()).collect();
        println!("{:<14} {:>10} {:>12.1}", label.join(","), e.cardinality, w.cardinality);
    }
    println!("effort: exact {} vs wander join {}", exact.1, walks.1);
    Ok(())
}
