//! Compiles the bundled templates against the demo database, generates a
//! small workload and prints the seen and unseen splits.
//!
//! cargo run --release --example workload

use std::path::Path;

use flowloss::synthdb::{generate_db, SchemaSpec};
use flowloss::workload::{generate_workload, split_workload, SplitMode, Template, TemplateSpec};

fn main() -> flowloss::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let spec = SchemaSpec::from_json(&std::fs::read_to_string(data.join("demo_schema.json"))?)?;
    let db = generate_db(&spec, 1)?;
    let templates = ["cast", "companies", "full", "keywords"]
        .iter()
        .map(|t| Template::compile(TemplateSpec::load(&data.join(format!("templates/{t}.toml")))?, &db))
        .collect::<flowloss::Result<Vec<_>>>()?;
    let w = generate_workload(&db, &templates, 10, 1)?;

    let q = &w.queries[0];
    println!("{} ({} aliases):", q.id, q.num_aliases());
    for (a, preds) in q.join_graph.aliases().iter().zip(&q.predicates) {
        for p in preds {
            println!("  {}.{} {}", a.name, p.column(), serde_json::to_string(p)?);
        }
    }
    for mode in [SplitMode::Seen, SplitMode::Unseen] {
        let s = split_workload(&w, mode, 1)?;
        println!(
            "{mode:?}: train {} val {} test {} (train templates {:?}, test templates {:?})",
            s.train.len(),
            s.val.len(),
            s.test.len(),
            s.train_templates,
            s.test_templates
        );
    }
    Ok(())
}
