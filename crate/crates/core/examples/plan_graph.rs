//! Builds the plan graph of a four-table star query and prints its nodes,
//! its left-deep plans and a Graphviz rendering.
//!
//! cargo run --example plan_graph > star.dot

use flowloss::join_model::{Alias, JoinEdge, JoinGraph, DEFAULT_ALIAS_CAP};
use flowloss::plan_graph::PlanGraph;

fn main() -> flowloss::Result<()> {
    let names = ["title", "cast_info", "movie_info", "movie_keyword"];
    let aliases = names.iter().map(|n| Alias { name: n.to_string(), relation: n.to_string() }).collect();
    // every other table joins title on movie_id
    let edges = (1..names.len())
        .map(|i| JoinEdge { left: 0, right: i, left_column: "id".into(), right_column: "movie_id".into() })
        .collect();
    let jg = JoinGraph::new(aliases, edges)?;
    let pg = PlanGraph::from_join_graph(&jg, DEFAULT_ALIAS_CAP)?;

    eprintln!("{} nodes, {} edges, {} left-deep plans", pg.num_nodes(), pg.num_edges(), pg.paths().count());
    for id in 0..pg.num_nodes() {
        let children: Vec<String> = pg.node_children(id).iter().map(|&(c, _)| pg.node_label(c)).collect();
        eprintln!("  {:>2} {:<40} from {}", id, pg.node_label(id), children.join(" | "));
    }
    for path in pg.paths().take(3) {
        let order: Vec<&str> = path.join_order(&pg).iter().map(|&a| names[a]).collect();
        eprintln!("  plan: {}", order.join(" -> "));
    }
    print!("{}", pg.to_dot(None));
    Ok(())
}
