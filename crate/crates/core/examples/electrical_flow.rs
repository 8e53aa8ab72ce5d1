//! Pushes a unit current through the plan graph of a three-table clique and
//! compares the electrical flow with the shortest path.
//!
//! cargo run --example electrical_flow

use flowloss::cost_model::{cost_all_edges, CardinalityVector, CostParams};
use flowloss::flow_solver::{energy, f_opt};
use flowloss::join_model::{Alias, JoinEdge, JoinGraph, DEFAULT_ALIAS_CAP};
use flowloss::plan_graph::PlanGraph;
use flowloss::plan_search::shortest_path;

fn main() -> flowloss::Result<()> {
    let aliases = ["r", "s", "t"].iter().map(|n| Alias { name: n.to_string(), relation: n.to_string() }).collect();
    let edges = [(0, 1), (1, 2), (0, 2)]
        .iter()
        .map(|&(l, r)| JoinEdge { left: l, right: r, left_column: "k".into(), right_column: "k".into() })
        .collect();
    let pg = PlanGraph::from_join_graph(&JoinGraph::new(aliases, edges)?, DEFAULT_ALIAS_CAP)?;
    let y = CardinalityVector::new(vec![1.0, 1000.0, 20.0, 5000.0, 400.0, 90_000.0, 2000.0, 300.0]);
    let costs = cost_all_edges(&pg, &y, &CostParams::default())?;

    let sol = f_opt(&pg, &costs)?;
    let (path, cost) = shortest_path(&pg, &costs);
    println!("{:<16} {:>10} {:>8}  on P-Opt", "edge", "cost", "flow");
    for (id, e) in pg.edges().iter().enumerate() {
        let label = format!("{} -> {}", pg.node_label(e.src), pg.node_label(e.dst));
        let mark = if path.edges.contains(&id) { "*" } else { "" };
        println!("{label:<16} {:>10.1} {:>8.4}  {mark}", costs[id], sol.flows[id]);
    }
    println!("energy of the electrical flow {:.1}", energy(&sol.flows, &costs));
    println!("cost of the shortest path     {cost:.1}");
    println!("conservation residual         {:.1e}", sol.residual);
    Ok(())
}
