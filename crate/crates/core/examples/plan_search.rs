//! Costs a chain query, finds the cheapest left-deep plan, and shows how a
//! single misestimate changes the chosen plan and its true cost.
//!
//! cargo run --example plan_search

use flowloss::cost_model::{cost_all_edges, CardinalityVector, CostParams};
use flowloss::join_model::{Alias, JoinEdge, JoinGraph, SubPlan, DEFAULT_ALIAS_CAP};
use flowloss::plan_graph::PlanGraph;
use flowloss::plan_search::{brute_force_p_opt, p_cost, p_opt, q_error};

fn main() -> flowloss::Result<()> {
    let names = ["a", "b", "c", "d"];
    let aliases = names.iter().map(|n| Alias { name: n.to_string(), relation: n.to_string() }).collect();
    let edges = (0..3)
        .map(|i| JoinEdge { left: i, right: i + 1, left_column: "id".into(), right_column: "id".into() })
        .collect();
    let pg = PlanGraph::from_join_graph(&JoinGraph::new(aliases, edges)?, DEFAULT_ALIAS_CAP)?;

    // sizes: base tables, then joins shrink or grow depending on the pair
    let y_true = CardinalityVector::from_fn(&pg, |id| {
        let s = pg.node(id);
        let base: f64 = s.aliases().map(|a| [5000.0, 200.0, 80_000.0, 1000.0][a]).product();
        base / 10f64.powi(2 * (s.len() as i32 - 1)) * if s.contains(2) && s.len() > 1 { 50.0 } else { 1.0 }
    });
    let p = CostParams::default();
    let best = p_opt(&pg, &y_true, &p)?;
    assert_eq!(best.path, brute_force_p_opt(&pg, &y_true, &p)?.path);
    let order = |path: &flowloss::plan_graph::Path| {
        path.join_order(&pg).iter().map(|&a| names[a]).collect::<Vec<_>>().join(" -> ")
    };
    println!("optimal plan {} costs {:.0}", order(&best.path), best.est_cost);

    let costs = cost_all_edges(&pg, &y_true, &p)?;
    for (e, c) in best.path.edges.iter().map(|&e| (e, costs[e])) {
        let edge = pg.edge(e);
        println!("  {:>12} + {:<2} cost {c:.0}", pg.node_label(edge.src), names[edge.alias]);
    }

    let bc = pg.node_id(SubPlan::from_aliases([1, 2])).unwrap();
    for factor in [0.001, 0.1, 1.0, 10.0] {
        let mut y = y_true.clone();
        y.set(bc, (y_true.get(bc) * factor).max(1.0));
        let chosen = p_opt(&pg, &y, &p)?;
        println!(
            "b,c x {factor:<6} q-error {:>7.1}  plan {}  p-cost {:.0}",
            q_error(y_true.get(bc), y.get(bc))?,
            order(&chosen.path),
            p_cost(&y, &y_true, &pg, &p)?
        );
    }
    Ok(())
}
