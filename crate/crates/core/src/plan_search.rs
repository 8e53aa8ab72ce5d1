//! Exact left-deep plan search over the plan graph and the plan-quality
//! metrics built on it.
//!
//! Ties between equally cheap paths are resolved deterministically: at every
//! node the incoming edge with the smallest id wins. Equivalently, among all
//! cheapest paths the one whose edge-id sequence, read from the sink
//! backwards, is lexicographically smallest is chosen.

use std::cmp::Ordering;

use crate::cost_model::{cost_all_edges, CardinalityVector, CostParams};
use crate::error::{Error, Result};
use crate::plan_graph::{Path, PlanGraph};

/// Largest query brute-force search will accept.
pub const BRUTE_FORCE_MAX_ALIASES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub path: Path,
    /// Path cost under the cardinalities used for the search.
    pub est_cost: f64,
    /// Path cost under the true cardinalities.
    pub true_cost: f64,
}

/// Sum of `costs` along `path`, accumulated from the source.
pub fn path_cost(path: &Path, costs: &[f64]) -> f64 {
    path.edges.iter().fold(0.0, |acc, &e| acc + costs[e])
}

/// Cheapest `S -> D` path for fixed edge costs, by one relaxation pass in
/// node-id (topological) order.
pub fn shortest_path(pg: &PlanGraph, costs: &[f64]) -> (Path, f64) {
    let n = pg.num_nodes();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    dist[PlanGraph::SOURCE] = 0.0;
    for v in 1..n {
        for &e in pg.in_edges(v) {
            let cand = dist[pg.edge(e).src] + costs[e];
            if cand < dist[v] {
                dist[v] = cand;
                pred[v] = e;
            }
        }
    }
    let mut edges = Vec::with_capacity(pg.num_aliases());
    let mut v = pg.sink();
    while v != PlanGraph::SOURCE {
        let e = pred[v];
        edges.push(e);
        v = pg.edge(e).src;
    }
    edges.reverse();
    (Path { edges }, dist[pg.sink()])
}

/// P-Opt: cheapest plan under `y`. `true_cost` equals `est_cost`.
pub fn p_opt(pg: &PlanGraph, y: &CardinalityVector, p: &CostParams) -> Result<SearchResult> {
    let costs = cost_all_edges(pg, y, p)?;
    let (path, cost) = shortest_path(pg, &costs);
    Ok(SearchResult { path, est_cost: cost, true_cost: cost })
}

/// Plan chosen under `y_est`, costed under both vectors.
pub fn p_opt_against(
    pg: &PlanGraph,
    y_est: &CardinalityVector,
    y_true: &CardinalityVector,
    p: &CostParams,
) -> Result<SearchResult> {
    let est_costs = cost_all_edges(pg, y_est, p)?;
    let true_costs = cost_all_edges(pg, y_true, p)?;
    let (path, est_cost) = shortest_path(pg, &est_costs);
    let true_cost = path_cost(&path, &true_costs);
    Ok(SearchResult { path, est_cost, true_cost })
}

/// P-Cost: true cost of the plan chosen under `y_est`.
pub fn p_cost(
    y_est: &CardinalityVector,
    y_true: &CardinalityVector,
    pg: &PlanGraph,
    p: &CostParams,
) -> Result<f64> {
    Ok(p_opt_against(pg, y_est, y_true, p)?.true_cost)
}

/// P-Error: `|P-Cost(y1) - P-Cost(y2)|`, a pseudometric for fixed truth.
pub fn p_error(
    y1: &CardinalityVector,
    y2: &CardinalityVector,
    y_true: &CardinalityVector,
    pg: &PlanGraph,
    p: &CostParams,
) -> Result<f64> {
    Ok((p_cost(y1, y_true, pg, p)? - p_cost(y2, y_true, pg, p)?).abs())
}

/// `max(y_true / y_est, y_est / y_true)`.
pub fn q_error(y_true: f64, y_est: f64) -> Result<f64> {
    if !(y_true > 0.0 && y_est > 0.0) || !y_true.is_finite() || !y_est.is_finite() {
        return Err(Error::Domain(format!(
            "q-error needs positive finite inputs, got ({y_true}, {y_est})"
        )));
    }
    Ok((y_true / y_est).max(y_est / y_true))
}

/// Exhaustive P-Opt over every enumerated path, using the same tie rule as
/// [`p_opt`].
pub fn brute_force_p_opt(pg: &PlanGraph, y: &CardinalityVector, p: &CostParams) -> Result<SearchResult> {
    if pg.num_aliases() > BRUTE_FORCE_MAX_ALIASES {
        return Err(Error::Capacity(format!(
            "brute-force search supports at most {BRUTE_FORCE_MAX_ALIASES} aliases, got {}",
            pg.num_aliases()
        )));
    }
    let costs = cost_all_edges(pg, y, p)?;
    let mut best: Option<(Path, f64)> = None;
    for path in pg.paths() {
        let c = path_cost(&path, &costs);
        let better = match &best {
            None => true,
            Some((bp, bc)) => match c.partial_cmp(bc).expect("finite costs") {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => path.edges.iter().rev().lt(bp.edges.iter().rev()),
            },
        };
        if better {
            best = Some((path, c));
        }
    }
    let (path, cost) = best.expect("plan graph has at least one path");
    Ok(SearchResult { path, est_cost: cost, true_cost: cost })
}
