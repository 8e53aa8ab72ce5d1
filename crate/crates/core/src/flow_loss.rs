//! Flow-Loss: the true energy `Σ_e C(e, Y_true) · F_e(Y_est)²` of the
//! electrical flow routed under the estimated costs, and its gradient with
//! respect to the estimated cardinalities.
//!
//! The gradient follows the chain `Y → C → g = 1/C → F → loss`. The middle
//! step differentiates the grounded system `B v = i` implicitly: with
//! `a = 2·C_true·F` and the adjoint potentials `w = B⁻¹ X G a`,
//!
//! ```text
//! ∂loss/∂g_j = d_j · (a_j − (w_src(j) − w_dst(j)))
//! ```
//!
//! where `d_j` is the potential drop across edge `j`. One extra solve with
//! the already factorised Laplacian gives the whole gradient.

use serde::Serialize;

use crate::cost_model::{cost_all_edges, cost_all_edges_with_grad, CardinalityVector, CostParams};
use crate::error::Result;
use crate::flow_solver::Circuit;
use crate::plan_graph::{NodeId, PlanGraph};
use crate::plan_search::{p_cost, q_error};

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub value: f64,
    /// `C(e, Y_true) · F_e²` for every edge.
    pub per_edge: Vec<f64>,
    /// `∂loss/∂Y_est` per node; entry 0 (the source) is always zero.
    pub grad: Option<Vec<f64>>,
}

/// Diagonal of true edge costs.
pub fn true_cost_diag(pg: &PlanGraph, y_true: &CardinalityVector, p: &CostParams) -> Result<Vec<f64>> {
    cost_all_edges(pg, y_true, p)
}

/// Flow-Loss value and per-edge contributions.
pub fn flow_loss(
    y_est: &CardinalityVector,
    y_true: &CardinalityVector,
    pg: &PlanGraph,
    p: &CostParams,
) -> Result<LossBreakdown> {
    let est_costs = cost_all_edges(pg, y_est, p)?;
    let true_costs = true_cost_diag(pg, y_true, p)?;
    let flows = Circuit::new(pg, &est_costs)?.flow()?.flows;
    Ok(breakdown(&flows, &true_costs, None))
}

fn breakdown(flows: &[f64], true_costs: &[f64], grad: Option<Vec<f64>>) -> LossBreakdown {
    let per_edge: Vec<f64> = flows.iter().zip(true_costs).map(|(f, c)| c * f * f).collect();
    LossBreakdown { value: per_edge.iter().sum(), per_edge, grad }
}

/// Flow-Loss together with its analytic gradient.
pub fn flow_loss_with_grad(
    y_est: &CardinalityVector,
    y_true: &CardinalityVector,
    pg: &PlanGraph,
    p: &CostParams,
) -> Result<LossBreakdown> {
    let (est_costs, cost_grads) = cost_all_edges_with_grad(pg, y_est, p)?;
    let true_costs = true_cost_diag(pg, y_true, p)?;
    let circuit = Circuit::new(pg, &est_costs)?;
    let solution = circuit.flow()?;
    let flows = &solution.flows;
    let g = circuit.conductances();
    let scale = circuit.scale();

    // normalised potentials and drops
    let v: Vec<f64> = solution.voltages.iter().map(|x| x / scale).collect();
    let drops: Vec<f64> = pg.edges().iter().map(|e| v[e.src] - v[e.dst]).collect();

    let a: Vec<f64> = flows.iter().zip(&true_costs).map(|(f, c)| 2.0 * c * f).collect();
    let mut rhs = vec![0.0; pg.num_nodes()];
    for (id, e) in pg.edges().iter().enumerate() {
        let t = a[id] * g[id];
        rhs[e.src] += t;
        rhs[e.dst] -= t;
    }
    let w = circuit.solve_normalized(&rhs);

    let mut grad = vec![0.0; pg.num_nodes()];
    for (id, e) in pg.edges().iter().enumerate() {
        if circuit.is_capped(id) {
            continue;
        }
        let dl_dg = drops[id] * (a[id] - (w[e.src] - w[e.dst]));
        // g'_j = scale / C_j  =>  dg'_j/dC_j = -g'_j² / scale
        let dl_dc = -dl_dg * g[id] * g[id] / scale;
        if dl_dc == 0.0 {
            continue;
        }
        let cg = cost_grads[id];
        if let Some((u, du)) = cg.u {
            grad[u] += dl_dc * du;
        }
        let (b, db) = cg.b;
        grad[b] += dl_dc * db;
    }
    grad[PlanGraph::SOURCE] = 0.0;
    Ok(breakdown(flows, &true_costs, Some(grad)))
}

/// Gradient of Flow-Loss w.r.t. every node's estimated cardinality.
pub fn flow_loss_grad(
    y_est: &CardinalityVector,
    y_true: &CardinalityVector,
    pg: &PlanGraph,
    p: &CostParams,
) -> Result<Vec<f64>> {
    Ok(flow_loss_with_grad(y_est, y_true, pg, p)?.grad.expect("computed"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub node: NodeId,
    pub factor: f64,
    pub q_error: f64,
    pub flow_loss: f64,
    pub p_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub factor_a: f64,
    pub factor_b: f64,
    pub q_error: f64,
    pub flow_loss: f64,
    pub p_cost: f64,
}

/// Multiplies the true cardinality by `factor`, clamping at one row.
fn perturb(y: f64, factor: f64) -> f64 {
    (y * factor).max(1.0)
}

/// Perturbs one node's cardinality by each factor while all others stay at
/// their true values. A factor below one underestimates.
pub fn sensitivity_sweep(
    node: NodeId,
    factors: &[f64],
    y_true: &CardinalityVector,
    pg: &PlanGraph,
    p: &CostParams,
) -> Result<Vec<SweepRow>> {
    factors
        .iter()
        .map(|&factor| {
            if !(factor > 0.0) {
                return Err(crate::Error::Domain(format!("sweep factor {factor} must be positive")));
            }
            let mut y = y_true.clone();
            y.set(node, perturb(y_true.get(node), factor));
            Ok(SweepRow {
                node,
                factor,
                q_error: q_error(y_true.get(node), y.get(node))?,
                flow_loss: flow_loss(&y, y_true, pg, p)?.value,
                p_cost: p_cost(&y, y_true, pg, p)?,
            })
        })
        .collect()
}

/// Two-node variant of [`sensitivity_sweep`] over the full factor grid.
/// The reported Q-Error is the larger of the two nodes' errors.
pub fn sensitivity_grid(
    node_a: NodeId,
    node_b: NodeId,
    factors: &[f64],
    y_true: &CardinalityVector,
    pg: &PlanGraph,
    p: &CostParams,
) -> Result<Vec<GridRow>> {
    let mut rows = Vec::with_capacity(factors.len() * factors.len());
    for &fa in factors {
        for &fb in factors {
            let mut y = y_true.clone();
            y.set(node_a, perturb(y_true.get(node_a), fa));
            y.set(node_b, perturb(y_true.get(node_b), fb));
            let qa = q_error(y_true.get(node_a), y.get(node_a))?;
            let qb = q_error(y_true.get(node_b), y.get(node_b))?;
            rows.push(GridRow {
                factor_a: fa,
                factor_b: fb,
                q_error: qa.max(qb),
                flow_loss: flow_loss(&y, y_true, pg, p)?.value,
                p_cost: p_cost(&y, y_true, pg, p)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::{branch, Branch};
    use crate::flow_solver::{energy, f_opt};
    use crate::join_model::tests::{clique3, graph};
    use crate::join_model::DEFAULT_ALIAS_CAP;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> CostParams {
        CostParams::default()
    }

    fn random_y(pg: &PlanGraph, rng: &mut ChaCha8Rng) -> CardinalityVector {
        CardinalityVector::from_fn(pg, |id| {
            let k = pg.node(id).len() as f64;
            10f64.powf(rng.random_range(1.0..2.5 + k))
        })
    }

    fn fd_log_grad(
        y_est: &CardinalityVector,
        y_true: &CardinalityVector,
        pg: &PlanGraph,
        node: NodeId,
    ) -> f64 {
        // d loss / d y via a central difference in log space
        let h: f64 = 1e-4;
        let y0 = y_est.get(node);
        let mut up = y_est.clone();
        up.set(node, y0 * h.exp());
        let mut dn = y_est.clone();
        dn.set(node, y0 * (-h).exp());
        let lu = flow_loss(&up, y_true, pg, &params()).unwrap().value;
        let ld = flow_loss(&dn, y_true, pg, &params()).unwrap().value;
        (lu - ld) / (2.0 * h) / y0
    }

    #[test]
    fn minimum_at_truth_equals_true_energy() {
        let pg = PlanGraph::from_join_graph(&clique3(), DEFAULT_ALIAS_CAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y_true = random_y(&pg, &mut rng);
        let l = flow_loss(&y_true, &y_true, &pg, &params()).unwrap();
        let costs = cost_all_edges(&pg, &y_true, &params()).unwrap();
        let sol = f_opt(&pg, &costs).unwrap();
        assert!((l.value - energy(&sol.flows, &costs)).abs() < 1e-9 * l.value);
        assert!((l.per_edge.iter().sum::<f64>() - l.value).abs() < 1e-12 * l.value);
        for _ in 0..1000 {
            let y = CardinalityVector::from_fn(&pg, |id| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (y_true.get(id) * (1.5 * z).exp()).max(1.0)
            });
            assert!(flow_loss(&y, &y_true, &pg, &params()).unwrap().value >= l.value * (1.0 - 1e-12));
        }
    }

    #[test]
    fn gradient_vanishes_at_truth() {
        let pg = PlanGraph::from_join_graph(&graph(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]), DEFAULT_ALIAS_CAP)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y_true = random_y(&pg, &mut rng);
        let l = flow_loss_with_grad(&y_true, &y_true, &pg, &params()).unwrap();
        let grad = l.grad.unwrap();
        for (id, gr) in grad.iter().enumerate().skip(1) {
            // scale-free: gradient in log space relative to the loss value
            assert!((gr * y_true.get(id)).abs() < 1e-6 * l.value, "node {id}: {gr}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pg = PlanGraph::from_join_graph(&graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]), DEFAULT_ALIAS_CAP)
            .unwrap();
        for _ in 0..10 {
            let y_true = random_y(&pg, &mut rng);
            let y_est = random_y(&pg, &mut rng);
            let grad = flow_loss_grad(&y_est, &y_true, &pg, &params()).unwrap();
            let value = flow_loss(&y_est, &y_true, &pg, &params()).unwrap().value;
            for node in 1..pg.num_nodes() {
                let y = y_est.get(node);
                let fd = fd_log_grad(&y_est, &y_true, &pg, node) * y;
                let an = grad[node] * y;
                let tol = 1e-4 * an.abs().max(1e-6 * value);
                assert!((fd - an).abs() < tol, "node {node}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn flows_and_loss_invariant_under_uniform_scaling_in_index_regime() {
        let pg = PlanGraph::from_join_graph(&clique3(), DEFAULT_ALIAS_CAP).unwrap();
        let y_true = CardinalityVector::from_fn(&pg, |id| 100.0 * (1 + id) as f64);
        for k in [0.1, 10.0] {
            let y_est = y_true.scaled(k);
            for e in pg.edges().iter().filter(|e| e.src != 0) {
                let b = pg.singleton(e.alias);
                assert_eq!(branch(y_est.get(e.src), y_est.get(b), &params()), Branch::Index);
            }
            let a = flow_loss(&y_true, &y_true, &pg, &params()).unwrap().value;
            let b = flow_loss(&y_est, &y_true, &pg, &params()).unwrap().value;
            assert!((a - b).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn sweep_identity_and_symmetric_q_error() {
        let pg = PlanGraph::from_join_graph(&clique3(), DEFAULT_ALIAS_CAP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y_true = random_y(&pg, &mut rng);
        let node = 4;
        let rows = sensitivity_sweep(node, &[0.25, 1.0, 4.0], &y_true, &pg, &params()).unwrap();
        let min_loss = flow_loss(&y_true, &y_true, &pg, &params()).unwrap().value;
        let best = p_cost(&y_true, &y_true, &pg, &params()).unwrap();
        assert_eq!(rows[1].q_error, 1.0);
        assert_eq!(rows[1].flow_loss, min_loss);
        assert_eq!(rows[1].p_cost, best);
        assert!((rows[0].q_error - rows[2].q_error).abs() < 1e-12);
        assert!(sensitivity_sweep(node, &[0.0], &y_true, &pg, &params()).is_err());
        let grid = sensitivity_grid(4, 5, &[0.5, 1.0, 2.0], &y_true, &pg, &params()).unwrap();
        assert_eq!(grid.len(), 9);
        assert_eq!(grid[4].flow_loss, min_loss);
    }
}
