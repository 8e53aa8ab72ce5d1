//! Electrical-flow relaxation of plan search.
//!
//! Edge costs are resistances; one unit of current is pushed from `S` to
//! `D` and the resulting edge currents minimise `Σ C_e F_e²` subject to flow
//! conservation. The sink is grounded (`v_D = 0`) and its row and column are
//! dropped from the Laplacian `X·diag(1/C)·Xᵀ`, leaving a symmetric positive
//! definite system that is factorised once and reused for the adjoint solve
//! in the loss gradient.
//!
//! Costs are divided by their maximum before factorising; flows are
//! invariant under uniform cost scaling and voltages are scaled back.
//! Normalised conductances are capped at [`MAX_CONDUCTANCE_RATIO`]: an edge
//! cheaper than that fraction of the costliest edge is treated as costing
//! exactly that fraction, which keeps the factorisation stable when
//! estimates span dozens of orders of magnitude. Currents on very
//! conductive edges are poorly resolved by potential differences, so the
//! remaining conservation error is moved onto a maximum-conductance
//! spanning tree, where conservation pins the currents down exactly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::plan_graph::PlanGraph;

/// A DAG carrying unit flow from node 0 (source) to the last node (sink).
pub trait FlowNetwork {
    fn num_nodes(&self) -> usize;
    fn num_edges(&self) -> usize;
    /// `(src, dst)` of edge `e`.
    fn endpoints(&self, e: usize) -> (usize, usize);

    fn sink(&self) -> usize {
        self.num_nodes() - 1
    }
}

impl FlowNetwork for PlanGraph {
    fn num_nodes(&self) -> usize {
        PlanGraph::num_nodes(self)
    }

    fn num_edges(&self) -> usize {
        PlanGraph::num_edges(self)
    }

    fn endpoints(&self, e: usize) -> (usize, usize) {
        let edge = self.edge(e);
        (edge.src, edge.dst)
    }

    fn sink(&self) -> usize {
        PlanGraph::sink(self)
    }
}

/// Free-form network, mainly for checking the solver on circuits that are
/// not plan graphs (series chains, parallel routes).
#[derive(Debug, Clone)]
pub struct EdgeListNetwork {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl FlowNetwork for EdgeListNetwork {
    fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    fn num_edges(&self) -> usize {
        self.edges.len()
    }

    fn endpoints(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }
}

/// Relative residual tolerance of the voltage solve.
pub const SOLVER_TOLERANCE: f64 = 1e-8;

const REFINEMENT_STEPS: usize = 3;

/// Largest ratio between the most and least expensive edge the solver
/// resolves; cheaper edges are raised to `max(C) / MAX_CONDUCTANCE_RATIO`.
pub const MAX_CONDUCTANCE_RATIO: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Signed current per edge; positive along the edge direction.
    pub flows: Vec<f64>,
    /// Node potentials with the sink grounded.
    pub voltages: Vec<f64>,
    /// Max conservation residual of `flows`.
    pub residual: f64,
}

/// Node-by-edge incidence matrix: `+1` at the edge source, `-1` at its
/// destination.
pub fn incidence_matrix<N: FlowNetwork + ?Sized>(pg: &N) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(pg.num_nodes(), pg.num_edges());
    for id in 0..pg.num_edges() {
        let (src, dst) = pg.endpoints(id);
        x[(src, id)] = 1.0;
        x[(dst, id)] = -1.0;
    }
    x
}

/// Full (ungrounded) weighted Laplacian `X·diag(1/C)·Xᵀ`.
pub fn laplacian<N: FlowNetwork + ?Sized>(pg: &N, costs: &[f64]) -> DMatrix<f64> {
    let n = pg.num_nodes();
    let mut b = DMatrix::zeros(n, n);
    for (id, &c) in costs.iter().enumerate() {
        let (src, dst) = pg.endpoints(id);
        let g = 1.0 / c;
        b[(src, src)] += g;
        b[(dst, dst)] += g;
        b[(src, dst)] -= g;
        b[(dst, src)] -= g;
    }
    b
}

/// Source vector: `+1` at `S`, `-1` at `D`.
pub fn source_vector<N: FlowNetwork + ?Sized>(pg: &N) -> Vec<f64> {
    let mut i = vec![0.0; pg.num_nodes()];
    i[0] = 1.0;
    i[pg.sink()] = -1.0;
    i
}

/// A factorised grounded circuit for one plan graph and cost vector.
pub struct Circuit<'a, N: FlowNetwork + ?Sized = PlanGraph> {
    pg: &'a N,
    /// Normalised conductances `max(C) / C_e`.
    g: Vec<f64>,
    scale: f64,
    chol: Cholesky<f64, Dyn>,
}

impl<'a, N: FlowNetwork + ?Sized> Circuit<'a, N> {
    pub fn new(pg: &'a N, costs: &[f64]) -> Result<Self> {
        if costs.len() != pg.num_edges() {
            return Err(Error::Domain(format!(
                "{} edge costs for {} edges",
                costs.len(),
                pg.num_edges()
            )));
        }
        let mut max = 0.0f64;
        let mut min = f64::INFINITY;
        for &c in costs {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Domain(format!("edge cost {c} must be positive and finite")));
            }
            max = max.max(c);
            min = min.min(c);
        }
        let g: Vec<f64> = costs.iter().map(|&c| (max / c).min(MAX_CONDUCTANCE_RATIO)).collect();
        let m = pg.num_nodes() - 1;
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (id, &ge) in g.iter().enumerate() {
            let (src, dst) = pg.endpoints(id);
            if src < m {
                b[(src, src)] += ge;
            }
            if dst < m {
                b[(dst, dst)] += ge;
            }
            if src < m && dst < m {
                b[(src, dst)] -= ge;
                b[(dst, src)] -= ge;
            }
        }
        let chol = Cholesky::new(b).ok_or_else(|| {
            Error::Numerical(format!(
                "grounded Laplacian is not positive definite (cost range {min:e}..{max:e}, ratio {:e})",
                max / min
            ))
        })?;
        Ok(Circuit { pg, g, scale: max, chol })
    }

    pub fn network(&self) -> &N {
        self.pg
    }

    /// Solves the grounded system for a node-indexed right-hand side (the
    /// sink entry is ignored) and returns potentials in normalised units,
    /// with the sink at zero.
    pub fn solve_normalized(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.pg.num_nodes() - 1;
        let mut x = self.chol.solve(&DVector::from_column_slice(&rhs[..m]));
        for _ in 0..REFINEMENT_STEPS {
            let r = self.residual_normalized(x.as_slice(), rhs);
            let norm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if norm <= 1e-15 {
                break;
            }
            x += self.chol.solve(&DVector::from_vec(r));
        }
        let mut v = x.as_slice().to_vec();
        v.push(0.0);
        v
    }

    /// `rhs - B·v` over non-sink nodes, evaluated edge by edge on potential
    /// differences.
    fn residual_normalized(&self, v: &[f64], rhs: &[f64]) -> Vec<f64> {
        let m = self.pg.num_nodes() - 1;
        let mut r: Vec<f64> = rhs[..m].to_vec();
        let at = |n: usize| if n < m { v[n] } else { 0.0 };
        for (id, &g) in self.g.iter().enumerate() {
            let (src, dst) = self.pg.endpoints(id);
            let f = g * (at(src) - at(dst));
            if src < m {
                r[src] -= f;
            }
            if dst < m {
                r[dst] += f;
            }
        }
        r
    }

    /// Edge currents for node potentials given in normalised units.
    pub fn currents(&self, v: &[f64]) -> Vec<f64> {
        (0..self.pg.num_edges())
            .map(|id| {
                let (src, dst) = self.pg.endpoints(id);
                self.g[id] * (v[src] - v[dst])
            })
            .collect()
    }

    /// Normalised conductance of each edge.
    pub fn conductances(&self) -> &[f64] {
        &self.g
    }

    /// Whether edge `e` sits at the conductance cap, so its cost does not
    /// influence the flow locally.
    pub fn is_capped(&self, e: usize) -> bool {
        self.g[e] >= MAX_CONDUCTANCE_RATIO
    }

    /// Factor that maps normalised costs back to the input costs.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// F-Opt: the unit `S -> D` electrical flow.
    pub fn flow(&self) -> Result<FlowSolution> {
        let i = source_vector(self.pg);
        let v = self.solve_normalized(&i);
        let mut flows = self.currents(&v);
        self.rebalance(&mut flows);
        let residual = verify_conservation(self.pg, &flows);
        if !(residual < SOLVER_TOLERANCE) {
            return Err(Error::Numerical(format!(
                "flow conservation residual {residual:e} exceeds {SOLVER_TOLERANCE:e}"
            )));
        }
        let voltages = v.iter().map(|x| x * self.scale).collect();
        Ok(FlowSolution { flows, voltages, residual })
    }
}

impl<N: FlowNetwork + ?Sized> Circuit<'_, N> {
    /// Cancels the conservation error of `flows` using only the edges of a
    /// maximum-conductance spanning tree, working from the leaves towards
    /// the sink.
    fn rebalance(&self, flows: &mut [f64]) {
        let n = self.pg.num_nodes();
        let mut order: Vec<usize> = (0..self.g.len()).collect();
        order.sort_by(|&a, &b| self.g[b].total_cmp(&self.g[a]).then(a.cmp(&b)));
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in order {
            let (a, b) = self.pg.endpoints(e);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                adj[a].push(e);
                adj[b].push(e);
            }
        }
        let target = source_vector(self.pg);
        let mut net = vec![0.0; n];
        for (e, f) in flows.iter().enumerate() {
            let (a, b) = self.pg.endpoints(e);
            net[a] += f;
            net[b] -= f;
        }
        for (x, t) in net.iter_mut().zip(&target) {
            *x -= t;
        }
        // iterative DFS from the sink; fix nodes in reverse discovery order
        let root = self.pg.sink();
        let mut seen = vec![false; n];
        let mut up: Vec<Option<usize>> = vec![None; n];
        let mut stack = vec![root];
        let mut visit = Vec::with_capacity(n);
        seen[root] = true;
        while let Some(u) = stack.pop() {
            visit.push(u);
            for &e in &adj[u] {
                let (a, b) = self.pg.endpoints(e);
                let w = if a == u { b } else { a };
                if !seen[w] {
                    seen[w] = true;
                    up[w] = Some(e);
                    stack.push(w);
                }
            }
        }
        for &u in visit.iter().rev() {
            let Some(e) = up[u] else { continue };
            let (a, b) = self.pg.endpoints(e);
            let r = net[u];
            if a == u {
                flows[e] -= r;
                net[b] += r;
            } else {
                flows[e] += r;
                net[a] += r;
            }
            net[u] = 0.0;
        }
    }
}

/// Node potentials (sink grounded) for the given edge costs.
pub fn solve_voltages<N: FlowNetwork + ?Sized>(pg: &N, costs: &[f64]) -> Result<Vec<f64>> {
    Ok(Circuit::new(pg, costs)?.flow()?.voltages)
}

/// F-Opt for the given edge costs.
pub fn f_opt<N: FlowNetwork + ?Sized>(pg: &N, costs: &[f64]) -> Result<FlowSolution> {
    Circuit::new(pg, costs)?.flow()
}

/// Dissipated energy `Σ C_e F_e²`.
pub fn energy(flows: &[f64], costs: &[f64]) -> f64 {
    flows.iter().zip(costs).map(|(f, c)| c * f * f).sum()
}

/// Maximum over nodes of the violation of unit-flow conservation: net
/// outflow must be `1` at `S`, `-1` at `D` and `0` elsewhere.
pub fn verify_conservation<N: FlowNetwork + ?Sized>(pg: &N, flows: &[f64]) -> f64 {
    let mut net = vec![0.0; pg.num_nodes()];
    for (id, f) in flows.iter().enumerate() {
        let (src, dst) = pg.endpoints(id);
        net[src] += f;
        net[dst] -= f;
    }
    let target = source_vector(pg);
    net.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
