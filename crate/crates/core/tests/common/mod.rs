//! Instance generators and independent oracles shared by the integration
//! tests.
#![allow(dead_code)]

use flowloss::cost_model::CardinalityVector;
use flowloss::join_model::{Alias, JoinEdge, JoinGraph, DEFAULT_ALIAS_CAP};
use flowloss::plan_graph::{Path, PlanGraph};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Connected join graph on `n` aliases: a random spanning tree plus each
/// remaining pair with probability `extra`.
pub fn random_join_graph(n: usize, extra: f64, rng: &mut ChaCha8Rng) -> JoinGraph {
    let aliases = (0..n).map(|i| Alias { name: format!("t{i}"), relation: format!("t{i}") }).collect();
    let mut pairs = Vec::new();
    for i in 1..n {
        pairs.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !pairs.contains(&(i, j)) && rng.random_bool(extra) {
                pairs.push((i, j));
            }
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(l, r)| JoinEdge { left: l, right: r, left_column: "id".into(), right_column: "id".into() })
        .collect();
    JoinGraph::new(aliases, edges).unwrap()
}

pub fn random_plan_graph(n: usize, rng: &mut ChaCha8Rng) -> PlanGraph {
    let extra = rng.random_range(0.0..0.6);
    PlanGraph::from_join_graph(&random_join_graph(n, extra, rng), DEFAULT_ALIAS_CAP).unwrap()
}

/// Log-uniform cardinalities; a sub-plan of `k` aliases draws from
/// `10^[lo, hi + k - 1)`.
pub fn random_y(pg: &PlanGraph, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> CardinalityVector {
    CardinalityVector::from_fn(pg, |id| {
        let k = pg.node(id).len() as f64;
        10f64.powf(rng.random_range(lo..hi + k - 1.0))
    })
}

/// Multiplies every entry by `exp(sigma · z)`, clamped at one row.
pub fn lognormal_perturb(y: &CardinalityVector, sigma: f64, rng: &mut ChaCha8Rng) -> CardinalityVector {
    let mut v = y.values().to_vec();
    for x in v.iter_mut().skip(1) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *x = (*x * (sigma * z).exp()).max(1.0);
    }
    CardinalityVector::new(v)
}

/// Edge-indicator vector of a path.
pub fn indicator(pg: &PlanGraph, path: &Path) -> Vec<f64> {
    let mut v = vec![0.0; pg.num_edges()];
    for &e in &path.edges {
        v[e] = 1.0;
    }
    v
}

/// A unit flow built as an affine combination of path indicators with
/// random (possibly negative) weights.
pub fn random_feasible_flow(indicators: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = indicators.len();
    let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..1.0)).collect();
    let s: f64 = w.iter().sum();
    if s.abs() < 1e-3 {
        w = vec![1.0 / k as f64; k];
    } else {
        w.iter_mut().for_each(|x| *x /= s);
    }
    let mut f = vec![0.0; indicators[0].len()];
    for (wi, ind) in w.iter().zip(indicators) {
        for (fe, ie) in f.iter_mut().zip(ind) {
            *fe += wi * ie;
        }
    }
    f
}

/// Minimum-energy unit flow found in path space: minimise
/// `Σ C_e (Σ_p w_p P_pe)²` over weights with `Σ w_p = 1`, by eliminating
/// the constraint and solving the resulting least-squares problem with an
/// SVD. Independent of the Laplacian solver.
pub fn path_space_qp(indicators: &[Vec<f64>], costs: &[f64]) -> Vec<f64> {
    let m = costs.len();
    let k = indicators.len();
    let cmax = costs.iter().cloned().fold(0.0, f64::max);
    let sq: Vec<f64> = costs.iter().map(|c| (c / cmax).sqrt()).collect();
    let p0 = &indicators[0];
    if k == 1 {
        return p0.clone();
    }
    let a = DMatrix::from_fn(m, k - 1, |e, j| sq[e] * (indicators[j + 1][e] - p0[e]));
    let b = DVector::from_fn(m, |e, _| -sq[e] * p0[e]);
    let z = a.svd(true, true).solve(&b, 1e-13).unwrap();
    (0..m).map(|e| p0[e] + (0..k - 1).map(|j| z[j] * (indicators[j + 1][e] - p0[e])).sum::<f64>()).collect()
}

/// Double-double number `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
}

impl Dd {
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let s = two_sum(s.hi, s.lo + t.hi);
        two_sum(s.hi, s.lo + t.lo)
    }

    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    fn mul_f64(self, b: f64) -> Dd {
        let p = self.hi * b;
        let e = self.hi.mul_add(b, -p);
        two_sum(p, e + self.lo * b)
    }
}

/// Unit `S -> D` electrical flow computed independently of the crate's
/// solver: the grounded Laplacian is factorised in `f64` and the solution is
/// refined with residuals and potentials carried in double-double, so the
/// currents are accurate to roughly machine precision even when the cost
/// range makes the system badly conditioned.
pub fn precise_flows(pg: &PlanGraph, costs: &[f64]) -> Vec<f64> {
    let n = pg.num_nodes();
    let sink = pg.sink();
    let cmax = costs.iter().cloned().fold(0.0, f64::max);
    let g: Vec<f64> = costs.iter().map(|c| cmax / c).collect();
    let dim = n - 1;
    let mut lap = DMatrix::<f64>::zeros(dim, dim);
    for (id, e) in pg.edges().iter().enumerate() {
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            if a != sink {
                lap[(a, a)] += g[id];
                if b != sink {
                    lap[(a, b)] -= g[id];
                }
            }
        }
    }
    let chol = lap.cholesky().expect("grounded Laplacian is positive definite");
    let mut v = vec![Dd::default(); n];
    for _ in 0..30 {
        // residual r = i - L v, evaluated edge by edge in double-double
        let mut r = vec![Dd::default(); n];
        r[0] = Dd { hi: 1.0, lo: 0.0 };
        for (id, e) in pg.edges().iter().enumerate() {
            let cur = v[e.src].add(v[e.dst].neg()).mul_f64(g[id]);
            r[e.src] = r[e.src].add(cur.neg());
            r[e.dst] = r[e.dst].add(cur);
        }
        let rhs = DVector::from_fn(dim, |i, _| r[i].hi + r[i].lo);
        let scale = rhs.amax();
        if scale == 0.0 {
            break;
        }
        let delta = chol.solve(&rhs);
        for i in 0..dim {
            v[i] = v[i].add(Dd { hi: delta[i], lo: 0.0 });
        }
        if scale < 1e-30 {
            break;
        }
    }
    pg.edges()
        .iter()
        .enumerate()
        .map(|(id, e)| {
            let d = v[e.src].add(v[e.dst].neg());
            (d.hi + d.lo) * g[id]
        })
        .collect()
}

/// Flow-Loss evaluated with [`precise_flows`].
pub fn precise_flow_loss(
    pg: &PlanGraph,
    y_est: &CardinalityVector,
    y_true: &CardinalityVector,
    p: &flowloss::cost_model::CostParams,
) -> f64 {
    let est = flowloss::cost_model::cost_all_edges(pg, y_est, p).unwrap();
    let truth = flowloss::cost_model::cost_all_edges(pg, y_true, p).unwrap();
    let flows = precise_flows(pg, &est);
    let mut sum = Dd::default();
    for (f, c) in flows.iter().zip(&truth) {
        sum = sum.add(Dd { hi: c * f * f, lo: 0.0 });
    }
    sum.hi + sum.lo
}

/// Cost-formula branch of every join edge (edges out of the source have
/// none).
pub fn edge_branches(
    pg: &PlanGraph,
    y: &CardinalityVector,
    p: &flowloss::cost_model::CostParams,
) -> Vec<flowloss::cost_model::Branch> {
    pg.edges()
        .iter()
        .filter(|e| e.src != PlanGraph::SOURCE)
        .map(|e| flowloss::cost_model::branch(y.get(e.src), y.get(pg.singleton(e.alias)), p))
        .collect()
}
