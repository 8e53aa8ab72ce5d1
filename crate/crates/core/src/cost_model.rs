//! Analytic join cost `C(e, Y) = max(floor, min(|u| + λ|b|, |u|·|b|))`.
//!
//! The first branch models an index lookup into `b`, the second a nested
//! loop without an index. `|b|` is always the filtered cardinality of the
//! joined base alias, read from its singleton node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan_graph::{EdgeId, NodeId, PlanGraph};

/// Cost of the edges leaving the source node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SEdgeCost {
    /// Cost of scanning the first table: its filtered cardinality.
    #[default]
    Scan,
    /// Constant `cost_floor`, so the first table choice is free.
    Epsilon,
}

impl std::str::FromStr for SEdgeCost {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scan" => Ok(SEdgeCost::Scan),
            "epsilon" => Ok(SEdgeCost::Epsilon),
            other => Err(Error::Config(format!("unknown s-edge cost `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Index factor λ.
    pub lambda: f64,
    /// Minimum edge cost; keeps every resistance strictly positive.
    pub cost_floor: f64,
    #[serde(default)]
    pub s_edge: SEdgeCost,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { lambda: 0.001, cost_floor: 1.0, s_edge: SEdgeCost::Scan }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.cost_floor > 0.0 && self.cost_floor.is_finite()) {
            return Err(Error::Config(format!(
                "cost floor must be positive, got {}",
                self.cost_floor
            )));
        }
        Ok(())
    }
}

/// One cardinality (rows) per plan-graph node. Entry 0 belongs to the
/// source node and is never read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CardinalityVector(Vec<f64>);

impl CardinalityVector {
    pub fn new(values: Vec<f64>) -> Self {
        CardinalityVector(values)
    }

    /// Builds a vector by evaluating `f` on every non-source node.
    pub fn from_fn(pg: &PlanGraph, mut f: impl FnMut(NodeId) -> f64) -> Self {
        let mut v = vec![1.0; pg.num_nodes()];
        for (id, slot) in v.iter_mut().enumerate().skip(1) {
            *slot = f(id);
        }
        CardinalityVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, node: NodeId) -> f64 {
        self.0[node]
    }

    pub fn set(&mut self, node: NodeId, value: f64) {
        self.0[node] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Multiplies every non-source entry by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut v = self.0.clone();
        for x in v.iter_mut().skip(1) {
            *x *= k;
        }
        CardinalityVector(v)
    }

    pub fn validate(&self, pg: &PlanGraph) -> Result<()> {
        if self.0.len() != pg.num_nodes() {
            return Err(Error::Domain(format!(
                "cardinality vector has {} entries, plan graph has {} nodes",
                self.0.len(),
                pg.num_nodes()
            )));
        }
        for (id, &y) in self.0.iter().enumerate().skip(1) {
            if !(y.is_finite() && y >= 1.0) {
                return Err(Error::Domain(format!(
                    "cardinality of node {} ({}) is {y}; must be finite and >= 1",
                    id,
                    pg.node(id)
                )));
            }
        }
        Ok(())
    }
}

fn check_card(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} cardinality {x} must be finite and >= 1")))
    }
}

/// Which branch of the cost formula determines an edge's cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Index,
    NestedLoop,
    Floor,
}

pub fn branch(u_card: f64, b_card: f64, p: &CostParams) -> Branch {
    let index = u_card + p.lambda * b_card;
    let nested = u_card * b_card;
    if index.min(nested) < p.cost_floor {
        Branch::Floor
    } else if index <= nested {
        Branch::Index
    } else {
        Branch::NestedLoop
    }
}

/// Cost of joining a sub-plan of `u_card` rows with a base relation of
/// `b_card` rows.
pub fn edge_cost(u_card: f64, b_card: f64, p: &CostParams) -> Result<f64> {
    check_card(u_card, "sub-plan")?;
    check_card(b_card, "base")?;
    Ok(p.cost_floor.max((u_card + p.lambda * b_card).min(u_card * b_card)))
}

/// `(∂C/∂u, ∂C/∂b)`. An exact tie between the branches takes the index
/// branch; floored edges have zero gradient.
pub fn edge_cost_grad(u_card: f64, b_card: f64, p: &CostParams) -> Result<(f64, f64)> {
    check_card(u_card, "sub-plan")?;
    check_card(b_card, "base")?;
    Ok(match branch(u_card, b_card, p) {
        Branch::Index => (1.0, p.lambda),
        Branch::NestedLoop => (b_card, u_card),
        Branch::Floor => (0.0, 0.0),
    })
}

/// Cost of an edge leaving the source, given the singleton's cardinality.
fn source_edge_cost(b_card: f64, p: &CostParams) -> (f64, f64) {
    match p.s_edge {
        SEdgeCost::Scan if b_card >= p.cost_floor => (b_card, 1.0),
        SEdgeCost::Scan | SEdgeCost::Epsilon => (p.cost_floor, 0.0),
    }
}

/// Partial derivatives of one edge cost w.r.t. the (at most two) node
/// cardinalities it reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCostGrad {
    /// Source sub-plan node and `∂C/∂|u|`; `None` for edges out of `S`.
    pub u: Option<(NodeId, f64)>,
    /// Singleton node of the joined alias and `∂C/∂|b|`.
    pub b: (NodeId, f64),
}

/// Per-edge costs of the whole plan graph.
pub fn cost_all_edges(pg: &PlanGraph, y: &CardinalityVector, p: &CostParams) -> Result<Vec<f64>> {
    y.validate(pg)?;
    Ok((0..pg.num_edges()).map(|e| cost_one(pg, e, y, p).0).collect())
}

/// Per-edge costs together with their cardinality gradients.
pub fn cost_all_edges_with_grad(
    pg: &PlanGraph,
    y: &CardinalityVector,
    p: &CostParams,
) -> Result<(Vec<f64>, Vec<EdgeCostGrad>)> {
    y.validate(pg)?;
    Ok((0..pg.num_edges()).map(|e| cost_one(pg, e, y, p)).unzip())
}

fn cost_one(pg: &PlanGraph, e: EdgeId, y: &CardinalityVector, p: &CostParams) -> (f64, EdgeCostGrad) {
    let edge = pg.edge(e);
    let b_node = pg.singleton(edge.alias);
    let b = y.get(b_node);
    if edge.src == PlanGraph::SOURCE {
        let (c, db) = source_edge_cost(b, p);
        return (c, EdgeCostGrad { u: None, b: (b_node, db) });
    }
    let u = y.get(edge.src);
    let c = p.cost_floor.max((u + p.lambda * b).min(u * b));
    let (du, db) = match branch(u, b, p) {
        Branch::Index => (1.0, p.lambda),
        Branch::NestedLoop => (b, u),
        Branch::Floor => (0.0, 0.0),
    };
    (c, EdgeCostGrad { u: Some((edge.src, du)), b: (b_node, db) })
}
