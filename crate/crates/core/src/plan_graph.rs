//! The plan graph: a DAG over sub-plans whose source-to-sink paths are
//! exactly the left-deep join orders of a query.
//!
//! Node 0 is the synthetic source `S` (the empty set). The remaining nodes
//! are the connected sub-plans in `(popcount, bitset)` order, so the last
//! node is always the full alias set, which doubles as the sink `D`. Edge
//! ids follow `(source node id, joined alias)` order.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::join_model::{JoinGraph, Query, SubPlan, DEFAULT_ALIAS_CAP};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanEdge {
    pub src: NodeId,
    pub dst: NodeId,
    /// Base alias joined by this edge.
    pub alias: usize,
}

#[derive(Debug, Clone)]
pub struct PlanGraph {
    alias_names: Vec<String>,
    nodes: Vec<SubPlan>,
    index: HashMap<u32, NodeId>,
    edges: Vec<PlanEdge>,
    out_edges: Vec<Vec<EdgeId>>,
    in_edges: Vec<Vec<EdgeId>>,
    singletons: Vec<NodeId>,
}

/// A left-deep plan: the edge ids of an `S -> D` path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub edges: Vec<EdgeId>,
}

impl Path {
    /// Join order (aliases in the order they are joined).
    pub fn join_order(&self, pg: &PlanGraph) -> Vec<usize> {
        self.edges.iter().map(|&e| pg.edge(e).alias).collect()
    }
}

impl PlanGraph {
    pub const SOURCE: NodeId = 0;

    pub fn build(query: &Query) -> Result<Self> {
        Self::from_join_graph(&query.join_graph, DEFAULT_ALIAS_CAP)
    }

    pub fn build_with_cap(query: &Query, cap: usize) -> Result<Self> {
        Self::from_join_graph(&query.join_graph, cap)
    }

    pub fn from_join_graph(jg: &JoinGraph, cap: usize) -> Result<Self> {
        let n = jg.len();
        let mut nodes = vec![SubPlan::EMPTY];
        nodes.extend(jg.enumerate_subplans(cap)?);
        let index: HashMap<u32, NodeId> =
            nodes.iter().enumerate().map(|(i, s)| (s.bits(), i)).collect();

        let mut edges = Vec::new();
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut in_edges = vec![Vec::new(); nodes.len()];
        for (src, &members) in nodes.iter().enumerate() {
            for alias in 0..n {
                if members.contains(alias) {
                    continue;
                }
                let Some(&dst) = index.get(&members.with(alias).bits()) else {
                    continue;
                };
                let id = edges.len();
                edges.push(PlanEdge { src, dst, alias });
                out_edges[src].push(id);
                in_edges[dst].push(id);
            }
        }
        let singletons = (0..n).map(|a| index[&SubPlan::singleton(a).bits()]).collect();
        Ok(PlanGraph {
            alias_names: jg.aliases().iter().map(|a| a.name.clone()).collect(),
            nodes,
            index,
            edges,
            out_edges,
            in_edges,
            singletons,
        })
    }

    pub fn num_aliases(&self) -> usize {
        self.alias_names.len()
    }

    pub fn alias_names(&self) -> &[String] {
        &self.alias_names
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn sink(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn node(&self, id: NodeId) -> SubPlan {
        self.nodes[id]
    }

    pub fn nodes(&self) -> &[SubPlan] {
        &self.nodes
    }

    pub fn node_id(&self, members: SubPlan) -> Option<NodeId> {
        self.index.get(&members.bits()).copied()
    }

    /// Node holding the filtered base relation of `alias`.
    pub fn singleton(&self, alias: usize) -> NodeId {
        self.singletons[alias]
    }

    pub fn edge(&self, id: EdgeId) -> PlanEdge {
        self.edges[id]
    }

    pub fn edges(&self) -> &[PlanEdge] {
        &self.edges
    }

    pub fn out_edges(&self, node: NodeId) -> &[EdgeId] {
        &self.out_edges[node]
    }

    pub fn in_edges(&self, node: NodeId) -> &[EdgeId] {
        &self.in_edges[node]
    }

    /// Direct successors of `node` with the alias joined to reach them.
    pub fn node_children(&self, node: NodeId) -> Vec<(NodeId, usize)> {
        self.out_edges[node]
            .iter()
            .map(|&e| (self.edges[e].dst, self.edges[e].alias))
            .collect()
    }

    /// Lazily yields every `S -> D` path in depth-first edge-id order.
    pub fn paths(&self) -> Paths<'_> {
        Paths { pg: self, stack: vec![(Self::SOURCE, 0)], edges: Vec::new() }
    }

    /// Human-readable name of a node, e.g. `S` or `t⋈ci`.
    pub fn node_label(&self, id: NodeId) -> String {
        if id == Self::SOURCE {
            return "S".to_string();
        }
        self.nodes[id]
            .aliases()
            .map(|a| self.alias_names[a].as_str())
            .collect::<Vec<_>>()
            .join("⋈")
    }

    /// Graphviz rendering; edges optionally annotated with a cost.
    pub fn to_dot(&self, costs: Option<&[f64]>) -> String {
        let mut s = String::from("digraph plan_graph {\n  rankdir=LR;\n");
        for id in 0..self.nodes.len() {
            let _ = writeln!(s, "  n{id} [label=\"{}\"];", self.node_label(id));
        }
        for (id, e) in self.edges.iter().enumerate() {
            match costs {
                Some(c) => {
                    let _ = writeln!(s, "  n{} -> n{} [label=\"{:.3}\"];", e.src, e.dst, c[id]);
                }
                None => {
                    let _ = writeln!(s, "  n{} -> n{};", e.src, e.dst);
                }
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Iterator over plan-graph paths; see [`PlanGraph::paths`].
pub struct Paths<'a> {
    pg: &'a PlanGraph,
    // (node, index of next out-edge to try)
    stack: Vec<(NodeId, usize)>,
    edges: Vec<EdgeId>,
}

impl Iterator for Paths<'_> {
    type Item = Path;

    fn next(&mut self) -> Option<Path> {
        let sink = self.pg.sink();
        while let Some(top) = self.stack.last_mut() {
            let (node, next) = *top;
            if node == sink {
                let path = Path { edges: self.edges.clone() };
                self.stack.pop();
                self.edges.pop();
                return Some(path);
            }
            let outs = &self.pg.out_edges[node];
            if next < outs.len() {
                top.1 += 1;
                let e = outs[next];
                self.edges.push(e);
                self.stack.push((self.pg.edges[e].dst, 0));
            } else {
                self.stack.pop();
                self.edges.pop();
            }
        }
        None
    }
}
