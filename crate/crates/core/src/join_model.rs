//! Schemas, queries and join graphs.
//!
//! Graph nodes are *aliases*, not tables: a self join contributes two
//! aliases that reference the same relation. Alias indices are the canonical
//! identity everywhere downstream, and a [`SubPlan`] is a bitset over them.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on the number of aliases in a query. The plan graph
/// has up to `2^n` nodes and is solved densely.
pub const DEFAULT_ALIAS_CAP: usize = 12;

/// Hard limit imposed by the `u32` bitset representation.
pub const MAX_ALIASES: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    /// Integer column with inclusive domain bounds.
    Integer { min: i64, max: i64 },
    /// Categorical codes `0..alphabet`.
    Categorical { alphabet: u32 },
    /// Free text drawn from a vocabulary of `alphabet` distinct strings.
    String { alphabet: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Relation {
    pub id: usize,
    pub name: String,
    pub row_count: u64,
    pub columns: Vec<Column>,
}

impl Relation {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_count == 0 {
            return Err(Error::Schema(format!("relation `{}` has zero rows", self.name)));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate column `{}` in relation `{}`",
                    c.name, self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Schema {
    pub relations: Vec<Relation>,
}

impl Schema {
    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.relations {
            r.validate()?;
            if !seen.insert(r.name.as_str()) {
                return Err(Error::Schema(format!("duplicate relation `{}`", r.name)));
            }
        }
        Ok(())
    }
}

/// A set of aliases, identified by its bitset. Used both for sub-plans and
/// for arbitrary member sets passed to [`JoinGraph::is_connected`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct SubPlan(u32);

impl SubPlan {
    pub const EMPTY: SubPlan = SubPlan(0);

    pub fn from_bits(bits: u32) -> Self {
        SubPlan(bits)
    }

    pub fn singleton(alias: usize) -> Self {
        SubPlan(1 << alias)
    }

    /// All aliases `0..n`.
    pub fn full(n: usize) -> Self {
        if n >= 32 {
            SubPlan(u32::MAX)
        } else {
            SubPlan((1u32 << n) - 1)
        }
    }

    pub fn from_aliases<I: IntoIterator<Item = usize>>(aliases: I) -> Self {
        SubPlan(aliases.into_iter().fold(0, |acc, a| acc | (1 << a)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, alias: usize) -> bool {
        self.0 & (1 << alias) != 0
    }

    pub fn with(self, alias: usize) -> Self {
        SubPlan(self.0 | (1 << alias))
    }

    pub fn without(self, alias: usize) -> Self {
        SubPlan(self.0 & !(1 << alias))
    }

    pub fn union(self, other: SubPlan) -> Self {
        SubPlan(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: SubPlan) -> bool {
        self.0 & !other.0 == 0
    }

    /// Lowest member alias, if any.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Member aliases in ascending order.
    pub fn aliases(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let a = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(a)
            }
        })
    }

    /// Deterministic order used for node ids: popcount, then bitset value.
    pub fn order_key(self) -> (u32, u32) {
        (self.0.count_ones(), self.0)
    }
}

impl fmt::Display for SubPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.aliases().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Alias {
    pub name: String,
    pub relation: String,
}

/// Equi-join `aliases[left].left_column = aliases[right].right_column`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct JoinEdge {
    pub left: usize,
    pub right: usize,
    pub left_column: String,
    pub right_column: String,
}

impl JoinEdge {
    /// Column of this edge on `alias`'s side, or `None` if the alias does
    /// not touch the edge.
    pub fn column_of(&self, alias: usize) -> Option<&str> {
        if alias == self.left {
            Some(&self.left_column)
        } else if alias == self.right {
            Some(&self.right_column)
        } else {
            None
        }
    }

    pub fn other(&self, alias: usize) -> usize {
        if alias == self.left {
            self.right
        } else {
            self.left
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct JoinGraphDef {
    aliases: Vec<Alias>,
    edges: Vec<JoinEdge>,
}

/// Connected, loop-free graph over at least two aliases.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(try_from = "JoinGraphDef")]
pub struct JoinGraph {
    aliases: Vec<Alias>,
    edges: Vec<JoinEdge>,
    #[serde(skip_serializing)]
    adjacency: Vec<u32>,
}

impl TryFrom<JoinGraphDef> for JoinGraph {
    type Error = Error;

    fn try_from(def: JoinGraphDef) -> Result<Self> {
        JoinGraph::new(def.aliases, def.edges)
    }
}

impl JoinGraph {
    pub fn new(aliases: Vec<Alias>, edges: Vec<JoinEdge>) -> Result<Self> {
        let n = aliases.len();
        if n < 2 {
            return Err(Error::Schema("a join graph needs at least 2 aliases".into()));
        }
        if n > MAX_ALIASES {
            return Err(Error::Capacity(format!(
                "{n} aliases exceed the bitset limit of {MAX_ALIASES}"
            )));
        }
        let mut names = HashSet::new();
        for a in &aliases {
            if !names.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate alias `{}`", a.name)));
            }
        }
        let mut adjacency = vec![0u32; n];
        for e in &edges {
            if e.left >= n || e.right >= n {
                return Err(Error::Schema(format!(
                    "join edge ({}, {}) references a missing alias",
                    e.left, e.right
                )));
            }
            if e.left == e.right {
                return Err(Error::Schema(format!(
                    "alias `{}` joins itself",
                    aliases[e.left].name
                )));
            }
            adjacency[e.left] |= 1 << e.right;
            adjacency[e.right] |= 1 << e.left;
        }
        let graph = JoinGraph { aliases, edges, adjacency };
        if !graph.is_connected(SubPlan::full(n)) {
            return Err(Error::Schema("join graph is not connected".into()));
        }
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    pub fn aliases(&self) -> &[Alias] {
        &self.aliases
    }

    pub fn edges(&self) -> &[JoinEdge] {
        &self.edges
    }

    pub fn alias_index(&self, name: &str) -> Option<usize> {
        self.aliases.iter().position(|a| a.name == name)
    }

    /// Neighbour bitset of one alias.
    pub fn neighbors(&self, alias: usize) -> u32 {
        self.adjacency[alias]
    }

    pub fn full(&self) -> SubPlan {
        SubPlan::full(self.len())
    }

    /// True iff `members` is non-empty and induces a connected subgraph.
    pub fn is_connected(&self, members: SubPlan) -> bool {
        let Some(start) = members.first() else {
            return false;
        };
        let mut reached = 1u32 << start;
        let mut frontier = reached;
        while frontier != 0 {
            let a = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let next = self.adjacency[a] & members.bits() & !reached;
            reached |= next;
            frontier |= next;
        }
        reached == members.bits()
    }

    /// Edges with both endpoints inside `members`, in edge order.
    pub fn edges_within(&self, members: SubPlan) -> impl Iterator<Item = &JoinEdge> {
        self.edges
            .iter()
            .filter(move |e| members.contains(e.left) && members.contains(e.right))
    }

    /// Every connected non-empty alias subset, ordered by popcount then
    /// bitset value.
    pub fn enumerate_subplans(&self, cap: usize) -> Result<Vec<SubPlan>> {
        let n = self.len();
        if n > cap {
            return Err(Error::Capacity(format!(
                "query has {n} aliases, cap is {cap}"
            )));
        }
        let mut out: Vec<SubPlan> = (1..(1u64 << n))
            .map(|b| SubPlan::from_bits(b as u32))
            .filter(|s| self.is_connected(*s))
            .collect();
        out.sort_by_key(|s| s.order_key());
        Ok(out)
    }

    /// BFS order over `members` starting from the lowest alias, together with
    /// the tree parent of every alias after the first.
    pub fn bfs_order(&self, members: SubPlan) -> Vec<(usize, Option<usize>)> {
        let Some(start) = members.first() else {
            return Vec::new();
        };
        let mut order = vec![(start, None)];
        let mut seen = SubPlan::singleton(start);
        let mut head = 0;
        while head < order.len() {
            let a = order[head].0;
            head += 1;
            let next = SubPlan::from_bits(self.adjacency[a] & members.bits() & !seen.bits());
            for b in next.aliases() {
                seen = seen.with(b);
                order.push((b, Some(a)));
            }
        }
        order
    }

    /// Checks that every alias and join column exists in `schema`.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for a in &self.aliases {
            if schema.relation(&a.relation).is_none() {
                return Err(Error::Schema(format!(
                    "alias `{}` references unknown relation `{}`",
                    a.name, a.relation
                )));
            }
        }
        for e in &self.edges {
            for (alias, col) in [(e.left, &e.left_column), (e.right, &e.right_column)] {
                let rel = schema.relation(&self.aliases[alias].relation).expect("checked");
                if rel.column(col).is_none() {
                    return Err(Error::Schema(format!(
                        "join column `{}.{}` does not exist",
                        self.aliases[alias].name, col
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Predicate {
    /// Inclusive integer range.
    Range { column: String, lo: i64, hi: i64 },
    In { column: String, values: Vec<Value> },
    /// SQL `LIKE` pattern with `%` and `_` wildcards.
    Like { column: String, pattern: String },
}

impl Predicate {
    pub fn column(&self) -> &str {
        match self {
            Predicate::Range { column, .. }
            | Predicate::In { column, .. }
            | Predicate::Like { column, .. } => column,
        }
    }

    pub fn op(&self) -> PredicateOp {
        match self {
            Predicate::Range { .. } => PredicateOp::Range,
            Predicate::In { .. } => PredicateOp::In,
            Predicate::Like { .. } => PredicateOp::Like,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum PredicateOp {
    Range,
    In,
    Like,
}

impl fmt::Display for PredicateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredicateOp::Range => "range",
            PredicateOp::In => "in",
            PredicateOp::Like => "like",
        })
    }
}

/// A select-project-join query: a join graph plus per-alias filters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Query {
    pub id: String,
    #[serde(default)]
    pub template: String,
    pub join_graph: JoinGraph,
    /// `predicates[i]` filters alias `i`.
    pub predicates: Vec<Vec<Predicate>>,
}

impl Query {
    pub fn new(id: impl Into<String>, join_graph: JoinGraph) -> Self {
        let n = join_graph.len();
        Query {
            id: id.into(),
            template: String::new(),
            join_graph,
            predicates: vec![Vec::new(); n],
        }
    }

    pub fn num_aliases(&self) -> usize {
        self.join_graph.len()
    }

    /// Identity of the query's content, ignoring its id and template name.
    pub fn content_key(&self) -> String {
        serde_json::to_string(&(&self.join_graph, &self.predicates)).expect("serializable")
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        self.join_graph.validate(schema)?;
        if self.predicates.len() != self.join_graph.len() {
            return Err(Error::Schema(format!(
                "query `{}` has predicate lists for {} aliases, expected {}",
                self.id,
                self.predicates.len(),
                self.join_graph.len()
            )));
        }
        for (i, preds) in self.predicates.iter().enumerate() {
            let alias = &self.join_graph.aliases()[i];
            let rel = schema.relation(&alias.relation).expect("validated");
            for p in preds {
                let col = rel.column(p.column()).ok_or_else(|| {
                    Error::Schema(format!(
                        "predicate on unknown column `{}.{}`",
                        alias.name,
                        p.column()
                    ))
                })?;
                let compatible = matches!(
                    (p.op(), &col.kind),
                    (PredicateOp::Range, ColumnKind::Integer { .. })
                        | (PredicateOp::In, _)
                        | (PredicateOp::Like, ColumnKind::String { .. })
                );
                if !compatible {
                    return Err(Error::Schema(format!(
                        "{} predicate is not applicable to column `{}.{}`",
                        p.op(),
                        alias.name,
                        col.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn alias(name: &str) -> Alias {
        Alias { name: name.into(), relation: name.into() }
    }

    pub fn edge(l: usize, r: usize) -> JoinEdge {
        JoinEdge { left: l, right: r, left_column: "id".into(), right_column: "id".into() }
    }

    pub fn graph(n: usize, edges: &[(usize, usize)]) -> JoinGraph {
        let aliases = (0..n).map(|i| alias(&((b'A' + i as u8) as char).to_string())).collect();
        JoinGraph::new(aliases, edges.iter().map(|&(l, r)| edge(l, r)).collect()).unwrap()
    }

    pub fn chain3() -> JoinGraph {
        graph(3, &[(0, 1), (1, 2)])
    }

    pub fn clique3() -> JoinGraph {
        graph(3, &[(0, 1), (0, 2), (1, 2)])
    }

    pub fn star4() -> JoinGraph {
        graph(4, &[(0, 1), (0, 2), (0, 3)])
    }

    fn sp(aliases: &[usize]) -> SubPlan {
        SubPlan::from_aliases(aliases.iter().copied())
    }

    #[test]
    fn chain_subplans_skip_cross_join() {
        let subs = chain3().enumerate_subplans(DEFAULT_ALIAS_CAP).unwrap();
        let expected = vec![sp(&[0]), sp(&[1]), sp(&[2]), sp(&[0, 1]), sp(&[1, 2]), sp(&[0, 1, 2])];
        assert_eq!(subs, expected);
        assert!(!subs.contains(&sp(&[0, 2])));
    }

    #[test]
    fn clique_has_all_subsets() {
        assert_eq!(clique3().enumerate_subplans(DEFAULT_ALIAS_CAP).unwrap().len(), 7);
    }

    #[test]
    fn star_has_eleven_subplans() {
        let g = star4();
        // brute force over all 15 subsets
        let brute = (1u32..16)
            .filter(|&b| {
                let s = SubPlan::from_bits(b);
                // connected iff single alias or contains the centre
                s.len() == 1 || s.contains(0)
            })
            .count();
        assert_eq!(brute, 11);
        let subs = g.enumerate_subplans(DEFAULT_ALIAS_CAP).unwrap();
        assert_eq!(subs.len(), 11);
        assert_eq!(subs.iter().filter(|s| s.len() == 1).count(), 4);
        assert_eq!(subs.iter().filter(|s| s.len() == 2).count(), 3);
        assert_eq!(subs.iter().filter(|s| s.len() == 3).count(), 3);
    }

    #[test]
    fn connectivity_examples() {
        assert!(!chain3().is_connected(sp(&[0, 2])));
        assert!(chain3().is_connected(sp(&[1])));
        assert!(!star4().is_connected(sp(&[1, 2])));
        assert!(!star4().is_connected(SubPlan::EMPTY));
    }

    #[test]
    fn capacity_error() {
        let edges: Vec<_> = (0..13).map(|i| (i, i + 1)).collect();
        let g = graph(14, &edges);
        assert!(matches!(g.enumerate_subplans(DEFAULT_ALIAS_CAP), Err(Error::Capacity(_))));
        assert!(g.enumerate_subplans(14).is_ok());
    }

    #[test]
    fn rejects_invalid_graphs() {
        let a = vec![alias("A"), alias("B"), alias("C")];
        assert!(JoinGraph::new(a.clone(), vec![edge(0, 1)]).is_err());
        assert!(JoinGraph::new(a.clone(), vec![edge(0, 1), edge(1, 1), edge(1, 2)]).is_err());
        assert!(JoinGraph::new(vec![alias("A")], vec![]).is_err());
    }

    #[test]
    fn self_join_aliases_are_distinct_nodes() {
        let aliases = vec![
            Alias { name: "t1".into(), relation: "title".into() },
            Alias { name: "t2".into(), relation: "title".into() },
        ];
        let g = JoinGraph::new(aliases, vec![edge(0, 1)]).unwrap();
        assert_eq!(g.enumerate_subplans(DEFAULT_ALIAS_CAP).unwrap().len(), 3);
    }

    #[test]
    fn json_roundtrip_revalidates() {
        let g = chain3();
        let s = serde_json::to_string(&g).unwrap();
        let back: JoinGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"aliases":[{"name":"a","relation":"a"},{"name":"b","relation":"b"}],"edges":[]}"#;
        assert!(serde_json::from_str::<JoinGraph>(bad).is_err());
    }

    #[test]
    fn bfs_order_has_parents() {
        let order = star4().bfs_order(sp(&[0, 2, 3]));
        assert_eq!(order, vec![(0, None), (2, Some(0)), (3, Some(0))]);
    }

    proptest::proptest! {
        #[test]
        fn enumeration_matches_brute_force(n in 2usize..=10, extra in proptest::collection::vec((0usize..10, 0usize..10), 0..12), seed in 0u64..1000) {
            // random spanning tree plus extra edges
            let mut edges = Vec::new();
            let mut state = seed;
            for i in 1..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                edges.push(((state >> 33) as usize % i, i));
            }
            for (a, b) in extra {
                let (a, b) = (a % n, b % n);
                if a != b { edges.push((a, b)); }
            }
            let g = graph(n, &edges);
            let subs = g.enumerate_subplans(DEFAULT_ALIAS_CAP).unwrap();
            let brute: Vec<u32> = (1u32..(1 << n)).filter(|&b| {
                // independent check: grow from lowest member via edge list
                let mut reached = b & b.wrapping_neg();
                loop {
                    let mut next = reached;
                    for &(x, y) in &edges {
                        if b & (1 << x) != 0 && b & (1 << y) != 0 {
                            if reached & (1 << x) != 0 { next |= 1 << y; }
                            if reached & (1 << y) != 0 { next |= 1 << x; }
                        }
                    }
                    if next == reached { break; }
                    reached = next;
                }
                reached == b
            }).collect();
            proptest::prop_assert_eq!(subs.len(), brute.len());
            for w in subs.windows(2) {
                proptest::prop_assert!(w[0].order_key() < w[1].order_key());
            }
            for s in &subs {
                proptest::prop_assert!(g.is_connected(*s));
            }
        }
    }
}
