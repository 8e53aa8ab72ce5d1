//! Sub-plan feature vectors and the heuristic cardinality estimator.
//!
//! A vector is the concatenation of four segments:
//!
//! - `tables`: per alias, a membership bit and (optionally) `log1p` of the
//!   heuristic filtered row count;
//! - `joins`: a bit per join edge inside the sub-plan;
//! - `predicates`: one slot per (alias, column, operator). `range` slots hold
//!   `[present, lo, hi]` with bounds min-max normalised to the column domain;
//!   `in` slots hold hashed value counts; `like` slots hold hashed character
//!   n-gram counts followed by `log1p(literal length)` and a digit flag;
//! - `plan_graph`: child count, `log1p` heuristic cardinality, `log1p`
//!   heuristic cost of the cheapest path reaching the node, and min / mean /
//!   max of `log1p` heuristic child edge costs and min / max of
//!   `log1p(child / parent)` cardinality ratios.
//!
//! The heuristic estimator assumes independence: per-alias selectivities
//! come from most-common-value lists and uniform ranges, and every join edge
//! contributes `1 / max(ndv_left, ndv_right)`.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cost_model::{cost_all_edges, CardinalityVector, CostParams};
use crate::error::{Error, Result};
use crate::join_model::{ColumnKind, JoinGraph, Predicate, PredicateOp, Query, Schema, SubPlan, Value};
use crate::plan_graph::PlanGraph;
use crate::synthdb::{like_regex, DbStats};

/// Selectivity assumed for the part of a `LIKE` not explained by the
/// most-common-value list.
pub const DEFAULT_LIKE_SELECTIVITY: f64 = 0.05;

const PLAN_GRAPH_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub hash_bins: usize,
    pub ngram_size: usize,
    pub hash_seed: u64,
    pub include_gq: bool,
    pub include_heuristic: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { hash_bins: 10, ngram_size: 3, hash_seed: 0x5eed, include_gq: true, include_heuristic: true }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_bins < 2 {
            return Err(Error::Config(format!("hash_bins must be at least 2, got {}", self.hash_bins)));
        }
        if self.ngram_size == 0 {
            return Err(Error::Config("ngram_size must be positive".into()));
        }
        Ok(())
    }
}

/// Identity of an alias across queries.
fn alias_key(jg: &JoinGraph, alias: usize) -> String {
    let a = &jg.aliases()[alias];
    format!("{}:{}", a.name, a.relation)
}

fn join_key(jg: &JoinGraph, edge: usize) -> String {
    let e = &jg.edges()[edge];
    let l = format!("{}.{}", jg.aliases()[e.left].name, e.left_column);
    let r = format!("{}.{}", jg.aliases()[e.right].name, e.right_column);
    if l <= r {
        format!("{l}={r}")
    } else {
        format!("{r}={l}")
    }
}

/// One predicate slot: alias key, column and operator, plus the column's
/// integer domain for range normalisation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PredicateSlot {
    pub alias: String,
    pub column: String,
    pub op: PredicateOp,
    pub domain: Option<(i64, i64)>,
}

/// The vocabulary of the feature space: every alias, join edge and predicate
/// slot that can occur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub aliases: Vec<String>,
    pub joins: Vec<String>,
    pub predicates: Vec<PredicateSlot>,
}

impl FeatureSchema {
    /// Union of everything appearing in `queries`, sorted.
    pub fn from_queries<'q>(schema: &Schema, queries: impl IntoIterator<Item = &'q Query>) -> Result<Self> {
        let mut aliases = BTreeSet::new();
        let mut joins = BTreeSet::new();
        let mut preds = BTreeSet::new();
        for q in queries {
            q.validate(schema)?;
            let jg = &q.join_graph;
            for a in 0..jg.len() {
                aliases.insert(alias_key(jg, a));
                let rel = schema.relation(&jg.aliases()[a].relation).expect("validated");
                for p in &q.predicates[a] {
                    let domain = match rel.column(p.column()).expect("validated").kind {
                        ColumnKind::Integer { min, max } => Some((min, max)),
                        _ => None,
                    };
                    preds.insert(PredicateSlot {
                        alias: alias_key(jg, a),
                        column: p.column().to_string(),
                        op: p.op(),
                        domain,
                    });
                }
            }
            for e in 0..jg.edges().len() {
                joins.insert(join_key(jg, e));
            }
        }
        Ok(FeatureSchema {
            aliases: aliases.into_iter().collect(),
            joins: joins.into_iter().collect(),
            predicates: preds.into_iter().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotLayout {
    #[serde(flatten)]
    pub slot: PredicateSlot,
    pub offset: usize,
    pub len: usize,
}

/// Where every segment and predicate slot lives in the vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub len: usize,
    pub segments: Vec<Segment>,
    pub slots: Vec<SlotLayout>,
    pub per_alias: usize,
}

impl FeatureLayout {
    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

fn slot_len(op: PredicateOp, cfg: &FeatureConfig) -> usize {
    match op {
        PredicateOp::Range => 3,
        PredicateOp::In => cfg.hash_bins,
        PredicateOp::Like => cfg.hash_bins + 2,
    }
}

pub fn feature_layout(fs: &FeatureSchema, cfg: &FeatureConfig) -> FeatureLayout {
    let per_alias = 1 + usize::from(cfg.include_heuristic);
    let mut segments = Vec::new();
    let mut offset = 0;
    let mut push = |name: &str, len: usize, offset: &mut usize| {
        segments.push(Segment { name: name.to_string(), offset: *offset, len });
        *offset += len;
    };
    push("tables", fs.aliases.len() * per_alias, &mut offset);
    push("joins", fs.joins.len(), &mut offset);
    let pred_start = offset;
    let mut slots = Vec::new();
    let mut o = pred_start;
    for s in &fs.predicates {
        let len = slot_len(s.op, cfg);
        slots.push(SlotLayout { slot: s.clone(), offset: o, len });
        o += len;
    }
    push("predicates", o - pred_start, &mut offset);
    push("plan_graph", if cfg.include_gq { PLAN_GRAPH_FEATURES } else { 0 }, &mut offset);
    FeatureLayout { len: offset, segments, slots, per_alias }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Seeded FNV-1a, reduced modulo `bins`.
fn hash_bin(seed: u64, s: &str, bins: usize) -> usize {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in s.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    // fold the high bits in; FNV's low bits are weak for short keys
    ((h ^ (h >> 32)) % bins as u64) as usize
}

/// Character n-grams of the literal parts of a `LIKE` pattern. Literal runs
/// shorter than `n` contribute themselves.
pub fn like_ngrams(pattern: &str, n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for lit in pattern.split(['%', '_']).filter(|s| !s.is_empty()) {
        let chars: Vec<char> = lit.chars().collect();
        if chars.len() < n {
            out.push(lit.to_string());
        } else {
            out.extend(chars.windows(n).map(|w| w.iter().collect()));
        }
    }
    out
}

fn value_key(v: &Value) -> String {
    match v {
        Value::Int(i) => format!("i:{i}"),
        Value::Str(s) => format!("s:{s}"),
    }
}

/// Independence-assumption estimator over table statistics.
pub struct Heuristic<'a> {
    pub stats: &'a DbStats,
}

impl Heuristic<'_> {
    fn predicate_selectivity(&self, relation: &str, p: &Predicate) -> Result<f64> {
        let cs = self
            .stats
            .column(relation, p.column())
            .ok_or_else(|| Error::Schema(format!("no statistics for `{relation}.{}`", p.column())))?;
        let mcv_total: f64 = cs.mcv.iter().map(|m| m.1).sum();
        let rest_ndv = cs.ndv.saturating_sub(cs.mcv.len() as u64).max(1) as f64;
        let rest_each = (1.0 - mcv_total).max(0.0) / rest_ndv;
        Ok(match p {
            Predicate::Range { lo, hi, .. } => match (cs.min, cs.max) {
                (Some(min), Some(max)) => {
                    let lo = (*lo).max(min);
                    let hi = (*hi).min(max);
                    if hi < lo {
                        0.0
                    } else {
                        (hi - lo + 1) as f64 / (max - min + 1) as f64
                    }
                }
                _ => 1.0,
            },
            Predicate::In { values, .. } => values
                .iter()
                .map(|v| cs.mcv.iter().find(|m| &m.0 == v).map_or(rest_each, |m| m.1))
                .sum::<f64>()
                .min(1.0),
            Predicate::Like { pattern, .. } => {
                let re = like_regex(pattern);
                let hit: f64 = cs
                    .mcv
                    .iter()
                    .filter(|m| matches!(&m.0, Value::Str(s) if re.is_match(s)))
                    .map(|m| m.1)
                    .sum();
                hit + (1.0 - mcv_total).max(0.0) * DEFAULT_LIKE_SELECTIVITY
            }
        })
    }

    /// Estimated filtered rows of every alias, at least 1.
    pub fn base_rows(&self, query: &Query) -> Result<Vec<f64>> {
        query
            .join_graph
            .aliases()
            .iter()
            .zip(&query.predicates)
            .map(|(a, preds)| {
                let t = self
                    .stats
                    .table(&a.relation)
                    .ok_or_else(|| Error::Schema(format!("no statistics for `{}`", a.relation)))?;
                let mut sel = 1.0;
                for p in preds {
                    sel *= self.predicate_selectivity(&a.relation, p)?;
                }
                Ok((t.rows as f64 * sel).max(1.0))
            })
            .collect()
    }

    fn join_selectivity(&self, query: &Query, edge: usize) -> f64 {
        let jg = &query.join_graph;
        let e = &jg.edges()[edge];
        let ndv = |alias: usize, col: &str| {
            self.stats.column(&jg.aliases()[alias].relation, col).map_or(1, |c| c.ndv).max(1)
        };
        1.0 / ndv(e.left, &e.left_column).max(ndv(e.right, &e.right_column)) as f64
    }

    /// Heuristic cardinality of every plan-graph node.
    pub fn cardinalities(&self, query: &Query, pg: &PlanGraph) -> Result<CardinalityVector> {
        let base = self.base_rows(query)?;
        let jg = &query.join_graph;
        let sels: Vec<f64> = (0..jg.edges().len()).map(|e| self.join_selectivity(query, e)).collect();
        Ok(CardinalityVector::from_fn(pg, |id| {
            if id == PlanGraph::SOURCE {
                return 1.0;
            }
            let members = pg.node(id);
            let mut y: f64 = members.aliases().map(|a| base[a]).product();
            for (i, e) in jg.edges().iter().enumerate() {
                if members.contains(e.left) && members.contains(e.right) {
                    y *= sels[i];
                }
            }
            y.max(1.0)
        }))
    }
}

/// Features of every non-source node of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub heuristic: CardinalityVector,
    /// `rows[node - 1]` is the vector of node `node`.
    pub rows: Vec<FeatureVector>,
    /// `ln` of the product of member table sizes, per node (0 for the source).
    pub log_upper: Vec<f64>,
}

pub struct Featurizer {
    pub schema: FeatureSchema,
    pub cfg: FeatureConfig,
    layout: FeatureLayout,
    aliases: HashMap<String, usize>,
    joins: HashMap<String, usize>,
    slots: HashMap<(String, String, PredicateOp), usize>,
}

impl Featurizer {
    pub fn new(schema: FeatureSchema, cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = feature_layout(&schema, &cfg);
        let aliases = schema.aliases.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let joins = schema.joins.iter().enumerate().map(|(i, j)| (j.clone(), i)).collect();
        let slots = layout
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.slot.alias.clone(), s.slot.column.clone(), s.slot.op), i))
            .collect();
        Ok(Featurizer { schema, cfg, layout, aliases, joins, slots })
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len
    }

    fn write_predicate(&self, out: &mut [f64], alias: &str, p: &Predicate) -> Result<()> {
        let i = *self
            .slots
            .get(&(alias.to_string(), p.column().to_string(), p.op()))
            .ok_or_else(|| Error::Schema(format!("no feature slot for {} on `{alias}.{}`", p.op(), p.column())))?;
        let s = &self.layout.slots[i];
        let seg = &mut out[s.offset..s.offset + s.len];
        let bins = self.cfg.hash_bins;
        match p {
            Predicate::Range { lo, hi, .. } => {
                let (min, max) = s.slot.domain.unwrap_or((0, 1));
                let span = (max - min).max(1) as f64;
                let norm = |v: i64| ((v - min) as f64 / span).clamp(0.0, 1.0);
                seg[0] = 1.0;
                seg[1] = norm(*lo);
                seg[2] = norm(*hi);
            }
            Predicate::In { values, .. } => {
                for v in values {
                    seg[hash_bin(self.cfg.hash_seed, &value_key(v), bins)] += 1.0;
                }
            }
            Predicate::Like { pattern, .. } => {
                for g in like_ngrams(pattern, self.cfg.ngram_size) {
                    seg[hash_bin(self.cfg.hash_seed, &g, bins)] += 1.0;
                }
                let literal: Vec<char> = pattern.chars().filter(|c| *c != '%' && *c != '_').collect();
                seg[bins] = (literal.len() as f64).ln_1p();
                seg[bins + 1] = f64::from(u8::from(literal.iter().any(char::is_ascii_digit)));
            }
        }
        Ok(())
    }

    /// Features of one sub-plan. `heuristic` is the query's heuristic
    /// cardinality vector and `reach_cost` the heuristic cost of the
    /// cheapest path to every node (see [`Featurizer::featurize_query`]).
    pub fn featurize_subplan(
        &self,
        query: &Query,
        subplan: SubPlan,
        pg: &PlanGraph,
        heuristic: &CardinalityVector,
        edge_costs: &[f64],
        reach_cost: &[f64],
    ) -> Result<FeatureVector> {
        let node = pg
            .node_id(subplan)
            .ok_or_else(|| Error::Domain(format!("sub-plan {subplan} is not in the plan graph")))?;
        let jg = &query.join_graph;
        let mut v = vec![0.0; self.layout.len];
        let tables = self.layout.segment("tables").expect("present").offset;
        let joins = self.layout.segment("joins").expect("present").offset;
        for a in subplan.aliases() {
            let key = alias_key(jg, a);
            let i = *self.aliases.get(&key).ok_or_else(|| Error::Schema(format!("unknown alias `{key}`")))?;
            let o = tables + i * self.layout.per_alias;
            v[o] = 1.0;
            if self.cfg.include_heuristic {
                v[o + 1] = heuristic.get(pg.singleton(a)).ln_1p();
            }
            for p in &query.predicates[a] {
                self.write_predicate(&mut v, &key, p)?;
            }
        }
        for (e, edge) in jg.edges().iter().enumerate() {
            if subplan.contains(edge.left) && subplan.contains(edge.right) {
                let key = join_key(jg, e);
                let i = *self.joins.get(&key).ok_or_else(|| Error::Schema(format!("unknown join `{key}`")))?;
                v[joins + i] = 1.0;
            }
        }
        if self.cfg.include_gq {
            let g = self.layout.segment("plan_graph").expect("present").offset;
            let own = heuristic.get(node);
            let outs = pg.out_edges(node);
            v[g] = outs.len() as f64;
            v[g + 1] = own.ln_1p();
            v[g + 2] = reach_cost[node].ln_1p();
            if !outs.is_empty() {
                let costs: Vec<f64> = outs.iter().map(|&e| edge_costs[e].ln_1p()).collect();
                let ratios: Vec<f64> = outs.iter().map(|&e| (heuristic.get(pg.edge(e).dst) / own).ln_1p()).collect();
                v[g + 3] = costs.iter().copied().fold(f64::INFINITY, f64::min);
                v[g + 4] = costs.iter().sum::<f64>() / costs.len() as f64;
                v[g + 5] = costs.iter().copied().fold(0.0, f64::max);
                v[g + 6] = ratios.iter().copied().fold(f64::INFINITY, f64::min);
                v[g + 7] = ratios.iter().copied().fold(0.0, f64::max);
            }
        }
        Ok(FeatureVector { values: v })
    }

    /// Features for every node of `query`'s plan graph.
    pub fn featurize_query(&self, query: &Query, pg: &PlanGraph, stats: &DbStats) -> Result<QueryFeatures> {
        let heuristic = Heuristic { stats }.cardinalities(query, pg)?;
        let edge_costs = cost_all_edges(pg, &heuristic, &CostParams::default())?;
        let reach = reach_costs(pg, &edge_costs);
        let rows = (1..pg.num_nodes())
            .map(|id| self.featurize_subplan(query, pg.node(id), pg, &heuristic, &edge_costs, &reach))
            .collect::<Result<_>>()?;
        let mut log_upper = vec![0.0; pg.num_nodes()];
        for (id, slot) in log_upper.iter_mut().enumerate().skip(1) {
            *slot = pg
                .node(id)
                .aliases()
                .map(|a| {
                    let rel = &query.join_graph.aliases()[a].relation;
                    stats.table(rel).map_or(1.0, |t| (t.rows.max(1)) as f64).ln()
                })
                .sum();
        }
        Ok(QueryFeatures { heuristic, rows, log_upper })
    }
}

/// Cost of the cheapest path from the source to every node.
pub fn reach_costs(pg: &PlanGraph, edge_costs: &[f64]) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; pg.num_nodes()];
    dist[PlanGraph::SOURCE] = 0.0;
    for v in 1..pg.num_nodes() {
        for &e in pg.in_edges(v) {
            dist[v] = dist[v].min(dist[pg.edge(e).src] + edge_costs[e]);
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::join_model::{Alias, Column, JoinEdge, Relation};
    use crate::synthdb::{generate_db, tests::small_spec, ColumnStats, TableStats};

    fn schema3() -> Schema {
        let rel = |id: usize, name: &str| Relation {
            id,
            name: name.into(),
            row_count: 1000,
            columns: vec![
                Column { name: "id".into(), kind: ColumnKind::Integer { min: 0, max: 999 } },
                Column { name: "v".into(), kind: ColumnKind::Integer { min: 0, max: 100 } },
                Column { name: "s".into(), kind: ColumnKind::String { alphabet: 50 } },
            ],
        };
        Schema { relations: vec![rel(0, "r"), rel(1, "s"), rel(2, "t")] }
    }

    fn stats3() -> DbStats {
        let col = |name: &str, ndv: u64, min: Option<i64>, max: Option<i64>| ColumnStats {
            name: name.into(),
            ndv,
            min,
            max,
            mcv: vec![],
        };
        DbStats {
            tables: ["r", "s", "t"]
                .iter()
                .map(|n| TableStats {
                    name: n.to_string(),
                    rows: 1000,
                    columns: vec![col("id", 1000, Some(0), Some(999)), col("v", 101, Some(0), Some(100)), col("s", 50, None, None)],
                })
                .collect(),
        }
    }

    fn triangle(preds: Vec<Vec<Predicate>>) -> Query {
        let al = |n: &str| Alias { name: n.into(), relation: n.into() };
        let je = |l, r| JoinEdge { left: l, right: r, left_column: "id".into(), right_column: "id".into() };
        let jg = JoinGraph::new(vec![al("r"), al("s"), al("t")], vec![je(0, 1), je(1, 2), je(0, 2)]).unwrap();
        let mut q = Query::new("q", jg);
        q.predicates = preds;
        q
    }

    fn strs(v: &[&str]) -> Vec<Value> {
        v.iter().map(|s| Value::Str(s.to_string())).collect()
    }

    fn rich_query() -> Query {
        triangle(vec![
            vec![Predicate::Range { column: "v".into(), lo: 10, hi: 20 }],
            vec![
                Predicate::In { column: "s".into(), values: strs(&["kara", "lora", "mira"]) },
                Predicate::Like { column: "s".into(), pattern: "%ka1%".into() },
            ],
            vec![Predicate::In { column: "v".into(), values: vec![Value::Int(3), Value::Int(4)] }],
        ])
    }

    fn setup(q: &Query, cfg: FeatureConfig) -> (Featurizer, PlanGraph, QueryFeatures) {
        let fs = FeatureSchema::from_queries(&schema3(), [q]).unwrap();
        let f = Featurizer::new(fs, cfg).unwrap();
        let pg = PlanGraph::build(q).unwrap();
        let qf = f.featurize_query(q, &pg, &stats3()).unwrap();
        (f, pg, qf)
    }

    fn slot<'a>(f: &Featurizer, v: &'a [f64], alias: &str, column: &str, op: PredicateOp) -> &'a [f64] {
        let s = f.layout().slots.iter().find(|s| s.slot.alias == alias && s.slot.column == column && s.slot.op == op).unwrap();
        &v[s.offset..s.offset + s.len]
    }

    #[test]
    fn deterministic() {
        let q = rich_query();
        let (_, _, a) = setup(&q, FeatureConfig::default());
        let (_, _, b) = setup(&q, FeatureConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn range_is_min_max_normalised() {
        let q = rich_query();
        let (f, pg, qf) = setup(&q, FeatureConfig::default());
        let v = &qf.rows[pg.singleton(0) - 1].values;
        assert_eq!(slot(&f, v, "r:r", "v", PredicateOp::Range), &[1.0, 0.1, 0.2]);
    }

    #[test]
    fn in_set_hashes_to_counts() {
        let q = rich_query();
        let (f, pg, qf) = setup(&q, FeatureConfig::default());
        let v = &qf.rows[pg.singleton(1) - 1].values;
        let seg = slot(&f, v, "s:s", "s", PredicateOp::In);
        assert_eq!(seg.len(), 10);
        assert!(seg.iter().filter(|&&x| x > 0.0).count() <= 3);
        assert_eq!(seg.iter().sum::<f64>(), 3.0);
        let mut want = vec![0.0; 10];
        for w in ["kara", "lora", "mira"] {
            want[hash_bin(0x5eed, &format!("s:{w}"), 10)] += 1.0;
        }
        assert_eq!(seg, want.as_slice());
    }

    #[test]
    fn like_extras() {
        let q = rich_query();
        let (f, pg, qf) = setup(&q, FeatureConfig::default());
        let v = &qf.rows[pg.singleton(1) - 1].values;
        let seg = slot(&f, v, "s:s", "s", PredicateOp::Like);
        assert_eq!(seg.len(), 12);
        assert_eq!(seg[..10].iter().sum::<f64>(), 1.0);
        assert_eq!(seg[10], 3f64.ln_1p());
        assert_eq!(seg[11], 1.0);
        assert_eq!(like_ngrams("%abcd%x_", 3), vec!["abc", "bcd", "x"]);
    }

    #[test]
    fn layout_arithmetic() {
        // 3 aliases, 3 joins, 2 columns each with IN and LIKE
        let q = triangle(vec![
            vec![
                Predicate::In { column: "s".into(), values: strs(&["kara"]) },
                Predicate::Like { column: "s".into(), pattern: "k%".into() },
            ],
            vec![
                Predicate::In { column: "s".into(), values: strs(&["kara"]) },
                Predicate::Like { column: "s".into(), pattern: "k%".into() },
            ],
            vec![],
        ]);
        let fs = FeatureSchema::from_queries(&schema3(), [&q]).unwrap();
        let layout = feature_layout(&fs, &FeatureConfig::default());
        let lens: Vec<usize> = layout.segments.iter().map(|s| s.len).collect();
        // tables 3*2, joins 3, predicates 2*(10 + 12), plan graph 8
        assert_eq!(lens, vec![6, 3, 44, 8]);
        assert_eq!(layout.len, 61);
        let bare = FeatureConfig { include_gq: false, include_heuristic: false, ..FeatureConfig::default() };
        assert_eq!(feature_layout(&fs, &bare).len, 3 + 3 + 44);
    }

    #[test]
    fn adding_an_alias_changes_only_tables_and_joins() {
        let q = rich_query();
        let fs = FeatureSchema::from_queries(&schema3(), [&q]).unwrap();
        let mut more = fs.clone();
        more.aliases.push("u:u".into());
        more.joins.push("t.id=u.id".into());
        let cfg = FeatureConfig::default();
        let (a, b) = (feature_layout(&fs, &cfg), feature_layout(&more, &cfg));
        for name in ["predicates", "plan_graph"] {
            assert_eq!(a.segment(name).unwrap().len, b.segment(name).unwrap().len);
        }
        assert_eq!(b.segment("tables").unwrap().len, a.segment("tables").unwrap().len + 2);
        assert_eq!(b.segment("joins").unwrap().len, a.segment("joins").unwrap().len + 1);
    }

    #[test]
    fn no_predicates_means_zero_predicate_segment() {
        let q = triangle(vec![vec![], vec![], vec![]]);
        let (f, _, qf) = setup(&q, FeatureConfig::default());
        let p = f.layout().segment("predicates").unwrap();
        assert_eq!(p.len, 0);
        let q2 = rich_query();
        let fs = FeatureSchema::from_queries(&schema3(), [&q2]).unwrap();
        let f2 = Featurizer::new(fs, FeatureConfig::default()).unwrap();
        let pg = PlanGraph::build(&q).unwrap();
        let qf2 = f2.featurize_query(&q, &pg, &stats3()).unwrap();
        let seg = f2.layout().segment("predicates").unwrap();
        for row in &qf2.rows {
            assert!(row.values[seg.offset..seg.offset + seg.len].iter().all(|&x| x == 0.0));
        }
        assert_eq!(qf.rows.len(), pg.num_nodes() - 1);
    }

    #[test]
    fn sub_plans_differ_only_in_member_segments() {
        let q = rich_query();
        let (f, pg, qf) = setup(&q, FeatureConfig::default());
        for id in 1..pg.num_nodes() {
            let members = pg.node(id);
            let v = &qf.rows[id - 1].values;
            for s in &f.layout().slots {
                let alias = f.schema.aliases.iter().position(|a| *a == s.slot.alias).unwrap();
                // the only schema here maps alias index to query alias index
                if !members.contains(alias) {
                    assert!(v[s.offset..s.offset + s.len].iter().all(|&x| x == 0.0));
                }
            }
            let t = f.layout().segment("tables").unwrap();
            for a in 0..3 {
                assert_eq!(v[t.offset + 2 * a], f64::from(u8::from(members.contains(a))));
            }
        }
    }

    #[test]
    fn entries_are_finite_and_nonnegative() {
        let db = generate_db(&small_spec(300), 1).unwrap();
        let mut q = crate::synthdb::tests::triangle_query();
        q.predicates[0] = vec![Predicate::Like { column: "w".into(), pattern: "%ka%".into() }];
        q.predicates[1] = vec![Predicate::In { column: "k".into(), values: vec![Value::Int(1)] }];
        let fs = FeatureSchema::from_queries(&db.schema, [&q]).unwrap();
        let f = Featurizer::new(fs, FeatureConfig::default()).unwrap();
        let pg = PlanGraph::build(&q).unwrap();
        let qf = f.featurize_query(&q, &pg, &db.stats).unwrap();
        for r in &qf.rows {
            assert_eq!(r.values.len(), f.dim());
            assert!(r.values.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
        assert!(qf.heuristic.values().iter().all(|&y| y >= 1.0));
    }

    #[test]
    fn unknown_alias_is_a_schema_error() {
        let q = rich_query();
        let fs = FeatureSchema::from_queries(&schema3(), [&q]).unwrap();
        let f = Featurizer::new(fs, FeatureConfig::default()).unwrap();
        let al = |n: &str| Alias { name: n.into(), relation: "r".into() };
        let jg = JoinGraph::new(
            vec![al("x"), al("y")],
            vec![JoinEdge { left: 0, right: 1, left_column: "id".into(), right_column: "id".into() }],
        )
        .unwrap();
        let other = Query::new("o", jg);
        let pg = PlanGraph::build(&other).unwrap();
        assert!(matches!(f.featurize_query(&other, &pg, &stats3()), Err(Error::Schema(_))));
        assert!(Featurizer::new(f.schema.clone(), FeatureConfig { hash_bins: 1, ..FeatureConfig::default() }).is_err());
    }

    #[test]
    fn heuristic_selectivities() {
        let q = rich_query();
        let pg = PlanGraph::build(&q).unwrap();
        let stats = stats3();
        let h = Heuristic { stats: &stats };
        let base = h.base_rows(&q).unwrap();
        // range 10..=20 over 0..=100
        assert!((base[0] - 1000.0 * 11.0 / 101.0).abs() < 1e-9);
        // two INT values out of 101 distinct, no MCVs
        assert!((base[2] - 1000.0 * 2.0 / 101.0).abs() < 1e-9);
        let y = h.cardinalities(&q, &pg).unwrap();
        let rs = pg.node_id(SubPlan::from_aliases([0, 1])).unwrap();
        assert!((y.get(rs) - (base[0] * base[1] / 1000.0).max(1.0)).abs() < 1e-9);
    }

    #[test]
    fn disjoint_like_patterns_rarely_collide() {
        // patterns over disjoint alphabets share no n-grams; any shared bin
        // is a hash collision
        let bins = 256;
        let cfg = FeatureConfig { hash_bins: bins, ..FeatureConfig::default() };
        let mut rng_state = 7u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 33) as usize
        };
        let word = |alphabet: &[u8], next: &mut dyn FnMut() -> usize| -> String {
            (0..6).map(|_| alphabet[next() % alphabet.len()] as char).collect()
        };
        let trials = 2000;
        let mut collisions = 0;
        for _ in 0..trials {
            let a = format!("%{}%", word(b"abcdefghijklm", &mut next));
            let b = format!("%{}%", word(b"nopqrstuvwxyz", &mut next));
            let bins_of = |p: &str| -> BTreeSet<usize> {
                like_ngrams(p, cfg.ngram_size).iter().map(|g| hash_bin(cfg.hash_seed, g, bins)).collect()
            };
            if !bins_of(&a).is_disjoint(&bins_of(&b)) {
                collisions += 1;
            }
        }
        // 4 grams each: P(some collision) ~ 1 - (1 - 4/256)^4
        let expected = 1.0 - (1.0 - 4.0 / bins as f64).powi(4);
        let rate = collisions as f64 / trials as f64;
        assert!(rate < 1.5 * expected + 0.01, "rate {rate} expected {expected}");
    }
}
