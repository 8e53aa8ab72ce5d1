//! Template-driven query generation and train/validation/test splits.
//!
//! A template is a TOML file with a `[base]` section (aliases and equi-join
//! columns) and a list of `[[predicates]]` rules. Each rule fills predicate
//! values for one or more columns:
//!
//! ```toml
//! name = "movies_by_year"
//!
//! [base]
//! aliases = [{ name = "t", relation = "title" }, { name = "mc", relation = "movie_companies" }]
//! joins = [{ left = "t.id", right = "mc.movie_id" }]
//!
//! [[predicates]]
//! type = "uniform_list"
//! columns = ["t.production_year"]
//! op = "lte"
//! values = [1990, 2000, 2010]
//!
//! [[predicates]]
//! type = "dependent_group"
//! columns = ["mc.company_type"]
//! dependencies = ["t.production_year"]
//! count = [2, 7]
//! ```
//!
//! `uniform_list` picks uniformly from `values`. `dependent_group` runs a
//! grouped count over the join of the rule's columns and its dependencies,
//! filtered by the values already chosen for the dependencies, and samples
//! `count` distinct groups weighted by their frequency. Every group column
//! then gets an `IN` list of the values in the chosen groups.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::join_model::{Alias, ColumnKind, JoinEdge, JoinGraph, Predicate, Query, SubPlan, Value};
use crate::synthdb::{filter_rows, stable_hash, ColumnData, Database, QueryContext, DEFAULT_ROW_BUDGET};

/// Attempts per query before generation gives up.
pub const MAX_RETRIES: usize = 200;

fn default_count() -> [usize; 2] {
    [2, 7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub name: String,
    pub base: BaseSpec,
    #[serde(default)]
    pub predicates: Vec<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub aliases: Vec<Alias>,
    pub joins: Vec<JoinSpec>,
}

/// `left = "alias.column"`, `right = "alias.column"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinSpec {
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListOp {
    /// `column <= v`
    Lte,
    /// `column >= v`
    Gte,
    /// `lo <= column <= hi` from two distinct list values.
    Range,
    In,
    Like,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RuleSpec {
    UniformList {
        columns: Vec<String>,
        op: ListOp,
        values: Vec<Value>,
        /// Size range of `IN` lists.
        #[serde(default = "default_count")]
        count: [usize; 2],
    },
    DependentGroup {
        columns: Vec<String>,
        #[serde(default)]
        dependencies: Vec<String>,
        #[serde(default = "default_count")]
        count: [usize; 2],
    },
}

impl RuleSpec {
    fn columns(&self) -> &[String] {
        match self {
            RuleSpec::UniformList { columns, .. } | RuleSpec::DependentGroup { columns, .. } => columns,
        }
    }

    fn label(&self) -> String {
        self.columns().join(",")
    }
}

impl TemplateSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

type Slot = (usize, String);

#[derive(Debug, Clone)]
enum Rule {
    List { slot: Slot, op: ListOp, values: Vec<Value>, count: [usize; 2], domain: (i64, i64) },
    Group { slots: Vec<Slot>, deps: Vec<Slot>, subplan: SubPlan, count: [usize; 2] },
}

/// A template checked against a schema and ready to sample from.
#[derive(Debug, Clone)]
pub struct Template {
    pub spec: TemplateSpec,
    pub join_graph: JoinGraph,
    rules: Vec<(String, Rule)>,
}

impl Template {
    pub fn compile(spec: TemplateSpec, db: &Database) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("template `{}`: {msg}", spec.name));
        let aliases = spec.base.aliases.clone();
        let slot = |s: &str| -> Result<Slot> {
            let (a, c) = s.split_once('.').ok_or_else(|| bad(format!("`{s}` is not alias.column")))?;
            let i = aliases.iter().position(|x| x.name == a).ok_or_else(|| bad(format!("unknown alias `{a}`")))?;
            let rel = db.schema.relation(&aliases[i].relation).ok_or_else(|| {
                Error::Schema(format!("unknown relation `{}`", aliases[i].relation))
            })?;
            if rel.column(c).is_none() {
                return Err(Error::Schema(format!("unknown column `{s}`")));
            }
            Ok((i, c.to_string()))
        };
        let mut edges = Vec::new();
        for j in &spec.base.joins {
            let (l, lc) = slot(&j.left)?;
            let (r, rc) = slot(&j.right)?;
            edges.push(JoinEdge { left: l, right: r, left_column: lc, right_column: rc });
        }
        let join_graph = JoinGraph::new(aliases.clone(), edges)?;
        join_graph.validate(&db.schema)?;

        let mut covered: HashSet<Slot> = HashSet::new();
        let mut rules = Vec::new();
        for r in &spec.predicates {
            let label = r.label();
            let slots: Vec<Slot> = r.columns().iter().map(|c| slot(c)).collect::<Result<_>>()?;
            if slots.is_empty() {
                return Err(bad(format!("rule `{label}` covers no columns")));
            }
            let rule = match r {
                RuleSpec::UniformList { op, values, count, .. } => {
                    if slots.len() != 1 {
                        return Err(bad(format!("uniform_list rule `{label}` must cover one column")));
                    }
                    let min_values = if *op == ListOp::Range { 2 } else { 1 };
                    if values.len() < min_values {
                        return Err(bad(format!("rule `{label}` needs at least {min_values} values")));
                    }
                    check_count(count).map_err(|m| bad(format!("rule `{label}`: {m}")))?;
                    let (alias, col) = &slots[0];
                    let kind = &db.schema.relation(&aliases[*alias].relation).expect("checked").column(col).expect("checked").kind;
                    let domain = match (op, kind) {
                        (ListOp::Lte | ListOp::Gte | ListOp::Range, ColumnKind::Integer { min, max }) => (*min, *max),
                        (ListOp::Lte | ListOp::Gte | ListOp::Range, _) => {
                            return Err(Error::Schema(format!("range rule `{label}` needs an integer column")))
                        }
                        (ListOp::Like, ColumnKind::String { .. }) => (0, 0),
                        (ListOp::Like, _) => return Err(Error::Schema(format!("like rule `{label}` needs a string column"))),
                        (ListOp::In, _) => (0, 0),
                    };
                    let typed = values.iter().all(|v| match (op, v) {
                        (ListOp::Like, Value::Str(_)) => true,
                        (ListOp::Lte | ListOp::Gte | ListOp::Range, Value::Int(_)) => true,
                        (ListOp::In, Value::Int(_)) => !matches!(kind, ColumnKind::String { .. }),
                        (ListOp::In, Value::Str(_)) => matches!(kind, ColumnKind::String { .. }),
                        _ => false,
                    });
                    if !typed {
                        return Err(bad(format!("rule `{label}` has values of the wrong type")));
                    }
                    Rule::List { slot: slots[0].clone(), op: *op, values: values.clone(), count: *count, domain }
                }
                RuleSpec::DependentGroup { dependencies, count, .. } => {
                    check_count(count).map_err(|m| bad(format!("rule `{label}`: {m}")))?;
                    let deps: Vec<Slot> = dependencies.iter().map(|c| slot(c)).collect::<Result<_>>()?;
                    for d in &deps {
                        if !covered.contains(d) {
                            return Err(bad(format!(
                                "rule `{label}` depends on `{}.{}`, which no earlier rule produces",
                                aliases[d.0].name, d.1
                            )));
                        }
                    }
                    let subplan = SubPlan::from_aliases(slots.iter().chain(&deps).map(|s| s.0));
                    if !join_graph.is_connected(subplan) {
                        return Err(bad(format!("rule `{label}` spans a disconnected set of aliases")));
                    }
                    Rule::Group { slots: slots.clone(), deps, subplan, count: *count }
                }
            };
            for s in slots {
                if !covered.insert(s.clone()) {
                    return Err(bad(format!("column `{}.{}` is covered by more than one rule", aliases[s.0].name, s.1)));
                }
            }
            rules.push((label, rule));
        }
        Ok(Template { spec, join_graph, rules })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }
}

fn check_count(count: &[usize; 2]) -> std::result::Result<(), String> {
    if count[0] == 0 || count[0] > count[1] {
        Err(format!("count range {count:?} must satisfy 1 <= lo <= hi"))
    } else {
        Ok(())
    }
}

/// Distinct value tuples of a group rule with their row counts, sorted.
type Candidates = Vec<(Vec<Value>, u64)>;

struct Generator<'a> {
    db: &'a Database,
    template: &'a Template,
    cache: HashMap<(usize, String), Candidates>,
}

enum Attempt {
    Ok(Query),
    Failed(String),
}

impl<'a> Generator<'a> {
    fn candidates(&mut self, rule_idx: usize, preds: &[Vec<Predicate>]) -> Result<&Candidates> {
        let Rule::Group { slots, deps, subplan, .. } = &self.template.rules[rule_idx].1 else {
            unreachable!("group rule")
        };
        let mut q = Query::new("candidates", self.template.join_graph.clone());
        for (alias, col) in deps {
            q.predicates[*alias].extend(preds[*alias].iter().filter(|p| p.column() == col).cloned());
        }
        let key = (rule_idx, serde_json::to_string(&q.predicates)?);
        if !self.cache.contains_key(&key) {
            let mut ctx = QueryContext::new(self.db, &q)?;
            let Some((order, tuples)) = ctx.join_tuples(*subplan, DEFAULT_ROW_BUDGET)? else {
                return Err(Error::Generation {
                    rule: self.template.rules[rule_idx].0.clone(),
                    reason: "grouping join exceeds the row budget".into(),
                });
            };
            let width = order.len();
            let cols: Vec<(usize, &ColumnData)> = slots
                .iter()
                .map(|(alias, col)| {
                    let t = self.db.table(&self.template.join_graph.aliases()[*alias].relation).expect("validated");
                    (order.iter().position(|a| a == alias).expect("in subplan"), t.column(col).expect("validated"))
                })
                .collect();
            let mut groups: BTreeMap<Vec<Value>, u64> = BTreeMap::new();
            for t in tuples.chunks_exact(width) {
                let key: Vec<Value> = cols.iter().map(|(pos, data)| data.value(t[*pos] as usize)).collect();
                *groups.entry(key).or_default() += 1;
            }
            self.cache.insert(key.clone(), groups.into_iter().collect());
        }
        Ok(&self.cache[&key])
    }

    fn attempt(&mut self, id: &str, rng: &mut ChaCha8Rng) -> Result<Attempt> {
        let n = self.template.join_graph.len();
        let mut preds: Vec<Vec<Predicate>> = vec![Vec::new(); n];
        for idx in 0..self.template.rules.len() {
            let (label, rule) = &self.template.rules[idx];
            match rule {
                Rule::List { slot: (alias, col), op, values, count, domain } => {
                    let column = col.clone();
                    let p = match op {
                        ListOp::Lte | ListOp::Gte => {
                            let Value::Int(v) = values.choose(rng).expect("non-empty") else { unreachable!() };
                            if *op == ListOp::Lte {
                                Predicate::Range { column, lo: domain.0, hi: *v }
                            } else {
                                Predicate::Range { column, lo: *v, hi: domain.1 }
                            }
                        }
                        ListOp::Range => {
                            let mut pair: Vec<i64> = values
                                .choose_multiple(rng, 2)
                                .map(|v| if let Value::Int(i) = v { *i } else { unreachable!() })
                                .collect();
                            pair.sort_unstable();
                            Predicate::Range { column, lo: pair[0], hi: pair[1] }
                        }
                        ListOp::In => {
                            let k = rng.random_range(count[0]..=count[1]).min(values.len());
                            let mut vs: Vec<Value> = values.choose_multiple(rng, k).cloned().collect();
                            vs.sort();
                            Predicate::In { column, values: vs }
                        }
                        ListOp::Like => {
                            let Value::Str(p) = values.choose(rng).expect("non-empty") else { unreachable!() };
                            Predicate::Like { column, pattern: p.clone() }
                        }
                    };
                    preds[*alias].push(p);
                }
                Rule::Group { slots, count, .. } => {
                    let (label, count, slots) = (label.clone(), *count, slots.clone());
                    let cands = self.candidates(idx, &preds)?;
                    if cands.is_empty() {
                        return Ok(Attempt::Failed(label));
                    }
                    let k = rng.random_range(count[0]..=count[1]).min(cands.len());
                    let chosen: Vec<&(Vec<Value>, u64)> = cands
                        .choose_multiple_weighted(rng, k, |c| c.1 as f64)
                        .map_err(|e| Error::Generation { rule: label.clone(), reason: e.to_string() })?
                        .collect();
                    for (i, (alias, col)) in slots.iter().enumerate() {
                        let mut vs: Vec<Value> = chosen.iter().map(|c| c.0[i].clone()).collect();
                        vs.sort();
                        vs.dedup();
                        preds[*alias].push(Predicate::In { column: col.clone(), values: vs });
                    }
                }
            }
        }
        // reject aliases whose filters select nothing
        for (alias, p) in preds.iter().enumerate() {
            if p.is_empty() {
                continue;
            }
            let t = self.db.table(&self.template.join_graph.aliases()[alias].relation).expect("validated");
            if filter_rows(t, p)?.is_empty() {
                let culprit = self
                    .template
                    .rules
                    .iter()
                    .rev()
                    .find(|(_, r)| match r {
                        Rule::List { slot, .. } => slot.0 == alias,
                        Rule::Group { slots, .. } => slots.iter().any(|s| s.0 == alias),
                    })
                    .map(|(l, _)| l.clone())
                    .unwrap_or_default();
                return Ok(Attempt::Failed(culprit));
            }
        }
        let mut q = Query::new(id, self.template.join_graph.clone());
        q.template = self.template.name().to_string();
        q.predicates = preds;
        Ok(Attempt::Ok(q))
    }
}

/// `n` distinct queries from `template`, ids `<template>-<i>`.
pub fn generate_queries(db: &Database, template: &Template, n: usize, seed: u64) -> Result<Vec<Query>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(template.name()));
    let mut gen = Generator { db, template, cache: HashMap::new() };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{}-{i:04}", template.name());
        let mut last_failure = String::from("(duplicate queries)");
        let mut done = false;
        for _ in 0..MAX_RETRIES {
            match gen.attempt(&id, &mut rng)? {
                Attempt::Ok(q) => {
                    if seen.insert(q.content_key()) {
                        out.push(q);
                        done = true;
                        break;
                    }
                    last_failure = String::from("(duplicate queries)");
                }
                Attempt::Failed(rule) => last_failure = rule,
            }
        }
        if !done {
            return Err(Error::Generation {
                rule: format!("{}: {last_failure}", template.name()),
                reason: format!("no valid query after {MAX_RETRIES} attempts"),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Seen,
    Unseen,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(SplitMode::Seen),
            "unseen" => Ok(SplitMode::Unseen),
            _ => Err(Error::Config(format!("unknown split `{s}` (expected seen or unseen)"))),
        }
    }
}

/// Query ids per partition, each in workload order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSplit {
    pub mode: SplitMode,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub train_templates: Vec<String>,
    pub test_templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Template names in generation order.
    pub templates: Vec<String>,
    pub queries: Vec<Query>,
    #[serde(default)]
    pub splits: Vec<WorkloadSplit>,
}

impl Workload {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.id == id)
    }

    /// Queries with the given ids, in workload order.
    pub fn select(&self, ids: &[String]) -> Vec<&Query> {
        let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.queries.iter().filter(|q| set.contains(q.id.as_str())).collect()
    }
}

/// Generates `n` queries per template, templates in parallel. Queries that
/// duplicate one from an earlier template are an error.
pub fn generate_workload(db: &Database, templates: &[Template], n: usize, seed: u64) -> Result<Workload> {
    let parts: Vec<Vec<Query>> =
        templates.par_iter().map(|t| generate_queries(db, t, n, seed)).collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut names = HashSet::new();
    for (t, qs) in templates.iter().zip(&parts) {
        if !names.insert(t.name()) {
            return Err(Error::Config(format!("duplicate template name `{}`", t.name())));
        }
        for q in qs {
            if !seen.insert(q.content_key()) {
                return Err(Error::Generation {
                    rule: t.name().to_string(),
                    reason: format!("query `{}` duplicates one from another template", q.id),
                });
            }
        }
    }
    Ok(Workload {
        templates: templates.iter().map(|t| t.name().to_string()).collect(),
        queries: parts.into_iter().flatten().collect(),
        splits: Vec::new(),
    })
}

/// Seen: each template's queries shuffled and cut 40/20/40. Unseen: the
/// templates are shuffled and the first half (rounded up) trains; there is
/// no validation set.
pub fn split_workload(w: &Workload, mode: SplitMode, seed: u64) -> Result<WorkloadSplit> {
    let mut by_template: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for q in &w.queries {
        by_template.entry(q.template.as_str()).or_default().push(&q.id);
    }
    let order: HashMap<&str, usize> = w.queries.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    let sorted = |mut ids: Vec<&str>| -> Vec<String> {
        ids.sort_by_key(|id| order[id]);
        ids.into_iter().map(str::to_string).collect()
    };
    let all_templates: Vec<String> = by_template.keys().map(|s| s.to_string()).collect();
    match mode {
        SplitMode::Seen => {
            let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for (t, ids) in &by_template {
                if ids.len() < 5 {
                    return Err(Error::Config(format!("template `{t}` has {} queries; a seen split needs 5", ids.len())));
                }
                let mut ids = ids.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(t));
                ids.shuffle(&mut rng);
                let n_train = ids.len() * 2 / 5;
                let n_val = ids.len() / 5;
                train.extend_from_slice(&ids[..n_train]);
                val.extend_from_slice(&ids[n_train..n_train + n_val]);
                test.extend_from_slice(&ids[n_train + n_val..]);
            }
            Ok(WorkloadSplit {
                mode,
                seed,
                train: sorted(train),
                val: sorted(val),
                test: sorted(test),
                train_templates: all_templates.clone(),
                test_templates: all_templates,
            })
        }
        SplitMode::Unseen => {
            if all_templates.len() < 2 {
                return Err(Error::Config("an unseen split needs at least two templates".into()));
            }
            let mut ts = all_templates;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ts.shuffle(&mut rng);
            let cut = ts.len().div_ceil(2);
            let mut train_t = ts[..cut].to_vec();
            let mut test_t = ts[cut..].to_vec();
            train_t.sort();
            test_t.sort();
            let pick = |names: &[String]| -> Vec<&str> {
                names.iter().flat_map(|t| by_template[t.as_str()].iter().copied()).collect()
            };
            Ok(WorkloadSplit {
                mode,
                seed,
                train: sorted(pick(&train_t)),
                val: Vec::new(),
                test: sorted(pick(&test_t)),
                train_templates: train_t,
                test_templates: test_t,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdb::generate_db;
    use crate::synthdb::tests::small_spec;

    const LIST_TEMPLATE: &str = r#"
name = "years"

[base]
aliases = [{ name = "a", relation = "a" }, { name = "b", relation = "b" }]
joins = [{ left = "a.id", right = "b.a_id" }]

[[predicates]]
type = "uniform_list"
columns = ["a.x"]
op = "lte"
values = [2, 5, 8]

[[predicates]]
type = "uniform_list"
columns = ["b.k"]
op = "in"
values = [0, 1, 2, 3, 4]
count = [2, 4]
"#;

    const GROUP_TEMPLATE: &str = r#"
name = "grouped"

[base]
aliases = [{ name = "a", relation = "a" }, { name = "b", relation = "b" }, { name = "c", relation = "c" }]
joins = [{ left = "a.id", right = "b.a_id" }, { left = "b.id", right = "c.b_id" }]

[[predicates]]
type = "uniform_list"
columns = ["a.x"]
op = "range"
values = [0, 3, 6, 9]

[[predicates]]
type = "dependent_group"
columns = ["b.k", "b.r"]
dependencies = ["a.x"]
count = [2, 7]

[[predicates]]
type = "uniform_list"
columns = ["a.w"]
op = "like"
values = ["%a%", "%o%", "k%"]
"#;

    fn db() -> Database {
        generate_db(&small_spec(400), 3).unwrap()
    }

    fn compile(text: &str, db: &Database) -> Result<Template> {
        Template::compile(TemplateSpec::from_toml(text)?, db)
    }

    #[test]
    fn uniform_list_hits_every_value() {
        let db = db();
        let t = compile(LIST_TEMPLATE, &db).unwrap();
        let qs = generate_queries(&db, &t, 300, 1);
        // only 3 x (C(5,2)+C(5,3)+C(5,4)) = 75 distinct queries exist
        assert!(matches!(qs, Err(Error::Generation { .. })));
        let qs = generate_queries(&db, &t, 60, 1).unwrap();
        let mut counts = BTreeMap::new();
        for q in &qs {
            let Predicate::Range { hi, .. } = &q.predicates[0][0] else { panic!() };
            *counts.entry(*hi).or_insert(0usize) += 1;
            let Predicate::In { values, .. } = &q.predicates[1][0] else { panic!() };
            assert!((2..=4).contains(&values.len()));
        }
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), vec![2, 5, 8]);
    }

    #[test]
    fn uniform_list_chi_square() {
        let db = db();
        let text = LIST_TEMPLATE.replace("count = [2, 4]", "count = [1, 5]").replace(
            "values = [2, 5, 8]",
            "values = [2, 5, 8]\n\n[[predicates]]\ntype = \"uniform_list\"\ncolumns = [\"b.id\"]\nop = \"gte\"\nvalues = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]",
        );
        let t = compile(&text, &db).unwrap();
        let qs = generate_queries(&db, &t, 300, 2).unwrap();
        let mut counts = [0f64; 3];
        for q in &qs {
            let Predicate::Range { hi, .. } = &q.predicates[0][0] else { panic!() };
            counts[[2, 5, 8].iter().position(|v| v == hi).unwrap()] += 1.0;
        }
        let chi: f64 = counts.iter().map(|c| (c - 100.0).powi(2) / 100.0).sum();
        // 2 degrees of freedom, p = 0.001
        assert!(chi < 13.8, "{counts:?}");
    }

    #[test]
    fn dependent_group_emits_joint_candidates() {
        let db = db();
        let t = compile(GROUP_TEMPLATE, &db).unwrap();
        let qs = generate_queries(&db, &t, 40, 5).unwrap();
        let mut gen = Generator { db: &db, template: &t, cache: HashMap::new() };
        for q in &qs {
            let preds = &q.predicates;
            let ins: Vec<&Vec<Value>> = preds[1]
                .iter()
                .map(|p| if let Predicate::In { values, .. } = p { values } else { panic!() })
                .collect();
            assert_eq!(ins.len(), 2);
            let cands = gen.candidates(1, preds).unwrap().clone();
            // every emitted value belongs to some candidate pair, and some
            // candidate pair is fully emitted
            assert!(ins[0].iter().all(|k| cands.iter().any(|c| &c.0[0] == k)));
            assert!(ins[1].iter().all(|r| cands.iter().any(|c| &c.0[1] == r)));
            assert!(cands.iter().any(|c| ins[0].contains(&c.0[0]) && ins[1].contains(&c.0[1])));
            assert!(ins[0].len() <= 7 && ins[1].len() <= 7);
            q.validate(&db.schema).unwrap();
        }
    }

    #[test]
    fn group_sampling_respects_count_range() {
        let db = db();
        let t = compile(&GROUP_TEMPLATE.replace("columns = [\"b.k\", \"b.r\"]", "columns = [\"b.r\"]"), &db).unwrap();
        for q in generate_queries(&db, &t, 40, 9).unwrap() {
            let Predicate::In { values, .. } = &q.predicates[1][0] else { panic!() };
            assert!((2..=7).contains(&values.len()), "{values:?}");
        }
    }

    #[test]
    fn rejects_bad_templates() {
        let db = db();
        let dup = LIST_TEMPLATE.replace("columns = [\"b.k\"]", "columns = [\"a.x\"]");
        assert!(matches!(compile(&dup, &db), Err(Error::Config(_))));
        let early = GROUP_TEMPLATE.replace("dependencies = [\"a.x\"]", "dependencies = [\"a.w\"]");
        assert!(matches!(compile(&early, &db), Err(Error::Config(_))));
        let missing = LIST_TEMPLATE.replace("a.x", "a.nope");
        assert!(matches!(compile(&missing, &db), Err(Error::Schema(_))));
        assert!(matches!(compile("name = 3", &db), Err(Error::Template(_))));
    }

    #[test]
    fn empty_alias_exhausts_retries() {
        let db = db();
        let t = compile(&LIST_TEMPLATE.replace("op = \"lte\"", "op = \"gte\"").replace("[2, 5, 8]", "[50]"), &db).unwrap();
        match generate_queries(&db, &t, 1, 0) {
            Err(Error::Generation { rule, .. }) => assert!(rule.contains("a.x"), "{rule}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let db = db();
        let t = compile(GROUP_TEMPLATE, &db).unwrap();
        assert_eq!(generate_queries(&db, &t, 10, 3).unwrap(), generate_queries(&db, &t, 10, 3).unwrap());
    }

    fn fake_workload(templates: usize, per: usize) -> Workload {
        let jg = crate::join_model::tests::graph(2, &[(0, 1)]);
        let mut queries = Vec::new();
        for t in 0..templates {
            for i in 0..per {
                let mut q = Query::new(format!("t{t}-{i}"), jg.clone());
                q.template = format!("t{t}");
                q.predicates[0].push(Predicate::Range { column: "c".into(), lo: t as i64, hi: i as i64 });
                queries.push(q);
            }
        }
        Workload { templates: (0..templates).map(|t| format!("t{t}")).collect(), queries, splits: vec![] }
    }

    fn check_partition(w: &Workload, s: &WorkloadSplit) {
        let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n, "partitions overlap");
        assert_eq!(n, w.queries.len(), "partitions not exhaustive");
        let keys = |ids: &[String]| -> HashSet<String> { w.select(ids).iter().map(|q| q.content_key()).collect() };
        assert!(keys(&s.train).is_disjoint(&keys(&s.test)));
        assert!(keys(&s.train).is_disjoint(&keys(&s.val)));
    }

    #[test]
    fn seen_split_is_40_20_40() {
        let w = fake_workload(1, 100);
        let s = split_workload(&w, SplitMode::Seen, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (40, 20, 40));
        check_partition(&w, &s);
        assert_eq!(s, split_workload(&w, SplitMode::Seen, 1).unwrap());
        assert_ne!(s, split_workload(&w, SplitMode::Seen, 2).unwrap());
        assert!(split_workload(&fake_workload(1, 4), SplitMode::Seen, 1).is_err());
    }

    #[test]
    fn unseen_split_halves_templates() {
        let w = fake_workload(6, 10);
        let s = split_workload(&w, SplitMode::Unseen, 1).unwrap();
        assert_eq!((s.train_templates.len(), s.test_templates.len()), (3, 3));
        assert!(s.val.is_empty());
        check_partition(&w, &s);
        let distinct: HashSet<Vec<String>> =
            (1..=10).map(|seed| split_workload(&w, SplitMode::Unseen, seed).unwrap().train_templates).collect();
        assert!(distinct.len() > 1);
        assert!(split_workload(&fake_workload(1, 10), SplitMode::Unseen, 1).is_err());
    }

    #[test]
    fn workload_round_trips() {
        let db = db();
        let t = compile(GROUP_TEMPLATE, &db).unwrap();
        let mut w = generate_workload(&db, &[t], 12, 4).unwrap();
        w.splits.push(split_workload(&w, SplitMode::Seen, 4).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("workload.json");
        w.save(&path).unwrap();
        assert_eq!(Workload::load(&path).unwrap(), w);
    }
}
