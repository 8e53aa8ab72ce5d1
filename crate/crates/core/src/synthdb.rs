//! Synthetic relational databases and sub-plan cardinality labels.
//!
//! A [`SchemaSpec`] describes tables, row counts and column generators
//! (keys, Zipf-skewed values, correlated categorical columns). Generation is
//! deterministic per seed. Labels come either from exact hash-join counts or
//! from wander-join random walks over the filtered base tables.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cost_model::CardinalityVector;
use crate::error::{Error, Result};
use crate::join_model::{
    Column, ColumnKind, Predicate, Query, Relation, Schema, SubPlan, Value, DEFAULT_ALIAS_CAP,
};
use crate::plan_graph::PlanGraph;

pub const DEFAULT_MAX_ROWS: u64 = 100_000;
/// Default cap on intermediate rows for exact evaluation.
pub const DEFAULT_ROW_BUDGET: u64 = 1_000_000;
pub const DEFAULT_WALKS: usize = 1000;
const MCV_ENTRIES: usize = 32;

fn default_max_rows() -> u64 {
    DEFAULT_MAX_ROWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub tables: Vec<TableSpec>,
    /// Per-table row budget.
    #[serde(default = "default_max_rows")]
    pub max_rows: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: u64,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub gen: ColumnGen,
}

/// How a column's values are drawn. `zipf` is the skew exponent over value
/// ranks; 0 means uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gen", rename_all = "snake_case")]
pub enum ColumnGen {
    /// `0..rows`, in row order.
    PrimaryKey,
    /// Key of `references`; low keys are the most popular.
    ForeignKey {
        references: String,
        #[serde(default)]
        zipf: f64,
    },
    Integer {
        min: i64,
        max: i64,
        #[serde(default)]
        zipf: f64,
    },
    Categorical {
        alphabet: u32,
        #[serde(default)]
        zipf: f64,
    },
    /// Words from a fixed synthetic vocabulary of `alphabet` entries.
    String {
        alphabet: u32,
        #[serde(default)]
        zipf: f64,
    },
    /// Categorical column that follows an earlier column of the same table
    /// with probability `strength`, and is uniform otherwise.
    Correlated {
        source: String,
        alphabet: u32,
        strength: f64,
    },
}

impl SchemaSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SchemaSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::Config("schema spec has no tables".into()));
        }
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate table `{}`", t.name)));
            }
            if t.rows == 0 {
                return Err(Error::Config(format!("table `{}` has no rows", t.name)));
            }
            if t.rows > self.max_rows {
                return Err(Error::Capacity(format!(
                    "table `{}` asks for {} rows, budget is {}",
                    t.name, t.rows, self.max_rows
                )));
            }
            let mut cols: HashMap<&str, &ColumnGen> = HashMap::new();
            for c in &t.columns {
                let bad = |why: &str| Error::Config(format!("column `{}.{}`: {why}", t.name, c.name));
                match &c.gen {
                    ColumnGen::PrimaryKey => {}
                    ColumnGen::ForeignKey { references, zipf } => {
                        let target = self.table(references).ok_or_else(|| bad("unknown referenced table"))?;
                        if !target.columns.iter().any(|c| c.gen == ColumnGen::PrimaryKey) {
                            return Err(bad("referenced table has no primary key"));
                        }
                        check_zipf(*zipf).map_err(|_| bad("zipf exponent must be finite and >= 0"))?;
                    }
                    ColumnGen::Integer { min, max, zipf } => {
                        if min > max {
                            return Err(bad("min exceeds max"));
                        }
                        check_zipf(*zipf).map_err(|_| bad("zipf exponent must be finite and >= 0"))?;
                    }
                    ColumnGen::Categorical { alphabet, zipf } | ColumnGen::String { alphabet, zipf } => {
                        if *alphabet == 0 {
                            return Err(bad("alphabet must be positive"));
                        }
                        check_zipf(*zipf).map_err(|_| bad("zipf exponent must be finite and >= 0"))?;
                    }
                    ColumnGen::Correlated { source, alphabet, strength } => {
                        match cols.get(source.as_str()) {
                            None => return Err(bad("source must be an earlier column of the same table")),
                            Some(ColumnGen::String { .. }) => return Err(bad("source must be integer-valued")),
                            Some(_) => {}
                        }
                        if *alphabet == 0 || !(0.0..=1.0).contains(strength) {
                            return Err(bad("needs a positive alphabet and strength in [0, 1]"));
                        }
                    }
                }
                if cols.insert(&c.name, &c.gen).is_some() {
                    return Err(bad("duplicate column"));
                }
            }
        }
        self.check_fk_connected()
    }

    fn check_fk_connected(&self) -> Result<()> {
        let n = self.tables.len();
        let idx: HashMap<&str, usize> =
            self.tables.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();
        let mut adj = vec![Vec::new(); n];
        for (i, t) in self.tables.iter().enumerate() {
            for c in &t.columns {
                if let ColumnGen::ForeignKey { references, .. } = &c.gen {
                    let j = idx[references.as_str()];
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(Error::Config("foreign-key graph is not connected".into()))
        }
    }

    /// Relational schema implied by the spec.
    pub fn schema(&self) -> Schema {
        let relations = self
            .tables
            .iter()
            .enumerate()
            .map(|(id, t)| Relation {
                id,
                name: t.name.clone(),
                row_count: t.rows,
                columns: t
                    .columns
                    .iter()
                    .map(|c| Column { name: c.name.clone(), kind: self.column_kind(t, &c.gen) })
                    .collect(),
            })
            .collect();
        Schema { relations }
    }

    fn column_kind(&self, t: &TableSpec, gen: &ColumnGen) -> ColumnKind {
        match gen {
            ColumnGen::PrimaryKey => ColumnKind::Integer { min: 0, max: t.rows as i64 - 1 },
            ColumnGen::ForeignKey { references, .. } => {
                let rows = self.table(references).map_or(1, |r| r.rows);
                ColumnKind::Integer { min: 0, max: rows as i64 - 1 }
            }
            ColumnGen::Integer { min, max, .. } => ColumnKind::Integer { min: *min, max: *max },
            ColumnGen::Categorical { alphabet, .. } | ColumnGen::Correlated { alphabet, .. } => {
                ColumnKind::Categorical { alphabet: *alphabet }
            }
            ColumnGen::String { alphabet, .. } => ColumnKind::String { alphabet: *alphabet },
        }
    }
}

fn check_zipf(s: f64) -> std::result::Result<(), ()> {
    if s.is_finite() && s >= 0.0 {
        Ok(())
    } else {
        Err(())
    }
}

const SYLLABLES: [&str; 16] =
    ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ba", "de", "fi", "go", "hu", "ja", "pe", "zu"];

/// Entry `i` of the synthetic string vocabulary. Entries are distinct; some
/// carry a trailing digit.
pub fn vocabulary_word(i: u32) -> String {
    let mut s = String::new();
    let mut x = i;
    loop {
        s.push_str(SYLLABLES[(x % 16) as usize]);
        x /= 16;
        if x == 0 {
            break;
        }
    }
    if i < 16 {
        s.push_str("ra");
    }
    if i % 7 == 3 {
        s.push(char::from(b'0' + (i % 10) as u8));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int(Vec<i64>),
    /// Vocabulary codes plus the vocabulary itself.
    Str { codes: Vec<u32>, vocab: Vec<String> },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int(v) => v.len(),
            ColumnData::Str { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            ColumnData::Int(v) => Value::Int(v[row]),
            ColumnData::Str { codes, vocab } => Value::Str(vocab[codes[row] as usize].clone()),
        }
    }

    fn as_int(&self) -> Option<&[i64]> {
        match self {
            ColumnData::Int(v) => Some(v),
            ColumnData::Str { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub column_names: Vec<String>,
    pub columns: Vec<ColumnData>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, ColumnData::len)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.column_names.iter().position(|c| c == name).map(|i| &self.columns[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub ndv: u64,
    pub min: Option<i64>,
    pub max: Option<i64>,
    /// Most common values with their row fractions, most frequent first.
    pub mcv: Vec<(Value, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub name: String,
    pub rows: u64,
    pub columns: Vec<ColumnStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbStats {
    pub tables: Vec<TableStats>,
}

impl DbStats {
    pub fn table(&self, name: &str) -> Option<&TableStats> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnStats> {
        self.table(table)?.columns.iter().find(|c| c.name == column)
    }
}

fn column_stats(name: &str, data: &ColumnData) -> ColumnStats {
    let rows = data.len().max(1) as f64;
    let (ndv, min, max, mut counts): (u64, Option<i64>, Option<i64>, Vec<(Value, u64)>) = match data {
        ColumnData::Int(v) => {
            let mut m: HashMap<i64, u64> = HashMap::new();
            for &x in v {
                *m.entry(x).or_default() += 1;
            }
            (
                m.len() as u64,
                v.iter().min().copied(),
                v.iter().max().copied(),
                m.into_iter().map(|(k, c)| (Value::Int(k), c)).collect(),
            )
        }
        ColumnData::Str { codes, vocab } => {
            let mut m: HashMap<u32, u64> = HashMap::new();
            for &x in codes {
                *m.entry(x).or_default() += 1;
            }
            (
                m.len() as u64,
                None,
                None,
                m.into_iter().map(|(k, c)| (Value::Str(vocab[k as usize].clone()), c)).collect(),
            )
        }
    };
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counts.truncate(MCV_ENTRIES);
    ColumnStats {
        name: name.to_string(),
        ndv,
        min,
        max,
        mcv: counts.into_iter().map(|(v, c)| (v, c as f64 / rows)).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Database {
    pub spec: SchemaSpec,
    pub schema: Schema,
    pub tables: Vec<Table>,
    pub stats: DbStats,
}

impl Database {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    fn from_tables(spec: SchemaSpec, tables: Vec<Table>) -> Self {
        let stats = DbStats {
            tables: tables
                .iter()
                .map(|t| TableStats {
                    name: t.name.clone(),
                    rows: t.rows() as u64,
                    columns: t
                        .column_names
                        .iter()
                        .zip(&t.columns)
                        .map(|(n, d)| column_stats(n, d))
                        .collect(),
                })
                .collect(),
        };
        Database { schema: spec.schema(), spec, tables, stats }
    }
}

fn zipf_ranks(rng: &mut ChaCha8Rng, n: u64, s: f64, count: usize) -> Vec<u64> {
    if n <= 1 {
        return vec![0; count];
    }
    let z = Zipf::new(n as f64, s).expect("validated zipf parameters");
    (0..count).map(|_| z.sample(rng) as u64 - 1).collect()
}

fn mix(x: i64) -> u64 {
    let mut h = (x as u64) ^ 0x9e37_79b9_7f4a_7c15;
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Generates every table of `spec`. Each column draws from its own ChaCha
/// stream, so adding a column leaves the others unchanged.
pub fn generate_db(spec: &SchemaSpec, seed: u64) -> Result<Database> {
    spec.validate()?;
    let mut tables = Vec::with_capacity(spec.tables.len());
    let mut stream = 0u64;
    for t in &spec.tables {
        let rows = t.rows as usize;
        let mut names: Vec<String> = Vec::new();
        let mut columns: Vec<ColumnData> = Vec::new();
        for c in &t.columns {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            stream += 1;
            let data = match &c.gen {
                ColumnGen::PrimaryKey => ColumnData::Int((0..rows as i64).collect()),
                ColumnGen::ForeignKey { references, zipf } => {
                    let target = spec.table(references).expect("validated").rows;
                    ColumnData::Int(zipf_ranks(&mut rng, target, *zipf, rows).into_iter().map(|r| r as i64).collect())
                }
                ColumnGen::Integer { min, max, zipf } => {
                    let n = (max - min) as u64 + 1;
                    ColumnData::Int(zipf_ranks(&mut rng, n, *zipf, rows).into_iter().map(|r| min + r as i64).collect())
                }
                ColumnGen::Categorical { alphabet, zipf } => ColumnData::Int(
                    zipf_ranks(&mut rng, *alphabet as u64, *zipf, rows).into_iter().map(|r| r as i64).collect(),
                ),
                ColumnGen::String { alphabet, zipf } => ColumnData::Str {
                    codes: zipf_ranks(&mut rng, *alphabet as u64, *zipf, rows).into_iter().map(|r| r as u32).collect(),
                    vocab: (0..*alphabet).map(vocabulary_word).collect(),
                },
                ColumnGen::Correlated { source, alphabet, strength } => {
                    let src = names.iter().position(|n| n == source).expect("validated");
                    let src = columns[src].as_int().expect("validated");
                    let k = *alphabet as u64;
                    ColumnData::Int(
                        src.iter()
                            .map(|&x| {
                                if rng.random::<f64>() < *strength {
                                    (mix(x) % k) as i64
                                } else {
                                    rng.random_range(0..k) as i64
                                }
                            })
                            .collect(),
                    )
                }
            };
            names.push(c.name.clone());
            columns.push(data);
        }
        tables.push(Table { name: t.name.clone(), column_names: names, columns });
    }
    Ok(Database::from_tables(spec.clone(), tables))
}

/// Writes `spec.json`, `schema.json`, `stats.json` and one CSV per table.
pub fn write_db(db: &Database, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&db.spec)? + "\n")?;
    fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&db.schema)? + "\n")?;
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&db.stats)? + "\n")?;
    for t in &db.tables {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", t.name)))?;
        w.write_record(&t.column_names)?;
        let mut record: Vec<String> = vec![String::new(); t.columns.len()];
        for row in 0..t.rows() {
            for (slot, col) in record.iter_mut().zip(&t.columns) {
                *slot = match col {
                    ColumnData::Int(v) => v[row].to_string(),
                    ColumnData::Str { codes, vocab } => vocab[codes[row] as usize].clone(),
                };
            }
            w.write_record(&record)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Loads a database directory written by [`write_db`].
pub fn load_db(dir: &Path) -> Result<Database> {
    let spec = SchemaSpec::from_json(&fs::read_to_string(dir.join("spec.json"))?)?;
    let mut tables = Vec::new();
    for t in &spec.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut r = csv::Reader::from_path(&path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
        if header != expected {
            return Err(Error::Schema(format!("{}: header {:?} does not match spec", path.display(), header)));
        }
        let lookups: Vec<Option<HashMap<String, u32>>> = t
            .columns
            .iter()
            .map(|c| match c.gen {
                ColumnGen::String { alphabet, .. } => {
                    Some((0..alphabet).map(|i| (vocabulary_word(i), i)).collect())
                }
                _ => None,
            })
            .collect();
        let mut columns: Vec<ColumnData> = t
            .columns
            .iter()
            .map(|c| match c.gen {
                ColumnGen::String { alphabet, .. } => ColumnData::Str {
                    codes: Vec::new(),
                    vocab: (0..alphabet).map(vocabulary_word).collect(),
                },
                _ => ColumnData::Int(Vec::new()),
            })
            .collect();
        for rec in r.records() {
            let rec = rec?;
            for (i, field) in rec.iter().enumerate() {
                let bad = || Error::Schema(format!("{}: bad value `{field}` in column {i}", path.display()));
                match &mut columns[i] {
                    ColumnData::Int(v) => v.push(field.parse().map_err(|_| bad())?),
                    ColumnData::Str { codes, .. } => {
                        let code = lookups[i].as_ref().expect("string column").get(field).ok_or_else(bad)?;
                        codes.push(*code);
                    }
                }
            }
        }
        tables.push(Table { name: t.name.clone(), column_names: header, columns });
    }
    Ok(Database::from_tables(spec, tables))
}

/// Translates a SQL `LIKE` pattern (`%`, `_`) to an anchored regex.
pub fn like_regex(pattern: &str) -> Regex {
    let mut re = String::from("^");
    let mut lit = String::new();
    for ch in pattern.chars() {
        if ch == '%' || ch == '_' {
            re.push_str(&regex::escape(&lit));
            lit.clear();
            re.push_str(if ch == '%' { ".*" } else { "." });
        } else {
            lit.push(ch);
        }
    }
    re.push_str(&regex::escape(&lit));
    re.push('$');
    Regex::new(&re).expect("escaped pattern is valid")
}

/// Does `data[row]` satisfy `pred`? Slow path used by tests and generators;
/// query evaluation vectorises the same rules.
pub fn row_matches(pred: &Predicate, data: &ColumnData, row: usize) -> bool {
    match (pred, data) {
        (Predicate::Range { lo, hi, .. }, ColumnData::Int(v)) => *lo <= v[row] && v[row] <= *hi,
        (Predicate::In { values, .. }, d) => values.contains(&d.value(row)),
        (Predicate::Like { pattern, .. }, ColumnData::Str { codes, vocab }) => {
            like_regex(pattern).is_match(&vocab[codes[row] as usize])
        }
        _ => false,
    }
}

/// Rows of `table` passing every predicate.
pub fn filter_rows(table: &Table, preds: &[Predicate]) -> Result<Vec<u32>> {
    let mut masks: Vec<Box<dyn Fn(usize) -> bool + '_>> = Vec::new();
    for p in preds {
        let col = table
            .column(p.column())
            .ok_or_else(|| Error::Schema(format!("unknown column `{}.{}`", table.name, p.column())))?;
        let mask: Box<dyn Fn(usize) -> bool> = match (p, col) {
            (Predicate::Range { lo, hi, .. }, ColumnData::Int(v)) => {
                let (lo, hi) = (*lo, *hi);
                Box::new(move |r| lo <= v[r] && v[r] <= hi)
            }
            (Predicate::In { values, .. }, ColumnData::Int(v)) => {
                let set: HashSet<i64> =
                    values.iter().filter_map(|x| if let Value::Int(i) = x { Some(*i) } else { None }).collect();
                Box::new(move |r| set.contains(&v[r]))
            }
            (Predicate::In { values, .. }, ColumnData::Str { codes, vocab }) => {
                let ok: Vec<bool> = vocab.iter().map(|w| values.contains(&Value::Str(w.clone()))).collect();
                Box::new(move |r| ok[codes[r] as usize])
            }
            (Predicate::Like { pattern, .. }, ColumnData::Str { codes, vocab }) => {
                let re = like_regex(pattern);
                let ok: Vec<bool> = vocab.iter().map(|w| re.is_match(w)).collect();
                Box::new(move |r| ok[codes[r] as usize])
            }
            _ => {
                return Err(Error::Schema(format!(
                    "{} predicate is not applicable to `{}.{}`",
                    p.op(),
                    table.name,
                    p.column()
                )))
            }
        };
        masks.push(mask);
    }
    Ok((0..table.rows()).filter(|&r| masks.iter().all(|m| m(r))).map(|r| r as u32).collect())
}

/// Result of exact evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactCount {
    Rows(u64),
    /// An intermediate result exceeded the row budget.
    Timeout,
}

/// Label used in place of a timed-out count.
pub fn timeout_label(row_budget: u64) -> f64 {
    10.0 * row_budget as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkEstimate {
    pub estimate: f64,
    /// Standard error of the mean over walks.
    pub std_error: f64,
    pub successes: usize,
}

type KeyIndex = HashMap<i64, Vec<u32>>;

/// Per-query evaluation state: filtered base tables and lazily built join
/// key indexes over them, shared by all sub-plans of the query. `effort`
/// counts rows scanned, index entries built, probes and tuples produced.
pub struct QueryContext<'a> {
    db: &'a Database,
    query: &'a Query,
    tables: Vec<usize>,
    rows: Vec<Vec<u32>>,
    indexes: HashMap<(usize, String), KeyIndex>,
    effort: u64,
}

impl<'a> QueryContext<'a> {
    pub fn new(db: &'a Database, query: &'a Query) -> Result<Self> {
        query.validate(&db.schema)?;
        let mut tables = Vec::new();
        let mut rows = Vec::new();
        let mut effort = 0u64;
        for (i, alias) in query.join_graph.aliases().iter().enumerate() {
            let t = db.table_index(&alias.relation).expect("validated");
            effort += db.tables[t].rows() as u64;
            rows.push(filter_rows(&db.tables[t], &query.predicates[i])?);
            tables.push(t);
        }
        for e in query.join_graph.edges() {
            for (a, col) in [(e.left, &e.left_column), (e.right, &e.right_column)] {
                if db.tables[tables[a]].column(col).and_then(ColumnData::as_int).is_none() {
                    return Err(Error::Schema(format!("join column `{col}` must be integer-valued")));
                }
            }
        }
        Ok(QueryContext { db, query, tables, rows, indexes: HashMap::new(), effort })
    }

    pub fn effort(&self) -> u64 {
        self.effort
    }

    pub fn filtered_rows(&self, alias: usize) -> &[u32] {
        &self.rows[alias]
    }

    fn int_column(&self, alias: usize, column: &str) -> &'a [i64] {
        let db: &'a Database = self.db;
        db.tables[self.tables[alias]].column(column).and_then(ColumnData::as_int).expect("checked in new")
    }

    fn ensure_index(&mut self, alias: usize, column: &str) {
        let key = (alias, column.to_string());
        if self.indexes.contains_key(&key) {
            return;
        }
        let data = self.int_column(alias, column);
        let mut idx: KeyIndex = HashMap::new();
        for &r in &self.rows[alias] {
            idx.entry(data[r as usize]).or_default().push(r);
        }
        self.effort += self.rows[alias].len() as u64;
        self.indexes.insert(key, idx);
    }

    /// Exact count of `subplan` joining in BFS order from its lowest alias.
    pub fn exact(&mut self, subplan: SubPlan, row_budget: u64) -> Result<ExactCount> {
        let order: Vec<usize> = self.query.join_graph.bfs_order(subplan).into_iter().map(|(a, _)| a).collect();
        self.exact_in_order(&order, row_budget)
    }

    /// Exact count joining aliases in `order`; every prefix must be
    /// connected.
    pub fn exact_in_order(&mut self, order: &[usize], row_budget: u64) -> Result<ExactCount> {
        Ok(match self.run_join(order, row_budget, false)? {
            Some((count, _)) => ExactCount::Rows(count),
            None => ExactCount::Timeout,
        })
    }

    /// Materialised join of `subplan` in BFS order: the alias order and the
    /// row-major tuples of row ids. `None` if the result or an intermediate
    /// exceeds `row_budget`.
    pub fn join_tuples(&mut self, subplan: SubPlan, row_budget: u64) -> Result<Option<(Vec<usize>, Vec<u32>)>> {
        let order: Vec<usize> = self.query.join_graph.bfs_order(subplan).into_iter().map(|(a, _)| a).collect();
        Ok(self.run_join(&order, row_budget, true)?.map(|(_, t)| (order, t)))
    }

    fn run_join(&mut self, order: &[usize], row_budget: u64, keep: bool) -> Result<Option<(u64, Vec<u32>)>> {
        let query: &'a Query = self.query;
        let jg = &query.join_graph;
        let members = SubPlan::from_aliases(order.iter().copied());
        if order.is_empty() || members.len() != order.len() || !jg.is_connected(members) {
            return Err(Error::Domain(format!("join order {order:?} is not a connected sub-plan")));
        }
        if order.len() == 1 {
            let rows = &self.rows[order[0]];
            if keep && rows.len() as u64 > row_budget {
                return Ok(None);
            }
            return Ok(Some((rows.len() as u64, if keep { rows.clone() } else { Vec::new() })));
        }
        // per step: probe (tuple pos, outer column, inner column) and residual checks
        let mut steps = Vec::new();
        for step in 1..order.len() {
            let b = order[step];
            let mut conds: Vec<(usize, &'a [i64], &'a [i64], String)> = Vec::new();
            for e in jg.edges() {
                let Some(b_col) = e.column_of(b) else { continue };
                let a = e.other(b);
                let Some(pos) = order[..step].iter().position(|&x| x == a) else { continue };
                let a_col = e.column_of(a).expect("edge touches a");
                conds.push((pos, self.int_column(a, a_col), self.int_column(b, b_col), b_col.to_string()));
            }
            if conds.is_empty() {
                return Err(Error::Domain(format!("join order {order:?} has a disconnected prefix")));
            }
            self.ensure_index(b, &conds[0].3);
            steps.push((b, conds));
        }

        let mut effort = self.rows[order[0]].len() as u64;
        let mut tuples: Vec<u32> = self.rows[order[0]].clone();
        let mut width = 1;
        let last = steps.len() - 1;
        for (s, (b, conds)) in steps.iter().enumerate() {
            let idx = &self.indexes[&(*b, conds[0].3.clone())];
            let (pos, outer, _, _) = conds[0];
            let mut next = Vec::new();
            let mut count = 0u64;
            for t in tuples.chunks_exact(width) {
                effort += 1;
                let Some(matches) = idx.get(&outer[t[pos] as usize]) else { continue };
                for &r in matches {
                    effort += 1;
                    let ok = conds[1..].iter().all(|(p, o, i, _)| o[t[*p] as usize] == i[r as usize]);
                    if !ok {
                        continue;
                    }
                    count += 1;
                    if s < last || keep {
                        next.extend_from_slice(t);
                        next.push(r);
                    }
                }
                if (s < last || keep) && count > row_budget {
                    self.effort += effort;
                    return Ok(None);
                }
            }
            if s == last {
                self.effort += effort;
                return Ok(Some((count, next)));
            }
            tuples = next;
            width += 1;
        }
        unreachable!("loop returns at the last step")
    }

    /// Wander-join estimate of `subplan`'s cardinality from `walks` random
    /// walks along its BFS spanning tree.
    pub fn wander_join(&mut self, subplan: SubPlan, walks: usize, rng: &mut impl Rng) -> Result<WalkEstimate> {
        let query: &'a Query = self.query;
        let jg = &query.join_graph;
        if !jg.is_connected(subplan) {
            return Err(Error::Domain(format!("sub-plan {subplan} is not connected")));
        }
        let order = jg.bfs_order(subplan);
        let first = order[0].0;
        let base = self.rows[first].len();
        if order.len() == 1 {
            return Ok(WalkEstimate { estimate: base as f64, std_error: 0.0, successes: walks });
        }
        if base == 0 || walks == 0 {
            return Ok(WalkEstimate { estimate: 0.0, std_error: 0.0, successes: 0 });
        }
        // per step: (tree parent pos, parent column, inner column name, residual checks)
        let mut steps = Vec::new();
        for (step, &(b, parent)) in order.iter().enumerate().skip(1) {
            let parent = parent.expect("non-root has a parent");
            let mut tree = None;
            let mut residual: Vec<(usize, &'a [i64], &'a [i64])> = Vec::new();
            for e in jg.edges() {
                let Some(b_col) = e.column_of(b) else { continue };
                let a = e.other(b);
                let Some(pos) = order[..step].iter().position(|&(x, _)| x == a) else { continue };
                let a_col = e.column_of(a).expect("edge touches a");
                if a == parent && tree.is_none() {
                    tree = Some((pos, self.int_column(a, a_col), b_col.to_string()));
                } else {
                    residual.push((pos, self.int_column(a, a_col), self.int_column(b, b_col)));
                }
            }
            let tree = tree.expect("bfs parent is adjacent");
            self.ensure_index(b, &tree.2);
            steps.push((b, tree, residual));
        }

        let mut effort = 0u64;
        let mut chosen = vec![0u32; order.len()];
        let (mut sum, mut sum_sq, mut successes) = (0.0, 0.0, 0);
        for _ in 0..walks {
            chosen[0] = self.rows[first][rng.random_range(0..base)];
            let mut weight = base as f64;
            effort += 1;
            let mut ok = true;
            for (s, (b, (pos, outer, col), residual)) in steps.iter().enumerate() {
                effort += 1;
                let idx = &self.indexes[&(*b, col.clone())];
                let Some(matches) = idx.get(&outer[chosen[*pos] as usize]) else {
                    ok = false;
                    break;
                };
                let r = matches[rng.random_range(0..matches.len())];
                weight *= matches.len() as f64;
                if !residual.iter().all(|(p, o, i)| o[chosen[*p] as usize] == i[r as usize]) {
                    ok = false;
                    break;
                }
                chosen[s + 1] = r;
            }
            if ok {
                sum += weight;
                sum_sq += weight * weight;
                successes += 1;
            }
        }
        self.effort += effort;
        let n = walks as f64;
        let mean = sum / n;
        let var = if walks > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        Ok(WalkEstimate { estimate: mean, std_error: (var / n).sqrt(), successes })
    }
}

pub fn exact_cardinality(db: &Database, query: &Query, subplan: SubPlan, row_budget: u64) -> Result<ExactCount> {
    QueryContext::new(db, query)?.exact(subplan, row_budget)
}

pub fn wander_join_estimate(
    db: &Database,
    query: &Query,
    subplan: SubPlan,
    walks: usize,
    seed: u64,
) -> Result<WalkEstimate> {
    let mut rng = walk_rng(seed, &query.id, subplan);
    QueryContext::new(db, query)?.wander_join(subplan, walks, &mut rng)
}

/// FNV-1a; stable across platforms and releases.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn walk_rng(seed: u64, query_id: &str, subplan: SubPlan) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(query_id));
    rng.set_stream(subplan.bits() as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Exact,
    Wanderjoin,
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(LabelMode::Exact),
            "wanderjoin" => Ok(LabelMode::Wanderjoin),
            _ => Err(Error::Config(format!("unknown label mode `{s}` (expected exact or wanderjoin)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Exact,
    Wanderjoin,
    TimeoutConstant,
}

/// One label. `raw_cardinality` is the unclamped count or estimate (absent
/// on timeout); `cardinality` is what training sees, at least 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub query_id: String,
    pub subplan: SubPlan,
    pub raw_cardinality: Option<f64>,
    pub cardinality: f64,
    pub source: LabelSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub mode: LabelMode,
    pub row_budget: u64,
    pub walks: usize,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { mode: LabelMode::Exact, row_budget: DEFAULT_ROW_BUDGET, walks: DEFAULT_WALKS, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub records: Vec<LabeledRecord>,
    pub effort: u64,
}

/// Labels every connected sub-plan of `query`; returns records and effort.
pub fn label_query(db: &Database, query: &Query, cfg: &LabelConfig) -> Result<(Vec<LabeledRecord>, u64)> {
    let mut ctx = QueryContext::new(db, query)?;
    let mut out = Vec::new();
    for subplan in query.join_graph.enumerate_subplans(DEFAULT_ALIAS_CAP)? {
        let (raw, source) = match cfg.mode {
            LabelMode::Exact => match ctx.exact(subplan, cfg.row_budget)? {
                ExactCount::Rows(n) => (Some(n as f64), LabelSource::Exact),
                ExactCount::Timeout => (None, LabelSource::TimeoutConstant),
            },
            LabelMode::Wanderjoin => {
                let mut rng = walk_rng(cfg.seed, &query.id, subplan);
                (Some(ctx.wander_join(subplan, cfg.walks, &mut rng)?.estimate), LabelSource::Wanderjoin)
            }
        };
        let cardinality = raw.map_or(timeout_label(cfg.row_budget), |r| r.max(1.0));
        out.push(LabeledRecord { query_id: query.id.clone(), subplan, raw_cardinality: raw, cardinality, source });
    }
    Ok((out, ctx.effort()))
}

/// Labels a workload in parallel; record order follows `queries`.
pub fn label_workload(db: &Database, queries: &[Query], cfg: &LabelConfig) -> Result<LabeledDataset> {
    let parts: Vec<(Vec<LabeledRecord>, u64)> =
        queries.par_iter().map(|q| label_query(db, q, cfg)).collect::<Result<_>>()?;
    let effort = parts.iter().map(|p| p.1).sum();
    Ok(LabeledDataset { records: parts.into_iter().flat_map(|p| p.0).collect(), effort })
}

pub fn write_records(path: &Path, records: &[LabeledRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<LabeledRecord>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Labels indexed by query id and sub-plan.
#[derive(Debug, Clone, Default)]
pub struct Labels {
    by_query: HashMap<String, HashMap<u32, f64>>,
}

impl Labels {
    pub fn new(records: &[LabeledRecord]) -> Self {
        let mut by_query: HashMap<String, HashMap<u32, f64>> = HashMap::new();
        for r in records {
            by_query.entry(r.query_id.clone()).or_default().insert(r.subplan.bits(), r.cardinality);
        }
        Labels { by_query }
    }

    pub fn get(&self, query_id: &str, subplan: SubPlan) -> Option<f64> {
        self.by_query.get(query_id)?.get(&subplan.bits()).copied()
    }

    /// Cardinality vector over `pg`'s nodes; the source entry is 1.
    pub fn vector(&self, query_id: &str, pg: &PlanGraph) -> Result<CardinalityVector> {
        let mut v = vec![1.0; pg.num_nodes()];
        for (id, slot) in v.iter_mut().enumerate().skip(1) {
            *slot = self.get(query_id, pg.node(id)).ok_or_else(|| {
                Error::Config(format!("missing label for query `{query_id}` sub-plan {}", pg.node(id)))
            })?;
        }
        Ok(CardinalityVector::new(v))
    }
}
