//! Datasets, preprocessing, evaluation and join analysis.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::ast::{
    self, Comparison, Condition, Operand, Predicate, Query, Resolved,
};
use crate::grammar::{canonicalize, parse_sql, resolve, GrammarError};
use crate::schema::{Schema, SchemaDoc, SchemaError, SchemaItem};

pub mod synth;

pub use synth::{generate_synthetic, SynthConfig, SyntheticData, Template};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("unknown db_id `{0}`")]
    UnknownDb(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// One question/query pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub question: String,
    pub sql: String,
    pub db_id: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads one JSON value per nonblank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for it in items {
        let line = serde_json::to_string(it).expect("serializable record");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn load_schemas(path: &Path) -> Result<Vec<Schema>, DataError> {
    let docs: Vec<SchemaDoc> = read_jsonl(path)?;
    docs.iter().map(|d| Schema::from_doc(d).map_err(DataError::from)).collect()
}

pub fn find_schema<'a>(schemas: &'a [Schema], db_id: &str) -> Result<&'a Schema, DataError> {
    schemas
        .iter()
        .find(|s| s.db_id == db_id)
        .ok_or_else(|| DataError::UnknownDb(db_id.to_string()))
}

/// Removes table aliases, qualifies bare columns and replaces literals,
/// producing canonical SQL.
pub fn preprocess_query(raw: &str, schema: &Schema) -> Result<String, GrammarError> {
    canonicalize(raw, schema)
}

fn parse_resolved(sql: &str, schema: &Schema) -> Option<Resolved> {
    resolve(&parse_sql(sql).ok()?, schema).ok()
}

fn sorted<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v
}

fn norm_condition(c: &Condition<usize, usize>) -> String {
    let preds = sorted(c.predicates().map(norm_predicate).collect::<Vec<_>>());
    let conns = sorted(c.rest.iter().map(|(k, _)| format!("{k:?}")).collect::<Vec<_>>());
    format!("P{preds:?}C{conns:?}")
}

fn norm_predicate(p: &Predicate<usize, usize>) -> String {
    match p {
        Predicate::Like { column, negated } => format!("like({column},{negated})"),
        Predicate::Cmp(a, cmp) => {
            let rhs = match cmp {
                Comparison::Op(op, Operand::Value) => format!("{op:?} v"),
                Comparison::Op(op, Operand::Sub(q)) => format!("{op:?} ({})", norm_query(q)),
                Comparison::In { negated, sub } => format!("in{negated} ({})", norm_query(sub)),
                Comparison::Between => "between".into(),
            };
            format!("{a:?} {rhs}")
        }
    }
}

/// Order-insensitive key of a query: select list, tables and join pairs,
/// predicates and connectors, and group columns are compared as multisets;
/// ORDER BY stays ordered.
fn norm_query(q: &Resolved) -> String {
    let s = &q.select;
    let items = sorted(s.items.clone());
    let tables = sorted(
        std::iter::once(s.from.first)
            .chain(s.from.joins.iter().map(|j| j.table))
            .collect::<Vec<_>>(),
    );
    let joins = sorted(
        s.from
            .joins
            .iter()
            .flat_map(|j| j.on.iter().map(|&(a, b)| (a.min(b), a.max(b))))
            .collect::<Vec<_>>(),
    );
    let group: BTreeSet<usize> = s.group.iter().copied().collect();
    let mut out = String::new();
    let _ = write!(
        out,
        "D{} S{items:?} T{tables:?} J{joins:?} W[{}] G{group:?} H[{}] O{:?} L{:?}",
        s.distinct,
        s.where_.as_ref().map(norm_condition).unwrap_or_default(),
        s.having.as_ref().map(norm_condition).unwrap_or_default(),
        s.order,
        s.limit
    );
    if let Some((op, rest)) = &q.set {
        let _ = write!(out, " {op:?} {{{}}}", norm_query(rest));
    }
    out
}

/// Component-wise equivalence of two queries. Unparseable inputs are never
/// equivalent.
pub fn evaluate_pair(pred: &str, gold: &str, schema: &Schema) -> bool {
    match (parse_resolved(pred, schema), parse_resolved(gold, schema)) {
        (Some(p), Some(g)) => norm_query(&p) == norm_query(&g),
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Single,
    Multi,
}

fn tables_of(q: &Resolved) -> BTreeSet<usize> {
    let mut t = BTreeSet::new();
    ast::visit(q, &mut |it| {
        if let SchemaItem::Table(i) = it {
            t.insert(i);
        }
    });
    t
}

/// Multi iff the query, subqueries included, references two or more tables.
pub fn split_single_multi(gold: &str, schema: &Schema) -> Result<Split, GrammarError> {
    let q = resolve(&parse_sql(gold)?, schema)?;
    Ok(if tables_of(&q).len() >= 2 { Split::Multi } else { Split::Single })
}

/// Structural problems of the joins in a query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinVerdict {
    pub has_join: bool,
    /// Some ON clause compares two columns of the same table.
    pub same_table_condition: bool,
    /// Some ON clause compares columns that are not a foreign-key pair.
    pub unconnected_tables: bool,
}

impl JoinVerdict {
    pub fn ok(&self) -> bool {
        !self.same_table_condition && !self.unconnected_tables
    }
}

fn join_verdict(q: &Resolved, schema: &Schema, v: &mut JoinVerdict) {
    fn walk(q: &Query<usize, usize>, schema: &Schema, v: &mut JoinVerdict) {
        let s = &q.select;
        for j in &s.from.joins {
            v.has_join = true;
            for &(a, b) in &j.on {
                if schema.column(a).table == schema.column(b).table {
                    v.same_table_condition = true;
                }
                if !schema.fk_linked(a, b) {
                    v.unconnected_tables = true;
                }
            }
        }
        let mut subs = Vec::new();
        for c in [&s.where_, &s.having].into_iter().flatten() {
            for p in c.predicates() {
                if let Predicate::Cmp(_, Comparison::In { sub, .. } | Comparison::Op(_, Operand::Sub(sub))) = p {
                    subs.push(sub);
                }
            }
        }
        for sub in subs {
            walk(sub, schema, v);
        }
        if let Some((_, rest)) = &q.set {
            walk(rest, schema, v);
        }
    }
    walk(q, schema, v)
}

pub fn join_badness(sql: &str, schema: &Schema) -> Result<JoinVerdict, GrammarError> {
    let q = resolve(&parse_sql(sql)?, schema)?;
    let mut v = JoinVerdict::default();
    join_verdict(&q, schema, &mut v);
    Ok(v)
}

/// A ranked decoder output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sql: String,
    pub log_prob: f64,
    #[serde(default)]
    pub joins: JoinVerdict,
}

/// Drops candidates whose joins compare two columns of one table, keeping
/// the relative order of the rest. May return an empty list.
pub fn filter_beam(candidates: &[Candidate], schema: &Schema) -> Vec<Candidate> {
    candidates
        .iter()
        .filter(|c| !join_badness(&c.sql, schema).map(|v| v.same_table_condition).unwrap_or(false))
        .cloned()
        .collect()
}

/// Top candidate after optional filtering. When filtering removes
/// everything, the unfiltered top-1 is returned and the flag is set.
pub fn choose_top<'c>(candidates: &'c [Candidate], filtered: Option<&'c [Candidate]>) -> (Option<&'c Candidate>, bool) {
    match filtered {
        Some(f) if !f.is_empty() => (f.first(), false),
        Some(_) => (candidates.first(), !candidates.is_empty()),
        None => (candidates.first(), false),
    }
}

/// `ρ_v = 1` for every item the gold query mentions, else 0; indexed by
/// graph node.
pub fn oracle_relevance(gold: &str, schema: &Schema) -> Result<Vec<f64>, GrammarError> {
    let q = resolve(&parse_sql(gold)?, schema)?;
    let mut rho = vec![0.0; schema.num_items()];
    for it in ast::referenced_items(&q) {
        rho[schema.node_of(it)] = 1.0;
    }
    Ok(rho)
}

/// One prediction record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub db_id: String,
    pub question: String,
    pub candidates: Vec<Candidate>,
}

impl Prediction {
    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub db_id: String,
    pub question: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub split: Option<Split>,
    pub correct: bool,
    /// Gold query could not be parsed against its schema.
    pub gold_out_of_grammar: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinRates {
    pub with_join: usize,
    pub same_table: usize,
    pub unconnected: usize,
}

impl JoinRates {
    fn add(&mut self, v: &JoinVerdict) {
        if v.has_join {
            self.with_join += 1;
            self.same_table += usize::from(v.same_table_condition);
            self.unconnected += usize::from(v.unconnected_tables);
        }
    }

    fn rate(&self, n: usize) -> f64 {
        if self.with_join == 0 {
            0.0
        } else {
            n as f64 / self.with_join as f64
        }
    }

    pub fn same_table_rate(&self) -> f64 {
        self.rate(self.same_table)
    }

    pub fn unconnected_rate(&self) -> f64 {
        self.rate(self.unconnected)
    }

    /// Fraction of joined predictions with either problem.
    pub fn bad_rate_of(&self, bad: usize) -> f64 {
        self.rate(bad)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub single_total: usize,
    pub single_correct: usize,
    pub multi_total: usize,
    pub multi_correct: usize,
    pub joins: JoinRates,
    /// Predictions with a join and at least one of the two problems.
    pub bad_joins: usize,
    pub gold_out_of_grammar: usize,
    pub verdicts: Vec<Verdict>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }

    pub fn single_accuracy(&self) -> f64 {
        ratio(self.single_correct, self.single_total)
    }

    pub fn multi_accuracy(&self) -> f64 {
        ratio(self.multi_correct, self.multi_total)
    }

    pub fn bad_join_rate(&self) -> f64 {
        self.joins.bad_rate_of(self.bad_joins)
    }

    /// Human-readable summary table.
    pub fn table(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>7} {:>7} {:>7}", "Model", "Acc.", "Single", "Multi");
        let _ = writeln!(
            s,
            "{:<16} {:>6.1}% {:>6.1}% {:>6.1}%",
            label,
            100.0 * self.accuracy(),
            100.0 * self.single_accuracy(),
            100.0 * self.multi_accuracy()
        );
        let _ = writeln!(
            s,
            "examples {} (single {}, multi {}), gold out of grammar {}",
            self.total, self.single_total, self.multi_total, self.gold_out_of_grammar
        );
        let _ = writeln!(
            s,
            "joined predictions {}: same-table {:.1}%, unconnected {:.1}%, bad {:.1}%",
            self.joins.with_join,
            100.0 * self.joins.same_table_rate(),
            100.0 * self.joins.unconnected_rate(),
            100.0 * self.bad_join_rate()
        );
        s
    }
}

/// Scores top-1 predictions against gold examples, matched by position.
pub fn evaluate(examples: &[Example], predictions: &[Option<String>], schemas: &[Schema]) -> Result<EvalReport, DataError> {
    let mut r = EvalReport::default();
    for (ex, pred) in examples.iter().zip(predictions) {
        let schema = find_schema(schemas, &ex.db_id)?;
        let split = split_single_multi(&ex.sql, schema).ok();
        let correct = split.is_some() && pred.as_deref().is_some_and(|p| evaluate_pair(p, &ex.sql, schema));
        r.total += 1;
        r.correct += usize::from(correct);
        match split {
            Some(Split::Single) => {
                r.single_total += 1;
                r.single_correct += usize::from(correct);
            }
            Some(Split::Multi) => {
                r.multi_total += 1;
                r.multi_correct += usize::from(correct);
            }
            None => r.gold_out_of_grammar += 1,
        }
        if let Some(v) = pred.as_deref().and_then(|p| join_badness(p, schema).ok()) {
            r.joins.add(&v);
            if v.has_join && !v.ok() {
                r.bad_joins += 1;
            }
        }
        r.verdicts.push(Verdict {
            db_id: ex.db_id.clone(),
            question: ex.question.clone(),
            gold: ex.sql.clone(),
            predicted: pred.clone(),
            split,
            correct,
            gold_out_of_grammar: split.is_none(),
        });
    }
    Ok(r)
}
