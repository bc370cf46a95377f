//! Query syntax trees, name resolution, canonical printing and conversion
//! to grammar actions.
//!
//! Trees are generic over table and column references: the parser yields
//! names ([`TableRef`], [`ColRef`]); [`resolve`] maps them to schema indices.

use std::collections::HashMap;

use super::{parse, rule_id, Action, GrammarError, Nt, Result, Sym};
use crate::schema::{Schema, SchemaItem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SetOp {
    Union,
    Intersect,
    Except,
}

impl SetOp {
    pub fn keyword(self) -> &'static str {
        match self {
            SetOp::Union => "UNION",
            SetOp::Intersect => "INTERSECT",
            SetOp::Except => "EXCEPT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Query<T, C> {
    pub select: Select<T, C>,
    pub set: Option<(SetOp, Box<Query<T, C>>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Select<T, C> {
    pub distinct: bool,
    pub items: Vec<Agg<C>>,
    pub from: From<T, C>,
    pub where_: Option<Condition<T, C>>,
    pub group: Vec<C>,
    pub having: Option<Condition<T, C>>,
    pub order: Vec<(Agg<C>, Dir)>,
    pub limit: Option<Limit>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct From<T, C> {
    pub first: T,
    pub joins: Vec<Join<T, C>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Join<T, C> {
    pub table: T,
    pub on: Vec<(C, C)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Agg<C> {
    Col(C),
    CountStar,
    Count(C),
    CountDistinct(C),
    Min(C),
    Max(C),
    Sum(C),
    Avg(C),
}

impl<C> Agg<C> {
    pub fn column(&self) -> Option<&C> {
        match self {
            Agg::CountStar => None,
            Agg::Col(c) | Agg::Count(c) | Agg::CountDistinct(c) | Agg::Min(c) | Agg::Max(c) | Agg::Sum(c) | Agg::Avg(c) => {
                Some(c)
            }
        }
    }

    fn map<D>(&self, f: impl FnOnce(&C) -> D) -> Agg<D> {
        match self {
            Agg::Col(c) => Agg::Col(f(c)),
            Agg::CountStar => Agg::CountStar,
            Agg::Count(c) => Agg::Count(f(c)),
            Agg::CountDistinct(c) => Agg::CountDistinct(f(c)),
            Agg::Min(c) => Agg::Min(f(c)),
            Agg::Max(c) => Agg::Max(f(c)),
            Agg::Sum(c) => Agg::Sum(f(c)),
            Agg::Avg(c) => Agg::Avg(f(c)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    Asc,
    Desc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Limit {
    One,
    Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Conn {
    And,
    Or,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Condition<T, C> {
    pub first: Predicate<T, C>,
    pub rest: Vec<(Conn, Predicate<T, C>)>,
}

impl<T, C> Condition<T, C> {
    pub fn predicates(&self) -> impl Iterator<Item = &Predicate<T, C>> {
        std::iter::once(&self.first).chain(self.rest.iter().map(|(_, p)| p))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Predicate<T, C> {
    Cmp(Agg<C>, Comparison<T, C>),
    Like { column: C, negated: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    Gt,
    Lt,
    Ge,
    Le,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Gt, CmpOp::Lt, CmpOp::Ge, CmpOp::Le];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Comparison<T, C> {
    Op(CmpOp, Operand<T, C>),
    In { negated: bool, sub: Box<Query<T, C>> },
    Between,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand<T, C> {
    Value,
    Sub(Box<Query<T, C>>),
}

/// A table in `FROM`, with its alias if any.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

/// A possibly qualified column name.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ColRef {
    pub qualifier: Option<String>,
    pub name: String,
}

pub type Parsed = Query<TableRef, ColRef>;
/// Tables by index, columns by id.
pub type Resolved = Query<usize, usize>;

/// Tolerant reader for SQL text. Keywords are case-insensitive, aliases and
/// bare columns are kept as written, and every literal becomes a value
/// placeholder.
pub fn parse_sql(sql: &str) -> Result<Parsed> {
    parse::parse(sql)
}

/// Resolves aliases and bare columns against `schema`. Each `SELECT` is its
/// own scope; a qualifier is an alias or a table name from that scope's
/// `FROM`, or failing that any schema table.
pub fn resolve(q: &Parsed, schema: &Schema) -> Result<Resolved> {
    Ok(Query {
        select: resolve_select(&q.select, schema)?,
        set: match &q.set {
            Some((op, rest)) => Some((*op, Box::new(resolve(rest, schema)?))),
            None => None,
        },
    })
}

struct Scope {
    aliases: HashMap<String, usize>,
    tables: Vec<usize>,
}

fn resolve_table(t: &TableRef, schema: &Schema) -> Result<usize> {
    schema
        .table_index(&t.name)
        .ok_or_else(|| GrammarError::UnknownSchemaItem(t.name.clone()))
}

impl Scope {
    fn new(from: &From<TableRef, ColRef>, schema: &Schema) -> Result<Self> {
        let mut scope = Scope {
            aliases: HashMap::new(),
            tables: Vec::new(),
        };
        let refs = std::iter::once(&from.first).chain(from.joins.iter().map(|j| &j.table));
        for t in refs {
            let idx = resolve_table(t, schema)?;
            if let Some(a) = &t.alias {
                scope.aliases.insert(a.clone(), idx);
            }
            if !scope.tables.contains(&idx) {
                scope.tables.push(idx);
            }
        }
        Ok(scope)
    }

    fn column(&self, c: &ColRef, schema: &Schema) -> Result<usize> {
        match &c.qualifier {
            Some(q) => {
                let table = match self.aliases.get(q) {
                    Some(&t) => t,
                    None => schema.table_index(q).ok_or_else(|| GrammarError::UndefinedAlias(q.clone()))?,
                };
                schema
                    .column_in(table, &c.name)
                    .ok_or_else(|| GrammarError::UnknownSchemaItem(format!("{}.{}", schema.table(table).name, c.name)))
            }
            None => {
                let found: Vec<usize> = self
                    .tables
                    .iter()
                    .filter_map(|&t| schema.column_in(t, &c.name))
                    .collect();
                match found.as_slice() {
                    [one] => Ok(*one),
                    [] => Err(GrammarError::UnknownSchemaItem(c.name.clone())),
                    many => Err(GrammarError::AmbiguousColumn {
                        column: c.name.clone(),
                        candidates: many.iter().map(|&id| schema.qualified(id)).collect(),
                    }),
                }
            }
        }
    }

    fn agg(&self, a: &Agg<ColRef>, schema: &Schema) -> Result<Agg<usize>> {
        let col = match a.column() {
            Some(c) => Some(self.column(c, schema)?),
            None => None,
        };
        Ok(a.map(|_| col.expect("column present")))
    }

    fn condition(&self, c: &Condition<TableRef, ColRef>, schema: &Schema) -> Result<Condition<usize, usize>> {
        Ok(Condition {
            first: self.predicate(&c.first, schema)?,
            rest: c
                .rest
                .iter()
                .map(|(k, p)| Ok((*k, self.predicate(p, schema)?)))
                .collect::<Result<_>>()?,
        })
    }

    fn predicate(&self, p: &Predicate<TableRef, ColRef>, schema: &Schema) -> Result<Predicate<usize, usize>> {
        Ok(match p {
            Predicate::Like { column, negated } => Predicate::Like {
                column: self.column(column, schema)?,
                negated: *negated,
            },
            Predicate::Cmp(a, cmp) => {
                let a = self.agg(a, schema)?;
                let cmp = match cmp {
                    Comparison::Between => Comparison::Between,
                    Comparison::In { negated, sub } => Comparison::In {
                        negated: *negated,
                        sub: Box::new(resolve(sub, schema)?),
                    },
                    Comparison::Op(op, Operand::Value) => Comparison::Op(*op, Operand::Value),
                    Comparison::Op(op, Operand::Sub(sub)) => Comparison::Op(*op, Operand::Sub(Box::new(resolve(sub, schema)?))),
                };
                Predicate::Cmp(a, cmp)
            }
        })
    }
}

fn resolve_select(s: &Select<TableRef, ColRef>, schema: &Schema) -> Result<Select<usize, usize>> {
    let scope = Scope::new(&s.from, schema)?;
    let from = From {
        first: resolve_table(&s.from.first, schema)?,
        joins: s
            .from
            .joins
            .iter()
            .map(|j| {
                Ok(Join {
                    table: resolve_table(&j.table, schema)?,
                    on: j
                        .on
                        .iter()
                        .map(|(a, b)| Ok((scope.column(a, schema)?, scope.column(b, schema)?)))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(Select {
        distinct: s.distinct,
        items: s.items.iter().map(|a| scope.agg(a, schema)).collect::<Result<_>>()?,
        from,
        where_: s.where_.as_ref().map(|c| scope.condition(c, schema)).transpose()?,
        group: s.group.iter().map(|c| scope.column(c, schema)).collect::<Result<_>>()?,
        having: s.having.as_ref().map(|c| scope.condition(c, schema)).transpose()?,
        order: s
            .order
            .iter()
            .map(|(a, d)| Ok((scope.agg(a, schema)?, *d)))
            .collect::<Result<_>>()?,
        limit: s.limit,
    })
}

struct Printer<'a> {
    schema: &'a Schema,
    out: Vec<String>,
}

impl Printer<'_> {
    fn push(&mut self, s: &str) {
        self.out.push(s.to_string());
    }

    fn col(&mut self, c: usize) {
        let q = self.schema.qualified(c);
        self.out.push(q);
    }

    fn query(&mut self, q: &Resolved) {
        self.select(&q.select);
        if let Some((op, rest)) = &q.set {
            self.push(op.keyword());
            self.query(rest);
        }
    }

    fn select(&mut self, s: &Select<usize, usize>) {
        self.push("SELECT");
        if s.distinct {
            self.push("DISTINCT");
        }
        for (i, a) in s.items.iter().enumerate() {
            if i > 0 {
                self.push(",");
            }
            self.agg(a);
        }
        self.push("FROM");
        let name = self.schema.table(s.from.first).name.clone();
        self.out.push(name);
        for j in &s.from.joins {
            self.push("JOIN");
            let name = self.schema.table(j.table).name.clone();
            self.out.push(name);
            for (k, (a, b)) in j.on.iter().enumerate() {
                self.push(if k == 0 { "ON" } else { "AND" });
                self.col(*a);
                self.push("=");
                self.col(*b);
            }
        }
        if let Some(c) = &s.where_ {
            self.push("WHERE");
            self.condition(c);
        }
        if !s.group.is_empty() {
            self.push("GROUP");
            self.push("BY");
            for (i, c) in s.group.iter().enumerate() {
                if i > 0 {
                    self.push(",");
                }
                self.col(*c);
            }
        }
        if let Some(c) = &s.having {
            self.push("HAVING");
            self.condition(c);
        }
        if !s.order.is_empty() {
            self.push("ORDER");
            self.push("BY");
            for (i, (a, d)) in s.order.iter().enumerate() {
                if i > 0 {
                    self.push(",");
                }
                self.agg(a);
                self.push(match d {
                    Dir::Asc => "ASC",
                    Dir::Desc => "DESC",
                });
            }
        }
        match s.limit {
            Some(Limit::One) => {
                self.push("LIMIT");
                self.push("1");
            }
            Some(Limit::Value) => {
                self.push("LIMIT");
                self.push("'value'");
            }
            None => {}
        }
    }

    fn agg(&mut self, a: &Agg<usize>) {
        let f = match a {
            Agg::Col(c) => return self.col(*c),
            Agg::CountStar => {
                for t in ["COUNT", "(", "*", ")"] {
                    self.push(t);
                }
                return;
            }
            Agg::Count(_) | Agg::CountDistinct(_) => "COUNT",
            Agg::Min(_) => "MIN",
            Agg::Max(_) => "MAX",
            Agg::Sum(_) => "SUM",
            Agg::Avg(_) => "AVG",
        };
        self.push(f);
        self.push("(");
        if matches!(a, Agg::CountDistinct(_)) {
            self.push("DISTINCT");
        }
        self.col(*a.column().expect("aggregate column"));
        self.push(")");
    }

    fn condition(&mut self, c: &Condition<usize, usize>) {
        self.predicate(&c.first);
        for (k, p) in &c.rest {
            self.push(match k {
                Conn::And => "AND",
                Conn::Or => "OR",
            });
            self.predicate(p);
        }
    }

    fn predicate(&mut self, p: &Predicate<usize, usize>) {
        match p {
            Predicate::Like { column, negated } => {
                self.col(*column);
                if *negated {
                    self.push("NOT");
                }
                self.push("LIKE");
                self.push("'value'");
            }
            Predicate::Cmp(a, cmp) => {
                self.agg(a);
                match cmp {
                    Comparison::Op(op, Operand::Value) => {
                        self.push(op.symbol());
                        self.push("'value'");
                    }
                    Comparison::Op(op, Operand::Sub(q)) => {
                        self.push(op.symbol());
                        self.push("(");
                        self.query(q);
                        self.push(")");
                    }
                    Comparison::In { negated, sub } => {
                        if *negated {
                            self.push("NOT");
                        }
                        self.push("IN");
                        self.push("(");
                        self.query(sub);
                        self.push(")");
                    }
                    Comparison::Between => {
                        for t in ["BETWEEN", "'value'", "AND", "'value'"] {
                            self.push(t);
                        }
                    }
                }
            }
        }
    }
}

/// Canonical text of a resolved query: uppercase keywords, qualified
/// columns, no aliases, single spaces, literals as `'value'`.
pub fn print(q: &Resolved, schema: &Schema) -> String {
    let mut p = Printer { schema, out: Vec::new() };
    p.query(q);
    p.out.join(" ")
}

/// Parse, resolve and print.
pub fn canonicalize(sql: &str, schema: &Schema) -> Result<String> {
    Ok(print(&resolve(&parse_sql(sql)?, schema)?, schema))
}

/// Schema items referenced anywhere in the query, subqueries included, in
/// first-mention order without repeats.
pub fn referenced_items(q: &Resolved) -> Vec<SchemaItem> {
    let mut out = Vec::new();
    visit(q, &mut |it| {
        if !out.contains(&it) {
            out.push(it);
        }
    });
    out
}

/// Calls `f` on every table and column reference, in textual order.
pub fn visit(q: &Resolved, f: &mut dyn FnMut(SchemaItem)) {
    let s = &q.select;
    let agg = |a: &Agg<usize>, f: &mut dyn FnMut(SchemaItem)| {
        if let Some(c) = a.column() {
            f(SchemaItem::Column(*c))
        }
    };
    for a in &s.items {
        agg(a, f);
    }
    f(SchemaItem::Table(s.from.first));
    for j in &s.from.joins {
        f(SchemaItem::Table(j.table));
        for (a, b) in &j.on {
            f(SchemaItem::Column(*a));
            f(SchemaItem::Column(*b));
        }
    }
    let cond = |c: &Condition<usize, usize>, f: &mut dyn FnMut(SchemaItem)| {
        for p in c.predicates() {
            match p {
                Predicate::Like { column, .. } => f(SchemaItem::Column(*column)),
                Predicate::Cmp(a, cmp) => {
                    agg(a, f);
                    match cmp {
                        Comparison::In { sub, .. } | Comparison::Op(_, Operand::Sub(sub)) => visit(sub, f),
                        _ => {}
                    }
                }
            }
        }
    };
    if let Some(c) = &s.where_ {
        cond(c, f);
    }
    for c in &s.group {
        f(SchemaItem::Column(*c));
    }
    if let Some(c) = &s.having {
        cond(c, f);
    }
    for (a, _) in &s.order {
        agg(a, f);
    }
    if let Some((_, rest)) = &q.set {
        visit(rest, f);
    }
}

struct Emitter {
    out: Vec<Action>,
}

impl Emitter {
    fn rule(&mut self, lhs: Nt, rhs: &[Sym]) {
        self.out.push(Action::Rule(rule_id(lhs, rhs)));
    }

    fn item(&mut self, it: SchemaItem) {
        self.out.push(Action::Item(it));
    }

    fn query(&mut self, q: &Resolved) -> Result<()> {
        use Sym::{Kw, N};
        match &q.set {
            None => self.rule(Nt::Query, &[N(Nt::Select)]),
            Some((op, _)) => self.rule(Nt::Query, &[N(Nt::Select), Kw(op.keyword()), N(Nt::Query)]),
        }
        self.select(&q.select)?;
        if let Some((_, rest)) = &q.set {
            self.query(rest)?;
        }
        Ok(())
    }

    fn select(&mut self, s: &Select<usize, usize>) -> Result<()> {
        use Sym::{Kw, N};
        self.rule(
            Nt::Select,
            &[
                Kw("SELECT"),
                N(Nt::Distinct),
                N(Nt::SelectList),
                Kw("FROM"),
                N(Nt::From),
                N(Nt::Where),
                N(Nt::Group),
                N(Nt::Order),
            ],
        );
        if s.distinct {
            self.rule(Nt::Distinct, &[Kw("DISTINCT")]);
        } else {
            self.rule(Nt::Distinct, &[]);
        }
        for (i, a) in s.items.iter().enumerate() {
            if i + 1 < s.items.len() {
                self.rule(Nt::SelectList, &[N(Nt::AggExpr), Kw(","), N(Nt::SelectList)]);
            } else {
                self.rule(Nt::SelectList, &[N(Nt::AggExpr)]);
            }
            self.agg(a);
        }
        self.rule(Nt::From, &[N(Nt::Table), N(Nt::Joins)]);
        self.item(SchemaItem::Table(s.from.first));
        for j in &s.from.joins {
            let [(a, b)] = j.on.as_slice() else {
                return Err(GrammarError::OutOfGrammar(format!(
                    "JOIN with {} ON conditions",
                    j.on.len()
                )));
            };
            self.rule(
                Nt::Joins,
                &[
                    Kw("JOIN"),
                    N(Nt::Table),
                    Kw("ON"),
                    N(Nt::Column),
                    Kw("="),
                    N(Nt::Column),
                    N(Nt::Joins),
                ],
            );
            self.item(SchemaItem::Table(j.table));
            self.item(SchemaItem::Column(*a));
            self.item(SchemaItem::Column(*b));
        }
        self.rule(Nt::Joins, &[]);
        match &s.where_ {
            None => self.rule(Nt::Where, &[]),
            Some(c) => {
                self.rule(Nt::Where, &[Kw("WHERE"), N(Nt::Condition)]);
                self.condition(c)?;
            }
        }
        if s.group.is_empty() {
            if s.having.is_some() {
                return Err(GrammarError::OutOfGrammar("HAVING without GROUP BY".into()));
            }
            self.rule(Nt::Group, &[]);
        } else {
            self.rule(Nt::Group, &[Kw("GROUP"), Kw("BY"), N(Nt::GroupList), N(Nt::Having)]);
            for (i, c) in s.group.iter().enumerate() {
                if i + 1 < s.group.len() {
                    self.rule(Nt::GroupList, &[N(Nt::Column), Kw(","), N(Nt::GroupList)]);
                } else {
                    self.rule(Nt::GroupList, &[N(Nt::Column)]);
                }
                self.item(SchemaItem::Column(*c));
            }
            match &s.having {
                None => self.rule(Nt::Having, &[]),
                Some(c) => {
                    self.rule(Nt::Having, &[Kw("HAVING"), N(Nt::Condition)]);
                    self.condition(c)?;
                }
            }
        }
        if s.order.is_empty() {
            if s.limit.is_some() {
                return Err(GrammarError::OutOfGrammar("LIMIT without ORDER BY".into()));
            }
            self.rule(Nt::Order, &[]);
        } else {
            self.rule(Nt::Order, &[Kw("ORDER"), Kw("BY"), N(Nt::OrderList), N(Nt::Limit)]);
            for (i, (a, d)) in s.order.iter().enumerate() {
                if i + 1 < s.order.len() {
                    self.rule(Nt::OrderList, &[N(Nt::OrderItem), Kw(","), N(Nt::OrderList)]);
                } else {
                    self.rule(Nt::OrderList, &[N(Nt::OrderItem)]);
                }
                self.rule(Nt::OrderItem, &[N(Nt::AggExpr), N(Nt::Direction)]);
                self.agg(a);
                self.rule(
                    Nt::Direction,
                    &[Kw(match d {
                        Dir::Asc => "ASC",
                        Dir::Desc => "DESC",
                    })],
                );
            }
            match s.limit {
                None => self.rule(Nt::Limit, &[]),
                Some(Limit::One) => self.rule(Nt::Limit, &[Kw("LIMIT"), Kw("1")]),
                Some(Limit::Value) => self.rule(Nt::Limit, &[Kw("LIMIT"), Kw("'value'")]),
            }
        }
        Ok(())
    }

    fn agg(&mut self, a: &Agg<usize>) {
        use Sym::{Kw, N};
        let c = match a {
            Agg::Col(_) => vec![N(Nt::Column)],
            Agg::CountStar => vec![Kw("COUNT"), Kw("("), Kw("*"), Kw(")")],
            Agg::Count(_) => vec![Kw("COUNT"), Kw("("), N(Nt::Column), Kw(")")],
            Agg::CountDistinct(_) => vec![Kw("COUNT"), Kw("("), Kw("DISTINCT"), N(Nt::Column), Kw(")")],
            Agg::Min(_) => vec![Kw("MIN"), Kw("("), N(Nt::Column), Kw(")")],
            Agg::Max(_) => vec![Kw("MAX"), Kw("("), N(Nt::Column), Kw(")")],
            Agg::Sum(_) => vec![Kw("SUM"), Kw("("), N(Nt::NumColumn), Kw(")")],
            Agg::Avg(_) => vec![Kw("AVG"), Kw("("), N(Nt::NumColumn), Kw(")")],
        };
        self.rule(Nt::AggExpr, &c);
        if let Some(col) = a.column() {
            self.item(SchemaItem::Column(*col));
        }
    }

    fn condition(&mut self, c: &Condition<usize, usize>) -> Result<()> {
        use Sym::{Kw, N};
        let preds: Vec<&Predicate<usize, usize>> = c.predicates().collect();
        for (i, p) in preds.iter().enumerate() {
            match c.rest.get(i) {
                None => self.rule(Nt::Condition, &[N(Nt::Predicate)]),
                Some((Conn::And, _)) => self.rule(Nt::Condition, &[N(Nt::Predicate), Kw("AND"), N(Nt::Condition)]),
                Some((Conn::Or, _)) => self.rule(Nt::Condition, &[N(Nt::Predicate), Kw("OR"), N(Nt::Condition)]),
            }
            self.predicate(p)?;
        }
        Ok(())
    }

    fn predicate(&mut self, p: &Predicate<usize, usize>) -> Result<()> {
        use Sym::{Kw, N};
        match p {
            Predicate::Like { column, negated } => {
                if *negated {
                    self.rule(Nt::Predicate, &[N(Nt::TextColumn), Kw("NOT"), Kw("LIKE"), Kw("'value'")]);
                } else {
                    self.rule(Nt::Predicate, &[N(Nt::TextColumn), Kw("LIKE"), Kw("'value'")]);
                }
                self.item(SchemaItem::Column(*column));
            }
            Predicate::Cmp(a, cmp) => {
                self.rule(Nt::Predicate, &[N(Nt::AggExpr), N(Nt::Comparison)]);
                self.agg(a);
                match cmp {
                    Comparison::Op(op, operand) => {
                        self.rule(Nt::Comparison, &[N(Nt::CmpOp), N(Nt::Operand)]);
                        self.rule(Nt::CmpOp, &[Kw(op.symbol())]);
                        match operand {
                            Operand::Value => self.rule(Nt::Operand, &[Kw("'value'")]),
                            Operand::Sub(q) => {
                                self.rule(Nt::Operand, &[Kw("("), N(Nt::Query), Kw(")")]);
                                self.query(q)?;
                            }
                        }
                    }
                    Comparison::In { negated, sub } => {
                        if *negated {
                            self.rule(Nt::Comparison, &[Kw("NOT"), Kw("IN"), Kw("("), N(Nt::Query), Kw(")")]);
                        } else {
                            self.rule(Nt::Comparison, &[Kw("IN"), Kw("("), N(Nt::Query), Kw(")")]);
                        }
                        self.query(sub)?;
                    }
                    Comparison::Between => {
                        self.rule(Nt::Comparison, &[Kw("BETWEEN"), Kw("'value'"), Kw("AND"), Kw("'value'")])
                    }
                }
            }
        }
        Ok(())
    }
}

/// Leftmost-derivation actions for `q`. Type constraints on column slots
/// are checked when the actions are replayed.
pub fn emit(q: &Resolved) -> Result<Vec<Action>> {
    let mut e = Emitter { out: Vec::new() };
    e.query(q)?;
    Ok(e.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::schema;
    use crate::schema::ValueType::*;

    fn team() -> Schema {
        schema(
            "league",
            &[
                ("team", &[("team_id", Number, true), ("name", Text, false)]),
                ("match_season", &[("season", Number, false), ("team", Number, false)]),
            ],
            &[("match_season.team", "team.team_id")],
        )
    }

    #[test]
    fn aliases_become_table_names() {
        let s = team();
        assert_eq!(
            canonicalize("SELECT T1.name FROM team AS T1", &s).unwrap(),
            "SELECT team.name FROM team"
        );
    }

    #[test]
    fn bare_columns_are_qualified() {
        let s = team();
        assert_eq!(
            canonicalize("select name from team where team_id not in (select team from match_season)", &s).unwrap(),
            "SELECT team.name FROM team WHERE team.team_id NOT IN ( SELECT match_season.team FROM match_season )"
        );
    }

    #[test]
    fn ambiguous_bare_column_lists_candidates() {
        let s = schema(
            "x",
            &[("a", &[("x", Text, false)]), ("b", &[("x", Text, false)])],
            &[],
        );
        let err = canonicalize("SELECT x FROM a JOIN b", &s).unwrap_err();
        assert_eq!(
            err,
            GrammarError::AmbiguousColumn {
                column: "x".into(),
                candidates: vec!["a.x".into(), "b.x".into()]
            }
        );
    }

    #[test]
    fn undefined_alias_is_an_error() {
        let s = team();
        assert_eq!(
            canonicalize("SELECT T2.name FROM team AS T1", &s).unwrap_err(),
            GrammarError::UndefinedAlias("t2".into())
        );
    }

    #[test]
    fn referenced_items_include_subqueries() {
        let s = team();
        let q = resolve(
            &parse_sql("SELECT name FROM team WHERE team_id NOT IN (SELECT team FROM match_season)").unwrap(),
            &s,
        )
        .unwrap();
        let names: Vec<String> = referenced_items(&q)
            .into_iter()
            .map(|it| match it {
                SchemaItem::Table(t) => s.table(t).name.clone(),
                SchemaItem::Column(c) => s.qualified(c),
            })
            .collect();
        assert_eq!(names, ["team.name", "team", "team.team_id", "match_season.team", "match_season"]);
    }

    #[test]
    fn multi_condition_join_is_out_of_grammar() {
        let s = team();
        let q = resolve(
            &parse_sql("SELECT team.name FROM team JOIN match_season ON team.team_id = match_season.team AND team.team_id = match_season.season").unwrap(),
            &s,
        )
        .unwrap();
        assert!(matches!(emit(&q), Err(GrammarError::OutOfGrammar(_))));
    }
}
