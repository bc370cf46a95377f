//! SQL grammar, decoding-state legality and SQL ⇄ derivation conversion.
//!
//! A derivation expands the start symbol `query` leftmost-first. Each step
//! either applies a schema-independent rule from [`RULES`] or, when the
//! leftmost nonterminal is a table or column slot, picks a schema item.
//! Column slots carry a type constraint (any, number, text).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Schema, SchemaItem, ValueType};

pub mod ast;
pub mod corpus;
mod parse;

pub use ast::{canonicalize, parse_sql, resolve, Resolved};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("out of grammar: {0}")]
    OutOfGrammar(String),
    #[error("unknown schema item `{0}`")]
    UnknownSchemaItem(String),
    #[error("ambiguous column `{column}`: candidates {}", candidates.join(", "))]
    AmbiguousColumn { column: String, candidates: Vec<String> },
    #[error("alias `{0}` used but never defined")]
    UndefinedAlias(String),
    #[error("action {action} is not legal for nonterminal `{expected}`")]
    IllegalAction { action: String, expected: &'static str },
    #[error("derivation is already complete")]
    Complete,
    #[error("derivation is incomplete ({0} open nonterminals)")]
    Incomplete(usize),
}

pub type Result<T> = std::result::Result<T, GrammarError>;

/// Nonterminals. `Table`, `Column`, `NumColumn` and `TextColumn` are
/// schema-typed and expand to schema items.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Nt {
    Query,
    Select,
    Distinct,
    SelectList,
    AggExpr,
    From,
    Joins,
    Where,
    Condition,
    Predicate,
    Comparison,
    Operand,
    CmpOp,
    Group,
    GroupList,
    Having,
    Order,
    OrderList,
    OrderItem,
    Direction,
    Limit,
    Table,
    Column,
    NumColumn,
    TextColumn,
}

impl Nt {
    pub fn name(self) -> &'static str {
        match self {
            Nt::Query => "query",
            Nt::Select => "select",
            Nt::Distinct => "distinct",
            Nt::SelectList => "select_list",
            Nt::AggExpr => "agg_expr",
            Nt::From => "from",
            Nt::Joins => "joins",
            Nt::Where => "where",
            Nt::Condition => "condition",
            Nt::Predicate => "predicate",
            Nt::Comparison => "comparison",
            Nt::Operand => "operand",
            Nt::CmpOp => "cmp_op",
            Nt::Group => "group",
            Nt::GroupList => "group_list",
            Nt::Having => "having",
            Nt::Order => "order",
            Nt::OrderList => "order_list",
            Nt::OrderItem => "order_item",
            Nt::Direction => "direction",
            Nt::Limit => "limit",
            Nt::Table => "table",
            Nt::Column => "column",
            Nt::NumColumn => "num_column",
            Nt::TextColumn => "text_column",
        }
    }

    pub fn is_schema_typed(self) -> bool {
        matches!(self, Nt::Table | Nt::Column | Nt::NumColumn | Nt::TextColumn)
    }

    /// Whether a column of type `v` may fill this slot.
    pub fn admits(self, v: ValueType) -> bool {
        match self {
            Nt::Column => true,
            Nt::NumColumn => v == ValueType::Number,
            Nt::TextColumn => v == ValueType::Text,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sym {
    Kw(&'static str),
    N(Nt),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rule {
    pub lhs: Nt,
    pub rhs: &'static [Sym],
}

use Sym::{Kw, N};

macro_rules! rule {
    ($lhs:ident => $($s:expr),*) => {
        Rule { lhs: Nt::$lhs, rhs: &[$($s),*] }
    };
}

/// Schema-independent productions; a rule's id is its index.
pub const RULES: &[Rule] = &[
    rule!(Query => N(Nt::Select)),
    rule!(Query => N(Nt::Select), Kw("UNION"), N(Nt::Query)),
    rule!(Query => N(Nt::Select), Kw("INTERSECT"), N(Nt::Query)),
    rule!(Query => N(Nt::Select), Kw("EXCEPT"), N(Nt::Query)),
    rule!(Select => Kw("SELECT"), N(Nt::Distinct), N(Nt::SelectList), Kw("FROM"), N(Nt::From), N(Nt::Where), N(Nt::Group), N(Nt::Order)),
    rule!(Distinct =>),
    rule!(Distinct => Kw("DISTINCT")),
    rule!(SelectList => N(Nt::AggExpr)),
    rule!(SelectList => N(Nt::AggExpr), Kw(","), N(Nt::SelectList)),
    rule!(AggExpr => N(Nt::Column)),
    rule!(AggExpr => Kw("COUNT"), Kw("("), Kw("*"), Kw(")")),
    rule!(AggExpr => Kw("COUNT"), Kw("("), N(Nt::Column), Kw(")")),
    rule!(AggExpr => Kw("COUNT"), Kw("("), Kw("DISTINCT"), N(Nt::Column), Kw(")")),
    rule!(AggExpr => Kw("MIN"), Kw("("), N(Nt::Column), Kw(")")),
    rule!(AggExpr => Kw("MAX"), Kw("("), N(Nt::Column), Kw(")")),
    rule!(AggExpr => Kw("SUM"), Kw("("), N(Nt::NumColumn), Kw(")")),
    rule!(AggExpr => Kw("AVG"), Kw("("), N(Nt::NumColumn), Kw(")")),
    rule!(From => N(Nt::Table), N(Nt::Joins)),
    rule!(Joins =>),
    rule!(Joins => Kw("JOIN"), N(Nt::Table), Kw("ON"), N(Nt::Column), Kw("="), N(Nt::Column), N(Nt::Joins)),
    rule!(Where =>),
    rule!(Where => Kw("WHERE"), N(Nt::Condition)),
    rule!(Condition => N(Nt::Predicate)),
    rule!(Condition => N(Nt::Predicate), Kw("AND"), N(Nt::Condition)),
    rule!(Condition => N(Nt::Predicate), Kw("OR"), N(Nt::Condition)),
    rule!(Predicate => N(Nt::AggExpr), N(Nt::Comparison)),
    rule!(Predicate => N(Nt::TextColumn), Kw("LIKE"), Kw("'value'")),
    rule!(Predicate => N(Nt::TextColumn), Kw("NOT"), Kw("LIKE"), Kw("'value'")),
    rule!(Comparison => N(Nt::CmpOp), N(Nt::Operand)),
    rule!(Comparison => Kw("IN"), Kw("("), N(Nt::Query), Kw(")")),
    rule!(Comparison => Kw("NOT"), Kw("IN"), Kw("("), N(Nt::Query), Kw(")")),
    rule!(Comparison => Kw("BETWEEN"), Kw("'value'"), Kw("AND"), Kw("'value'")),
    rule!(Operand => Kw("'value'")),
    rule!(Operand => Kw("("), N(Nt::Query), Kw(")")),
    rule!(CmpOp => Kw("=")),
    rule!(CmpOp => Kw("!=")),
    rule!(CmpOp => Kw(">")),
    rule!(CmpOp => Kw("<")),
    rule!(CmpOp => Kw(">=")),
    rule!(CmpOp => Kw("<=")),
    rule!(Group =>),
    rule!(Group => Kw("GROUP"), Kw("BY"), N(Nt::GroupList), N(Nt::Having)),
    rule!(GroupList => N(Nt::Column)),
    rule!(GroupList => N(Nt::Column), Kw(","), N(Nt::GroupList)),
    rule!(Having =>),
    rule!(Having => Kw("HAVING"), N(Nt::Condition)),
    rule!(Order =>),
    rule!(Order => Kw("ORDER"), Kw("BY"), N(Nt::OrderList), N(Nt::Limit)),
    rule!(OrderList => N(Nt::OrderItem)),
    rule!(OrderList => N(Nt::OrderItem), Kw(","), N(Nt::OrderList)),
    rule!(OrderItem => N(Nt::AggExpr), N(Nt::Direction)),
    rule!(Direction => Kw("ASC")),
    rule!(Direction => Kw("DESC")),
    rule!(Limit =>),
    rule!(Limit => Kw("LIMIT"), Kw("1")),
    rule!(Limit => Kw("LIMIT"), Kw("'value'")),
];

pub const START: Nt = Nt::Query;

pub fn num_rules() -> usize {
    RULES.len()
}

/// Rule ids with left-hand side `nt`, in id order.
pub fn productions(nt: Nt) -> impl Iterator<Item = usize> {
    RULES.iter().enumerate().filter(move |(_, r)| r.lhs == nt).map(|(i, _)| i)
}

/// Id of the production `lhs → rhs`; panics on a rule not in the table.
pub(crate) fn rule_id(lhs: Nt, rhs: &[Sym]) -> usize {
    RULES
        .iter()
        .position(|r| r.lhs == lhs && r.rhs == rhs)
        .unwrap_or_else(|| panic!("no rule {lhs:?} -> {rhs:?}"))
}

pub fn rule_to_string(id: usize) -> String {
    let r = &RULES[id];
    let rhs: Vec<&str> = r
        .rhs
        .iter()
        .map(|s| match s {
            Kw(k) => *k,
            N(n) => n.name(),
        })
        .collect();
    if rhs.is_empty() {
        format!("{} -> ε", r.lhs.name())
    } else {
        format!("{} -> {}", r.lhs.name(), rhs.join(" "))
    }
}

/// The grammar as an EBNF-style listing.
pub fn ebnf() -> String {
    let mut out = String::new();
    let mut seen: Vec<Nt> = Vec::new();
    for r in RULES {
        if seen.contains(&r.lhs) {
            continue;
        }
        seen.push(r.lhs);
        let alts: Vec<String> = productions(r.lhs)
            .map(|i| {
                let parts: Vec<String> = RULES[i]
                    .rhs
                    .iter()
                    .map(|s| match s {
                        Kw(k) => format!("\"{k}\""),
                        N(n) => n.name().to_string(),
                    })
                    .collect();
                if parts.is_empty() {
                    "ε".to_string()
                } else {
                    parts.join(" ")
                }
            })
            .collect();
        out.push_str(&format!("{} ::= {}\n", r.lhs.name(), alts.join("\n    | ")));
    }
    out.push_str("table ::= <any table of the schema>\n");
    out.push_str("column ::= <any column of the schema>\n");
    out.push_str("num_column ::= <number column>\n");
    out.push_str("text_column ::= <text column>\n");
    out
}

/// One decoding step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Rule(usize),
    Item(SchemaItem),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Rule(r) if *r < RULES.len() => write!(f, "rule {r} ({})", rule_to_string(*r)),
            Action::Rule(r) => write!(f, "rule {r}"),
            Action::Item(SchemaItem::Table(t)) => write!(f, "table #{t}"),
            Action::Item(SchemaItem::Column(c)) => write!(f, "column #{c}"),
        }
    }
}

/// Actions available at a decoding step. At most one list is nonempty.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LegalActions {
    pub global_rules: Vec<usize>,
    pub schema_items: Vec<SchemaItem>,
}

impl LegalActions {
    pub fn len(&self) -> usize {
        self.global_rules.len() + self.schema_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Action at position `k` of the concatenated list `[global ; items]`.
    pub fn action(&self, k: usize) -> Action {
        if k < self.global_rules.len() {
            Action::Rule(self.global_rules[k])
        } else {
            Action::Item(self.schema_items[k - self.global_rules.len()])
        }
    }

    pub fn position(&self, a: Action) -> Option<usize> {
        match a {
            Action::Rule(r) => self.global_rules.iter().position(|&x| x == r),
            Action::Item(it) => self
                .schema_items
                .iter()
                .position(|&x| x == it)
                .map(|k| k + self.global_rules.len()),
        }
    }
}

/// A partial or complete leftmost derivation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Derivation {
    pub actions: Vec<Action>,
    /// Open nonterminals, leftmost last.
    frontier: Vec<Nt>,
}

impl Default for Derivation {
    fn default() -> Self {
        Self::new()
    }
}

impl Derivation {
    pub fn new() -> Self {
        Derivation {
            actions: Vec::new(),
            frontier: vec![START],
        }
    }

    pub fn is_complete(&self) -> bool {
        self.frontier.is_empty()
    }

    /// Leftmost open nonterminal.
    pub fn head(&self) -> Option<Nt> {
        self.frontier.last().copied()
    }

    /// Open nonterminals, leftmost first.
    pub fn frontier(&self) -> Vec<Nt> {
        self.frontier.iter().rev().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Replays `actions` from the start symbol, checking legality.
    pub fn from_actions(actions: &[Action], schema: &Schema) -> Result<Self> {
        let mut d = Derivation::new();
        for &a in actions {
            d.apply(a, schema)?;
        }
        Ok(d)
    }

    /// In-place [`apply_rule`].
    pub fn apply(&mut self, action: Action, schema: &Schema) -> Result<()> {
        let head = self.head().ok_or(GrammarError::Complete)?;
        let illegal = || GrammarError::IllegalAction {
            action: action.to_string(),
            expected: head.name(),
        };
        match action {
            Action::Rule(id) => {
                let rule = RULES.get(id).ok_or_else(illegal)?;
                if rule.lhs != head || !rule_viable(rule, schema) {
                    return Err(illegal());
                }
                self.frontier.pop();
                for s in rule.rhs.iter().rev() {
                    if let N(n) = s {
                        self.frontier.push(*n);
                    }
                }
            }
            Action::Item(item) => {
                if !item_admissible(head, item, schema) {
                    return Err(illegal());
                }
                self.frontier.pop();
            }
        }
        self.actions.push(action);
        Ok(())
    }
}

fn item_admissible(head: Nt, item: SchemaItem, schema: &Schema) -> bool {
    match item {
        SchemaItem::Table(t) => head == Nt::Table && t < schema.tables().len(),
        SchemaItem::Column(c) => c < schema.columns().len() && head.admits(schema.column(c).value_type),
    }
}

fn slot_items(nt: Nt, schema: &Schema) -> Vec<SchemaItem> {
    match nt {
        Nt::Table => (0..schema.tables().len()).map(SchemaItem::Table).collect(),
        _ => schema
            .columns()
            .iter()
            .filter(|c| nt.admits(c.value_type))
            .map(|c| SchemaItem::Column(c.id))
            .collect(),
    }
}

/// A rule is usable on `schema` if each schema-typed slot in its right-hand
/// side has at least one candidate item.
fn rule_viable(rule: &Rule, schema: &Schema) -> bool {
    rule.rhs.iter().all(|s| match s {
        N(n) if n.is_schema_typed() => !slot_items(*n, schema).is_empty(),
        _ => true,
    })
}

/// Legal actions at the current step: productions of the leftmost
/// nonterminal, or the schema items that may fill its slot.
pub fn legal_actions(d: &Derivation, schema: &Schema) -> Result<LegalActions> {
    let head = d.head().ok_or(GrammarError::Complete)?;
    if head.is_schema_typed() {
        Ok(LegalActions {
            global_rules: vec![],
            schema_items: slot_items(head, schema),
        })
    } else {
        Ok(LegalActions {
            global_rules: productions(head).filter(|&i| rule_viable(&RULES[i], schema)).collect(),
            schema_items: vec![],
        })
    }
}

/// Expands the leftmost open nonterminal with `action`.
pub fn apply_rule(d: &Derivation, action: Action, schema: &Schema) -> Result<Derivation> {
    let mut next = d.clone();
    next.apply(action, schema)?;
    Ok(next)
}

/// Canonical SQL text of a complete derivation.
pub fn derivation_to_sql(d: &Derivation, schema: &Schema) -> Result<String> {
    if !d.is_complete() {
        return Err(GrammarError::Incomplete(d.frontier.len()));
    }
    let mut out: Vec<String> = Vec::new();
    let mut stack: Vec<Sym> = vec![N(START)];
    let mut actions = d.actions.iter();
    while let Some(sym) = stack.pop() {
        match sym {
            Kw(k) => out.push(k.to_string()),
            N(_) => match actions.next().ok_or(GrammarError::Incomplete(stack.len() + 1))? {
                Action::Rule(id) => stack.extend(RULES[*id].rhs.iter().rev()),
                Action::Item(SchemaItem::Table(t)) => out.push(schema.table(*t).name.clone()),
                Action::Item(SchemaItem::Column(c)) => out.push(schema.qualified(*c)),
            },
        }
    }
    Ok(out.join(" "))
}

/// Parses, resolves and converts `sql` to its unique derivation.
pub fn sql_to_derivation(sql: &str, schema: &Schema) -> Result<Derivation> {
    let q = resolve(&parse_sql(sql)?, schema)?;
    let actions = ast::emit(&q)?;
    Derivation::from_actions(&actions, schema).map_err(|e| match e {
        GrammarError::IllegalAction { action, expected } => {
            GrammarError::OutOfGrammar(format!("{action} cannot fill `{expected}`"))
        }
        other => other,
    })
}
