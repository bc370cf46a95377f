//! Tokenizer and recursive-descent reader for the covered SQL subset.

use super::ast::*;
use super::{GrammarError, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    /// Lowercased identifier.
    Ident(String),
    /// Uppercased reserved word.
    Kw(&'static str),
    Literal(String),
    Sym(&'static str),
}

const KEYWORDS: &[&str] = &[
    "SELECT", "DISTINCT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "ASC", "DESC", "LIMIT", "JOIN", "ON", "AS",
    "AND", "OR", "NOT", "IN", "LIKE", "BETWEEN", "UNION", "INTERSECT", "EXCEPT",
];

const SYMBOLS: &[&str] = &["!=", "<>", ">=", "<=", "=", ">", "<", "(", ")", ",", "*", ".", ";"];

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(GrammarError::OutOfGrammar(msg.into()))
}

fn tokenize(sql: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '\'' || c == '"' {
            let mut j = i + 1;
            let mut s = String::new();
            loop {
                match chars.get(j) {
                    None => return err(format!("unterminated string at {i}")),
                    Some(&q) if q == c => {
                        if chars.get(j + 1) == Some(&c) {
                            s.push(c);
                            j += 2;
                        } else {
                            break;
                        }
                    }
                    Some(&x) => {
                        s.push(x);
                        j += 1;
                    }
                }
            }
            out.push(Tok::Literal(s));
            i = j + 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            out.push(Tok::Literal(chars[i..j].iter().collect()));
            i = j;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            let upper = word.to_ascii_uppercase();
            match KEYWORDS.iter().find(|k| **k == upper) {
                Some(k) => out.push(Tok::Kw(k)),
                None => out.push(Tok::Ident(word.to_lowercase())),
            }
            i = j;
            continue;
        }
        for s in SYMBOLS {
            if chars[i..].starts_with(&s.chars().collect::<Vec<_>>()) {
                if *s != ";" {
                    out.push(Tok::Sym(if *s == "<>" { "!=" } else { s }));
                }
                i += s.len();
                continue 'outer;
            }
        }
        return err(format!("unexpected character `{c}` at {i}"));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

pub(super) fn parse(sql: &str) -> Result<Parsed> {
    let mut p = Parser {
        toks: tokenize(sql)?,
        pos: 0,
    };
    let q = p.query()?;
    if p.pos != p.toks.len() {
        return err(format!("trailing input at token {}: {:?}", p.pos, p.toks[p.pos]));
    }
    Ok(q)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k)
    }

    fn at_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Some(Tok::Kw(x)) if *x == k)
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        let hit = self.at_kw(k);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        let hit = self.at_sym(s);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn expect_kw(&mut self, k: &str) -> Result<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            err(format!("expected {k} at token {}, found {:?}", self.pos, self.peek()))
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            err(format!("expected `{s}` at token {}, found {:?}", self.pos, self.peek()))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            other => err(format!("expected identifier at token {}, found {other:?}", self.pos)),
        }
    }

    fn literal(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Literal(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            other => err(format!("expected literal at token {}, found {other:?}", self.pos)),
        }
    }

    fn query(&mut self) -> Result<Parsed> {
        let select = self.select()?;
        let op = if self.eat_kw("UNION") {
            Some(SetOp::Union)
        } else if self.eat_kw("INTERSECT") {
            Some(SetOp::Intersect)
        } else if self.eat_kw("EXCEPT") {
            Some(SetOp::Except)
        } else {
            None
        };
        let set = match op {
            Some(op) => Some((op, Box::new(self.query()?))),
            None => None,
        };
        Ok(Query { select, set })
    }

    fn select(&mut self) -> Result<Select<TableRef, ColRef>> {
        self.expect_kw("SELECT")?;
        let distinct = self.eat_kw("DISTINCT");
        let mut items = vec![self.agg()?];
        while self.eat_sym(",") {
            items.push(self.agg()?);
        }
        self.expect_kw("FROM")?;
        let from = self.from()?;
        let where_ = if self.eat_kw("WHERE") {
            Some(self.condition()?)
        } else {
            None
        };
        let mut group = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            group.push(self.column()?);
            while self.eat_sym(",") {
                group.push(self.column()?);
            }
        }
        let having = if self.eat_kw("HAVING") {
            Some(self.condition()?)
        } else {
            None
        };
        let mut order = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let a = self.agg()?;
                let d = if self.eat_kw("DESC") {
                    Dir::Desc
                } else {
                    self.eat_kw("ASC");
                    Dir::Asc
                };
                order.push((a, d));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            let v = self.literal()?;
            Some(if v == "1" { Limit::One } else { Limit::Value })
        } else {
            None
        };
        Ok(Select {
            distinct,
            items,
            from,
            where_,
            group,
            having,
            order,
            limit,
        })
    }

    fn table_ref(&mut self) -> Result<TableRef> {
        if self.at_sym("(") {
            return err("subquery in FROM");
        }
        let name = self.ident()?;
        let alias = if self.eat_kw("AS") {
            Some(self.ident()?)
        } else if let Some(Tok::Ident(_)) = self.peek() {
            Some(self.ident()?)
        } else {
            None
        };
        Ok(TableRef { name, alias })
    }

    fn from(&mut self) -> Result<From<TableRef, ColRef>> {
        let first = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            if self.at_sym(",") {
                return err("comma join in FROM");
            }
            if !self.eat_kw("JOIN") {
                break;
            }
            let table = self.table_ref()?;
            let mut on = Vec::new();
            if self.eat_kw("ON") {
                loop {
                    let a = self.column()?;
                    self.expect_sym("=")?;
                    let b = self.column()?;
                    on.push((a, b));
                    // another equality only if `AND col =` follows
                    let more = self.at_kw("AND")
                        && matches!(self.peek_at(1), Some(Tok::Ident(_)))
                        && self.is_join_equality_ahead();
                    if !more {
                        break;
                    }
                    self.pos += 1;
                }
            }
            joins.push(Join { table, on });
        }
        Ok(From { first, joins })
    }

    fn is_join_equality_ahead(&self) -> bool {
        let mut k = 1;
        if !matches!(self.peek_at(k), Some(Tok::Ident(_))) {
            return false;
        }
        k += 1;
        if matches!(self.peek_at(k), Some(Tok::Sym("."))) {
            k += 2;
        }
        matches!(self.peek_at(k), Some(Tok::Sym("=")))
    }

    fn column(&mut self) -> Result<ColRef> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            let name = self.ident()?;
            Ok(ColRef {
                qualifier: Some(first),
                name,
            })
        } else {
            Ok(ColRef {
                qualifier: None,
                name: first,
            })
        }
    }

    fn agg(&mut self) -> Result<Agg<ColRef>> {
        if self.at_sym("*") {
            return err("SELECT *");
        }
        let func = match (self.peek(), self.peek_at(1)) {
            (Some(Tok::Ident(f)), Some(Tok::Sym("("))) => f.clone(),
            _ => return Ok(Agg::Col(self.column()?)),
        };
        self.pos += 2;
        let a = match func.as_str() {
            "count" => {
                if self.eat_sym("*") {
                    Agg::CountStar
                } else if self.eat_kw("DISTINCT") {
                    Agg::CountDistinct(self.column()?)
                } else {
                    Agg::Count(self.column()?)
                }
            }
            "min" => Agg::Min(self.column()?),
            "max" => Agg::Max(self.column()?),
            "sum" => Agg::Sum(self.column()?),
            "avg" => Agg::Avg(self.column()?),
            other => return err(format!("function `{other}`")),
        };
        self.expect_sym(")")?;
        Ok(a)
    }

    fn condition(&mut self) -> Result<Condition<TableRef, ColRef>> {
        let first = self.predicate()?;
        let mut rest = Vec::new();
        loop {
            let conn = if self.eat_kw("AND") {
                Conn::And
            } else if self.eat_kw("OR") {
                Conn::Or
            } else {
                break;
            };
            rest.push((conn, self.predicate()?));
        }
        Ok(Condition { first, rest })
    }

    fn sub_query(&mut self) -> Result<Box<Parsed>> {
        self.expect_sym("(")?;
        if !self.at_kw("SELECT") {
            return err("value list or parenthesized expression");
        }
        let q = self.query()?;
        self.expect_sym(")")?;
        Ok(Box::new(q))
    }

    fn predicate(&mut self) -> Result<Predicate<TableRef, ColRef>> {
        if self.at_sym("(") {
            return err("parenthesized condition");
        }
        if self.at_kw("NOT") {
            return err("negated predicate");
        }
        let lhs = self.agg()?;
        let negated = self.eat_kw("NOT");
        if self.eat_kw("LIKE") {
            self.literal()?;
            return match lhs {
                Agg::Col(column) => Ok(Predicate::Like { column, negated }),
                _ => err("LIKE on an aggregate"),
            };
        }
        if self.eat_kw("IN") {
            return Ok(Predicate::Cmp(lhs, Comparison::In {
                negated,
                sub: self.sub_query()?,
            }));
        }
        if negated {
            return err(format!("NOT before {:?}", self.peek()));
        }
        if self.eat_kw("BETWEEN") {
            self.literal()?;
            self.expect_kw("AND")?;
            self.literal()?;
            return Ok(Predicate::Cmp(lhs, Comparison::Between));
        }
        let op = match self.peek() {
            Some(Tok::Sym(s)) => match CmpOp::ALL.iter().find(|o| o.symbol() == *s) {
                Some(o) => *o,
                None => return err(format!("operator `{s}`")),
            },
            other => return err(format!("expected comparison at token {}, found {other:?}", self.pos)),
        };
        self.pos += 1;
        let operand = match self.peek() {
            Some(Tok::Literal(_)) => {
                self.pos += 1;
                Operand::Value
            }
            Some(Tok::Sym("(")) => Operand::Sub(self.sub_query()?),
            Some(Tok::Ident(_)) => return err("column-to-column comparison"),
            other => return err(format!("expected operand, found {other:?}")),
        };
        Ok(Predicate::Cmp(lhs, Comparison::Op(op, operand)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_handles_quotes_and_operators() {
        let t = tokenize("a.b <> 'it''s' AND c >= -3.5;").unwrap();
        assert_eq!(
            t,
            vec![
                Tok::Ident("a".into()),
                Tok::Sym("."),
                Tok::Ident("b".into()),
                Tok::Sym("!="),
                Tok::Literal("it's".into()),
                Tok::Kw("AND"),
                Tok::Ident("c".into()),
                Tok::Sym(">="),
                Tok::Literal("-3.5".into()),
            ]
        );
    }

    #[test]
    fn malformed_inputs_are_out_of_grammar() {
        for bad in [
            "",
            "SELECT",
            "SELECT FROM t",
            "SELECT a FROM t WHERE",
            "SELECT a FROM t WHERE a = b",
            "SELECT * FROM t",
            "SELECT a FROM t WHERE 'x",
            "SELECT a FROM (SELECT b FROM t)",
            "SELECT a FROM t )",
            "SELECT a FROM t, u",
            "SELECT a FROM t WHERE a IN (1, 2)",
            "SELECT a FROM t # comment",
        ] {
            assert!(matches!(parse(bad), Err(GrammarError::OutOfGrammar(_))), "{bad}");
        }
    }

    #[test]
    fn join_conditions_and_where_conjunctions_are_separated() {
        let q = parse("SELECT a.x FROM a JOIN b ON a.id = b.id AND a.k = b.k WHERE a.x = 1 AND a.y > 2").unwrap();
        assert_eq!(q.select.from.joins[0].on.len(), 2);
        assert_eq!(q.select.where_.unwrap().rest.len(), 1);
        assert!(parse("SELECT a.x FROM a JOIN b ON a.id = b.id AND a.y > 2").is_err());
    }
}
