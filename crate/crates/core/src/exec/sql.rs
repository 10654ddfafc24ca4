//! SQL-like query text:
//!
//! ```text
//! SELECT [/*+ key=value ... */] id FROM <table>
//!   [WHERE <pred> [AND <pred>]...]
//!   ORDER BY [w *] (<col> <-> [v, ...]) [+ ...]
//!   LIMIT k
//! ```
//!
//! Predicates: `col = 'text'`, `col = 1.5`, `<`, `<=`, `>`, `>=`,
//! `col BETWEEN a AND b`. Hints carry `target_recall` and, for rewritten
//! subqueries, `ef_search`, `iterative_scan` and `max_scan_tuples`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::index::IterativeScan;
use crate::plan::{ColumnParams, SubqueryDescriptor};
use crate::store::{Condition, HybridQuery, Predicate, ScalarValue, TableSchema};

pub const DEFAULT_TARGET_RECALL: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct VectorTerm {
    pub weight: f64,
    pub column: String,
    pub vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedQuery {
    pub table: String,
    pub predicates: Vec<Predicate>,
    pub terms: Vec<VectorTerm>,
    pub limit: usize,
    pub hints: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Str(String),
    Sym(&'static str),
    Hint(String),
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("/*+") {
            let end = src[i..].find("*/").ok_or_else(|| err(i, "unterminated hint"))?;
            out.push((start, Tok::Hint(src[i + 3..i + end].trim().to_string())));
            i += end + 2;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
            continue;
        }
        let negative_number = c == b'-' && b.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == b'.');
        if c.is_ascii_digit() || c == b'.' || negative_number {
            i += 1;
            while i < b.len() {
                let d = b[i];
                let exp_sign = (d == b'-' || d == b'+') && matches!(b[i - 1], b'e' | b'E');
                if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push((start, Tok::Num(src[start..i].to_string())));
            continue;
        }
        if c == b'\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match src[i..].chars().next() {
                    None => return Err(err(start, "unterminated string")),
                    Some('\'') if src[i + 1..].starts_with('\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(ch) => {
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push((start, Tok::Str(s)));
            continue;
        }
        let sym = ["<->", "<=", ">=", "=", "<", ">", "*", "+", ",", "[", "]", "(", ")", ";"]
            .into_iter()
            .find(|s| src[i..].starts_with(s))
            .ok_or_else(|| err(i, format!("unexpected character `{}`", src[i..].chars().next().unwrap())))?;
        out.push((start, Tok::Sym(sym)));
        i += sym.len();
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        if self.is_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(err(self.offset(), format!("expected `{kw}`")))
        }
    }

    fn sym(&mut self, s: &'static str) -> Result<()> {
        if self.peek() == Some(&Tok::Sym(s)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(err(self.offset(), format!("expected `{s}`")))
        }
    }

    fn eat_sym(&mut self, s: &'static str) -> bool {
        self.sym(s).is_ok()
    }

    fn ident(&mut self) -> Result<String> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(err(at, "expected identifier")),
        }
    }

    fn number_text(&mut self) -> Result<String> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Num(s)) => Ok(s),
            _ => Err(err(at, "expected number")),
        }
    }

    fn f64(&mut self) -> Result<f64> {
        let at = self.offset();
        let s = self.number_text()?;
        s.parse().map_err(|_| err(at, format!("bad number `{s}`")))
    }

    fn usize(&mut self) -> Result<usize> {
        let at = self.offset();
        let s = self.number_text()?;
        s.parse().map_err(|_| err(at, format!("expected a non-negative integer, got `{s}`")))
    }

    fn vector(&mut self) -> Result<Vec<f32>> {
        self.sym("[")?;
        let mut v = Vec::new();
        if self.eat_sym("]") {
            return Ok(v);
        }
        loop {
            let at = self.offset();
            let s = self.number_text()?;
            v.push(s.parse().map_err(|_| err(at, format!("bad vector component `{s}`")))?);
            if self.eat_sym("]") {
                return Ok(v);
            }
            self.sym(",")?;
        }
    }

    fn predicate(&mut self) -> Result<Predicate> {
        let column = self.ident()?;
        if self.is_keyword("BETWEEN") {
            self.pos += 1;
            let lo = self.f64()?;
            self.keyword("AND")?;
            let hi = self.f64()?;
            return Ok(Predicate::between(column, lo, hi));
        }
        let at = self.offset();
        let op = match self.next() {
            Some(Tok::Sym(s @ ("=" | "<" | "<=" | ">" | ">="))) => s,
            _ => return Err(err(at, "expected comparison operator")),
        };
        let at = self.offset();
        let value = match self.next() {
            Some(Tok::Str(s)) => ScalarValue::Cat(s),
            Some(Tok::Num(s)) => ScalarValue::Num(s.parse().map_err(|_| err(at, format!("bad number `{s}`")))?),
            _ => return Err(err(at, "expected literal")),
        };
        let num = |v: ScalarValue| v.as_num().ok_or_else(|| err(at, "range operand must be numeric"));
        Ok(match op {
            "=" => Predicate::eq(column, value),
            "<" => Predicate::lt(column, num(value)?),
            "<=" => Predicate::le(column, num(value)?),
            ">" => Predicate::gt(column, num(value)?),
            _ => Predicate::ge(column, num(value)?),
        })
    }

    fn term(&mut self) -> Result<VectorTerm> {
        let weight = if matches!(self.peek(), Some(Tok::Num(_))) {
            let w = self.f64()?;
            self.sym("*")?;
            w
        } else {
            1.0
        };
        let paren = self.eat_sym("(");
        let column = self.ident()?;
        self.sym("<->")?;
        let vector = self.vector()?;
        if paren {
            self.sym(")")?;
        }
        Ok(VectorTerm { weight, column, vector })
    }
}

fn parse_hints(text: &str, offset: usize, hints: &mut BTreeMap<String, String>) -> Result<()> {
    for pair in text.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| err(offset, format!("hint `{pair}` is not key=value")))?;
        hints.insert(k.to_string(), v.to_string());
    }
    Ok(())
}

pub fn parse_query(src: &str) -> Result<ParsedQuery> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        len: src.len(),
    };
    let mut hints = BTreeMap::new();
    p.keyword("SELECT")?;
    if let Some(Tok::Hint(h)) = p.peek().cloned() {
        parse_hints(&h, p.offset(), &mut hints)?;
        p.pos += 1;
    }
    p.keyword("id")?;
    p.keyword("FROM")?;
    let table = p.ident()?;
    let mut predicates = Vec::new();
    if p.is_keyword("WHERE") {
        p.pos += 1;
        loop {
            predicates.push(p.predicate()?);
            if !p.is_keyword("AND") {
                break;
            }
            p.pos += 1;
        }
    }
    p.keyword("ORDER")?;
    p.keyword("BY")?;
    let mut terms = vec![p.term()?];
    while p.eat_sym("+") {
        terms.push(p.term()?);
    }
    p.keyword("LIMIT")?;
    let limit = p.usize()?;
    p.eat_sym(";");
    if p.pos < p.toks.len() {
        return Err(err(p.offset(), "trailing input"));
    }
    Ok(ParsedQuery {
        table,
        predicates,
        terms,
        limit,
        hints,
    })
}

impl ParsedQuery {
    fn hint<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.hints
            .get(key)
            .map(|v| v.parse().map_err(|_| err(0, format!("bad value `{v}` for hint `{key}`"))))
            .transpose()
    }

    /// Resolves column names against the schema. Vector columns absent from
    /// `ORDER BY` get weight 0 and a zero query vector.
    pub fn to_hybrid(&self, schema: &TableSchema) -> Result<HybridQuery> {
        let n = schema.num_vector_columns();
        let mut vectors: Vec<Option<Vec<f32>>> = vec![None; n];
        let mut weights = vec![0.0; n];
        for t in &self.terms {
            let i = schema.vector_column(&t.column)?;
            if vectors[i].is_some() {
                return Err(Error::InvalidQuery(format!("column `{}` appears twice in ORDER BY", t.column)));
            }
            vectors[i] = Some(t.vector.clone());
            weights[i] = t.weight;
        }
        let q = HybridQuery {
            predicates: self.predicates.clone(),
            vectors: vectors
                .into_iter()
                .enumerate()
                .map(|(i, v)| v.unwrap_or_else(|| vec![0.0; schema.vector_columns[i].dim]))
                .collect(),
            weights,
            k: self.limit,
            target_recall: self.hint("target_recall")?.unwrap_or(DEFAULT_TARGET_RECALL),
        };
        q.validate(schema)?;
        Ok(q)
    }

    /// Reads back a single-column subquery produced by [`descriptor_to_sql`].
    pub fn to_descriptor(&self, schema: &TableSchema) -> Result<SubqueryDescriptor> {
        let [term] = self.terms.as_slice() else {
            return Err(Error::InvalidQuery("a subquery orders by exactly one column".into()));
        };
        let column = schema.vector_column(&term.column)?;
        let missing = |k: &str| Error::InvalidQuery(format!("subquery lacks the `{k}` hint"));
        let mode: String = self.hint("iterative_scan")?.ok_or_else(|| missing("iterative_scan"))?;
        Ok(SubqueryDescriptor {
            column,
            vector: term.vector.clone(),
            params: ColumnParams {
                k: self.limit,
                ef_search: self.hint("ef_search")?.ok_or_else(|| missing("ef_search"))?,
                iterative_scan: IterativeScan::parse(&mode)
                    .ok_or_else(|| Error::InvalidQuery(format!("unknown iterative_scan `{mode}`")))?,
                max_scan_tuples: self.hint("max_scan_tuples")?.ok_or_else(|| missing("max_scan_tuples"))?,
            },
            predicates: self.predicates.clone(),
        })
    }
}

fn write_vector(out: &mut String, v: &[f32]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{x:?}").unwrap();
    }
    out.push(']');
}

fn write_predicates(out: &mut String, preds: &[Predicate]) {
    for (i, p) in preds.iter().enumerate() {
        out.push_str(if i == 0 { " WHERE " } else { " AND " });
        let c = &p.column;
        match &p.cond {
            Condition::Eq(ScalarValue::Cat(s)) => write!(out, "{c} = '{}'", s.replace('\'', "''")),
            Condition::Eq(ScalarValue::Num(x)) => write!(out, "{c} = {x:?}"),
            Condition::Lt(x) => write!(out, "{c} < {x:?}"),
            Condition::Le(x) => write!(out, "{c} <= {x:?}"),
            Condition::Gt(x) => write!(out, "{c} > {x:?}"),
            Condition::Ge(x) => write!(out, "{c} >= {x:?}"),
            Condition::Between(a, b) => write!(out, "{c} BETWEEN {a:?} AND {b:?}"),
        }
        .unwrap();
    }
}

pub fn query_to_sql(table: &str, schema: &TableSchema, query: &HybridQuery) -> String {
    let mut out = format!("SELECT /*+ target_recall={:?} */ id FROM {table}", query.target_recall);
    write_predicates(&mut out, &query.predicates);
    out.push_str(" ORDER BY ");
    for (i, col) in schema.vector_columns.iter().enumerate() {
        if i > 0 {
            out.push_str(" + ");
        }
        write!(out, "{:?} * ({} <-> ", query.weights[i], col.name).unwrap();
        write_vector(&mut out, &query.vectors[i]);
        out.push(')');
    }
    write!(out, " LIMIT {}", query.k).unwrap();
    out
}

pub fn descriptor_to_sql(table: &str, schema: &TableSchema, d: &SubqueryDescriptor) -> String {
    let mut out = format!(
        "SELECT /*+ ef_search={} iterative_scan={} max_scan_tuples={} */ id FROM {table}",
        d.params.ef_search,
        d.params.iterative_scan.as_str(),
        d.params.max_scan_tuples
    );
    write_predicates(&mut out, &d.predicates);
    write!(out, " ORDER BY {} <-> ", schema.vector_columns[d.column].name).unwrap();
    write_vector(&mut out, &d.vector);
    write!(out, " LIMIT {}", d.params.k).unwrap();
    out
}
