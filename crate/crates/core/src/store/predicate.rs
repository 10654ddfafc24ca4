use serde::{Deserialize, Serialize};

use super::{ScalarData, ScalarKind, ScalarValue, Table, TableSchema};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Between,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Between];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    Eq(ScalarValue),
    Lt(f64),
    Le(f64),
    Gt(f64),
    Ge(f64),
    /// Inclusive on both ends.
    Between(f64, f64),
}

impl Condition {
    pub fn op(&self) -> CmpOp {
        match self {
            Condition::Eq(_) => CmpOp::Eq,
            Condition::Lt(_) => CmpOp::Lt,
            Condition::Le(_) => CmpOp::Le,
            Condition::Gt(_) => CmpOp::Gt,
            Condition::Ge(_) => CmpOp::Ge,
            Condition::Between(..) => CmpOp::Between,
        }
    }

    pub(crate) fn matches_num(&self, v: f64) -> bool {
        match *self {
            Condition::Eq(ScalarValue::Num(x)) => v == x,
            Condition::Eq(ScalarValue::Cat(_)) => false,
            Condition::Lt(x) => v < x,
            Condition::Le(x) => v <= x,
            Condition::Gt(x) => v > x,
            Condition::Ge(x) => v >= x,
            Condition::Between(lo, hi) => lo <= v && v <= hi,
        }
    }

    pub(crate) fn matches_value(&self, value: &ScalarValue) -> bool {
        match (self, value) {
            (_, ScalarValue::Num(v)) => self.matches_num(*v),
            (Condition::Eq(ScalarValue::Cat(c)), ScalarValue::Cat(v)) => c == v,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub cond: Condition,
}

impl Predicate {
    pub fn new(column: impl Into<String>, cond: Condition) -> Self {
        Predicate {
            column: column.into(),
            cond,
        }
    }

    pub fn eq(column: impl Into<String>, value: impl Into<ScalarValue>) -> Self {
        Self::new(column, Condition::Eq(value.into()))
    }

    pub fn lt(column: impl Into<String>, v: f64) -> Self {
        Self::new(column, Condition::Lt(v))
    }

    pub fn le(column: impl Into<String>, v: f64) -> Self {
        Self::new(column, Condition::Le(v))
    }

    pub fn gt(column: impl Into<String>, v: f64) -> Self {
        Self::new(column, Condition::Gt(v))
    }

    pub fn ge(column: impl Into<String>, v: f64) -> Self {
        Self::new(column, Condition::Ge(v))
    }

    pub fn between(column: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self::new(column, Condition::Between(lo, hi))
    }

    pub fn op(&self) -> CmpOp {
        self.cond.op()
    }

    pub fn validate(&self, schema: &TableSchema) -> Result<()> {
        let col = schema.scalar_column(&self.column)?;
        let kind = schema.scalar_columns[col].kind;
        match (&self.cond, kind) {
            (Condition::Eq(ScalarValue::Num(v)), ScalarKind::Numeric) if v.is_nan() => {
                Err(Error::InvalidPredicate(format!("NaN operand on `{}`", self.column)))
            }
            (Condition::Eq(ScalarValue::Num(_)), ScalarKind::Numeric) => Ok(()),
            (Condition::Eq(ScalarValue::Cat(_)), ScalarKind::Categorical) => Ok(()),
            (Condition::Eq(_), _) => Err(Error::InvalidPredicate(format!(
                "operand kind does not match column `{}`",
                self.column
            ))),
            (_, ScalarKind::Categorical) => Err(Error::InvalidPredicate(format!(
                "range predicate on categorical column `{}`",
                self.column
            ))),
            (Condition::Between(lo, hi), _) if !(lo <= hi) => Err(Error::InvalidPredicate(format!(
                "BETWEEN {lo} AND {hi} on `{}` has low > high",
                self.column
            ))),
            (Condition::Lt(v) | Condition::Le(v) | Condition::Gt(v) | Condition::Ge(v), _) if v.is_nan() => {
                Err(Error::InvalidPredicate(format!("NaN operand on `{}`", self.column)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
enum Bound {
    Num { column: usize, cond: Condition },
    /// `None` when the category is absent from the dictionary: matches nothing.
    Cat { column: usize, code: Option<u32> },
}

/// Predicates resolved against a table's columns and dictionaries, for fast
/// per-row evaluation.
#[derive(Clone, Debug)]
pub struct Filter {
    bounds: Vec<Bound>,
}

impl Filter {
    pub(crate) fn bind(table: &Table, predicates: &[Predicate]) -> Result<Self> {
        let mut bounds = Vec::with_capacity(predicates.len());
        for p in predicates {
            p.validate(table.schema())?;
            let column = table.schema().scalar_column(&p.column)?;
            match table.scalar_data(column) {
                ScalarData::Numeric(_) => bounds.push(Bound::Num {
                    column,
                    cond: p.cond.clone(),
                }),
                ScalarData::Categorical { lookup, .. } => {
                    let code = match &p.cond {
                        Condition::Eq(ScalarValue::Cat(c)) => lookup.get(c).copied(),
                        _ => None,
                    };
                    bounds.push(Bound::Cat { column, code });
                }
            }
        }
        Ok(Filter { bounds })
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    #[inline]
    pub fn matches(&self, table: &Table, row: usize) -> bool {
        self.bounds.iter().all(|b| match b {
            Bound::Num { column, cond } => match table.scalar_data(*column) {
                ScalarData::Numeric(vals) => cond.matches_num(vals[row]),
                _ => false,
            },
            Bound::Cat { column, code } => match (table.scalar_data(*column), code) {
                (ScalarData::Categorical { codes, .. }, Some(code)) => codes[row] == *code,
                _ => false,
            },
        })
    }

    /// Number of qualifying rows, by full scan.
    pub fn count(&self, table: &Table) -> usize {
        (0..table.len()).filter(|&r| self.matches(table, r)).count()
    }
}
