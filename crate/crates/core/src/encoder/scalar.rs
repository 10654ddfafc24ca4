use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Condition, Predicate, ScalarValue, Table};

/// One-hot encoding of a scalar column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalarEncoder {
    /// Slots for each kept category in name order, then one OTHER slot.
    Categorical { categories: Vec<String> },
    /// Equi-width bins over `[min, max]`; values outside clamp to the end bins.
    Numeric { min: f64, max: f64, bins: usize },
}

impl ScalarEncoder {
    pub fn width(&self) -> usize {
        match self {
            ScalarEncoder::Categorical { categories } => categories.len() + 1,
            ScalarEncoder::Numeric { bins, .. } => *bins,
        }
    }

    /// Slot index set by `value`, or `None` for a value of the wrong kind on
    /// a numeric column.
    pub fn slot(&self, value: &ScalarValue) -> Option<usize> {
        match (self, value) {
            (ScalarEncoder::Categorical { categories }, ScalarValue::Cat(c)) => Some(
                categories
                    .binary_search_by(|x| x.as_str().cmp(c))
                    .unwrap_or(categories.len()),
            ),
            (ScalarEncoder::Categorical { categories }, ScalarValue::Num(_)) => Some(categories.len()),
            (&ScalarEncoder::Numeric { min, max, bins }, ScalarValue::Num(v)) => {
                if !(max > min) {
                    return Some(0);
                }
                let b = ((v - min) / (max - min) * bins as f64).floor();
                Some((b.max(0.0) as usize).min(bins - 1))
            }
            (ScalarEncoder::Numeric { .. }, ScalarValue::Cat(_)) => None,
        }
    }

    pub fn encode(&self, value: &ScalarValue) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        if let Some(s) = self.slot(value) {
            out[s] = 1.0;
        }
        out
    }

    /// Maximum-entropy placeholder for an unconstrained column.
    pub fn uniform(&self) -> Vec<f64> {
        let w = self.width();
        vec![1.0 / w as f64; w]
    }
}

pub fn fit_scalar_encoders(table: &Table, bins: usize, max_categories: usize) -> Result<Vec<ScalarEncoder>> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    if bins == 0 || max_categories == 0 {
        return Err(Error::InvalidConfig("bins and max_categories must be positive".into()));
    }
    Ok((0..table.schema().num_scalar_columns())
        .map(|j| {
            if let Some(values) = table.numeric_column(j) {
                let (min, max) = values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                ScalarEncoder::Numeric { min, max, bins }
            } else {
                let (dict, codes) = table.categorical_column(j).expect("categorical");
                let mut counts: HashMap<u32, usize> = HashMap::new();
                for &c in codes {
                    *counts.entry(c).or_default() += 1;
                }
                let mut seen: Vec<(usize, &str)> =
                    counts.into_iter().map(|(c, n)| (n, dict[c as usize].as_str())).collect();
                seen.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
                let mut categories: Vec<String> =
                    seen.into_iter().take(max_categories).map(|(_, c)| c.to_string()).collect();
                categories.sort();
                ScalarEncoder::Categorical { categories }
            }
        })
        .collect())
}

/// Reduces each column's predicates to a single point: an equality value
/// directly, otherwise the midpoint of the constrained interval clipped to the
/// column's data range. `None` where the column is unconstrained.
pub fn representative_values(
    names: &[String],
    encoders: &[ScalarEncoder],
    predicates: &[Predicate],
) -> Result<Vec<Option<ScalarValue>>> {
    let mut eq: Vec<Option<ScalarValue>> = vec![None; names.len()];
    let mut range: Vec<Option<(f64, f64)>> = vec![None; names.len()];
    for p in predicates {
        let j = names
            .iter()
            .position(|n| *n == p.column)
            .ok_or_else(|| Error::UnknownColumn(p.column.clone()))?;
        let (min, max) = match encoders[j] {
            ScalarEncoder::Numeric { min, max, .. } => (min, max),
            ScalarEncoder::Categorical { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let (lo, hi) = range[j].unwrap_or((min, max));
        range[j] = Some(match p.cond {
            Condition::Eq(ref v) => {
                eq[j].get_or_insert_with(|| v.clone());
                (lo, hi)
            }
            Condition::Lt(x) | Condition::Le(x) => (lo, hi.min(x)),
            Condition::Gt(x) | Condition::Ge(x) => (lo.max(x), hi),
            Condition::Between(a, b) => (lo.max(a), hi.min(b)),
        });
    }
    Ok(eq
        .into_iter()
        .zip(range)
        .zip(encoders)
        .map(|((e, r), enc)| {
            e.or_else(|| {
                let (lo, hi) = r?;
                match *enc {
                    ScalarEncoder::Numeric { min, max, .. } => {
                        Some(ScalarValue::Num(((lo + hi) / 2.0).clamp(min, max.max(min))))
                    }
                    ScalarEncoder::Categorical { .. } => None,
                }
            })
        })
        .collect())
}
