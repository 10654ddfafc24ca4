//! The optimizer's per-query input vector `X_in`:
//! `[ε_recon ; S_enc ; E_rec ; R_probe ; σ_est ; W ; k_norm]`.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::encoder::ReconstructionScore;
use crate::error::{Error, Result};
use crate::index::{GraphIndex, SearchParams};
use crate::stats::{HistogramKind, StatsCatalog};
use crate::store::{CmpOp, Condition, HybridQuery, ScalarValue, Table, TableSchema};

pub const DEFAULT_PROBE_K: usize = 64;
pub const DEFAULT_PROBE_EF: usize = 64;

/// Slots per scalar column in `S_enc`: flag, six op bits, two operands.
pub const SCALAR_SLOTS: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    /// Fraction of probed neighbors satisfying the predicates, per vector column.
    pub local_rates: Vec<f64>,
    pub probed_count: usize,
    pub latency: Duration,
}

/// Runs one unfiltered search of width `probe_k` per vector column and
/// counts how many of the returned tuples satisfy the query's predicates.
pub fn preprobe(
    table: &Table,
    indexes: &[&GraphIndex],
    query: &HybridQuery,
    probe_k: usize,
    probe_ef: usize,
) -> Result<ProbeResult> {
    if probe_k == 0 {
        return Err(Error::InvalidConfig("probe_k must be at least 1".into()));
    }
    let n = table.schema().num_vector_columns();
    if indexes.len() < n {
        return Err(Error::IndexMissing(indexes.len()));
    }
    let start = Instant::now();
    let filter = table.bind(&query.predicates)?;
    let params = SearchParams::new(probe_ef.max(probe_k));
    let mut local_rates = Vec::with_capacity(n);
    let mut probed_count = 0;
    for (i, idx) in indexes.iter().take(n).enumerate() {
        let hits = idx.search(&query.vectors[i], probe_k, &params);
        probed_count = probed_count.max(hits.len());
        if hits.is_empty() {
            local_rates.push(0.0);
            continue;
        }
        let ok = hits
            .iter()
            .filter(|h| table.row_of(h.id).is_some_and(|r| filter.matches(table, r)))
            .count();
        local_rates.push(ok as f64 / hits.len() as f64);
    }
    Ok(ProbeResult {
        local_rates,
        probed_count,
        latency: start.elapsed(),
    })
}

fn normalize(v: f64, range: Option<(f64, f64)>) -> f64 {
    match range {
        Some((lo, hi)) if hi > lo => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
        Some(_) => 0.5,
        None => 0.0,
    }
}

/// `S_enc`: per scalar column `[present, Eq, Lt, Le, Gt, Ge, Between, op1, op2]`.
///
/// Numeric operands are min-max normalized by the column's histogram range; a
/// categorical equality operand is the category's relative frequency. With
/// several predicates on one column the op bits are OR-ed and the operands
/// become the normalized bounds of the intersected interval.
pub fn encode_query_scalars(schema: &TableSchema, stats: &StatsCatalog, query: &HybridQuery) -> Result<Vec<f64>> {
    let m = schema.num_scalar_columns();
    let mut out = vec![0.0; m * SCALAR_SLOTS];
    let mut per_col: Vec<Vec<&Condition>> = vec![Vec::new(); m];
    for p in &query.predicates {
        per_col[schema.scalar_column(&p.column)?].push(&p.cond);
    }
    for (j, conds) in per_col.iter().enumerate() {
        if conds.is_empty() {
            continue;
        }
        let seg = &mut out[j * SCALAR_SLOTS..(j + 1) * SCALAR_SLOTS];
        seg[0] = 1.0;
        for c in conds {
            seg[1 + c.op().index()] = 1.0;
        }
        let hist = stats.get(&schema.scalar_columns[j].name);
        let range = hist.and_then(|h| h.range());
        let operand = |v: &ScalarValue| match v {
            ScalarValue::Num(x) => normalize(*x, range),
            ScalarValue::Cat(c) => match hist.map(|h| (&h.kind, h.total_count)) {
                Some((HistogramKind::Categorical { freq }, total)) if total > 0 => {
                    freq.get(c).copied().unwrap_or(0) as f64 / total as f64
                }
                _ => 0.0,
            },
        };
        if let [c] = conds.as_slice() {
            let (a, b) = match c {
                Condition::Eq(v) => (operand(v), 0.0),
                Condition::Lt(x) | Condition::Le(x) | Condition::Gt(x) | Condition::Ge(x) => {
                    (normalize(*x, range), 0.0)
                }
                Condition::Between(lo, hi) => (normalize(*lo, range), normalize(*hi, range)),
            };
            seg[7] = a;
            seg[8] = b;
            continue;
        }
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut eq = None;
        for c in conds {
            match c {
                Condition::Eq(v) => eq = eq.or(Some(operand(v))),
                Condition::Lt(x) | Condition::Le(x) => hi = hi.min(*x),
                Condition::Gt(x) | Condition::Ge(x) => lo = lo.max(*x),
                Condition::Between(a, b) => {
                    lo = lo.max(*a);
                    hi = hi.min(*b);
                }
            }
        }
        let (a, b) = match eq {
            Some(e) => (e, e),
            None => (
                if lo.is_finite() { normalize(lo, range) } else { 0.0 },
                if hi.is_finite() { normalize(hi, range) } else { 1.0 },
            ),
        };
        seg[7] = a;
        seg[8] = b;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub width: usize,
}

/// Named segments of `X_in` for a schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    segments: Vec<Segment>,
    slot_names: Vec<String>,
    num_vector_columns: usize,
}

pub const SEG_RECON: &str = "recon";
pub const SEG_SCALAR: &str = "scalar_enc";
pub const SEG_RECALL: &str = "target_recall";
pub const SEG_PROBE: &str = "probe";
pub const SEG_SELECTIVITY: &str = "selectivity";
pub const SEG_WEIGHTS: &str = "weights";
pub const SEG_K: &str = "k_norm";

impl FeatureLayout {
    pub fn new(schema: &TableSchema) -> Self {
        let n = schema.num_vector_columns();
        let m = schema.num_scalar_columns();
        let mut slot_names = Vec::new();
        slot_names.extend((0..n).map(|i| format!("recon_{}", schema.vector_columns[i].name)));
        for c in &schema.scalar_columns {
            slot_names.push(format!("{}_present", c.name));
            slot_names.extend(CmpOp::ALL.iter().map(|op| format!("{}_{}", c.name, op_name(*op))));
            slot_names.push(format!("{}_operand1", c.name));
            slot_names.push(format!("{}_operand2", c.name));
        }
        slot_names.push(SEG_RECALL.into());
        slot_names.extend((0..n).map(|i| format!("probe_rate_{}", schema.vector_columns[i].name)));
        slot_names.push("probe_ratio".into());
        slot_names.push(SEG_SELECTIVITY.into());
        slot_names.extend((0..n).map(|i| format!("weight_{}", schema.vector_columns[i].name)));
        slot_names.push(SEG_K.into());

        let widths = [
            (SEG_RECON, n),
            (SEG_SCALAR, m * SCALAR_SLOTS),
            (SEG_RECALL, 1),
            (SEG_PROBE, n + 1),
            (SEG_SELECTIVITY, 1),
            (SEG_WEIGHTS, n),
            (SEG_K, 1),
        ];
        let mut offset = 0;
        let segments = widths
            .iter()
            .map(|&(name, width)| {
                let s = Segment { name, offset, width };
                offset += width;
                s
            })
            .collect();
        FeatureLayout {
            segments,
            slot_names,
            num_vector_columns: n,
        }
    }

    pub fn width(&self) -> usize {
        self.slot_names.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slot_names(&self) -> &[String] {
        &self.slot_names
    }

    pub fn num_vector_columns(&self) -> usize {
        self.num_vector_columns
    }
}

fn op_name(op: CmpOp) -> &'static str {
    match op {
        CmpOp::Eq => "eq",
        CmpOp::Lt => "lt",
        CmpOp::Le => "le",
        CmpOp::Gt => "gt",
        CmpOp::Ge => "ge",
        CmpOp::Between => "between",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn segment<'a>(&'a self, layout: &FeatureLayout, name: &str) -> Option<&'a [f64]> {
        let s = layout.segment(name)?;
        self.values.get(s.offset..s.offset + s.width)
    }
}

/// Places every component at its layout offset.
pub fn assemble_features(
    layout: &FeatureLayout,
    recon: &ReconstructionScore,
    scalar_enc: &[f64],
    stats: &StatsCatalog,
    probe: &ProbeResult,
    query: &HybridQuery,
    table_rows: usize,
) -> Result<FeatureVector> {
    let n = layout.num_vector_columns;
    let check = |name: &str, got: usize| {
        let want = layout.segment(name).map_or(0, |s| s.width);
        if got == want {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!("segment `{name}` expects {want} values, got {got}")))
        }
    };
    check(SEG_RECON, recon.per_column.len())?;
    check(SEG_SCALAR, scalar_enc.len())?;
    check(SEG_PROBE, probe.local_rates.len() + 1)?;
    check(SEG_WEIGHTS, query.weights.len())?;
    if query.k == 0 || table_rows == 0 {
        return Err(Error::InvalidQuery("k and table size must be positive".into()));
    }
    let selectivity = stats.estimate_conjunction(&query.predicates)?;
    let sum: f64 = query.weights.iter().sum();
    let mut values = Vec::with_capacity(layout.width());
    values.extend(&recon.per_column);
    values.extend(scalar_enc);
    values.push(query.target_recall);
    values.extend(&probe.local_rates);
    values.push(probe.probed_count as f64 / query.k as f64);
    values.push(selectivity);
    values.extend(query.weights.iter().map(|w| if sum > 0.0 { w / sum } else { 1.0 / n as f64 }));
    values.push(query.k as f64 / table_rows as f64);
    debug_assert_eq!(values.len(), layout.width());
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::LayoutMismatch(format!(
            "non-finite value in slot `{}`",
            layout.slot_names[i]
        )));
    }
    Ok(FeatureVector { values })
}

/// Writes feature vectors as CSV with one header column per slot.
pub fn write_features_csv<W: Write>(writer: W, layout: &FeatureLayout, rows: &[FeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(layout.slot_names())?;
    for r in rows {
        if r.values.len() != layout.width() {
            return Err(Error::LayoutMismatch(format!(
                "row has {} values, layout has {}",
                r.values.len(),
                layout.width()
            )));
        }
        w.write_record(r.values.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
