//! Per-column histograms for global selectivity estimation.
//!
//! Numeric columns use equi-width bins over `[min, max]` with a prefix-sum
//! array, so a range estimate is one binary search plus linear interpolation
//! inside the boundary bin. Categorical columns keep an exact frequency map.
//! Conjunctions multiply per-predicate estimates (attribute independence).

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::store::{Condition, Predicate, ScalarValue, Table};

pub const DEFAULT_BINS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub enum HistogramKind {
    Numeric {
        /// `bins + 1` strictly increasing edges; bin `i` is `[edges[i], edges[i+1])`.
        /// The last edge is the successor of the column maximum.
        edges: Vec<f64>,
        counts: Vec<u64>,
        /// `prefix[i] = counts[0] + … + counts[i]`.
        prefix: Vec<u64>,
        /// Distinct values per bin, for equality estimates.
        distinct: Vec<u64>,
    },
    Categorical {
        freq: BTreeMap<String, u64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub column: String,
    pub kind: HistogramKind,
    pub total_count: u64,
}

impl Histogram {
    pub fn build(table: &Table, column: &str, num_bins: usize) -> Result<Self> {
        let col = table.schema().scalar_column(column)?;
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        let kind = if let Some(values) = table.numeric_column(col) {
            if num_bins == 0 {
                return Err(Error::InvalidConfig("num_bins must be at least 1".into()));
            }
            numeric_kind(values, num_bins)?
        } else {
            let (dict, codes) = table.categorical_column(col).expect("categorical");
            let mut counts = vec![0u64; dict.len()];
            for &c in codes {
                counts[c as usize] += 1;
            }
            HistogramKind::Categorical {
                freq: dict.iter().cloned().zip(counts).filter(|(_, n)| *n > 0).collect(),
            }
        };
        Ok(Histogram {
            column: column.to_string(),
            kind,
            total_count: table.len() as u64,
        })
    }

    pub fn num_bins(&self) -> usize {
        match &self.kind {
            HistogramKind::Numeric { counts, .. } => counts.len(),
            HistogramKind::Categorical { freq } => freq.len(),
        }
    }

    /// `(min, max)` of a numeric column.
    pub fn range(&self) -> Option<(f64, f64)> {
        match &self.kind {
            HistogramKind::Numeric { edges, .. } => Some((edges[0], edges[edges.len() - 1].next_down())),
            HistogramKind::Categorical { .. } => None,
        }
    }

    /// Estimated fraction of rows with value `< t`.
    fn fraction_below(&self, t: f64) -> f64 {
        let HistogramKind::Numeric { edges, counts, prefix, .. } = &self.kind else {
            return 0.0;
        };
        let last = edges.len() - 1;
        if t <= edges[0] {
            return 0.0;
        }
        if t >= edges[last] {
            return 1.0;
        }
        let b = edges[1..].partition_point(|&e| e <= t);
        let below = prefix[b] - counts[b];
        let frac = (t - edges[b]) / (edges[b + 1] - edges[b]);
        ((below as f64 + counts[b] as f64 * frac) / self.total_count as f64).clamp(0.0, 1.0)
    }

    pub fn estimate(&self, predicate: &Predicate) -> Result<f64> {
        if predicate.column != self.column {
            return Err(Error::ColumnMismatch {
                predicate: predicate.column.clone(),
                histogram: self.column.clone(),
            });
        }
        let mismatch = || Error::InvalidPredicate(format!("operand kind does not match column `{}`", self.column));
        let est = match (&self.kind, &predicate.cond) {
            (HistogramKind::Categorical { freq }, Condition::Eq(ScalarValue::Cat(c))) => {
                freq.get(c).copied().unwrap_or(0) as f64 / self.total_count as f64
            }
            (HistogramKind::Categorical { .. }, _) => return Err(mismatch()),
            (HistogramKind::Numeric { edges, counts, distinct, .. }, Condition::Eq(ScalarValue::Num(v))) => {
                let last = edges.len() - 1;
                if *v < edges[0] || *v >= edges[last] {
                    0.0
                } else {
                    let b = edges[1..].partition_point(|&e| e <= *v);
                    counts[b] as f64 / (self.total_count as f64 * distinct[b].max(1) as f64)
                }
            }
            (HistogramKind::Numeric { .. }, Condition::Eq(ScalarValue::Cat(_))) => return Err(mismatch()),
            // `≤ t` is `< successor(t)`, which keeps point masses exact.
            (_, Condition::Lt(t)) => self.fraction_below(*t),
            (_, Condition::Le(t)) => self.fraction_below(t.next_up()),
            (_, Condition::Gt(t)) => 1.0 - self.fraction_below(t.next_up()),
            (_, Condition::Ge(t)) => 1.0 - self.fraction_below(*t),
            (_, Condition::Between(lo, hi)) => {
                (self.fraction_below(hi.next_up()) - self.fraction_below(*lo)).max(0.0)
            }
        };
        Ok(est.clamp(0.0, 1.0))
    }
}

fn numeric_kind(values: &[f64], num_bins: usize) -> Result<HistogramKind> {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        if !v.is_finite() {
            return Err(Error::InvalidConfig("non-finite numeric value".into()));
        }
        min = min.min(v);
        max = max.max(v);
    }
    let width = (max - min) / num_bins as f64;
    let mut edges: Vec<f64> = (0..num_bins).map(|i| min + i as f64 * width).collect();
    edges.push(max.next_up());
    edges.dedup_by(|b, a| *b <= *a);
    if edges.len() < 2 {
        edges = vec![min, min.next_up()];
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for &v in values {
        let b = edges[1..].partition_point(|&e| e <= v);
        counts[b] += 1;
        members[b].push(v);
    }
    let distinct = members
        .iter_mut()
        .map(|m| {
            m.sort_by(f64::total_cmp);
            m.dedup();
            m.len() as u64
        })
        .collect();
    let prefix = counts
        .iter()
        .scan(0u64, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect();
    Ok(HistogramKind::Numeric {
        edges,
        counts,
        prefix,
        distinct,
    })
}

pub fn build_histogram(table: &Table, column: &str, num_bins: usize) -> Result<Histogram> {
    Histogram::build(table, column, num_bins)
}

pub fn estimate_predicate(hist: &Histogram, predicate: &Predicate) -> Result<f64> {
    hist.estimate(predicate)
}

/// Histograms for every scalar column of a table.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsCatalog {
    histograms: HashMap<String, Histogram>,
    num_bins: usize,
    rows_at_build: usize,
}

impl StatsCatalog {
    pub fn build(table: &Table, num_bins: usize) -> Result<Self> {
        let mut histograms = HashMap::new();
        for col in &table.schema().scalar_columns {
            histograms.insert(col.name.clone(), Histogram::build(table, &col.name, num_bins)?);
        }
        Ok(StatsCatalog {
            histograms,
            num_bins,
            rows_at_build: table.len(),
        })
    }

    pub fn from_histograms(histograms: impl IntoIterator<Item = Histogram>) -> Self {
        let histograms: HashMap<_, _> = histograms.into_iter().map(|h| (h.column.clone(), h)).collect();
        let rows = histograms.values().map(|h| h.total_count as usize).max().unwrap_or(0);
        let bins = histograms.values().map(Histogram::num_bins).max().unwrap_or(DEFAULT_BINS);
        StatsCatalog {
            histograms,
            num_bins: bins,
            rows_at_build: rows,
        }
    }

    pub fn get(&self, column: &str) -> Option<&Histogram> {
        self.histograms.get(column)
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn rows_at_build(&self) -> usize {
        self.rows_at_build
    }

    /// More than 10% of rows inserted since the last build.
    pub fn is_stale(&self, table: &Table) -> bool {
        let inserted = table.len().saturating_sub(self.rows_at_build);
        inserted * 10 > self.rows_at_build
    }

    /// Rebuilds when stale; returns whether a rebuild happened.
    pub fn refresh(&mut self, table: &Table) -> Result<bool> {
        if !self.is_stale(table) {
            return Ok(false);
        }
        *self = StatsCatalog::build(table, self.num_bins)?;
        Ok(true)
    }

    pub fn estimate_conjunction(&self, predicates: &[Predicate]) -> Result<f64> {
        let mut sel = 1.0;
        for p in predicates {
            let hist = self
                .histograms
                .get(&p.column)
                .ok_or_else(|| Error::MissingHistogram(p.column.clone()))?;
            sel *= hist.estimate(p)?;
        }
        Ok(sel)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.num_bins as u32)?;
        w.write_u64::<LittleEndian>(self.rows_at_build as u64)?;
        let mut names: Vec<&String> = self.histograms.keys().collect();
        names.sort();
        w.write_u32::<LittleEndian>(names.len() as u32)?;
        for name in names {
            let h = &self.histograms[name];
            write_str(&mut w, &h.column)?;
            w.write_u64::<LittleEndian>(h.total_count)?;
            match &h.kind {
                HistogramKind::Numeric {
                    edges,
                    counts,
                    distinct,
                    ..
                } => {
                    w.write_u8(0)?;
                    w.write_u32::<LittleEndian>(counts.len() as u32)?;
                    for e in edges {
                        w.write_f64::<LittleEndian>(*e)?;
                    }
                    for c in counts.iter().chain(distinct) {
                        w.write_u64::<LittleEndian>(*c)?;
                    }
                }
                HistogramKind::Categorical { freq } => {
                    w.write_u8(1)?;
                    w.write_u32::<LittleEndian>(freq.len() as u32)?;
                    for (k, v) in freq {
                        write_str(&mut w, k)?;
                        w.write_u64::<LittleEndian>(*v)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("not a stats file"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported stats version {version}")));
        }
        let num_bins = r.read_u32::<LittleEndian>()? as usize;
        let rows_at_build = r.read_u64::<LittleEndian>()? as usize;
        let n = r.read_u32::<LittleEndian>()?;
        let mut histograms = HashMap::new();
        for _ in 0..n {
            let column = read_str(&mut r)?;
            let total_count = r.read_u64::<LittleEndian>()?;
            let kind = match r.read_u8()? {
                0 => {
                    let bins = r.read_u32::<LittleEndian>()? as usize;
                    let mut edges = vec![0f64; bins + 1];
                    r.read_f64_into::<LittleEndian>(&mut edges)?;
                    let mut counts = vec![0u64; bins];
                    r.read_u64_into::<LittleEndian>(&mut counts)?;
                    let mut distinct = vec![0u64; bins];
                    r.read_u64_into::<LittleEndian>(&mut distinct)?;
                    if edges.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(Error::format("histogram edges not strictly increasing"));
                    }
                    let prefix: Vec<u64> = counts
                        .iter()
                        .scan(0u64, |acc, &c| {
                            *acc += c;
                            Some(*acc)
                        })
                        .collect();
                    if prefix.last().copied().unwrap_or(0) != total_count {
                        return Err(Error::format("histogram counts do not sum to total"));
                    }
                    HistogramKind::Numeric {
                        edges,
                        counts,
                        prefix,
                        distinct,
                    }
                }
                1 => {
                    let len = r.read_u32::<LittleEndian>()?;
                    let mut freq = BTreeMap::new();
                    for _ in 0..len {
                        let k = read_str(&mut r)?;
                        freq.insert(k, r.read_u64::<LittleEndian>()?);
                    }
                    HistogramKind::Categorical { freq }
                }
                t => return Err(Error::format(format!("unknown histogram kind {t}"))),
            };
            histograms.insert(
                column.clone(),
                Histogram {
                    column,
                    kind,
                    total_count,
                },
            );
        }
        Ok(StatsCatalog {
            histograms,
            num_bins,
            rows_at_build,
        })
    }
}

const MAGIC: &[u8; 4] = b"HQST";
const VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format("invalid UTF-8 in stats file"))
}

pub fn estimate_conjunction(stats: &StatsCatalog, predicates: &[Predicate]) -> Result<f64> {
    stats.estimate_conjunction(predicates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Metric, ScalarColumnDef, ScalarKind, TableSchema, Tuple, VectorColumnDef};
    use proptest::prelude::*;

    fn numeric_table(values: &[f64]) -> Table {
        let schema = TableSchema::new(
            vec![VectorColumnDef {
                name: "v".into(),
                dim: 1,
                metric: Metric::L2,
            }],
            vec![ScalarColumnDef {
                name: "price".into(),
                kind: ScalarKind::Numeric,
            }],
        );
        let mut t = Table::new(schema).unwrap();
        t.insert_batch(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| Tuple::new(i as u64, vec![vec![0.0]], vec![(*v).into()]))
                .collect(),
        )
        .unwrap();
        t
    }

    fn exact(t: &Table, p: &Predicate) -> f64 {
        t.bind(std::slice::from_ref(p)).unwrap().count(t) as f64 / t.len() as f64
    }

    #[test]
    fn ten_bins_over_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let h = build_histogram(&numeric_table(&values), "price", 10).unwrap();
        let HistogramKind::Numeric { counts, prefix, .. } = &h.kind else {
            panic!()
        };
        assert_eq!(counts, &vec![10; 10]);
        assert_eq!(prefix, &(1..=10).map(|i| i * 10).collect::<Vec<u64>>());
    }

    #[test]
    fn constant_column_is_one_bin() {
        let t = numeric_table(&[5.0; 40]);
        let h = build_histogram(&t, "price", 10).unwrap();
        assert_eq!(h.num_bins(), 1);
        let HistogramKind::Numeric { counts, .. } = &h.kind else {
            panic!()
        };
        assert_eq!(counts, &vec![40]);
        for p in [
            Predicate::lt("price", 5.0),
            Predicate::le("price", 5.0),
            Predicate::ge("price", 5.0),
            Predicate::gt("price", 4.0),
            Predicate::eq("price", 5.0),
            Predicate::eq("price", 6.0),
            Predicate::between("price", 5.0, 5.0),
        ] {
            assert_eq!(h.estimate(&p).unwrap(), exact(&t, &p), "{p:?}");
        }
    }

    #[test]
    fn categorical_frequency_map() {
        let schema = TableSchema::new(
            vec![VectorColumnDef {
                name: "v".into(),
                dim: 1,
                metric: Metric::L2,
            }],
            vec![ScalarColumnDef {
                name: "c".into(),
                kind: ScalarKind::Categorical,
            }],
        );
        let mut t = Table::new(schema).unwrap();
        t.insert_batch(
            (0..100)
                .map(|i| Tuple::new(i, vec![vec![0.0]], vec![if i < 70 { "A" } else { "B" }.into()]))
                .collect(),
        )
        .unwrap();
        let h = build_histogram(&t, "c", 100).unwrap();
        let HistogramKind::Categorical { freq } = &h.kind else {
            panic!()
        };
        assert_eq!(freq.get("A"), Some(&70));
        assert_eq!(freq.get("B"), Some(&30));
        assert_eq!(h.estimate(&Predicate::eq("c", "A")).unwrap(), 0.70);
        assert_eq!(h.estimate(&Predicate::eq("c", "Q")).unwrap(), 0.0);
    }

    #[test]
    fn running_price_example() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = numeric_table(&values);
        let h = build_histogram(&t, "price", 100).unwrap();
        let p = Predicate::lt("price", 50.0);
        let est = h.estimate(&p).unwrap();
        assert_eq!(exact(&t, &p), 0.49);
        assert!((0.48..=0.51).contains(&est), "{est}");
    }

    #[test]
    fn boundaries() {
        let values: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
        let t = numeric_table(&values);
        let h = build_histogram(&t, "price", 100).unwrap();
        let (min, max) = h.range().unwrap();
        assert_eq!(h.estimate(&Predicate::lt("price", min)).unwrap(), 0.0);
        assert_eq!(h.estimate(&Predicate::ge("price", min)).unwrap(), 1.0);
        assert_eq!(h.estimate(&Predicate::le("price", max)).unwrap(), 1.0);
        assert_eq!(h.estimate(&Predicate::gt("price", max)).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let t = numeric_table(&[1.0, 2.0]);
        let h = build_histogram(&t, "price", 4).unwrap();
        assert!(matches!(
            h.estimate(&Predicate::lt("other", 1.0)),
            Err(Error::ColumnMismatch { .. })
        ));
        assert!(matches!(build_histogram(&t, "nope", 4), Err(Error::UnknownColumn(_))));
        let empty = Table::new(t.schema().clone()).unwrap();
        assert!(matches!(build_histogram(&empty, "price", 4), Err(Error::EmptyTable)));
        let stats = StatsCatalog::build(&t, 4).unwrap();
        assert!(matches!(
            stats.estimate_conjunction(&[Predicate::lt("zzz", 1.0)]),
            Err(Error::MissingHistogram(_))
        ));
    }

    #[test]
    fn conjunction_rules() {
        let values: Vec<f64> = (0..1000).map(f64::from).collect();
        let t = numeric_table(&values);
        let stats = StatsCatalog::build(&t, 100).unwrap();
        assert_eq!(stats.estimate_conjunction(&[]).unwrap(), 1.0);
        let p = Predicate::lt("price", 300.0);
        let single = stats.estimate_conjunction(std::slice::from_ref(&p)).unwrap();
        let twice = stats.estimate_conjunction(&[p.clone(), p]).unwrap();
        assert_eq!(twice, single * single);
    }

    #[test]
    fn stale_after_ten_percent_inserts() {
        let mut t = numeric_table(&(0..100).map(f64::from).collect::<Vec<_>>());
        let mut stats = StatsCatalog::build(&t, 10).unwrap();
        t.insert_batch((100..110).map(|i| Tuple::new(i, vec![vec![0.0]], vec![(i as f64).into()])).collect())
            .unwrap();
        assert!(!stats.is_stale(&t));
        t.insert_batch(vec![Tuple::new(500, vec![vec![0.0]], vec![500.0.into()])]).unwrap();
        assert!(stats.is_stale(&t));
        assert!(stats.refresh(&t).unwrap());
        assert_eq!(stats.get("price").unwrap().total_count, 111);
    }

    #[test]
    fn binary_round_trip() {
        let t = numeric_table(&(0..300).map(|i| (i % 17) as f64).collect::<Vec<_>>());
        let stats = StatsCatalog::build(&t, 8).unwrap();
        let mut buf = Vec::new();
        stats.save(&mut buf).unwrap();
        assert_eq!(StatsCatalog::load(&buf[..]).unwrap(), stats);
    }

    proptest! {
        #[test]
        fn error_bounded_by_max_bin_mass(
            values in proptest::collection::vec(-1000.0f64..1000.0, 2..400),
            bins in 1usize..60,
            t in -1200.0f64..1200.0,
            u in -1200.0f64..1200.0,
        ) {
            let table = numeric_table(&values);
            let h = build_histogram(&table, "price", bins).unwrap();
            let HistogramKind::Numeric { counts, .. } = &h.kind else { unreachable!() };
            let bound = *counts.iter().max().unwrap() as f64 / values.len() as f64;
            let (lo, hi) = if t <= u { (t, u) } else { (u, t) };
            for p in [Predicate::lt("price", t), Predicate::ge("price", t), Predicate::le("price", t),
                      Predicate::gt("price", t)] {
                prop_assert!((h.estimate(&p).unwrap() - exact(&table, &p)).abs() <= bound + 1e-12);
            }
            // A two-sided range straddles two boundary bins.
            let p = Predicate::between("price", lo, hi);
            prop_assert!((h.estimate(&p).unwrap() - exact(&table, &p)).abs() <= 2.0 * bound + 1e-12);
        }

        #[test]
        fn widening_never_decreases(
            values in proptest::collection::vec(0.0f64..100.0, 2..200),
            a in 0.0f64..100.0, b in 0.0f64..100.0, widen in 0.0f64..50.0,
        ) {
            let table = numeric_table(&values);
            let h = build_histogram(&table, "price", 20).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let narrow = h.estimate(&Predicate::between("price", lo, hi)).unwrap();
            let wide = h.estimate(&Predicate::between("price", lo - widen, hi + widen)).unwrap();
            prop_assert!(wide >= narrow);
            prop_assert!(h.estimate(&Predicate::lt("price", hi + widen)).unwrap()
                >= h.estimate(&Predicate::lt("price", hi)).unwrap());
        }

        #[test]
        fn exact_at_bin_edges(values in proptest::collection::vec(0.0f64..1.0, 5..300), bins in 1usize..40, e in 0usize..40) {
            let table = numeric_table(&values);
            let h = build_histogram(&table, "price", bins).unwrap();
            let HistogramKind::Numeric { edges, .. } = &h.kind else { unreachable!() };
            let edge = edges[e % edges.len()];
            let p = Predicate::lt("price", edge);
            prop_assert_eq!(h.estimate(&p).unwrap(), exact(&table, &p));
        }
    }
}
