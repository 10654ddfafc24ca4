//! Two-phase learned optimizer: phase 1 picks an execution strategy, phase 2
//! recommends per-column subquery parameters. Training labels come from
//! executing generated queries under a grid of configurations.

mod model;
mod training;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{IterativeScan, SearchParams};
use crate::store::{HybridQuery, Predicate};

pub use model::{load_models, save_models, ModelConfig, OptimizerModels, ValidationMetrics, MIN_EXAMPLES};
pub use training::{
    enumerate_configurations, generate_training_data, label_queries, sample_queries, select_label, write_examples_csv,
    ConfigOutcome, Configuration, LabelMetric, LabelOptions,
    TrainingExample,
};

/// Upper bound for recommended `ef_search`.
pub const MAX_EF_SEARCH: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlanChoice {
    SequentialScan,
    DecomposedIndexScan,
    SingleIndexScan(usize),
}

impl PlanChoice {
    pub fn num_classes(num_vector_columns: usize) -> usize {
        num_vector_columns + 2
    }

    pub fn class_index(self) -> usize {
        match self {
            PlanChoice::SequentialScan => 0,
            PlanChoice::DecomposedIndexScan => 1,
            PlanChoice::SingleIndexScan(i) => 2 + i,
        }
    }

    pub fn from_class(class: usize, num_vector_columns: usize) -> Result<Self> {
        match class {
            0 => Ok(PlanChoice::SequentialScan),
            1 => Ok(PlanChoice::DecomposedIndexScan),
            c if c - 2 < num_vector_columns => Ok(PlanChoice::SingleIndexScan(c - 2)),
            c => Err(Error::InvalidPlan(format!("class {c} out of range"))),
        }
    }

    pub fn validate(self, num_vector_columns: usize) -> Result<()> {
        match self {
            PlanChoice::SingleIndexScan(i) if i >= num_vector_columns => {
                Err(Error::InvalidPlan(format!("single-index column {i} out of range")))
            }
            _ => Ok(()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sequential" => Some(PlanChoice::SequentialScan),
            "decomposed" => Some(PlanChoice::DecomposedIndexScan),
            _ => s.strip_prefix("single:")?.parse().ok().map(PlanChoice::SingleIndexScan),
        }
    }
}

impl fmt::Display for PlanChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanChoice::SequentialScan => f.write_str("sequential"),
            PlanChoice::DecomposedIndexScan => f.write_str("decomposed"),
            PlanChoice::SingleIndexScan(i) => write!(f, "single:{i}"),
        }
    }
}

/// Search parameters of one per-column subquery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnParams {
    pub k: usize,
    pub ef_search: usize,
    pub iterative_scan: IterativeScan,
    pub max_scan_tuples: usize,
}

impl ColumnParams {
    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            ef_search: self.ef_search,
            max_scan_tuples: Some(self.max_scan_tuples),
            iterative_scan: self.iterative_scan,
        }
    }

    /// Clamps into `k ∈ [query_k, rows]`, `ef ∈ [k, MAX_EF_SEARCH]` (never
    /// below `k`), `max_scan ∈ [k, rows]`.
    pub fn clamped(self, query_k: usize, table_rows: usize) -> Self {
        let rows = table_rows.max(query_k).max(1);
        let k = self.k.clamp(query_k.max(1), rows);
        ColumnParams {
            k,
            ef_search: self.ef_search.min(MAX_EF_SEARCH).max(k),
            iterative_scan: self.iterative_scan,
            max_scan_tuples: self.max_scan_tuples.clamp(k, rows),
        }
    }

    pub fn is_valid(&self, query_k: usize, table_rows: usize) -> bool {
        self.k >= query_k
            && self.k >= 1
            && self.ef_search >= self.k
            && self.max_scan_tuples >= self.k
            && self.max_scan_tuples <= table_rows.max(query_k)
    }
}

/// One [`ColumnParams`] per vector column.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubqueryParams {
    pub columns: Vec<ColumnParams>,
}

impl SubqueryParams {
    pub fn uniform(num_columns: usize, params: ColumnParams) -> Self {
        SubqueryParams {
            columns: vec![params; num_columns],
        }
    }

    pub fn is_valid(&self, query_k: usize, table_rows: usize) -> bool {
        self.columns.iter().all(|c| c.is_valid(query_k, table_rows))
    }
}

/// How `max_scan_tuples` is derived for a grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaxScanRule {
    /// Multiple of the subquery's `k_i`.
    TimesK(f64),
    /// Fraction of table rows.
    Fraction(f64),
}

impl MaxScanRule {
    pub fn resolve(self, k_i: usize, table_rows: usize) -> usize {
        let v = match self {
            MaxScanRule::TimesK(x) => (x * k_i as f64).round(),
            MaxScanRule::Fraction(f) => (f * table_rows as f64).round(),
        };
        (v as usize).max(k_i)
    }
}

/// Parameter grid explored while labeling training queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigGrid {
    pub ef_search: Vec<usize>,
    pub iterative_scan: Vec<IterativeScan>,
    /// `λ = k_i / k` multipliers.
    pub lambdas: Vec<f64>,
    pub max_scan: Vec<MaxScanRule>,
}

impl Default for ConfigGrid {
    fn default() -> Self {
        ConfigGrid {
            ef_search: vec![32, 64, 128, 256, 512],
            iterative_scan: vec![IterativeScan::Relaxed, IterativeScan::Strict],
            lambdas: vec![1.0, 2.0, 4.0, 8.0],
            max_scan: vec![MaxScanRule::TimesK(2.0), MaxScanRule::Fraction(0.01), MaxScanRule::Fraction(0.1)],
        }
    }
}

impl ConfigGrid {
    pub fn validate(&self) -> Result<()> {
        if self.ef_search.is_empty() || self.iterative_scan.is_empty() || self.lambdas.is_empty() || self.max_scan.is_empty()
        {
            return Err(Error::InvalidConfig("config grid has an empty axis".into()));
        }
        if self.ef_search.contains(&0) || self.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidConfig("grid values must be positive".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        self.ef_search.len() * self.iterative_scan.len() * self.lambdas.len() * self.max_scan.len()
    }

    /// Grid points in a fixed order: λ, ef, mode, max-scan rule.
    pub fn iter(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.lambdas.iter().flat_map(move |&lambda| {
            self.ef_search.iter().flat_map(move |&ef_search| {
                self.iterative_scan.iter().flat_map(move |&iterative_scan| {
                    self.max_scan.iter().map(move |&max_scan| GridPoint {
                        lambda,
                        ef_search,
                        iterative_scan,
                        max_scan,
                    })
                })
            })
        })
    }
}

/// One point of a [`ConfigGrid`]; resolves to concrete parameters per query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub ef_search: usize,
    pub iterative_scan: IterativeScan,
    pub max_scan: MaxScanRule,
}

impl GridPoint {
    fn column(&self, k_i: usize, query_k: usize, table_rows: usize) -> ColumnParams {
        ColumnParams {
            k: k_i,
            ef_search: self.ef_search,
            iterative_scan: self.iterative_scan,
            max_scan_tuples: self.max_scan.resolve(k_i, table_rows),
        }
        .clamped(query_k, table_rows)
    }

    /// Parameters of this point for `plan`; `None` for a sequential scan.
    pub fn resolve(&self, plan: PlanChoice, query: &HybridQuery, table_rows: usize) -> Option<SubqueryParams> {
        let n = query.vectors.len();
        let k = query.k;
        match plan {
            PlanChoice::SequentialScan => None,
            PlanChoice::DecomposedIndexScan => Some(SubqueryParams {
                columns: (0..n)
                    .map(|i| self.column(decomposed_k(self.lambda, k, &query.weights, i), k, table_rows))
                    .collect(),
            }),
            PlanChoice::SingleIndexScan(_) => Some(SubqueryParams::uniform(
                n,
                self.column(single_k(self.lambda, k), k, table_rows),
            )),
        }
    }
}

/// A plan and grid point applied uniformly to every query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticConfig {
    pub plan: PlanChoice,
    pub point: Option<GridPoint>,
}

impl StaticConfig {
    pub fn sequential() -> Self {
        StaticConfig {
            plan: PlanChoice::SequentialScan,
            point: None,
        }
    }

    pub fn params(&self, query: &HybridQuery, table_rows: usize) -> Result<Option<SubqueryParams>> {
        match (self.plan, self.point) {
            (PlanChoice::SequentialScan, _) => Ok(None),
            (plan, Some(p)) => Ok(p.resolve(plan, query, table_rows)),
            (plan, None) => Err(Error::InvalidPlan(format!("static {plan} plan needs a grid point"))),
        }
    }

    /// Every static configuration a grid induces, in label order.
    pub fn all(grid: &ConfigGrid, num_vector_columns: usize) -> Vec<StaticConfig> {
        let mut out = vec![StaticConfig::sequential()];
        let plans = std::iter::once(PlanChoice::DecomposedIndexScan)
            .chain((0..num_vector_columns).map(PlanChoice::SingleIndexScan));
        for plan in plans {
            out.extend(grid.iter().map(|p| StaticConfig { plan, point: Some(p) }));
        }
        out
    }
}

impl fmt::Display for StaticConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.plan)?;
        if let Some(p) = &self.point {
            let rule = match p.max_scan {
                MaxScanRule::TimesK(x) => format!("{x}k"),
                MaxScanRule::Fraction(x) => format!("{x}n"),
            };
            write!(
                f,
                "[lambda={} ef={} mode={} max_scan={rule}]",
                p.lambda,
                p.ef_search,
                p.iterative_scan.as_str()
            )?;
        }
        Ok(())
    }
}

impl std::str::FromStr for StaticConfig {
    type Err = Error;

    /// Parses the [`fmt::Display`] form, e.g. `sequential` or
    /// `decomposed[lambda=2 ef=128 mode=strict max_scan=0.1n]`. Fields may be
    /// separated by spaces or commas; omitted fields take the first value of
    /// the default grid.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidPlan(format!("`{s}`: {m}"));
        let s = s.trim();
        let (head, body) = match s.find('[') {
            Some(i) => {
                let body = s[i + 1..].strip_suffix(']').ok_or_else(|| bad("missing `]`".into()))?;
                (&s[..i], Some(body))
            }
            None => (s, None),
        };
        let plan = PlanChoice::parse(head.trim()).ok_or_else(|| bad(format!("unknown plan `{head}`")))?;
        if plan == PlanChoice::SequentialScan {
            return match body {
                None => Ok(StaticConfig::sequential()),
                Some(_) => Err(bad("sequential plans take no parameters".into())),
            };
        }
        let grid = ConfigGrid::default();
        let mut point = GridPoint {
            lambda: grid.lambdas[0],
            ef_search: grid.ef_search[0],
            iterative_scan: grid.iterative_scan[0],
            max_scan: grid.max_scan[0],
        };
        for field in body.unwrap_or("").split([' ', ',']).filter(|f| !f.is_empty()) {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{field}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number `{v}`")));
            match key {
                "lambda" => point.lambda = num(value)?,
                "ef" | "ef_search" => {
                    point.ef_search = value.parse().map_err(|_| bad(format!("bad ef `{value}`")))?
                }
                "mode" | "iterative_scan" => {
                    point.iterative_scan =
                        IterativeScan::parse(value).ok_or_else(|| bad(format!("bad mode `{value}`")))?
                }
                "max_scan" => {
                    point.max_scan = if let Some(x) = value.strip_suffix('k') {
                        MaxScanRule::TimesK(num(x)?)
                    } else if let Some(x) = value.strip_suffix('n') {
                        MaxScanRule::Fraction(num(x)?)
                    } else {
                        return Err(bad(format!("max_scan needs a `k` or `n` suffix, got `{value}`")));
                    }
                }
                _ => return Err(bad(format!("unknown field `{key}`"))),
            }
        }
        Ok(StaticConfig { plan, point: Some(point) })
    }
}

/// Per-column `k_i` for a decomposed plan: `max(k, round(λ·k·N·w_i))` with
/// normalized weights, so an evenly weighted column gets `λ·k` and a
/// zero-weight column only `k`.
pub fn decomposed_k(lambda: f64, k: usize, weights: &[f64], column: usize) -> usize {
    let n = weights.len() as f64;
    let sum: f64 = weights.iter().sum();
    let w = if sum > 0.0 { weights[column] / sum } else { 1.0 / n };
    ((lambda * k as f64 * n * w).round() as usize).max(k)
}

pub fn single_k(lambda: f64, k: usize) -> usize {
    ((lambda * k as f64).round() as usize).max(k)
}

/// One executable per-column subquery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubqueryDescriptor {
    pub column: usize,
    pub vector: Vec<f32>,
    pub params: ColumnParams,
    pub predicates: Vec<Predicate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeInstruction {
    pub weights: Vec<f64>,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewrittenQuery {
    pub plan: PlanChoice,
    pub subqueries: Vec<SubqueryDescriptor>,
    /// Union the candidates, rescore with the full composite distance, keep `k`.
    pub merge: MergeInstruction,
}

pub fn rewrite(query: &HybridQuery, plan: PlanChoice, params: &SubqueryParams) -> Result<RewrittenQuery> {
    let n = query.vectors.len();
    plan.validate(n)?;
    if params.columns.len() != n {
        return Err(Error::InvalidPlan(format!(
            "{} parameter sets for {n} vector columns",
            params.columns.len()
        )));
    }
    let columns: Vec<usize> = match plan {
        PlanChoice::SequentialScan => {
            return Err(Error::InvalidPlan("a sequential scan is not decomposed".into()));
        }
        PlanChoice::DecomposedIndexScan => (0..n).collect(),
        PlanChoice::SingleIndexScan(i) => vec![i],
    };
    Ok(RewrittenQuery {
        plan,
        subqueries: columns
            .into_iter()
            .map(|i| SubqueryDescriptor {
                column: i,
                vector: query.vectors[i].clone(),
                params: params.columns[i],
                predicates: query.predicates.clone(),
            })
            .collect(),
        merge: MergeInstruction {
            weights: query.weights.clone(),
            k: query.k,
        },
    })
}
