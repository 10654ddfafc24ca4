//! Plan execution: exact sequential scan, single-index scan and decomposed
//! per-column scans merged and re-ranked by the exact composite distance.

mod engine;
mod query_file;
mod sql;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::GraphIndex;
use crate::plan::{ColumnParams, PlanChoice, SubqueryParams};
use crate::store::{Filter, HybridQuery, Table};

pub use engine::{Engine, EngineConfig, PlannedQuery};
pub use query_file::{read_queries, sidecar_path, write_queries, QueryRecord};
pub use sql::{descriptor_to_sql, parse_query, query_to_sql, ParsedQuery, VectorTerm, DEFAULT_TARGET_RECALL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: u64,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubqueryStats {
    pub column: usize,
    pub candidates: usize,
    pub scanned: usize,
    pub distance_evals: usize,
    pub converged: bool,
    pub elapsed: Duration,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub planning: Duration,
    pub execution: Duration,
    pub merge: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultSet {
    /// Ascending by `(score, id)`.
    pub rows: Vec<ScoredId>,
    pub plan: PlanChoice,
    pub params: Option<SubqueryParams>,
    pub subqueries: Vec<SubqueryStats>,
    /// Rows whose predicates were checked by a full scan.
    pub rows_scanned: usize,
    /// Candidates whose composite distance was computed.
    pub rescored: usize,
    pub converged: bool,
    pub timings: Timings,
}

impl ResultSet {
    pub fn ids(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.id).collect()
    }
}

/// Deterministic work estimate of an execution, used to label training
/// queries reproducibly. Units are roughly "one float multiply-add".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub per_row: f64,
    pub per_predicate: f64,
    /// Fixed overhead of one graph distance evaluation (visit bookkeeping).
    pub per_distance: f64,
    pub per_dim: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            per_row: 2.0,
            per_predicate: 4.0,
            per_distance: 24.0,
            per_dim: 1.0,
        }
    }
}

impl CostModel {
    pub fn cost(&self, result: &ResultSet, dims: &[usize]) -> f64 {
        let total_dim: usize = dims.iter().sum();
        let graph: f64 = result
            .subqueries
            .iter()
            .map(|s| {
                s.distance_evals as f64 * (self.per_distance + self.per_dim * dims[s.column] as f64)
                    + s.scanned as f64 * self.per_predicate
            })
            .sum();
        graph
            + result.rows_scanned as f64 * self.per_row
            + result.rescored as f64 * (self.per_distance + self.per_dim * total_dim as f64)
    }
}

fn top_k(mut rows: Vec<ScoredId>, k: usize) -> Vec<ScoredId> {
    let cmp = |a: &ScoredId, b: &ScoredId| a.score.total_cmp(&b.score).then(a.id.cmp(&b.id));
    if rows.len() > k && k > 0 {
        rows.select_nth_unstable_by(k - 1, cmp);
        rows.truncate(k);
    } else if k == 0 {
        rows.clear();
    }
    rows.sort_unstable_by(cmp);
    rows
}

/// Exact top-k: filters every row, scores the survivors, keeps the `k` best.
pub fn exec_sequential(table: &Table, query: &HybridQuery) -> Result<ResultSet> {
    query.validate(table.schema())?;
    let start = Instant::now();
    let filter = table.bind(&query.predicates)?;
    let scored: Vec<ScoredId> = (0..table.len())
        .filter(|&r| filter.matches(table, r))
        .map(|r| ScoredId {
            id: table.id(r),
            score: table.composite_distance_row(r, query),
        })
        .collect();
    let rescored = scored.len();
    let rows = top_k(scored, query.k);
    Ok(ResultSet {
        rows,
        plan: PlanChoice::SequentialScan,
        params: None,
        subqueries: Vec::new(),
        rows_scanned: table.len(),
        rescored,
        converged: true,
        timings: Timings {
            execution: start.elapsed(),
            ..Timings::default()
        },
    })
}

fn check_index(table: &Table, index: &GraphIndex, column: usize) -> Result<()> {
    let dim = table
        .schema()
        .vector_columns
        .get(column)
        .ok_or(Error::IndexMissing(column))?
        .dim;
    if index.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: index.dim(),
        });
    }
    Ok(())
}

pub(crate) fn run_subquery(
    table: &Table,
    filter: &Filter,
    index: &GraphIndex,
    column: usize,
    query: &HybridQuery,
    params: &ColumnParams,
) -> (Vec<u64>, SubqueryStats) {
    let start = Instant::now();
    let res = index.filtered_search(&query.vectors[column], params.k, &params.search_params(), |id| {
        filter.is_empty() || table.row_of(id).is_some_and(|r| filter.matches(table, r))
    });
    let ids: Vec<u64> = res.results.iter().map(|n| n.id).collect();
    let stats = SubqueryStats {
        column,
        candidates: ids.len(),
        scanned: res.scanned_count,
        distance_evals: res.distance_evals,
        converged: res.converged,
        elapsed: start.elapsed(),
    };
    (ids, stats)
}

/// Rescores the union of candidate ids with the full composite distance.
fn merge<'a>(table: &Table, query: &HybridQuery, candidates: impl IntoIterator<Item = &'a u64>) -> (Vec<ScoredId>, usize) {
    let mut seen = HashSet::new();
    let scored: Vec<ScoredId> = candidates
        .into_iter()
        .filter(|id| seen.insert(**id))
        .filter_map(|&id| {
            table.row_of(id).map(|r| ScoredId {
                id,
                score: table.composite_distance_row(r, query),
            })
        })
        .collect();
    let n = scored.len();
    (top_k(scored, query.k), n)
}

/// Merges finished subqueries into a [`ResultSet`].
pub(crate) fn assemble(
    table: &Table,
    query: &HybridQuery,
    plan: PlanChoice,
    params: SubqueryParams,
    parts: &[(&[u64], SubqueryStats)],
) -> ResultSet {
    let m = Instant::now();
    let (rows, rescored) = merge(table, query, parts.iter().flat_map(|p| p.0.iter()));
    let subqueries: Vec<SubqueryStats> = parts.iter().map(|p| p.1).collect();
    ResultSet {
        rows,
        plan,
        params: Some(params),
        converged: subqueries.iter().all(|s| s.converged),
        timings: Timings {
            planning: Duration::ZERO,
            execution: subqueries.iter().map(|s| s.elapsed).sum(),
            merge: m.elapsed(),
        },
        subqueries,
        rows_scanned: 0,
        rescored,
    }
}

/// Filtered search on one column for `k_i` candidates, re-ranked by the
/// composite distance over all columns.
pub fn exec_single_index(
    table: &Table,
    index: &GraphIndex,
    column: usize,
    query: &HybridQuery,
    params: &ColumnParams,
) -> Result<ResultSet> {
    query.validate(table.schema())?;
    check_index(table, index, column)?;
    let filter = table.bind(&query.predicates)?;
    let (ids, stats) = run_subquery(table, &filter, index, column, query, params);
    Ok(assemble(
        table,
        query,
        PlanChoice::SingleIndexScan(column),
        SubqueryParams::uniform(table.schema().num_vector_columns(), *params),
        &[(&ids, stats)],
    ))
}

/// One filtered subquery per vector column; the candidate union is rescored
/// exactly and truncated to `k`.
pub fn exec_decomposed(
    table: &Table,
    indexes: &[&GraphIndex],
    query: &HybridQuery,
    params: &SubqueryParams,
) -> Result<ResultSet> {
    query.validate(table.schema())?;
    let n = table.schema().num_vector_columns();
    if indexes.len() < n {
        return Err(Error::IndexMissing(indexes.len()));
    }
    if params.columns.len() != n {
        return Err(Error::InvalidPlan(format!("{} parameter sets for {n} columns", params.columns.len())));
    }
    for (i, idx) in indexes.iter().take(n).enumerate() {
        check_index(table, idx, i)?;
    }
    let filter = table.bind(&query.predicates)?;
    let parts: Vec<(Vec<u64>, SubqueryStats)> = indexes
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, idx)| run_subquery(table, &filter, idx, i, query, &params.columns[i]))
        .collect();
    let refs: Vec<(&[u64], SubqueryStats)> = parts.iter().map(|(ids, s)| (ids.as_slice(), *s)).collect();
    Ok(assemble(table, query, PlanChoice::DecomposedIndexScan, params.clone(), &refs))
}

/// Fraction of `truth` present in `found`; an empty truth counts as fully
/// recalled.
pub fn recall_at_k(found: &[u64], truth: &[u64]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let found: HashSet<u64> = found.iter().copied().collect();
    truth.iter().filter(|id| found.contains(id)).count() as f64 / truth.len() as f64
}
