//! Workload evaluation: recall against ground truth, latency percentiles,
//! throughput and speedup over a fixed baseline configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::bench::GroundTruth;
use crate::error::{Error, Result};
use crate::exec::{Engine, ResultSet};
use crate::plan::StaticConfig;
use crate::store::HybridQuery;

/// `|retrieved ∩ truth| / |truth|`; an empty truth counts as full recall.
pub fn compute_recall(retrieved: &[u64], truth: &[u64]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let truth: HashSet<u64> = truth.iter().copied().collect();
    let mut seen = HashSet::new();
    let hits = retrieved.iter().filter(|id| truth.contains(id) && seen.insert(**id)).count();
    hits as f64 / truth.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Timed executions per query; the median is reported.
    pub repeats: usize,
    /// Run the whole workload once untimed before measuring.
    pub warmup: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            repeats: 1,
            warmup: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryEval {
    pub query: usize,
    pub recall: f64,
    pub latency_s: f64,
    pub plan: String,
    pub converged: bool,
    pub empty_truth: bool,
    pub met_target: bool,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_latency_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean_recall: f64,
    /// Fraction of queries whose recall reached their own target.
    pub target_met_fraction: f64,
    pub qps: f64,
    pub total_wall_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub p99_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub name: String,
    pub queries: Vec<QueryEval>,
    pub engine: Aggregate,
    pub baseline_name: Option<String>,
    pub baseline: Option<Aggregate>,
    /// Mean over queries of baseline latency divided by engine latency.
    pub speedup: Option<f64>,
}

/// Nearest-rank percentile of `values` (need not be sorted).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

struct Run {
    results: Vec<ResultSet>,
    latencies: Vec<f64>,
    wall: Duration,
}

fn run_workload(
    queries: &[HybridQuery],
    opts: &EvalOptions,
    exec: impl Fn(&HybridQuery) -> Result<ResultSet>,
) -> Result<Run> {
    if opts.warmup {
        for q in queries {
            exec(q)?;
        }
    }
    let repeats = opts.repeats.max(1);
    let mut results = Vec::with_capacity(queries.len());
    let mut latencies = Vec::with_capacity(queries.len());
    let start = Instant::now();
    for q in queries {
        let mut times = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let t = Instant::now();
            let r = exec(q)?;
            times.push(t.elapsed());
            last = Some(r);
        }
        latencies.push(median(times).as_secs_f64());
        results.push(last.expect("at least one repeat"));
    }
    Ok(Run {
        results,
        latencies,
        wall: start.elapsed() / repeats as u32,
    })
}

fn aggregate(queries: &[HybridQuery], gt: &GroundTruth, run: &Run) -> (Aggregate, Vec<f64>) {
    let recalls: Vec<f64> = run
        .results
        .iter()
        .enumerate()
        .map(|(i, r)| compute_recall(&r.ids(), &gt.ids(i)))
        .collect();
    let n = queries.len().max(1) as f64;
    let met = recalls
        .iter()
        .zip(queries)
        .filter(|(r, q)| **r + 1e-12 >= q.target_recall)
        .count();
    let wall = run.wall.as_secs_f64();
    (
        Aggregate {
            mean_recall: recalls.iter().sum::<f64>() / n,
            target_met_fraction: met as f64 / n,
            qps: if wall > 0.0 { queries.len() as f64 / wall } else { 0.0 },
            total_wall_s: wall,
            p50_s: percentile(&run.latencies, 50.0),
            p95_s: percentile(&run.latencies, 95.0),
            p99_s: percentile(&run.latencies, 99.0),
        },
        recalls,
    )
}

/// Executes a static configuration directly, bypassing the planner.
pub fn execute_static(engine: &Engine, query: &HybridQuery, config: &StaticConfig) -> Result<ResultSet> {
    let params = config.params(query, engine.table().len())?;
    engine.execute_plan(query, config.plan, params.as_ref())
}

/// Evaluates the engine's own planning on `queries`, optionally alongside a
/// fixed baseline configuration.
pub fn run_eval(
    engine: &Engine,
    queries: &[HybridQuery],
    gt: &GroundTruth,
    baseline: Option<&StaticConfig>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    evaluate("engine", engine, queries, gt, |q| engine.execute(q), baseline, opts)
}

/// Evaluates one static configuration as if it were the engine.
pub fn run_static(
    engine: &Engine,
    queries: &[HybridQuery],
    gt: &GroundTruth,
    config: &StaticConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let name = config.to_string();
    evaluate(&name, engine, queries, gt, |q| execute_static(engine, q, config), None, opts)
}

/// Throughput mode: runs the workload once across `threads` workers and
/// returns aggregate queries per second. Kept apart from latency reporting.
pub fn run_throughput(engine: &Engine, queries: &[HybridQuery], threads: usize) -> Result<f64> {
    let threads = threads.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let start = Instant::now();
    std::thread::scope(|s| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    match queries.get(i) {
                        Some(q) => engine.execute(q).map(drop)?,
                        None => return Ok::<_, Error>(()),
                    }
                })
            })
            .collect();
        workers.into_iter().try_for_each(|w| w.join().expect("worker panicked"))
    })?;
    let wall = start.elapsed().as_secs_f64();
    Ok(if wall > 0.0 { queries.len() as f64 / wall } else { 0.0 })
}

fn evaluate(
    name: &str,
    engine: &Engine,
    queries: &[HybridQuery],
    gt: &GroundTruth,
    exec: impl Fn(&HybridQuery) -> Result<ResultSet>,
    baseline: Option<&StaticConfig>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if gt.rows.len() != queries.len() {
        return Err(Error::MisalignedGroundTruth {
            workload: queries.len(),
            ground_truth: gt.rows.len(),
        });
    }
    let run = run_workload(queries, opts, exec)?;
    let (engine_agg, recalls) = aggregate(queries, gt, &run);
    let base = baseline
        .map(|cfg| {
            let b = run_workload(queries, opts, |q| execute_static(engine, q, cfg))?;
            let (agg, rec) = aggregate(queries, gt, &b);
            Ok::<_, Error>((cfg.to_string(), agg, rec, b.latencies))
        })
        .transpose()?;

    let rows: Vec<QueryEval> = (0..queries.len())
        .map(|i| {
            let r = &run.results[i];
            QueryEval {
                query: i,
                recall: recalls[i],
                latency_s: run.latencies[i],
                plan: r.plan.to_string(),
                converged: r.converged,
                empty_truth: gt.rows[i].is_empty(),
                met_target: recalls[i] + 1e-12 >= queries[i].target_recall,
                cost: engine.cost(r),
                baseline_recall: base.as_ref().map(|b| b.2[i]),
                baseline_latency_s: base.as_ref().map(|b| b.3[i]),
            }
        })
        .collect();
    let speedup = base.as_ref().map(|b| {
        let ratios: Vec<f64> = b
            .3
            .iter()
            .zip(&run.latencies)
            .filter(|(_, e)| **e > 0.0)
            .map(|(b, e)| b / e)
            .collect();
        ratios.iter().sum::<f64>() / ratios.len().max(1) as f64
    });
    Ok(EvalReport {
        name: name.to_string(),
        queries: rows,
        engine: engine_agg,
        baseline_name: base.as_ref().map(|b| b.0.clone()),
        baseline: base.map(|b| b.1),
        speedup,
    })
}

impl EvalReport {
    /// One CSV row per query.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "query",
            "recall",
            "latency_s",
            "plan",
            "converged",
            "empty_truth",
            "met_target",
            "cost",
            "baseline_recall",
            "baseline_latency_s",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for q in &self.queries {
            w.write_record([
                q.query.to_string(),
                q.recall.to_string(),
                q.latency_s.to_string(),
                q.plan.clone(),
                q.converged.to_string(),
                q.empty_truth.to_string(),
                q.met_target.to_string(),
                q.cost.to_string(),
                opt(q.baseline_recall),
                opt(q.baseline_latency_s),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plan choice counts, in first-seen order.
    pub fn plan_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for q in &self.queries {
            match out.iter_mut().find(|(p, _)| *p == q.plan) {
                Some(e) => e.1 += 1,
                None => out.push((q.plan.clone(), 1)),
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, name: &str, a: &Aggregate| {
            let _ = writeln!(
                s,
                "{name}: recall {:.4} (target met {:.1}%)  qps {:.1}  p50 {:.3}ms  p95 {:.3}ms  p99 {:.3}ms  wall {:.3}s",
                a.mean_recall,
                a.target_met_fraction * 100.0,
                a.qps,
                a.p50_s * 1e3,
                a.p95_s * 1e3,
                a.p99_s * 1e3,
                a.total_wall_s
            );
        };
        let _ = writeln!(s, "queries: {}", self.queries.len());
        line(&mut s, &self.name, &self.engine);
        if let (Some(n), Some(b)) = (&self.baseline_name, &self.baseline) {
            line(&mut s, &format!("baseline {n}"), b);
        }
        if let Some(x) = self.speedup {
            let _ = writeln!(s, "speedup over baseline: {x:.2}x");
        }
        let plans: Vec<String> = self.plan_counts().into_iter().map(|(p, c)| format!("{p}={c}")).collect();
        let _ = writeln!(s, "plans: {}", plans.join(" "));
        s
    }
}

#[cfg(test)]
mod tests;
