//! Self-supervised labels: random queries are executed under every grid
//! configuration and labeled with the cheapest one that meets the query's
//! recall target.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ColumnParams, ConfigGrid, PlanChoice, StaticConfig, SubqueryParams};
use crate::error::{Error, Result};
use crate::exec::{assemble, exec_sequential, recall_at_k, run_subquery, Engine, SubqueryStats};
use crate::features::FeatureLayout;
use crate::store::{HybridQuery, Predicate, ScalarKind, Table};

/// One executable configuration of a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Configuration {
    Sequential,
    Decomposed(SubqueryParams),
    Single(usize, ColumnParams),
}

impl Configuration {
    pub fn plan(&self) -> PlanChoice {
        match self {
            Configuration::Sequential => PlanChoice::SequentialScan,
            Configuration::Decomposed(_) => PlanChoice::DecomposedIndexScan,
            Configuration::Single(i, _) => PlanChoice::SingleIndexScan(*i),
        }
    }

    /// Parameters in the per-column form the executor takes.
    pub fn params(&self, num_columns: usize) -> Option<SubqueryParams> {
        match self {
            Configuration::Sequential => None,
            Configuration::Decomposed(p) => Some(p.clone()),
            Configuration::Single(_, p) => Some(SubqueryParams::uniform(num_columns, *p)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub config: Configuration,
    pub recall: f64,
    /// Deterministic work units from the engine's cost model.
    pub cost: f64,
    pub latency_us: f64,
}

/// What "fastest" means when picking a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMetric {
    /// Cost-model work units; reproducible across runs and machines.
    Cost,
    /// Wall-clock median of 3 runs after one warm-up, measured serially.
    Latency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelOptions {
    pub grid: ConfigGrid,
    pub k_values: Vec<usize>,
    pub target_recalls: Vec<f64>,
    /// Prefer configurations reaching `target + margin` when one exists.
    pub recall_margin: f64,
    pub metric: LabelMetric,
    pub max_predicates: usize,
    /// Probability that a sampled query puts all weight on one column.
    pub skew_probability: f64,
    /// Query-vector noise relative to the sampled row's RMS component.
    pub vector_noise: f64,
    /// Worker threads for cost-labeled runs; 0 uses all cores.
    pub threads: usize,
}

impl Default for LabelOptions {
    fn default() -> Self {
        LabelOptions {
            grid: ConfigGrid::default(),
            k_values: vec![10],
            target_recalls: vec![0.8, 0.9, 0.95, 0.99],
            recall_margin: 0.0,
            metric: LabelMetric::Cost,
            max_predicates: 2,
            skew_probability: 0.25,
            vector_noise: 0.1,
            threads: 0,
        }
    }
}

impl LabelOptions {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::InvalidConfig("k_values must be non-empty and positive".into()));
        }
        if self.target_recalls.is_empty() || self.target_recalls.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::InvalidConfig("target recalls must lie in (0, 1]".into()));
        }
        if !(self.recall_margin >= 0.0) || !(0.0..=1.0).contains(&self.skew_probability) || !(self.vector_noise >= 0.0)
        {
            return Err(Error::InvalidConfig("margin, skew probability or noise out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: HybridQuery,
    pub features: Vec<f64>,
    /// Every executed configuration; `Sequential` first, then decomposed grid
    /// points, then single-index grid points column by column.
    pub outcomes: Vec<ConfigOutcome>,
    /// Index of the label in `outcomes`.
    pub label: usize,
    /// Label restricted to each plan class, indexed by class.
    pub class_best: Vec<usize>,
}

impl TrainingExample {
    pub fn label_outcome(&self) -> &ConfigOutcome {
        &self.outcomes[self.label]
    }

    pub fn label_plan(&self) -> PlanChoice {
        self.label_outcome().config.plan()
    }

    pub fn label_params(&self) -> Option<SubqueryParams> {
        self.label_outcome().config.params(self.query.vectors.len())
    }

    pub fn best_for(&self, plan: PlanChoice) -> &ConfigOutcome {
        &self.outcomes[self.class_best[plan.class_index()]]
    }
}

/// Picks the cheapest outcome with recall at least `target + margin`, else at
/// least `target`, else the highest recall. Ties go to the earliest outcome.
pub fn select_label(
    outcomes: &[ConfigOutcome],
    target: f64,
    margin: f64,
    metric: LabelMetric,
    keep: impl Fn(&Configuration) -> bool,
) -> Option<usize> {
    let value = |o: &ConfigOutcome| match metric {
        LabelMetric::Cost => o.cost,
        LabelMetric::Latency => o.latency_us,
    };
    let kept: Vec<usize> = (0..outcomes.len()).filter(|&i| keep(&outcomes[i].config)).collect();
    for bar in [(target + margin).min(1.0), target] {
        let best = kept
            .iter()
            .copied()
            .filter(|&i| outcomes[i].recall >= bar - 1e-12)
            .min_by(|&a, &b| value(&outcomes[a]).total_cmp(&value(&outcomes[b])).then(a.cmp(&b)));
        if best.is_some() {
            return best;
        }
    }
    kept.into_iter().min_by(|&a, &b| {
        outcomes[b]
            .recall
            .total_cmp(&outcomes[a].recall)
            .then(value(&outcomes[a]).total_cmp(&value(&outcomes[b])))
            .then(a.cmp(&b))
    })
}

fn check_ready(engine: &Engine) -> Result<()> {
    engine.index_refs()?;
    if engine.stats().is_none() {
        return Err(Error::EngineNotReady("statistics are not built".into()));
    }
    if engine.encoder().is_none() {
        return Err(Error::EngineNotReady("encoder is not trained".into()));
    }
    Ok(())
}

/// Random queries anchored on table rows: perturbed row vectors, random
/// weights (sometimes fully skewed) and up to `max_predicates` predicates of
/// widely varying selectivity.
pub fn sample_queries(table: &Table, count: usize, opts: &LabelOptions, seed: u64) -> Result<Vec<HybridQuery>> {
    opts.validate()?;
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let schema = table.schema();
    let n = schema.num_vector_columns();
    let m = schema.num_scalar_columns();
    let sorted: Vec<Option<Vec<f64>>> = (0..m)
        .map(|j| {
            table.numeric_column(j).map(|v| {
                let mut s = v.to_vec();
                s.sort_by(f64::total_cmp);
                s
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let row = rng.random_range(0..table.len());
        let vectors: Vec<Vec<f32>> = (0..n)
            .map(|c| {
                let v = table.vector(c, row);
                let rms = (v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
                let scale = opts.vector_noise * rms;
                v.iter()
                    .map(|x| (*x as f64 + scale * std_normal.sample(&mut rng)) as f32)
                    .collect()
            })
            .collect();
        let weights: Vec<f64> = if n > 1 && rng.random_bool(opts.skew_probability) {
            let hot = rng.random_range(0..n);
            (0..n).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
        } else {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        };
        let mut predicates = Vec::new();
        if m > 0 {
            let count = rng.random_range(0..=opts.max_predicates.min(m));
            let mut cols: Vec<usize> = (0..m).collect();
            for _ in 0..count {
                let j = cols.swap_remove(rng.random_range(0..cols.len()));
                let name = schema.scalar_columns[j].name.clone();
                match schema.scalar_columns[j].kind {
                    ScalarKind::Categorical => {
                        let (dict, codes) = table.categorical_column(j).expect("categorical column");
                        let code = if rng.random_bool(0.5) {
                            codes[rng.random_range(0..codes.len())] as usize
                        } else {
                            rng.random_range(0..dict.len())
                        };
                        predicates.push(Predicate::eq(name, dict[code].as_str()));
                    }
                    ScalarKind::Numeric => {
                        let s = sorted[j].as_ref().expect("numeric column");
                        let len = s.len();
                        let frac = 10f64.powf(rng.random_range(-3.3..0.0));
                        let at = |q: f64| s[((q * len as f64) as usize).min(len - 1)];
                        predicates.push(match rng.random_range(0..4) {
                            0 => Predicate::le(name, at(frac)),
                            1 => Predicate::ge(name, at(1.0 - frac)),
                            _ => {
                                let a = rng.random_range(0.0..(1.0 - frac).max(f64::MIN_POSITIVE));
                                Predicate::between(name, at(a), at(a + frac))
                            }
                        });
                    }
                }
            }
        }
        out.push(HybridQuery {
            predicates,
            vectors,
            weights,
            k: opts.k_values[rng.random_range(0..opts.k_values.len())],
            target_recall: opts.target_recalls[rng.random_range(0..opts.target_recalls.len())],
        });
    }
    Ok(out)
}

/// Every configuration the grid induces for `query`, in label order: the
/// same order as [`StaticConfig::all`].
pub fn enumerate_configurations(grid: &ConfigGrid, query: &HybridQuery, table_rows: usize) -> Vec<Configuration> {
    let n = query.vectors.len();
    StaticConfig::all(grid, n)
        .into_iter()
        .map(|s| match s.params(query, table_rows).expect("grid points are set") {
            None => Configuration::Sequential,
            Some(p) => match s.plan {
                PlanChoice::SingleIndexScan(i) => Configuration::Single(i, p.columns[i]),
                _ => Configuration::Decomposed(p),
            },
        })
        .collect()
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn timed_latency(engine: &Engine, query: &HybridQuery, config: &Configuration) -> Result<f64> {
    let n = query.vectors.len();
    let params = config.params(n);
    let mut runs = Vec::with_capacity(3);
    for r in 0..4 {
        let start = Instant::now();
        engine.execute_plan(query, config.plan(), params.as_ref())?;
        if r > 0 {
            runs.push(start.elapsed());
        }
    }
    Ok(median(runs).as_secs_f64() * 1e6)
}

fn label_one(engine: &Engine, query: &HybridQuery, opts: &LabelOptions) -> Result<TrainingExample> {
    let table = engine.table();
    let n = table.schema().num_vector_columns();
    let features = engine.features(query)?.values;
    let seq = exec_sequential(table, query)?;
    let truth = seq.ids();
    let configs = enumerate_configurations(&opts.grid, query, table.len());

    let indexes = engine.index_refs()?;
    let filter = table.bind(&query.predicates)?;
    let mut cache: HashMap<(usize, ColumnParams), (Vec<u64>, SubqueryStats)> = HashMap::new();
    let mut fetch = |i: usize, p: &ColumnParams| {
        cache
            .entry((i, *p))
            .or_insert_with(|| run_subquery(table, &filter, indexes[i], i, query, p))
            .clone()
    };

    let mut outcomes = Vec::with_capacity(configs.len());
    for config in configs {
        let (plan, params, parts) = match &config {
            Configuration::Sequential => {
                outcomes.push(ConfigOutcome {
                    config,
                    recall: 1.0,
                    cost: engine.cost(&seq),
                    latency_us: seq.timings.execution.as_secs_f64() * 1e6,
                });
                continue;
            }
            Configuration::Decomposed(p) => (
                PlanChoice::DecomposedIndexScan,
                p.clone(),
                (0..n).map(|i| fetch(i, &p.columns[i])).collect::<Vec<_>>(),
            ),
            Configuration::Single(i, p) => (
                PlanChoice::SingleIndexScan(*i),
                SubqueryParams::uniform(n, *p),
                vec![fetch(*i, p)],
            ),
        };
        let refs: Vec<(&[u64], SubqueryStats)> = parts.iter().map(|(ids, s)| (ids.as_slice(), *s)).collect();
        let rs = assemble(table, query, plan, params, &refs);
        outcomes.push(ConfigOutcome {
            config,
            recall: recall_at_k(&rs.ids(), &truth),
            cost: engine.cost(&rs),
            latency_us: (rs.timings.execution + rs.timings.merge).as_secs_f64() * 1e6,
        });
    }
    if opts.metric == LabelMetric::Latency {
        for o in &mut outcomes {
            o.latency_us = timed_latency(engine, query, &o.config)?;
        }
    }

    let pick = |keep: &dyn Fn(&Configuration) -> bool| {
        select_label(&outcomes, query.target_recall, opts.recall_margin, opts.metric, keep)
            .expect("sequential configuration always present")
    };
    let label = pick(&|_| true);
    let class_best = (0..PlanChoice::num_classes(n))
        .map(|c| pick(&|cfg| cfg.plan().class_index() == c))
        .collect();
    Ok(TrainingExample {
        query: query.clone(),
        features,
        outcomes,
        label,
        class_best,
    })
}

/// Labels the given queries. Cost-labeled runs spread queries over threads;
/// latency-labeled runs stay serial so timings do not contend.
pub fn label_queries(engine: &Engine, queries: &[HybridQuery], opts: &LabelOptions) -> Result<Vec<TrainingExample>> {
    opts.validate()?;
    check_ready(engine)?;
    let threads = match (opts.metric, opts.threads) {
        (LabelMetric::Latency, _) => 1,
        (_, 0) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        (_, t) => t,
    }
    .min(queries.len().max(1));
    if threads <= 1 {
        return queries.iter().map(|q| label_one(engine, q, opts)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TrainingExample>>>> = Mutex::new(queries.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = queries.get(i) else { break };
                let r = label_one(engine, q, opts);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every query labeled"))
        .collect()
}

/// Samples `num_queries` queries with `seed` and labels them.
pub fn generate_training_data(
    engine: &Engine,
    num_queries: usize,
    opts: &LabelOptions,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    check_ready(engine)?;
    let queries = sample_queries(engine.table(), num_queries, opts, seed)?;
    label_queries(engine, &queries, opts)
}

/// One row per example: feature slots, then the label's plan, parameters
/// and measurements.
pub fn write_examples_csv<W: Write>(writer: W, layout: &FeatureLayout, examples: &[TrainingExample]) -> Result<()> {
    let n = layout.num_vector_columns();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = layout.slot_names().to_vec();
    header.push("label_plan".into());
    for i in 0..n {
        for f in ["k", "ef_search", "iterative_scan", "max_scan_tuples"] {
            header.push(format!("{f}_{i}"));
        }
    }
    header.extend(
        ["label_recall", "label_cost", "label_latency_us", "sequential_cost", "configurations"].map(String::from),
    );
    w.write_record(&header)?;
    for e in examples {
        if e.features.len() != layout.width() {
            return Err(Error::LayoutMismatch(format!(
                "example has {} features, layout has {}",
                e.features.len(),
                layout.width()
            )));
        }
        let mut rec: Vec<String> = e.features.iter().map(|v| v.to_string()).collect();
        let label = e.label_outcome();
        rec.push(label.config.plan().to_string());
        let params = e.label_params();
        for i in 0..n {
            match &params {
                Some(p) => {
                    let c = p.columns[i];
                    rec.extend([
                        c.k.to_string(),
                        c.ef_search.to_string(),
                        c.iterative_scan.as_str().to_string(),
                        c.max_scan_tuples.to_string(),
                    ]);
                }
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        rec.push(label.recall.to_string());
        rec.push(label.cost.to_string());
        rec.push(label.latency_us.to_string());
        rec.push(e.outcomes[0].cost.to_string());
        rec.push(e.outcomes.len().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
