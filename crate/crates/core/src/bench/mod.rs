//! Desk-scale benchmark generation: synthetic vector tables, scalar columns
//! correlated with vector position, selectivity-stratified query workloads
//! and exact ground truth.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{exec_sequential, read_queries, write_queries, QueryRecord, ScoredId};
use crate::features::preprobe;
use crate::index::GraphIndex;
use crate::stats::{HistogramKind, StatsCatalog};
use crate::store::{
    HybridQuery, Metric, Predicate, ScalarColumnDef, ScalarKind, ScalarValue, Table, TableSchema, Tuple,
    VectorColumnDef,
};

pub const KMEANS_ITERATIONS: usize = 25;
pub const MAX_HYPERPLANES: usize = 16;

fn l2(a: &[f32], b: &[f32]) -> f64 {
    Metric::L2.distance(a, b)
}

fn check_vectors(vectors: &[Vec<f32>]) -> Result<usize> {
    let dim = vectors.first().ok_or(Error::EmptyInput)?.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }
    Ok(dim)
}

/// Lloyd's k-means with centroids initialized from distinct sampled points.
/// Returns the centroids and each vector's cluster.
pub fn kmeans(vectors: &[Vec<f32>], k: usize, iterations: usize, seed: u64) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    let dim = check_vectors(vectors)?;
    if k == 0 {
        return Err(Error::InvalidConfig("num_clusters must be at least 1".into()));
    }
    let k = k.min(vectors.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f32>> = index::sample(&mut rng, vectors.len(), k)
        .into_iter()
        .map(|i| vectors[i].clone())
        .collect();
    let mut assign = vec![0; vectors.len()];
    for it in 0..=iterations {
        let mut changed = false;
        for (a, v) in assign.iter_mut().zip(vectors) {
            let best = (0..k)
                .map(|c| (c, l2(v, &centroids[c])))
                .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
                .0;
            changed |= *a != best;
            *a = best;
        }
        if it == iterations || (it > 0 && !changed) {
            break;
        }
        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, v) in assign.iter().zip(vectors) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += *x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| (s / counts[c] as f64) as f32).collect();
            }
        }
    }
    Ok((centroids, assign))
}

/// Categorical labels `c<i>` from k-means cluster membership.
pub fn gen_cluster_labels(vectors: &[Vec<f32>], num_clusters: usize, seed: u64) -> Result<Vec<String>> {
    let (_, assign) = kmeans(vectors, num_clusters, KMEANS_ITERATIONS, seed)?;
    Ok(assign.into_iter().map(|c| format!("c{c}")).collect())
}

/// Bit-string labels from random hyperplanes through the data centroid.
pub fn gen_hyperplane_labels(vectors: &[Vec<f32>], num_planes: usize, seed: u64) -> Result<Vec<String>> {
    if num_planes == 0 || num_planes > MAX_HYPERPLANES {
        return Err(Error::TooManyPlanes(num_planes));
    }
    let dim = check_vectors(vectors)?;
    let mut centroid = vec![0f64; dim];
    for v in vectors {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += *x as f64 / vectors.len() as f64;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let planes: Vec<(Vec<f64>, f64)> = (0..num_planes)
        .map(|_| {
            let n: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            let offset = n.iter().zip(&centroid).map(|(a, b)| a * b).sum();
            (n, offset)
        })
        .collect();
    Ok(vectors
        .iter()
        .map(|v| {
            planes
                .iter()
                .map(|(n, off)| {
                    let dot: f64 = n.iter().zip(v).map(|(a, x)| a * *x as f64).sum();
                    if dot >= *off {
                        '1'
                    } else {
                        '0'
                    }
                })
                .collect()
        })
        .collect())
}

/// Sum of L2 distances to `num_refs` reference points drawn uniformly inside
/// the per-dimension data ranges.
pub fn gen_distance_sum(vectors: &[Vec<f32>], num_refs: usize, seed: u64) -> Result<Vec<f64>> {
    let dim = check_vectors(vectors)?;
    if num_refs == 0 {
        return Err(Error::InvalidConfig("num_refs must be at least 1".into()));
    }
    let ranges = dim_ranges(vectors, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<Vec<f32>> = (0..num_refs).map(|_| sample_in(&ranges, &mut rng)).collect();
    Ok(vectors.iter().map(|v| refs.iter().map(|r| l2(v, r)).sum()).collect())
}

fn dim_ranges(vectors: &[Vec<f32>], dim: usize) -> Vec<(f32, f32)> {
    let mut r = vec![(f32::INFINITY, f32::NEG_INFINITY); dim];
    for v in vectors {
        for (r, x) in r.iter_mut().zip(v) {
            r.0 = r.0.min(*x);
            r.1 = r.1.max(*x);
        }
    }
    r
}

fn sample_in(ranges: &[(f32, f32)], rng: &mut ChaCha8Rng) -> Vec<f32> {
    ranges
        .iter()
        .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect()
}

/// Gaussian blobs: `clusters` centers uniform in `[-scale, scale]^dim`, unit
/// spread times `spread`. Returns vectors and their blob ids.
pub fn gen_gaussian_clusters(
    rows: usize,
    dim: usize,
    clusters: usize,
    scale: f64,
    spread: f64,
    seed: u64,
) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters.max(1))
        .map(|_| (0..dim).map(|_| rng.random_range(-scale..=scale)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).expect("finite spread");
    let mut ids = Vec::with_capacity(rows);
    let vectors = (0..rows)
        .map(|_| {
            let c = rng.random_range(0..centers.len());
            ids.push(c);
            centers[c].iter().map(|x| (x + noise.sample(&mut rng)) as f32).collect()
        })
        .collect();
    (vectors, ids)
}

/// Shape of a synthetic table. Every vector column draws row `r` from the
/// same latent blob, so columns are correlated with each other and with the
/// derived scalar columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableSpec {
    pub rows: usize,
    pub dims: Vec<usize>,
    pub blobs: usize,
    pub spread: f64,
    /// k-means label column `cluster` over the first vector column (0 = none).
    pub cluster_labels: usize,
    /// Hyperplane label column `region` over the first vector column (0 = none).
    pub hyperplanes: usize,
    /// Distance-sum column `dist` over the last vector column (0 = none).
    pub distance_refs: usize,
    /// Independent uniform numeric columns `u0, u1, ...` on `[0, 1)`.
    pub uniform_columns: usize,
    pub seed: u64,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            rows: 10_000,
            dims: vec![32, 16],
            blobs: 16,
            spread: 1.0,
            cluster_labels: 10,
            hyperplanes: 3,
            distance_refs: 4,
            uniform_columns: 1,
            seed: 7,
        }
    }
}

pub fn gen_table(spec: &TableSpec) -> Result<Table> {
    if spec.rows == 0 || spec.dims.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blob: Vec<usize> = (0..spec.rows).map(|_| rng.random_range(0..spec.blobs.max(1))).collect();
    let noise = Normal::new(0.0, spec.spread).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let columns: Vec<Vec<Vec<f32>>> = spec
        .dims
        .iter()
        .map(|&d| {
            let centers: Vec<Vec<f64>> = (0..spec.blobs.max(1))
                .map(|_| (0..d).map(|_| rng.random_range(-5.0..=5.0)).collect())
                .collect();
            blob.iter()
                .map(|&b| centers[b].iter().map(|x| (x + noise.sample(&mut rng)) as f32).collect())
                .collect()
        })
        .collect();

    let mut scalar_defs = Vec::new();
    let mut scalar_cols: Vec<Vec<ScalarValue>> = Vec::new();
    let mut add = |name: &str, kind, vals: Vec<ScalarValue>| {
        scalar_defs.push(ScalarColumnDef { name: name.into(), kind });
        scalar_cols.push(vals);
    };
    let sub = |i: u64| spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(i);
    if spec.cluster_labels > 0 {
        let l = gen_cluster_labels(&columns[0], spec.cluster_labels, sub(1))?;
        add("cluster", ScalarKind::Categorical, l.into_iter().map(ScalarValue::Cat).collect());
    }
    if spec.hyperplanes > 0 {
        let l = gen_hyperplane_labels(&columns[0], spec.hyperplanes, sub(2))?;
        add("region", ScalarKind::Categorical, l.into_iter().map(ScalarValue::Cat).collect());
    }
    if spec.distance_refs > 0 {
        let d = gen_distance_sum(columns.last().unwrap(), spec.distance_refs, sub(3))?;
        add("dist", ScalarKind::Numeric, d.into_iter().map(ScalarValue::Num).collect());
    }
    for u in 0..spec.uniform_columns {
        let vals = (0..spec.rows).map(|_| ScalarValue::Num(rng.random::<f64>())).collect();
        add(&format!("u{u}"), ScalarKind::Numeric, vals);
    }

    let schema = TableSchema::new(
        spec.dims
            .iter()
            .enumerate()
            .map(|(i, &d)| VectorColumnDef {
                name: format!("v{i}"),
                dim: d,
                metric: Metric::L2,
            })
            .collect(),
        scalar_defs,
    );
    let mut table = Table::new(schema)?;
    let tuples = (0..spec.rows)
        .map(|r| {
            Tuple::new(
                r as u64,
                columns.iter().map(|c| c[r].clone()).collect(),
                scalar_cols.iter().map(|c| c[r].clone()).collect(),
            )
        })
        .collect();
    table.insert_batch(tuples)?;
    table.clear_pending_updates();
    Ok(table)
}

/// How query weights are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightMode {
    /// Two columns: `w_1 ~ U[0, 1]`, `w_2 = 1 - w_1`. Other column counts
    /// draw each weight from `U[0, 1]` and normalize.
    Complementary,
    /// `w_1` drawn from the listed values, `w_2 = 1 - w_1` (two columns).
    FirstWeightFrom(Vec<f64>),
    Fixed(Vec<f64>),
}

/// Where query vectors come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum VectorSampling {
    /// Uniform within each dimension's data range.
    UniformRange,
    /// A random row's vectors plus Gaussian noise of the given standard
    /// deviation.
    NearRow(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub num_queries: usize,
    pub k: usize,
    pub min_predicates: usize,
    pub max_predicates: usize,
    /// Number of equal-width selectivity strata over [0, 1].
    pub strata: usize,
    /// Most queries accepted per stratum.
    pub cap: usize,
    /// Consecutive rejected candidates tolerated before giving up.
    pub retries_per_slot: usize,
    pub weights: WeightMode,
    pub vectors: VectorSampling,
    pub target_recall: f64,
    /// Restrict predicates to these scalar columns (all when empty).
    pub predicate_columns: Vec<String>,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            num_queries: 200,
            k: 10,
            min_predicates: 1,
            max_predicates: 2,
            strata: 100,
            cap: 20,
            retries_per_slot: 200,
            weights: WeightMode::Complementary,
            vectors: VectorSampling::UniformRange,
            target_recall: 0.9,
            predicate_columns: Vec::new(),
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self, schema: &TableSchema) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.strata == 0 || self.cap == 0 {
            return bad("strata and cap must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.min_predicates > self.max_predicates {
            return bad("min_predicates exceeds max_predicates");
        }
        if self.num_queries > self.strata * self.cap {
            return bad("num_queries exceeds strata * cap");
        }
        if !(self.target_recall > 0.0 && self.target_recall <= 1.0) {
            return bad("target_recall must lie in (0, 1]");
        }
        for c in &self.predicate_columns {
            schema.scalar_column(c)?;
        }
        let n = schema.num_vector_columns();
        match &self.weights {
            WeightMode::FirstWeightFrom(v) if n != 2 || v.is_empty() || v.iter().any(|w| !(0.0..=1.0).contains(w)) => {
                bad("FirstWeightFrom needs two vector columns and weights in [0, 1]")
            }
            WeightMode::Fixed(w) if w.len() != n => bad("fixed weights must match the vector columns"),
            _ => Ok(()),
        }
    }

    pub fn stratum_of(&self, value: f64) -> usize {
        ((value * self.strata as f64) as usize).min(self.strata - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub queries: Vec<HybridQuery>,
    /// The stratified quantity per query (exact selectivity by default).
    pub selectivity: Vec<f64>,
    pub stratum: Vec<usize>,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn stratum_counts(&self, strata: usize) -> Vec<usize> {
        let mut c = vec![0; strata];
        for &s in &self.stratum {
            c[s] += 1;
        }
        c
    }
}

struct Sampler<'a> {
    table: &'a Table,
    spec: &'a WorkloadSpec,
    columns: Vec<usize>,
    domains: Vec<Domain>,
    ranges: Vec<Vec<(f32, f32)>>,
}

enum Domain {
    Numeric(f64, f64),
    Categorical(Vec<String>),
    Empty,
}

impl<'a> Sampler<'a> {
    fn new(table: &'a Table, stats: &StatsCatalog, spec: &'a WorkloadSpec) -> Result<Self> {
        let schema = table.schema();
        let columns = if spec.predicate_columns.is_empty() {
            (0..schema.num_scalar_columns()).collect()
        } else {
            spec.predicate_columns
                .iter()
                .map(|c| schema.scalar_column(c))
                .collect::<Result<_>>()?
        };
        let domains = schema
            .scalar_columns
            .iter()
            .map(|c| {
                let h = stats.get(&c.name).ok_or_else(|| Error::MissingHistogram(c.name.clone()))?;
                Ok(match &h.kind {
                    HistogramKind::Categorical { freq } if !freq.is_empty() => {
                        Domain::Categorical(freq.keys().cloned().collect())
                    }
                    HistogramKind::Numeric { .. } => match h.range() {
                        Some((lo, hi)) => Domain::Numeric(lo, hi),
                        None => Domain::Empty,
                    },
                    _ => Domain::Empty,
                })
            })
            .collect::<Result<_>>()?;
        let ranges = (0..schema.num_vector_columns())
            .map(|c| {
                let dim = schema.vector_columns[c].dim;
                let data = table.column_vectors(c);
                let mut r = vec![(f32::INFINITY, f32::NEG_INFINITY); dim];
                for v in data.chunks_exact(dim) {
                    for (r, x) in r.iter_mut().zip(v) {
                        r.0 = r.0.min(*x);
                        r.1 = r.1.max(*x);
                    }
                }
                r
            })
            .collect();
        Ok(Sampler {
            table,
            spec,
            columns,
            domains,
            ranges,
        })
    }

    fn weights(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.table.schema().num_vector_columns();
        match &self.spec.weights {
            WeightMode::Complementary if n == 2 => {
                let w1: f64 = rng.random();
                vec![w1, 1.0 - w1]
            }
            WeightMode::Complementary => {
                let w: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                let s: f64 = w.iter().sum();
                if s > 0.0 {
                    w.into_iter().map(|x| x / s).collect()
                } else {
                    vec![1.0 / n as f64; n]
                }
            }
            WeightMode::FirstWeightFrom(v) => {
                let w1 = v[rng.random_range(0..v.len())];
                vec![w1, 1.0 - w1]
            }
            WeightMode::Fixed(w) => w.clone(),
        }
    }

    fn predicates(&self, rng: &mut ChaCha8Rng) -> Vec<Predicate> {
        let usable: Vec<usize> = self
            .columns
            .iter()
            .copied()
            .filter(|&j| !matches!(self.domains[j], Domain::Empty))
            .collect();
        let hi = self.spec.max_predicates.min(usable.len());
        let lo = self.spec.min_predicates.min(hi);
        let count = rng.random_range(lo..=hi);
        let names = &self.table.schema().scalar_columns;
        index::sample(rng, usable.len(), count)
            .into_iter()
            .map(|i| {
                let j = usable[i];
                let name = names[j].name.clone();
                match &self.domains[j] {
                    Domain::Categorical(cats) => {
                        Predicate::eq(name, cats[rng.random_range(0..cats.len())].as_str())
                    }
                    Domain::Numeric(lo, hi) => {
                        let mut draw = || if hi > lo { rng.random_range(*lo..=*hi) } else { *lo };
                        let (a, b) = (draw(), draw());
                        match rng.random_range(0..3) {
                            0 => Predicate::lt(name, a),
                            1 => Predicate::gt(name, a),
                            _ => Predicate::between(name, a.min(b), a.max(b)),
                        }
                    }
                    Domain::Empty => unreachable!("filtered above"),
                }
            })
            .collect()
    }

    fn vectors(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
        match self.spec.vectors {
            VectorSampling::UniformRange => self.ranges.iter().map(|r| sample_in(r, rng)).collect(),
            VectorSampling::NearRow(sigma) => {
                let row = rng.random_range(0..self.table.len());
                let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
                (0..self.ranges.len())
                    .map(|c| {
                        self.table
                            .vector(c, row)
                            .iter()
                            .map(|x| (*x as f64 + noise.sample(rng)) as f32)
                            .collect()
                    })
                    .collect()
            }
        }
    }

    fn candidate(&self, rng: &mut ChaCha8Rng) -> HybridQuery {
        let weights = self.weights(rng);
        let predicates = self.predicates(rng);
        HybridQuery {
            vectors: self.vectors(rng),
            predicates,
            weights,
            k: self.spec.k,
            target_recall: self.spec.target_recall,
        }
    }
}

fn stratified(
    table: &Table,
    stats: &StatsCatalog,
    spec: &WorkloadSpec,
    mut measure: impl FnMut(&HybridQuery) -> Result<f64>,
) -> Result<Workload> {
    spec.validate(table.schema())?;
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let sampler = Sampler::new(table, stats, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut counts = vec![0usize; spec.strata];
    let mut out = Workload {
        queries: Vec::with_capacity(spec.num_queries),
        selectivity: Vec::with_capacity(spec.num_queries),
        stratum: Vec::with_capacity(spec.num_queries),
    };
    let mut misses = 0;
    while out.queries.len() < spec.num_queries {
        let q = sampler.candidate(&mut rng);
        let value = measure(&q)?;
        let s = spec.stratum_of(value);
        if counts[s] < spec.cap {
            counts[s] += 1;
            out.queries.push(q);
            out.selectivity.push(value);
            out.stratum.push(s);
            misses = 0;
        } else {
            misses += 1;
            if misses >= spec.retries_per_slot {
                return Err(Error::StratumInfeasible {
                    emitted: out.queries.len(),
                    unfilled: (0..spec.strata).filter(|&s| counts[s] < spec.cap).collect(),
                });
            }
        }
    }
    Ok(out)
}

/// Samples queries and keeps each one only while the stratum of its exact
/// selectivity (full scan) is below the cap.
pub fn gen_queries(table: &Table, stats: &StatsCatalog, spec: &WorkloadSpec) -> Result<Workload> {
    let rows = table.len() as f64;
    stratified(table, stats, spec, |q| Ok(table.bind(&q.predicates)?.count(table) as f64 / rows))
}

/// Like [`gen_queries`] but stratifies on the mean local satisfaction rate
/// of an unfiltered probe of `probe_k` neighbors per vector column.
pub fn gen_queries_by_local_rate(
    table: &Table,
    stats: &StatsCatalog,
    indexes: &[&GraphIndex],
    probe_k: usize,
    spec: &WorkloadSpec,
) -> Result<Workload> {
    stratified(table, stats, spec, |q| {
        let p = preprobe(table, indexes, q, probe_k, probe_k)?;
        Ok(p.local_rates.iter().sum::<f64>() / p.local_rates.len().max(1) as f64)
    })
}

pub fn write_workload(path: &Path, workload: &Workload) -> Result<()> {
    let records: Vec<QueryRecord> = workload
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut r = QueryRecord::new(i as u64, q);
            r.tag = Some(format!("stratum={}", workload.stratum[i]));
            r.selectivity = Some(workload.selectivity[i]);
            r
        })
        .collect();
    write_queries(path, &records, true)
}

/// Reads a workload file; queries without a recorded selectivity or stratum
/// get NaN and stratum 0.
pub fn read_workload(path: &Path) -> Result<Workload> {
    let records = read_queries(path)?;
    let mut w = Workload {
        queries: Vec::with_capacity(records.len()),
        selectivity: Vec::with_capacity(records.len()),
        stratum: Vec::with_capacity(records.len()),
    };
    for r in &records {
        w.queries.push(HybridQuery::try_from(r)?);
        w.selectivity.push(r.selectivity.unwrap_or(f64::NAN));
        w.stratum.push(
            r.tag
                .as_deref()
                .and_then(|t| t.strip_prefix("stratum="))
                .and_then(|s| s.parse().ok())
                .unwrap_or(0),
        );
    }
    Ok(w)
}

/// Exact top-k per query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rows: Vec<Vec<ScoredId>>,
}

impl GroundTruth {
    pub fn ids(&self, query: usize) -> Vec<u64> {
        self.rows[query].iter().map(|r| r.id).collect()
    }

    /// CSV with columns `query,rank,id,score`; a query without results is a
    /// single row with empty rank, id and score.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["query", "rank", "id", "score"])?;
        for (q, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                w.write_record([q.to_string().as_str(), "", "", ""])?;
            }
            for (rank, r) in row.iter().enumerate() {
                w.write_record([q.to_string(), rank.to_string(), r.id.to_string(), format!("{:?}", r.score)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut rows: Vec<Vec<ScoredId>> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::format(format!("ground truth line {}: bad {what}", line + 2));
            let q: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("query"))?;
            if q >= rows.len() {
                rows.resize_with(q + 1, Vec::new);
            }
            let id = rec.get(2).unwrap_or("");
            if id.is_empty() {
                continue;
            }
            let rank: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("rank"))?;
            if rank != rows[q].len() {
                return Err(bad("rank order"));
            }
            rows[q].push(ScoredId {
                id: id.parse().map_err(|_| bad("id"))?,
                score: rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("score"))?,
            });
        }
        Ok(GroundTruth { rows })
    }
}

pub fn gen_ground_truth(table: &Table, queries: &[HybridQuery]) -> Result<GroundTruth> {
    Ok(GroundTruth {
        rows: queries
            .iter()
            .map(|q| exec_sequential(table, q).map(|rs| rs.rows))
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests;
