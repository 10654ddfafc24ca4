use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::stats::StatsCatalog;
use crate::store::Predicate;
use crate::testutil;

/// Well-separated planted blobs.
fn planted(per_blob: usize, blobs: usize, dim: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 0.5).unwrap();
    let mut vs = Vec::new();
    let mut truth = Vec::new();
    for b in 0..blobs {
        let center: Vec<f64> = (0..dim).map(|d| if d == b % dim { 20.0 * (1 + b / dim) as f64 } else { 0.0 }).collect();
        for _ in 0..per_blob {
            vs.push(center.iter().map(|c| (c + normal.sample(&mut rng)) as f32).collect());
            truth.push(b);
        }
    }
    (vs, truth)
}

/// Fraction of points whose label agrees with the majority label of their
/// planted blob.
fn purity(labels: &[String], truth: &[usize]) -> f64 {
    let mut by_blob: HashMap<usize, HashMap<&str, usize>> = HashMap::new();
    for (l, &t) in labels.iter().zip(truth) {
        *by_blob.entry(t).or_default().entry(l.as_str()).or_default() += 1;
    }
    let agree: usize = by_blob.values().map(|m| m.values().max().copied().unwrap_or(0)).sum();
    agree as f64 / labels.len() as f64
}

#[test]
fn cluster_labels_recover_planted_blobs() {
    let (vs, truth) = planted(200, 5, 8, 3);
    let labels = gen_cluster_labels(&vs, 5, 11).unwrap();
    assert!(purity(&labels, &truth) >= 0.99);
    // Distinct blobs should land in distinct clusters too.
    let distinct: std::collections::HashSet<_> = labels.iter().collect();
    assert_eq!(distinct.len(), 5);
    assert!(labels.iter().all(|l| l.starts_with('c')));
}

#[test]
fn cluster_labels_are_seeded() {
    let (vs, _) = planted(50, 4, 6, 9);
    assert_eq!(gen_cluster_labels(&vs, 4, 1).unwrap(), gen_cluster_labels(&vs, 4, 1).unwrap());
}

#[test]
fn cluster_labels_reject_empty_input() {
    assert!(matches!(gen_cluster_labels(&[], 3, 0), Err(Error::EmptyInput)));
}

#[test]
fn hyperplane_labels_have_bounded_cardinality() {
    let (vs, _) = gen_gaussian_clusters(2000, 8, 1, 0.0, 1.0, 5);
    for planes in [1, 3, 6] {
        let labels = gen_hyperplane_labels(&vs, planes, 2).unwrap();
        assert!(labels.iter().all(|l| l.len() == planes && l.chars().all(|c| c == '0' || c == '1')));
        let distinct: std::collections::HashSet<_> = labels.iter().collect();
        assert!(distinct.len() <= 1 << planes);
        // Planes through the centroid of a single blob split it roughly in half.
        if planes == 1 {
            let ones = labels.iter().filter(|l| l.as_str() == "1").count();
            assert!((600..=1400).contains(&ones), "{ones}");
        }
    }
}

#[test]
fn hyperplane_label_errors() {
    let (vs, _) = gen_gaussian_clusters(10, 4, 1, 0.0, 1.0, 5);
    assert!(matches!(gen_hyperplane_labels(&vs, 17, 0), Err(Error::TooManyPlanes(17))));
    assert!(matches!(gen_hyperplane_labels(&vs, 0, 0), Err(Error::TooManyPlanes(0))));
    assert!(matches!(gen_hyperplane_labels(&[], 2, 0), Err(Error::EmptyInput)));
    assert!(gen_hyperplane_labels(&vs, 16, 0).is_ok());
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn distance_sum_correlates_with_vector_position() {
    let (vs, _) = gen_gaussian_clusters(1000, 4, 6, 5.0, 1.0, 8);
    let refs = 3;
    let d = gen_distance_sum(&vs, refs, 4).unwrap();
    // Triangle inequality: |f(a) - f(b)| <= refs * |a - b|.
    for i in 0..200 {
        let j = (i * 7 + 13) % vs.len();
        let lhs = (d[i] - d[j]).abs();
        assert!(lhs <= refs as f64 * Metric::L2.distance(&vs[i], &vs[j]) + 1e-6);
    }
    // Nearby pairs have closer values than random pairs.
    let near: Vec<f64> = (0..vs.len())
        .map(|i| {
            let j = (0..vs.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    Metric::L2.distance(&vs[i], &vs[a]).total_cmp(&Metric::L2.distance(&vs[i], &vs[b]))
                })
                .unwrap();
            d[j]
        })
        .collect();
    assert!(pearson(&d, &near) > 0.8);
}

#[test]
fn distance_sum_validates() {
    let (vs, _) = gen_gaussian_clusters(5, 3, 1, 0.0, 1.0, 1);
    assert!(gen_distance_sum(&vs, 0, 0).is_err());
    assert!(matches!(gen_distance_sum(&[], 2, 0), Err(Error::EmptyInput)));
    let ragged = vec![vec![0.0; 3], vec![0.0; 2]];
    assert!(matches!(gen_distance_sum(&ragged, 1, 0), Err(Error::DimensionMismatch { .. })));
}

fn small_table() -> Table {
    gen_table(&TableSpec {
        rows: 3000,
        dims: vec![8, 4],
        blobs: 6,
        cluster_labels: 6,
        hyperplanes: 2,
        distance_refs: 2,
        uniform_columns: 1,
        ..TableSpec::default()
    })
    .unwrap()
}

#[test]
fn generated_table_has_expected_shape() {
    let t = small_table();
    let s = t.schema();
    assert_eq!(t.len(), 3000);
    assert_eq!(s.num_vector_columns(), 2);
    let names: Vec<&str> = s.scalar_columns.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["cluster", "region", "dist", "u0"]);
    assert!(t.pending_updates().is_empty());
    assert_eq!(small_table().column_vectors(1), t.column_vectors(1));
}

fn spec(num: usize, cap: usize) -> WorkloadSpec {
    WorkloadSpec {
        num_queries: num,
        cap,
        strata: 10,
        seed: 5,
        ..WorkloadSpec::default()
    }
}

#[test]
fn workload_respects_caps_and_strata() {
    let t = small_table();
    let stats = StatsCatalog::build(&t, 32).unwrap();
    let w = gen_queries(&t, &stats, &spec(40, 8)).unwrap();
    assert_eq!(w.len(), 40);
    let counts = w.stratum_counts(10);
    assert!(counts.iter().all(|&c| c <= 8), "{counts:?}");
    for (i, q) in w.queries.iter().enumerate() {
        // Oracle: count matches by evaluating predicates row by row.
        let exact = t
            .scan()
            .filter(|tu| crate::store::evaluate_predicates(t.schema(), tu, &q.predicates).unwrap())
            .count() as f64
            / t.len() as f64;
        assert_eq!(exact, w.selectivity[i]);
        assert_eq!(w.stratum[i], ((exact * 10.0) as usize).min(9));
        assert!((1..=2).contains(&q.predicates.len()));
        assert_eq!(q.k, 10);
        assert_eq!(q.weights[0] + q.weights[1], 1.0);
    }
}

#[test]
fn infeasible_strata_are_reported() {
    let t = small_table();
    let stats = StatsCatalog::build(&t, 32).unwrap();
    let mut s = spec(100, 10);
    s.retries_per_slot = 50;
    match gen_queries(&t, &stats, &s) {
        Err(Error::StratumInfeasible { emitted, unfilled }) => {
            assert!(emitted < 100);
            assert!(!unfilled.is_empty());
        }
        other => panic!("expected StratumInfeasible, got {other:?}"),
    }
}

#[test]
fn workload_spec_validation() {
    let t = small_table();
    let stats = StatsCatalog::build(&t, 32).unwrap();
    let mut s = spec(200, 10);
    assert!(matches!(gen_queries(&t, &stats, &s), Err(Error::InvalidConfig(_))));
    s = spec(5, 1);
    s.weights = WeightMode::Fixed(vec![1.0]);
    assert!(gen_queries(&t, &stats, &s).is_err());
    s = spec(5, 1);
    s.predicate_columns = vec!["nope".into()];
    assert!(matches!(gen_queries(&t, &stats, &s), Err(Error::UnknownColumn(_))));
}

#[test]
fn weight_modes() {
    let t = small_table();
    let stats = StatsCatalog::build(&t, 32).unwrap();
    let mut s = spec(20, 5);
    s.weights = WeightMode::FirstWeightFrom(vec![0.1, 0.5, 0.9]);
    let w = gen_queries(&t, &stats, &s).unwrap();
    for q in &w.queries {
        assert!([0.1, 0.5, 0.9].contains(&q.weights[0]));
        assert_eq!(q.weights[1], 1.0 - q.weights[0]);
    }
    s.weights = WeightMode::Fixed(vec![0.3, 0.7]);
    s.vectors = VectorSampling::NearRow(0.0);
    let w = gen_queries(&t, &stats, &s).unwrap();
    assert!(w.queries.iter().all(|q| q.weights == [0.3, 0.7]));
    // Zero noise reproduces a stored row exactly.
    let q = &w.queries[0];
    assert!((0..t.len()).any(|r| t.vector(0, r) == q.vectors[0].as_slice()));
}

#[test]
fn predicate_column_restriction() {
    let t = small_table();
    let stats = StatsCatalog::build(&t, 32).unwrap();
    // Single-label equality on six clusters lands every query in stratum 1.
    let mut s = spec(5, 5);
    s.predicate_columns = vec!["cluster".into()];
    let w = gen_queries(&t, &stats, &s).unwrap();
    assert!(w.queries.iter().all(|q| q.predicates.len() == 1 && q.predicates[0].column == "cluster"));
    assert_eq!(w.stratum, [1; 5]);
}

#[test]
fn local_rate_workload_uses_probe() {
    let mut engine = crate::exec::Engine::new(small_table(), Default::default());
    engine.build_indexes().unwrap();
    engine.build_stats().unwrap();
    let idx = engine.index_refs().unwrap();
    let w = gen_queries_by_local_rate(engine.table(), engine.stats().unwrap(), &idx, 20, &spec(20, 5)).unwrap();
    assert_eq!(w.len(), 20);
    for (q, v) in w.queries.iter().zip(&w.selectivity) {
        let p = preprobe(engine.table(), &idx, q, 20, 20).unwrap();
        assert_eq!(*v, (p.local_rates[0] + p.local_rates[1]) / 2.0);
    }
}

#[test]
fn workload_file_round_trip() {
    let t = small_table();
    let stats = StatsCatalog::build(&t, 32).unwrap();
    let w = gen_queries(&t, &stats, &spec(12, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.jsonl");
    write_workload(&path, &w).unwrap();
    assert!(crate::exec::sidecar_path(&path).exists());
    assert_eq!(read_workload(&path).unwrap(), w);
}

/// Independent brute-force top-k oracle.
fn oracle(t: &Table, q: &HybridQuery) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = t
        .scan()
        .filter(|tu| crate::store::evaluate_predicates(t.schema(), tu, &q.predicates).unwrap())
        .map(|tu| (tu.id, crate::store::composite_distance(t.schema(), &tu, q).unwrap()))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(q.k);
    all
}

#[test]
fn ground_truth_matches_oracle_and_round_trips() {
    let t = testutil::clustered_table(800, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut queries: Vec<HybridQuery> = (0..6)
        .map(|i| testutil::random_query(&t, &mut rng, vec![Predicate::lt("price", 100.0 * (i + 1) as f64)], vec![0.5, 0.5], 10))
        .collect();
    // No matches at all, and fewer matches than k.
    queries.push(testutil::random_query(&t, &mut rng, vec![Predicate::lt("price", -1.0)], vec![0.5, 0.5], 10));
    queries.push(testutil::random_query(&t, &mut rng, vec![Predicate::lt("price", 3.0)], vec![0.5, 0.5], 10));
    let gt = gen_ground_truth(&t, &queries).unwrap();
    for (i, q) in queries.iter().enumerate() {
        let want = oracle(&t, q);
        let got: Vec<(u64, f64)> = gt.rows[i].iter().map(|r| (r.id, r.score)).collect();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() <= 1e-9 * w.1.abs().max(1.0));
        }
    }
    assert!(gt.rows[6].is_empty());
    assert!(gt.rows[7].len() < 10);

    let mut buf = Vec::new();
    gt.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.lines().any(|l| l == "6,,,"));
    assert_eq!(GroundTruth::read_csv(buf.as_slice()).unwrap(), gt);
}

#[test]
fn ground_truth_trailing_empty_query_survives() {
    let gt = GroundTruth {
        rows: vec![vec![ScoredId { id: 3, score: 0.5 }], vec![]],
    };
    let mut buf = Vec::new();
    gt.write_csv(&mut buf).unwrap();
    assert_eq!(GroundTruth::read_csv(buf.as_slice()).unwrap(), gt);
    let bad = "query,rank,id,score\n0,1,3,0.5\n";
    assert!(matches!(GroundTruth::read_csv(bad.as_bytes()), Err(Error::Format(_))));
}

#[test]
fn kmeans_is_stable_on_identical_points() {
    let vs = vec![vec![1.0f32, 2.0]; 10];
    let (c, a) = kmeans(&vs, 3, KMEANS_ITERATIONS, 0).unwrap();
    assert_eq!(c.len(), 3);
    assert!(a.iter().all(|&x| x == a[0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn complementary_weights_sum_to_one(seed in any::<u64>()) {
        let t = testutil::clustered_table(200, 2);
        let stats = StatsCatalog::build(&t, 16).unwrap();
        let s = WorkloadSpec { num_queries: 5, strata: 10, cap: 5, seed, ..WorkloadSpec::default() };
        let w = gen_queries(&t, &stats, &s).unwrap();
        for q in &w.queries {
            prop_assert_eq!(q.weights[0] + q.weights[1], 1.0);
            prop_assert!(q.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        }
    }

    #[test]
    fn stratum_index_in_range(v in 0.0f64..=1.0, strata in 1usize..200) {
        let s = WorkloadSpec { strata, ..WorkloadSpec::default() };
        let i = s.stratum_of(v);
        prop_assert!(i < strata);
        prop_assert!(v * strata as f64 >= i as f64);
    }

    #[test]
    fn hyperplane_labels_partition(seed in any::<u64>(), planes in 1usize..=8) {
        let (vs, _) = gen_gaussian_clusters(64, 5, 3, 3.0, 1.0, seed);
        let labels = gen_hyperplane_labels(&vs, planes, seed).unwrap();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for l in &labels {
            *counts.entry(l.as_str()).or_default() += 1;
        }
        prop_assert!(counts.len() <= 1 << planes);
        prop_assert_eq!(counts.values().sum::<usize>(), 64);
    }
}

#[test]
fn single_cluster_gives_one_label() {
    let (vs, _) = gen_gaussian_clusters(100, 4, 3, 5.0, 1.0, 2);
    let labels = gen_cluster_labels(&vs, 1, 0).unwrap();
    assert!(labels.iter().all(|l| *l == labels[0]));
}

#[test]
fn two_blobs_two_clusters() {
    let (vs, truth) = planted(300, 2, 4, 21);
    let labels = gen_cluster_labels(&vs, 2, 5).unwrap();
    assert!(purity(&labels, &truth) >= 0.99);
}

#[test]
fn hyperplane_label_is_a_function_of_position() {
    let (mut vs, _) = gen_gaussian_clusters(300, 6, 4, 4.0, 1.0, 12);
    vs.push(vs[17].clone());
    let labels = gen_hyperplane_labels(&vs, 3, 6).unwrap();
    assert_eq!(labels[17], labels[300]);
    let distinct: std::collections::HashSet<_> = labels.iter().collect();
    assert!(distinct.len() <= 8);
    // Both sides of every plane are occupied.
    for bit in 0..3 {
        let ones = labels.iter().filter(|l| l.as_bytes()[bit] == b'1').count();
        assert!(ones > 0 && ones < labels.len(), "plane {bit}: {ones}");
    }
}

#[test]
fn distance_sum_pair_correlation() {
    let (mut vs, _) = gen_gaussian_clusters(400, 5, 5, 5.0, 1.0, 30);
    let d = gen_distance_sum(&vs, 2, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut gaps, mut deltas) = (Vec::new(), Vec::new());
    for _ in 0..2000 {
        let (i, j) = (rand::Rng::random_range(&mut rng, 0..vs.len()), rand::Rng::random_range(&mut rng, 0..vs.len()));
        gaps.push(Metric::L2.distance(&vs[i], &vs[j]));
        deltas.push((d[i] - d[j]).abs());
    }
    assert!(pearson(&gaps, &deltas) > 0.0);

    // Constant data pins the reference onto every point.
    vs = vec![vec![2.5f32; 5]; 3];
    assert_eq!(gen_distance_sum(&vs, 1, 0).unwrap(), vec![0.0; 3]);
}

/// Leave-one-out 1-NN prediction of a categorical column from the first
/// vector column.
fn nn_accuracy(t: &Table, col: usize) -> (f64, f64) {
    let n = 600.min(t.len());
    let label = |r: usize| t.scalar(col, r).to_owned();
    let mut correct = 0;
    let mut freq: HashMap<String, usize> = HashMap::new();
    for r in 0..n {
        *freq.entry(label(r).as_cat().unwrap().to_string()).or_default() += 1;
        let nn = (0..n)
            .filter(|&o| o != r)
            .min_by(|&a, &b| Metric::L2.distance(t.vector(0, r), t.vector(0, a)).total_cmp(&Metric::L2.distance(t.vector(0, r), t.vector(0, b))))
            .unwrap();
        correct += usize::from(label(nn) == label(r));
    }
    (correct as f64 / n as f64, *freq.values().max().unwrap() as f64 / n as f64)
}

#[test]
fn augmented_columns_depend_on_vectors() {
    let t = small_table();
    for col in [0, 1] {
        let (acc, mode) = nn_accuracy(&t, col);
        assert!(acc > mode + 0.1, "column {col}: 1-NN {acc} vs mode {mode}");
    }
    // The uniform column is independent: its sorted order does not follow
    // the vector layout, so neighbors differ about as much as random pairs.
    let u = t.numeric_column(3).unwrap();
    let dist = t.numeric_column(2).unwrap();
    let near_gap = |v: &[f64]| {
        (0..300)
            .map(|r| {
                let nn = (0..600)
                    .filter(|&o| o != r)
                    .min_by(|&a, &b| Metric::L2.distance(t.vector(1, r), t.vector(1, a)).total_cmp(&Metric::L2.distance(t.vector(1, r), t.vector(1, b))))
                    .unwrap();
                (v[r] - v[nn]).abs()
            })
            .sum::<f64>()
            / 300.0
    };
    let rand_gap = |v: &[f64]| (0..300).map(|r| (v[r] - v[r + 300]).abs()).sum::<f64>() / 300.0;
    assert!(near_gap(dist) < 0.5 * rand_gap(dist));
    assert!(near_gap(u) > 0.7 * rand_gap(u));
}

#[test]
fn ground_truth_ignores_row_order() {
    let t = testutil::clustered_table(500, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let qs: Vec<HybridQuery> = (0..5)
        .map(|_| testutil::random_query(&t, &mut rng, vec![Predicate::gt("price", 300.0)], vec![0.7, 0.3], 8))
        .collect();
    let mut tuples: Vec<_> = t.scan().collect();
    tuples.reverse();
    let mut shuffled = Table::new(t.schema().clone()).unwrap();
    shuffled.insert_batch(tuples).unwrap();
    assert_eq!(gen_ground_truth(&t, &qs).unwrap(), gen_ground_truth(&shuffled, &qs).unwrap());
}
