use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bench::gen_ground_truth;
use crate::exec::{Engine, EngineConfig, ScoredId};
use crate::plan::PlanChoice;
use crate::store::Predicate;
use crate::testutil;

#[test]
fn recall_edge_cases() {
    assert_eq!(compute_recall(&[], &[]), 1.0);
    assert_eq!(compute_recall(&[1, 2], &[]), 1.0);
    assert_eq!(compute_recall(&[], &[1, 2]), 0.0);
    assert_eq!(compute_recall(&[1, 2, 3], &[3, 4]), 0.5);
    // Duplicates in the retrieved list count once.
    assert_eq!(compute_recall(&[3, 3], &[3, 4]), 0.5);
}

#[test]
fn percentiles_use_nearest_rank() {
    let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
    assert_eq!(percentile(&v, 50.0), 50.0);
    assert_eq!(percentile(&v, 95.0), 95.0);
    assert_eq!(percentile(&v, 99.0), 99.0);
    assert_eq!(percentile(&v, 100.0), 100.0);
    assert_eq!(percentile(&[7.0], 0.0), 7.0);
    assert_eq!(percentile(&[], 50.0), 0.0);
}

fn setup() -> (Engine, Vec<HybridQuery>) {
    let mut e = Engine::new(testutil::clustered_table(2000, 3), EngineConfig::default());
    e.build_indexes().unwrap();
    e.build_stats().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut qs: Vec<HybridQuery> = (0..12)
        .map(|i| {
            testutil::random_query(&e.table().clone(), &mut rng, vec![Predicate::lt("price", 80.0 * (i + 1) as f64)], vec![0.4, 0.6], 10)
        })
        .collect();
    qs.push(testutil::random_query(&e.table().clone(), &mut rng, vec![Predicate::lt("price", -5.0)], vec![0.4, 0.6], 10));
    (e, qs)
}

#[test]
fn sequential_engine_has_perfect_recall() {
    let (mut e, qs) = setup();
    e.force_plan(Some(PlanChoice::SequentialScan), None);
    let gt = gen_ground_truth(e.table(), &qs).unwrap();
    let opts = EvalOptions {
        repeats: 3,
        warmup: false,
    };
    let r = run_eval(&e, &qs, &gt, Some(&StaticConfig::sequential()), &opts).unwrap();
    assert_eq!(r.engine.mean_recall, 1.0);
    assert_eq!(r.engine.target_met_fraction, 1.0);
    assert_eq!(r.queries.len(), qs.len());
    assert!(r.queries.last().unwrap().empty_truth);
    assert!(r.queries.iter().all(|q| q.plan == "sequential" && q.converged));
    assert_eq!(r.baseline.as_ref().unwrap().mean_recall, 1.0);
    assert!(r.speedup.unwrap() > 0.0);
    let a = &r.engine;
    assert!(a.p50_s <= a.p95_s && a.p95_s <= a.p99_s);
    // Per-query medians account for (almost) the whole measured wall time.
    let sum: f64 = r.queries.iter().map(|q| q.latency_s).sum();
    assert!(sum <= a.total_wall_s * 1.5 && sum >= a.total_wall_s * 0.5, "{sum} vs {}", a.total_wall_s);
    assert!((a.qps - qs.len() as f64 / a.total_wall_s).abs() < 1e-6 * a.qps);
}

#[test]
fn static_configs_are_evaluated_directly() {
    let (e, qs) = setup();
    let gt = gen_ground_truth(e.table(), &qs).unwrap();
    let grid = crate::plan::ConfigGrid::default();
    let cfg = StaticConfig::all(&grid, 2).into_iter().nth(1).unwrap();
    let r = run_static(&e, &qs, &gt, &cfg, &EvalOptions::default()).unwrap();
    assert!(r.queries.iter().all(|q| q.plan == "decomposed"));
    assert!(r.baseline.is_none() && r.speedup.is_none());
    assert_eq!(r.name, cfg.to_string());
    // Recall is measured against ground truth, not assumed.
    for (q, row) in r.queries.iter().zip(&gt.rows) {
        let res = execute_static(&e, &qs[q.query], &cfg).unwrap();
        let ids: Vec<u64> = row.iter().map(|s| s.id).collect();
        assert_eq!(q.recall, compute_recall(&res.ids(), &ids));
    }
}

#[test]
fn misaligned_ground_truth_is_rejected() {
    let (e, qs) = setup();
    let gt = GroundTruth {
        rows: vec![vec![ScoredId { id: 0, score: 0.0 }]],
    };
    match run_eval(&e, &qs, &gt, None, &EvalOptions::default()) {
        Err(Error::MisalignedGroundTruth { workload, ground_truth }) => {
            assert_eq!((workload, ground_truth), (qs.len(), 1));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn csv_and_summary() {
    let (mut e, qs) = setup();
    e.force_plan(Some(PlanChoice::SequentialScan), None);
    let gt = gen_ground_truth(e.table(), &qs).unwrap();
    let r = run_eval(&e, &qs, &gt, None, &EvalOptions::default()).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), qs.len() + 1);
    assert!(text.starts_with("query,recall,latency_s,plan"));
    let s = r.summary();
    assert!(s.contains("recall 1.0000"));
    assert!(s.contains(&format!("plans: sequential={}", qs.len())));
}

#[test]
fn throughput_mode_reports_positive_qps() {
    let (mut e, qs) = setup();
    e.force_plan(Some(PlanChoice::SequentialScan), None);
    assert!(run_throughput(&e, &qs, 3).unwrap() > 0.0);
    assert_eq!(run_throughput(&e, &[], 2).unwrap(), 0.0);
}
