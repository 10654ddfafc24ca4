use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::store::{ScalarColumnDef, ScalarKind, TableSchema, Tuple, VectorColumnDef};

fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f32>()).collect()).collect()
}

fn table_of(vectors: &[Vec<f32>]) -> Table {
    let schema = TableSchema::new(
        vec![VectorColumnDef {
            name: "v".into(),
            dim: vectors[0].len(),
            metric: Metric::L2,
        }],
        vec![ScalarColumnDef {
            name: "s".into(),
            kind: ScalarKind::Numeric,
        }],
    );
    let mut t = Table::new(schema).unwrap();
    t.insert_batch(
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| Tuple::new(i as u64, vec![v.clone()], vec![(i as f64).into()]))
            .collect(),
    )
    .unwrap();
    t
}

fn brute_force(vectors: &[Vec<f32>], q: &[f32], k: usize, keep: impl Fn(u64) -> bool) -> Vec<u64> {
    let mut all: Vec<(f64, u64)> = vectors
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i as u64))
        .map(|(i, v)| (Metric::L2.distance(q, v), i as u64))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|x| x.1).collect()
}

fn recall(found: &[Neighbor], truth: &[u64]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    found.iter().filter(|n| truth.contains(&n.id)).count() as f64 / truth.len() as f64
}

#[test]
fn singleton_index_returns_its_tuple() {
    let data = vec![vec![0.5f32, 0.5]];
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    for q in [[0.0f32, 0.0], [9.0, -3.0]] {
        let res = idx.search(&q, 1, &SearchParams::new(10));
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].id, 0);
    }
}

#[test]
fn empty_table_rejected() {
    let t = table_of(&[vec![0.0, 0.0]]);
    let empty = Table::new(t.schema().clone()).unwrap();
    assert!(matches!(
        GraphIndex::build(&empty, 0, BuildParams::default()),
        Err(Error::EmptyTable)
    ));
    assert!(matches!(
        GraphIndex::build(&t, 3, BuildParams::default()),
        Err(Error::UnknownColumn(_))
    ));
}

#[test]
fn recall_at_10_on_1000_random_vectors() {
    let data = random_vectors(1000, 32, 1);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    idx.check_invariants().unwrap();
    let queries = random_vectors(100, 32, 2);
    let mean: f64 = queries
        .iter()
        .map(|q| recall(&idx.search(q, 10, &SearchParams::new(200)), &brute_force(&data, q, 10, |_| true)))
        .sum::<f64>()
        / 100.0;
    assert!(mean >= 0.95, "recall {mean}");
}

#[test]
fn self_retrieval_after_insert() {
    let data = random_vectors(200, 8, 3);
    let mut idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    let v = vec![0.25f32; 8];
    idx.insert(999, &v).unwrap();
    let res = idx.search(&v, 1, &SearchParams::new(1));
    assert_eq!(res[0].id, 999);
    assert_eq!(res[0].distance, 0.0);
    assert!(matches!(
        idx.insert(1000, &[0.0; 7]),
        Err(Error::DimensionMismatch { expected: 8, got: 7 })
    ));
    idx.check_invariants().unwrap();
}

#[test]
fn incremental_inserts_match_batch_recall() {
    let data = random_vectors(600, 16, 4);
    let batch = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    let mut incr = GraphIndex::build(&table_of(&data[..500]), 0, BuildParams::default()).unwrap();
    for (i, v) in data.iter().enumerate().skip(500) {
        incr.insert(i as u64, v).unwrap();
    }
    incr.check_invariants().unwrap();
    let queries = random_vectors(50, 16, 5);
    let params = SearchParams::new(32);
    let (mut rb, mut ri) = (0.0, 0.0);
    for q in &queries {
        let truth = brute_force(&data, q, 10, |_| true);
        rb += recall(&batch.search(q, 10, &params), &truth);
        ri += recall(&incr.search(q, 10, &params), &truth);
    }
    assert!((rb - ri).abs() / 50.0 <= 0.05, "batch {rb} incremental {ri}");
}

#[test]
fn k_beyond_size_is_exhaustive() {
    let data = random_vectors(30, 4, 6);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    let q = vec![0.5f32; 4];
    let res = idx.search(&q, 100, &SearchParams::new(4));
    assert_eq!(res.iter().map(|n| n.id).collect::<Vec<_>>(), brute_force(&data, &q, 100, |_| true));
}

#[test]
fn stored_vector_is_found_at_distance_zero() {
    let data = random_vectors(500, 8, 7);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    let res = idx.search(&data[123], 5, &SearchParams::new(64));
    assert_eq!(res[0].id, 123);
    assert_eq!(res[0].distance, 0.0);
    assert!(res.windows(2).all(|w| w[0].distance <= w[1].distance));
}

#[test]
fn larger_ef_does_not_hurt_recall() {
    let data = random_vectors(10_000, 16, 8);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::with_m(8)).unwrap();
    let queries = random_vectors(100, 16, 9);
    let (mut lo, mut hi) = (0.0, 0.0);
    for q in &queries {
        let truth = brute_force(&data, q, 10, |_| true);
        lo += recall(&idx.search(q, 10, &SearchParams::new(10)), &truth);
        hi += recall(&idx.search(q, 10, &SearchParams::new(400)), &truth);
    }
    assert!(hi >= lo, "ef=400 {hi} < ef=10 {lo}");
}

#[test]
fn always_true_filter_matches_plain_search() {
    let data = random_vectors(2000, 8, 10);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    for (qi, q) in random_vectors(20, 8, 11).iter().enumerate() {
        for mode in IterativeScan::ALL {
            let p = SearchParams::new(16 + qi).with_mode(mode);
            let plain = idx.search(q, 10, &p);
            let filtered = idx.filtered_search(q, 10, &p, |_| true);
            assert_eq!(filtered.results, plain, "mode {mode:?}");
            assert!(filtered.converged);
        }
    }
}

#[test]
fn always_false_filter_is_empty_and_bounded() {
    let data = random_vectors(1000, 8, 12);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    for mode in IterativeScan::ALL {
        let p = SearchParams::new(32).with_mode(mode).with_max_scan(300);
        let r = idx.filtered_search(&data[0], 10, &p, |_| false);
        assert!(r.results.is_empty());
        assert!(!r.converged);
        assert!(r.scanned_count <= 300);
    }
    // Unbounded iterative scans exhaust the whole graph.
    let r = idx.filtered_search(&data[0], 10, &SearchParams::new(32).with_mode(IterativeScan::Strict), |_| false);
    assert_eq!(r.scanned_count, 1000);
}

#[test]
fn relaxed_filtered_recall_at_half_selectivity() {
    let data = random_vectors(10_000, 16, 13);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let keep: Vec<bool> = (0..data.len()).map(|_| rng.random::<bool>()).collect();
    let queries = random_vectors(100, 16, 15);
    let params = SearchParams::new(40).with_mode(IterativeScan::Relaxed).with_max_scan(2000);
    let mut total = 0.0;
    for q in &queries {
        let r = idx.filtered_search(q, 10, &params, |id| keep[id as usize]);
        assert!(r.scanned_count <= 2000);
        assert!(r.results.iter().all(|n| keep[n.id as usize]));
        total += recall(&r.results, &brute_force(&data, q, 10, |id| keep[id as usize]));
    }
    assert!(total / 100.0 >= 0.8, "recall {}", total / 100.0);
}

#[test]
fn exhaustive_iterative_scan_returns_all_qualifying() {
    let data = random_vectors(3000, 8, 16);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    let keep = |id: u64| id % 7 == 0;
    let qualifying = (0..3000u64).filter(|&i| keep(i)).count();
    let q = vec![0.1f32; 8];
    for mode in [IterativeScan::Relaxed, IterativeScan::Strict] {
        let r = idx.filtered_search(&q, qualifying, &SearchParams::new(40).with_mode(mode), keep);
        assert_eq!(r.results.iter().map(|n| n.id).collect::<Vec<_>>(), brute_force(&data, &q, qualifying, keep));
    }
}

#[test]
fn build_is_deterministic_and_persists() {
    let data = random_vectors(800, 12, 17);
    let t = table_of(&data);
    let a = GraphIndex::build(&t, 0, BuildParams::default()).unwrap();
    let b = GraphIndex::build(&t, 0, BuildParams::default()).unwrap();
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    save_index(&a, &mut fa).unwrap();
    save_index(&b, &mut fb).unwrap();
    assert_eq!(fa, fb);
    let back = load_index(&fa[..]).unwrap();
    let q = vec![0.3f32; 12];
    let p = SearchParams::new(50);
    assert_eq!(back.search(&q, 10, &p), a.search(&q, 10, &p));
}

#[test]
fn load_rejects_unreachable_graph() {
    let data = random_vectors(50, 4, 18);
    let mut idx = GraphIndex::build(&table_of(&data), 0, BuildParams::default()).unwrap();
    // Detach node 7 completely.
    for layers in idx.links.iter_mut() {
        for list in layers.iter_mut() {
            list.retain(|&n| n != 7);
        }
    }
    if idx.entry == Some(7) {
        return;
    }
    let mut buf = Vec::new();
    save_index(&idx, &mut buf).unwrap();
    assert!(matches!(load_index(&buf[..]), Err(Error::Format(_))));
}

#[test]
fn degree_and_nesting_invariants_hold() {
    let data = random_vectors(3000, 8, 19);
    let idx = GraphIndex::build(&table_of(&data), 0, BuildParams::with_m(4)).unwrap();
    idx.check_invariants().unwrap();
    assert!(idx.max_level() >= 1);
}
