use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::index::BuildParams;
use crate::store::{Metric, Predicate, ScalarColumnDef, ScalarKind, Tuple, VectorColumnDef};

fn schema() -> TableSchema {
    TableSchema::new(
        vec![
            VectorColumnDef {
                name: "a".into(),
                dim: 8,
                metric: Metric::L2,
            },
            VectorColumnDef {
                name: "b".into(),
                dim: 4,
                metric: Metric::L2,
            },
        ],
        vec![
            ScalarColumnDef {
                name: "price".into(),
                kind: ScalarKind::Numeric,
            },
            ScalarColumnDef {
                name: "kind".into(),
                kind: ScalarKind::Categorical,
            },
        ],
    )
}

fn table(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Table::new(schema()).unwrap();
    t.insert_batch(
        (0..n)
            .map(|i| {
                let a: Vec<f32> = (0..8).map(|_| rng.random()).collect();
                let b: Vec<f32> = (0..4).map(|_| rng.random()).collect();
                let price = (i % 101) as f64;
                let kind = if i % 4 == 0 { "x" } else { "y" };
                Tuple::new(i as u64, vec![a, b], vec![price.into(), kind.into()])
            })
            .collect(),
    )
    .unwrap();
    t
}

fn query(preds: Vec<Predicate>) -> HybridQuery {
    HybridQuery {
        predicates: preds,
        vectors: vec![vec![0.5; 8], vec![0.5; 4]],
        weights: vec![3.0, 1.0],
        k: 10,
        target_recall: 0.9,
    }
}

fn indexes(t: &Table) -> Vec<GraphIndex> {
    (0..2).map(|c| GraphIndex::build(t, c, BuildParams::default()).unwrap()).collect()
}

#[test]
fn probe_rates_for_trivial_predicates() {
    let t = table(1000, 1);
    let idx = indexes(&t);
    let refs: Vec<&GraphIndex> = idx.iter().collect();
    let all = preprobe(&t, &refs, &query(vec![]), 64, 64).unwrap();
    assert_eq!(all.local_rates, vec![1.0, 1.0]);
    assert_eq!(all.probed_count, 64);
    let none = preprobe(&t, &refs, &query(vec![Predicate::gt("price", 1000.0)]), 64, 64).unwrap();
    assert_eq!(none.local_rates, vec![0.0, 0.0]);
    assert!(matches!(
        preprobe(&t, &refs[..1], &query(vec![]), 64, 64),
        Err(Error::IndexMissing(1))
    ));
}

#[test]
fn probe_rate_on_planted_neighborhood() {
    // Only the query's 50 exact nearest neighbors qualify; a probe of 100
    // should see about half of its results qualify.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 5000;
    let vecs: Vec<Vec<f32>> = (0..n).map(|_| (0..8).map(|_| rng.random()).collect()).collect();
    let q = vec![0.5f32; 8];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| Metric::L2.distance(&q, &vecs[x]).total_cmp(&Metric::L2.distance(&q, &vecs[y])));
    let mut flag = vec![0.0; n];
    for &i in &order[..50] {
        flag[i] = 1.0;
    }
    let mut t = Table::new(schema()).unwrap();
    t.insert_batch(
        (0..n)
            .map(|i| Tuple::new(i as u64, vec![vecs[i].clone(), vec![0.0; 4]], vec![flag[i].into(), "x".into()]))
            .collect(),
    )
    .unwrap();
    let idx = GraphIndex::build(&t, 0, BuildParams::default()).unwrap();
    let other = GraphIndex::build(&t, 1, BuildParams::default()).unwrap();
    let mut qy = query(vec![Predicate::eq("price", 1.0)]);
    qy.vectors[0] = q;
    let r = preprobe(&t, &[&idx, &other], &qy, 100, 100).unwrap();
    assert!((0.4..=0.6).contains(&r.local_rates[0]), "{}", r.local_rates[0]);
    assert_eq!(r.probed_count, 100);
}

#[test]
fn scalar_encoding_examples() {
    let t = table(1010, 3);
    let stats = StatsCatalog::build(&t, 100).unwrap();
    let s = t.schema();
    assert!(encode_query_scalars(s, &stats, &query(vec![])).unwrap().iter().all(|v| *v == 0.0));

    let e = encode_query_scalars(s, &stats, &query(vec![Predicate::lt("price", 50.0)])).unwrap();
    assert_eq!(&e[..9], &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0]);
    assert!(e[9..].iter().all(|v| *v == 0.0));

    let e = encode_query_scalars(
        s,
        &stats,
        &query(vec![Predicate::between("price", 25.0, 75.0), Predicate::eq("kind", "x")]),
    )
    .unwrap();
    assert_eq!(&e[..9], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.25, 0.75]);
    assert_eq!(e[9], 1.0);
    assert_eq!(e[10], 1.0);
    let freq_x = (0..1010).filter(|i| i % 4 == 0).count() as f64 / 1010.0;
    assert_eq!(e[16], freq_x);

    let e = encode_query_scalars(
        s,
        &stats,
        &query(vec![Predicate::ge("price", 10.0), Predicate::lt("price", 60.0)]),
    )
    .unwrap();
    assert_eq!(&e[..9], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.1, 0.6]);

    assert!(matches!(
        encode_query_scalars(s, &stats, &query(vec![Predicate::lt("nope", 1.0)])),
        Err(Error::UnknownColumn(_))
    ));
}

fn assemble(q: &HybridQuery, stats: &StatsCatalog, t: &Table) -> FeatureVector {
    let layout = FeatureLayout::new(t.schema());
    let recon = ReconstructionScore {
        per_column: vec![0.25, 0.5],
    };
    let probe = ProbeResult {
        local_rates: vec![0.75, 1.0],
        probed_count: 64,
        latency: Duration::ZERO,
    };
    let s = encode_query_scalars(t.schema(), stats, q).unwrap();
    assemble_features(&layout, &recon, &s, stats, &probe, q, t.len()).unwrap()
}

#[test]
fn layout_segments_round_trip() {
    let t = table(1000, 4);
    let stats = StatsCatalog::build(&t, 100).unwrap();
    let layout = FeatureLayout::new(t.schema());
    let q = query(vec![Predicate::lt("price", 50.0)]);
    let f = assemble(&q, &stats, &t);
    assert_eq!(f.values.len(), layout.width());
    assert_eq!(layout.width(), 2 + 18 + 1 + 3 + 1 + 2 + 1);
    assert_eq!(f.segment(&layout, SEG_RECON).unwrap(), &[0.25, 0.5]);
    assert_eq!(f.segment(&layout, SEG_RECALL).unwrap(), &[0.9]);
    assert_eq!(f.segment(&layout, SEG_PROBE).unwrap(), &[0.75, 1.0, 6.4]);
    assert_eq!(f.segment(&layout, SEG_WEIGHTS).unwrap(), &[0.75, 0.25]);
    assert_eq!(f.segment(&layout, SEG_K).unwrap(), &[0.01]);
    let sel = stats.estimate_conjunction(&q.predicates).unwrap();
    assert_eq!(f.segment(&layout, SEG_SELECTIVITY).unwrap(), &[sel]);
    assert_eq!(
        f.segment(&layout, SEG_SCALAR).unwrap(),
        encode_query_scalars(t.schema(), &stats, &q).unwrap().as_slice()
    );
    assert!(f.segment(&layout, "missing").is_none());
}

#[test]
fn assemble_rejects_wrong_widths() {
    let t = table(100, 5);
    let stats = StatsCatalog::build(&t, 10).unwrap();
    let layout = FeatureLayout::new(t.schema());
    let probe = ProbeResult {
        local_rates: vec![1.0],
        probed_count: 1,
        latency: Duration::ZERO,
    };
    let recon = ReconstructionScore {
        per_column: vec![0.0, 0.0],
    };
    let q = query(vec![]);
    let s = vec![0.0; 18];
    assert!(matches!(
        assemble_features(&layout, &recon, &s, &stats, &probe, &q, 100),
        Err(Error::LayoutMismatch(_))
    ));
}

#[test]
fn csv_export_has_slot_header() {
    let t = table(200, 6);
    let stats = StatsCatalog::build(&t, 10).unwrap();
    let layout = FeatureLayout::new(t.schema());
    let f = assemble(&query(vec![]), &stats, &t);
    let mut buf = Vec::new();
    write_features_csv(&mut buf, &layout, &[f.clone(), f]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("recon_a,recon_b,price_present,price_eq,"));
    assert!(lines[0].ends_with("weight_a,weight_b,k_norm"));
    assert_eq!(lines[1].split(',').count(), layout.width());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn width_and_finiteness_hold(
        lo in -50.0f64..150.0,
        span in 0.0f64..100.0,
        use_kind in any::<bool>(),
        w in 0.01f64..10.0,
        k in 1usize..500,
        recall in 0.5f64..1.0,
    ) {
        static T: std::sync::OnceLock<(Table, StatsCatalog)> = std::sync::OnceLock::new();
        let (t, stats) = T.get_or_init(|| {
            let t = table(300, 7);
            let s = StatsCatalog::build(&t, 20).unwrap();
            (t, s)
        });
        let mut preds = vec![Predicate::between("price", lo, lo + span)];
        if use_kind {
            preds.push(Predicate::eq("kind", "y"));
        }
        let mut q = query(preds);
        q.weights = vec![w, 1.0];
        q.k = k;
        q.target_recall = recall;
        let a = assemble(&q, stats, t);
        let b = assemble(&q, stats, t);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.values.len(), FeatureLayout::new(t.schema()).width());
        prop_assert!(a.values.iter().all(|v| v.is_finite()));
    }
}
