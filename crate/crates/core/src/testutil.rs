//! Shared fixtures for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::store::{
    HybridQuery, Metric, Predicate, ScalarColumnDef, ScalarKind, Table, TableSchema, Tuple, VectorColumnDef,
};

pub const DIMS: [usize; 2] = [16, 8];
pub const CLUSTERS: usize = 8;

pub fn schema() -> TableSchema {
    TableSchema::new(
        vec![
            VectorColumnDef {
                name: "img".into(),
                dim: DIMS[0],
                metric: Metric::L2,
            },
            VectorColumnDef {
                name: "txt".into(),
                dim: DIMS[1],
                metric: Metric::L2,
            },
        ],
        vec![
            ScalarColumnDef {
                name: "label".into(),
                kind: ScalarKind::Categorical,
            },
            ScalarColumnDef {
                name: "price".into(),
                kind: ScalarKind::Numeric,
            },
        ],
    )
}

/// Gaussian clusters per column; `label` names the cluster of `img`, `price`
/// is uniform on [0, 1000) and independent of everything else.
pub fn clustered_table(rows: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<Vec<f32>>> = DIMS
        .iter()
        .map(|&d| {
            (0..CLUSTERS)
                .map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect())
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let tuples = (0..rows)
        .map(|i| {
            let c = rng.random_range(0..CLUSTERS);
            let vectors = centers
                .iter()
                .map(|cs| cs[c].iter().map(|x| x + noise.sample(&mut rng) as f32).collect())
                .collect();
            let price: f64 = rng.random_range(0.0..1000.0);
            Tuple::new(i as u64, vectors, vec![format!("c{c}").as_str().into(), price.into()])
        })
        .collect();
    let mut t = Table::new(schema()).unwrap();
    t.insert_batch(tuples).unwrap();
    t
}

/// A query anchored on a random row with the given predicates.
pub fn random_query(table: &Table, rng: &mut ChaCha8Rng, predicates: Vec<Predicate>, weights: Vec<f64>, k: usize) -> HybridQuery {
    let row = rng.random_range(0..table.len());
    let noise = Normal::new(0.0, 0.3).unwrap();
    HybridQuery {
        predicates,
        vectors: (0..DIMS.len())
            .map(|c| table.vector(c, row).iter().map(|x| x + noise.sample(rng) as f32).collect())
            .collect(),
        weights,
        k,
        target_recall: 0.9,
    }
}
