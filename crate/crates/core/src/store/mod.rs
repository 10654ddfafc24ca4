//! Tables with multiple vector columns and scalar columns.
//!
//! Rows are addressed internally by their insertion position ("row"), which is
//! stable because there is no deletion. Callers address tuples by their
//! caller-assigned `id`.

mod io;
mod predicate;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_table, read_fvecs, read_scalar_csv, save_table, write_fvecs, write_scalar_csv};
pub use predicate::{CmpOp, Condition, Filter, Predicate};

/// Distance function attached to a vector column. Smaller is always better:
/// inner product is stored negated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    L2,
    InnerProduct,
}

impl Metric {
    /// Exact distance, accumulated in 64-bit.
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::L2 => {
                let mut acc = [0f64; 4];
                let chunks = a.len() / 4 * 4;
                for i in (0..chunks).step_by(4) {
                    for l in 0..4 {
                        let d = a[i + l] as f64 - b[i + l] as f64;
                        acc[l] += d * d;
                    }
                }
                let mut s = acc[0] + acc[1] + acc[2] + acc[3];
                for i in chunks..a.len() {
                    let d = a[i] as f64 - b[i] as f64;
                    s += d * d;
                }
                s.sqrt()
            }
            Metric::InnerProduct => {
                let mut acc = [0f64; 4];
                let chunks = a.len() / 4 * 4;
                for i in (0..chunks).step_by(4) {
                    for l in 0..4 {
                        acc[l] += a[i + l] as f64 * b[i + l] as f64;
                    }
                }
                let mut s = acc[0] + acc[1] + acc[2] + acc[3];
                for i in chunks..a.len() {
                    s += a[i] as f64 * b[i] as f64;
                }
                -s
            }
        }
    }

    /// 32-bit surrogate with the same ordering as [`Metric::distance`]
    /// (squared L2 or negated dot product). Used inside graph traversal only.
    #[inline]
    pub(crate) fn surrogate(self, a: &[f32], b: &[f32]) -> f32 {
        const LANES: usize = 8;
        let mut acc = [0f32; LANES];
        let chunks = a.len() / LANES * LANES;
        match self {
            Metric::L2 => {
                for (ca, cb) in a[..chunks].chunks_exact(LANES).zip(b[..chunks].chunks_exact(LANES)) {
                    for l in 0..LANES {
                        let d = ca[l] - cb[l];
                        acc[l] += d * d;
                    }
                }
                let mut s: f32 = acc.iter().sum();
                for i in chunks..a.len() {
                    let d = a[i] - b[i];
                    s += d * d;
                }
                s
            }
            Metric::InnerProduct => {
                for (ca, cb) in a[..chunks].chunks_exact(LANES).zip(b[..chunks].chunks_exact(LANES)) {
                    for l in 0..LANES {
                        acc[l] += ca[l] * cb[l];
                    }
                }
                let mut s: f32 = acc.iter().sum();
                for i in chunks..a.len() {
                    s += a[i] * b[i];
                }
                -s
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorColumnDef {
    pub name: String,
    pub dim: usize,
    pub metric: Metric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarColumnDef {
    pub name: String,
    pub kind: ScalarKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub vector_columns: Vec<VectorColumnDef>,
    pub scalar_columns: Vec<ScalarColumnDef>,
}

impl TableSchema {
    pub fn new(vector_columns: Vec<VectorColumnDef>, scalar_columns: Vec<ScalarColumnDef>) -> Self {
        TableSchema {
            vector_columns,
            scalar_columns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vector_columns.is_empty() {
            return Err(Error::InvalidSchema("at least one vector column required".into()));
        }
        if self.scalar_columns.is_empty() {
            return Err(Error::InvalidSchema("at least one scalar column required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let names = self
            .vector_columns
            .iter()
            .map(|c| &c.name)
            .chain(self.scalar_columns.iter().map(|c| &c.name));
        for name in names {
            if name == "id" {
                return Err(Error::InvalidSchema("`id` is reserved".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumnName(name.clone()));
            }
        }
        if let Some(c) = self.vector_columns.iter().find(|c| c.dim == 0) {
            return Err(Error::ZeroDimension(c.name.clone()));
        }
        Ok(())
    }

    pub fn num_vector_columns(&self) -> usize {
        self.vector_columns.len()
    }

    pub fn num_scalar_columns(&self) -> usize {
        self.scalar_columns.len()
    }

    pub fn vector_column(&self, name: &str) -> Result<usize> {
        self.vector_columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn scalar_column(&self, name: &str) -> Result<usize> {
        self.scalar_columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarValue {
    Num(f64),
    Cat(String),
}

impl ScalarValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            ScalarValue::Num(v) => Some(*v),
            ScalarValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            ScalarValue::Cat(s) => Some(s),
            ScalarValue::Num(_) => None,
        }
    }

    fn kind(&self) -> ScalarKind {
        match self {
            ScalarValue::Num(_) => ScalarKind::Numeric,
            ScalarValue::Cat(_) => ScalarKind::Categorical,
        }
    }
}

impl From<f64> for ScalarValue {
    fn from(v: f64) -> Self {
        ScalarValue::Num(v)
    }
}

impl From<&str> for ScalarValue {
    fn from(v: &str) -> Self {
        ScalarValue::Cat(v.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tuple {
    pub id: u64,
    pub vectors: Vec<Vec<f32>>,
    pub scalars: Vec<ScalarValue>,
}

impl Tuple {
    pub fn new(id: u64, vectors: Vec<Vec<f32>>, scalars: Vec<ScalarValue>) -> Self {
        Tuple { id, vectors, scalars }
    }
}

/// A weighted multi-vector hybrid query: conjunctive scalar predicates, one
/// query vector and one weight per vector column, and a result count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridQuery {
    pub predicates: Vec<Predicate>,
    pub vectors: Vec<Vec<f32>>,
    pub weights: Vec<f64>,
    pub k: usize,
    pub target_recall: f64,
}

impl HybridQuery {
    pub fn validate(&self, schema: &TableSchema) -> Result<()> {
        let n = schema.num_vector_columns();
        if self.vectors.len() != n {
            return Err(Error::InvalidQuery(format!(
                "expected {n} query vectors, got {}",
                self.vectors.len()
            )));
        }
        if self.weights.len() != n {
            return Err(Error::InvalidQuery(format!("expected {n} weights, got {}", self.weights.len())));
        }
        for (v, col) in self.vectors.iter().zip(&schema.vector_columns) {
            if v.len() != col.dim {
                return Err(Error::DimensionMismatch {
                    expected: col.dim,
                    got: v.len(),
                });
            }
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidQuery("weights must be finite and non-negative".into()));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidQuery("weights must sum to a positive value".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidQuery("k must be positive".into()));
        }
        if !(self.target_recall > 0.0 && self.target_recall <= 1.0) {
            return Err(Error::InvalidQuery("target_recall must lie in (0, 1]".into()));
        }
        for p in &self.predicates {
            p.validate(schema)?;
        }
        Ok(())
    }

    /// Weights rescaled to sum to one.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}

/// Column-major storage for one scalar column.
#[derive(Clone, Debug)]
pub(crate) enum ScalarData {
    Numeric(Vec<f64>),
    Categorical {
        dict: Vec<String>,
        lookup: HashMap<String, u32>,
        codes: Vec<u32>,
    },
}

impl ScalarData {
    fn new(kind: ScalarKind) -> Self {
        match kind {
            ScalarKind::Numeric => ScalarData::Numeric(Vec::new()),
            ScalarKind::Categorical => ScalarData::Categorical {
                dict: Vec::new(),
                lookup: HashMap::new(),
                codes: Vec::new(),
            },
        }
    }
}

/// Borrowed view of one scalar cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarRef<'a> {
    Num(f64),
    Cat(&'a str),
}

impl ScalarRef<'_> {
    pub fn to_owned(self) -> ScalarValue {
        match self {
            ScalarRef::Num(v) => ScalarValue::Num(v),
            ScalarRef::Cat(s) => ScalarValue::Cat(s.to_string()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    schema: TableSchema,
    ids: Vec<u64>,
    id_to_row: HashMap<u64, usize>,
    vectors: Vec<Vec<f32>>,
    scalars: Vec<ScalarData>,
    pending: Vec<u64>,
}

impl Table {
    pub fn new(schema: TableSchema) -> Result<Self> {
        schema.validate()?;
        let vectors = vec![Vec::new(); schema.num_vector_columns()];
        let scalars = schema.scalar_columns.iter().map(|c| ScalarData::new(c.kind)).collect();
        Ok(Table {
            schema,
            ids: Vec::new(),
            id_to_row: HashMap::new(),
            vectors,
            scalars,
            pending: Vec::new(),
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check_tuple(&self, t: &Tuple) -> Result<()> {
        if t.vectors.len() != self.schema.num_vector_columns() {
            return Err(Error::InvalidQuery(format!(
                "tuple {} has {} vectors, schema has {}",
                t.id,
                t.vectors.len(),
                self.schema.num_vector_columns()
            )));
        }
        for (v, col) in t.vectors.iter().zip(&self.schema.vector_columns) {
            if v.len() != col.dim {
                return Err(Error::DimensionMismatch {
                    expected: col.dim,
                    got: v.len(),
                });
            }
        }
        if t.scalars.len() != self.schema.num_scalar_columns() {
            return Err(Error::InvalidSchema(format!(
                "tuple {} has {} scalars, schema has {}",
                t.id,
                t.scalars.len(),
                self.schema.num_scalar_columns()
            )));
        }
        for (s, col) in t.scalars.iter().zip(&self.schema.scalar_columns) {
            if s.kind() != col.kind {
                return Err(Error::InvalidSchema(format!(
                    "tuple {}: column `{}` expects {:?}",
                    t.id, col.name, col.kind
                )));
            }
        }
        Ok(())
    }

    /// Inserts all tuples or none. Inserted ids are appended to the pending
    /// update buffer consumed by incremental encoder updates.
    pub fn insert_batch(&mut self, tuples: Vec<Tuple>) -> Result<usize> {
        let mut batch_ids = std::collections::HashSet::with_capacity(tuples.len());
        for t in &tuples {
            self.check_tuple(t)?;
            if self.id_to_row.contains_key(&t.id) || !batch_ids.insert(t.id) {
                return Err(Error::DuplicateId(t.id));
            }
        }
        let n = tuples.len();
        for t in tuples {
            let row = self.ids.len();
            self.ids.push(t.id);
            self.id_to_row.insert(t.id, row);
            self.pending.push(t.id);
            for (col, v) in self.vectors.iter_mut().zip(t.vectors) {
                col.extend_from_slice(&v);
            }
            for (data, s) in self.scalars.iter_mut().zip(t.scalars) {
                match (data, s) {
                    (ScalarData::Numeric(vals), ScalarValue::Num(v)) => vals.push(v),
                    (ScalarData::Categorical { dict, lookup, codes }, ScalarValue::Cat(c)) => {
                        let code = match lookup.get(&c) {
                            Some(&code) => code,
                            None => {
                                let code = dict.len() as u32;
                                lookup.insert(c.clone(), code);
                                dict.push(c);
                                code
                            }
                        };
                        codes.push(code);
                    }
                    _ => unreachable!("kinds checked above"),
                }
            }
        }
        Ok(n)
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.id_to_row.get(&id).copied()
    }

    pub fn id(&self, row: usize) -> u64 {
        self.ids[row]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, column: usize, row: usize) -> &[f32] {
        let dim = self.schema.vector_columns[column].dim;
        &self.vectors[column][row * dim..(row + 1) * dim]
    }

    /// All vectors of a column, row-major.
    pub fn column_vectors(&self, column: usize) -> &[f32] {
        &self.vectors[column]
    }

    pub fn scalar(&self, column: usize, row: usize) -> ScalarRef<'_> {
        match &self.scalars[column] {
            ScalarData::Numeric(v) => ScalarRef::Num(v[row]),
            ScalarData::Categorical { dict, codes, .. } => ScalarRef::Cat(&dict[codes[row] as usize]),
        }
    }

    /// Numeric values of a column, or `None` for a categorical column.
    pub fn numeric_column(&self, column: usize) -> Option<&[f64]> {
        match &self.scalars[column] {
            ScalarData::Numeric(v) => Some(v),
            ScalarData::Categorical { .. } => None,
        }
    }

    /// Dictionary and per-row codes of a categorical column.
    pub fn categorical_column(&self, column: usize) -> Option<(&[String], &[u32])> {
        match &self.scalars[column] {
            ScalarData::Categorical { dict, codes, .. } => Some((dict, codes)),
            ScalarData::Numeric(_) => None,
        }
    }

    pub(crate) fn scalar_data(&self, column: usize) -> &ScalarData {
        &self.scalars[column]
    }

    pub fn tuple(&self, row: usize) -> Tuple {
        Tuple {
            id: self.ids[row],
            vectors: (0..self.vectors.len()).map(|c| self.vector(c, row).to_vec()).collect(),
            scalars: (0..self.scalars.len()).map(|c| self.scalar(c, row).to_owned()).collect(),
        }
    }

    pub fn get(&self, id: u64) -> Option<Tuple> {
        self.row_of(id).map(|r| self.tuple(r))
    }

    /// Full scan in insertion order.
    pub fn scan(&self) -> impl Iterator<Item = Tuple> + '_ {
        (0..self.len()).map(move |r| self.tuple(r))
    }

    pub fn bind(&self, predicates: &[Predicate]) -> Result<Filter> {
        Filter::bind(self, predicates)
    }

    /// Weighted composite distance of a stored row. The query is assumed to
    /// be validated against the schema.
    pub fn composite_distance_row(&self, row: usize, query: &HybridQuery) -> f64 {
        let mut total = 0.0;
        for (c, col) in self.schema.vector_columns.iter().enumerate() {
            let w = query.weights[c];
            if w == 0.0 {
                continue;
            }
            total += w * col.metric.distance(&query.vectors[c], self.vector(c, row));
        }
        total
    }

    pub fn pending_updates(&self) -> &[u64] {
        &self.pending
    }

    pub fn take_pending_updates(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.pending)
    }

    pub fn clear_pending_updates(&mut self) {
        self.pending.clear();
    }

    /// Restores a pending buffer, e.g. after reloading a saved table.
    pub fn set_pending_updates(&mut self, ids: Vec<u64>) -> Result<()> {
        if let Some(id) = ids.iter().find(|id| self.row_of(**id).is_none()) {
            return Err(Error::UnknownId(*id));
        }
        self.pending = ids;
        Ok(())
    }
}

/// True iff `tuple` satisfies every predicate.
pub fn evaluate_predicates(schema: &TableSchema, tuple: &Tuple, predicates: &[Predicate]) -> Result<bool> {
    for p in predicates {
        let col = schema.scalar_column(&p.column)?;
        p.validate(schema)?;
        if !p.cond.matches_value(&tuple.scalars[col]) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `Σ w_i · d_i(q_i, v_i)` over vector columns.
pub fn composite_distance(schema: &TableSchema, tuple: &Tuple, query: &HybridQuery) -> Result<f64> {
    if query.vectors.len() != schema.num_vector_columns() || tuple.vectors.len() != schema.num_vector_columns() {
        return Err(Error::DimensionMismatch {
            expected: schema.num_vector_columns(),
            got: query.vectors.len().min(tuple.vectors.len()),
        });
    }
    let mut total = 0.0;
    for (c, col) in schema.vector_columns.iter().enumerate() {
        let (q, v) = (&query.vectors[c], &tuple.vectors[c]);
        if q.len() != col.dim || v.len() != col.dim {
            return Err(Error::DimensionMismatch {
                expected: col.dim,
                got: if q.len() != col.dim { q.len() } else { v.len() },
            });
        }
        let w = query.weights.get(c).copied().unwrap_or(0.0);
        if w != 0.0 {
            total += w * col.metric.distance(q, v);
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TableHandle(usize);

/// Registry of tables.
#[derive(Debug, Default)]
pub struct Store {
    tables: Vec<Table>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_table(&mut self, schema: TableSchema) -> Result<TableHandle> {
        let table = Table::new(schema)?;
        self.tables.push(table);
        Ok(TableHandle(self.tables.len() - 1))
    }

    pub fn table(&self, handle: TableHandle) -> Result<&Table> {
        self.tables.get(handle.0).ok_or(Error::UnknownTable(handle.0))
    }

    pub fn table_mut(&mut self, handle: TableHandle) -> Result<&mut Table> {
        self.tables.get_mut(handle.0).ok_or(Error::UnknownTable(handle.0))
    }

    pub fn insert_batch(&mut self, handle: TableHandle, tuples: Vec<Tuple>) -> Result<usize> {
        self.table_mut(handle)?.insert_batch(tuples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema_1x4() -> TableSchema {
        TableSchema::new(
            vec![VectorColumnDef {
                name: "emb".into(),
                dim: 4,
                metric: Metric::L2,
            }],
            vec![
                ScalarColumnDef {
                    name: "price".into(),
                    kind: ScalarKind::Numeric,
                },
                ScalarColumnDef {
                    name: "cat".into(),
                    kind: ScalarKind::Categorical,
                },
            ],
        )
    }

    fn tuple(id: u64, price: f64, cat: &str) -> Tuple {
        Tuple::new(id, vec![vec![id as f32, 0.0, 0.0, 0.0]], vec![price.into(), cat.into()])
    }

    #[test]
    fn create_table_starts_empty() {
        let mut store = Store::new();
        let h = store.create_table(schema_1x4()).unwrap();
        assert_eq!(store.table(h).unwrap().len(), 0);
    }

    #[test]
    fn schema_reads_back_identically() {
        let schema = TableSchema::new(
            vec![
                VectorColumnDef {
                    name: "a".into(),
                    dim: 8,
                    metric: Metric::L2,
                },
                VectorColumnDef {
                    name: "b".into(),
                    dim: 16,
                    metric: Metric::InnerProduct,
                },
            ],
            vec![
                ScalarColumnDef {
                    name: "x".into(),
                    kind: ScalarKind::Numeric,
                },
                ScalarColumnDef {
                    name: "y".into(),
                    kind: ScalarKind::Categorical,
                },
                ScalarColumnDef {
                    name: "z".into(),
                    kind: ScalarKind::Numeric,
                },
            ],
        );
        let mut store = Store::new();
        let h = store.create_table(schema.clone()).unwrap();
        assert_eq!(store.table(h).unwrap().schema(), &schema);
    }

    #[test]
    fn duplicate_column_name_rejected() {
        let mut schema = schema_1x4();
        schema.scalar_columns[1].name = "price".into();
        assert!(matches!(Table::new(schema), Err(Error::DuplicateColumnName(n)) if n == "price"));
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut schema = schema_1x4();
        schema.vector_columns[0].dim = 0;
        assert!(matches!(Table::new(schema), Err(Error::ZeroDimension(_))));
    }

    #[test]
    fn insert_and_retrieve() {
        let mut t = Table::new(schema_1x4()).unwrap();
        let n = t
            .insert_batch(vec![tuple(1, 10.0, "A"), tuple(2, 20.0, "B"), tuple(3, 30.0, "A")])
            .unwrap();
        assert_eq!(n, 3);
        assert_eq!(t.len(), 3);
        assert_eq!(t.get(2).unwrap(), tuple(2, 20.0, "B"));
        assert_eq!(t.pending_updates(), &[1, 2, 3]);
    }

    #[test]
    fn insert_dimension_mismatch() {
        let mut t = Table::new(schema_1x4()).unwrap();
        let bad = Tuple::new(1, vec![vec![0.0; 5]], vec![1.0.into(), "A".into()]);
        assert!(matches!(
            t.insert_batch(vec![bad]),
            Err(Error::DimensionMismatch { expected: 4, got: 5 })
        ));
        assert!(t.is_empty());
    }

    #[test]
    fn reinsert_is_duplicate() {
        let mut t = Table::new(schema_1x4()).unwrap();
        t.insert_batch(vec![tuple(7, 1.0, "A")]).unwrap();
        assert!(matches!(t.insert_batch(vec![tuple(7, 2.0, "B")]), Err(Error::DuplicateId(7))));
        assert!(matches!(
            t.insert_batch(vec![tuple(8, 2.0, "B"), tuple(8, 2.0, "B")]),
            Err(Error::DuplicateId(8))
        ));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn predicate_evaluation() {
        let schema = schema_1x4();
        let t = tuple(1, 30.0, "A");
        assert!(evaluate_predicates(&schema, &t, &[]).unwrap());
        assert!(evaluate_predicates(&schema, &t, &[Predicate::lt("price", 50.0)]).unwrap());
        assert!(
            !evaluate_predicates(&schema, &t, &[Predicate::lt("price", 50.0), Predicate::gt("price", 40.0)]).unwrap()
        );
        assert!(!evaluate_predicates(&schema, &t, &[Predicate::eq("cat", "B")]).unwrap());
        assert!(matches!(
            evaluate_predicates(&schema, &t, &[Predicate::lt("nope", 1.0)]),
            Err(Error::UnknownColumn(_))
        ));
    }

    fn two_col_schema() -> TableSchema {
        TableSchema::new(
            vec![
                VectorColumnDef {
                    name: "a".into(),
                    dim: 2,
                    metric: Metric::L2,
                },
                VectorColumnDef {
                    name: "b".into(),
                    dim: 2,
                    metric: Metric::L2,
                },
            ],
            vec![ScalarColumnDef {
                name: "s".into(),
                kind: ScalarKind::Numeric,
            }],
        )
    }

    fn query(vectors: Vec<Vec<f32>>, weights: Vec<f64>) -> HybridQuery {
        HybridQuery {
            predicates: vec![],
            vectors,
            weights,
            k: 1,
            target_recall: 1.0,
        }
    }

    #[test]
    fn composite_distance_examples() {
        let schema = two_col_schema();
        let t = Tuple::new(0, vec![vec![3.0, 4.0], vec![6.0, 8.0]], vec![0.0.into()]);
        let q = query(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.5, 0.5]);
        assert_eq!(composite_distance(&schema, &t, &q).unwrap(), 7.5);

        let q = query(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![1.0, 0.0]);
        assert_eq!(composite_distance(&schema, &t, &q).unwrap(), 5.0);

        let q = query(t.vectors.clone(), vec![0.3, 0.7]);
        assert_eq!(composite_distance(&schema, &t, &q).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_is_negated() {
        assert_eq!(Metric::InnerProduct.distance(&[1.0, 2.0], &[3.0, 4.0]), -11.0);
        assert_eq!(Metric::InnerProduct.surrogate(&[1.0, 2.0], &[3.0, 4.0]), -11.0);
    }

    #[test]
    fn scan_visits_each_tuple_once() {
        let mut t = Table::new(schema_1x4()).unwrap();
        t.insert_batch((0..50).map(|i| tuple(i * 3, i as f64, "A")).collect()).unwrap();
        let mut ids: Vec<u64> = t.scan().map(|t| t.id).collect();
        ids.sort();
        assert_eq!(ids, (0..50).map(|i| i * 3).collect::<Vec<_>>());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ranking_invariant_under_weight_scaling(
                rows in proptest::collection::vec(proptest::collection::vec(-10.0f32..10.0, 4), 2..30),
                q in proptest::collection::vec(-10.0f32..10.0, 4),
                w in (0.01f64..1.0, 0.01f64..1.0),
                scale in 0.1f64..50.0,
            ) {
                let schema = two_col_schema();
                let tuples: Vec<Tuple> = rows.iter().enumerate().map(|(i, r)| {
                    Tuple::new(i as u64, vec![r[..2].to_vec(), r[2..].to_vec()], vec![0.0.into()])
                }).collect();
                let q1 = query(vec![q[..2].to_vec(), q[2..].to_vec()], vec![w.0, w.1]);
                let q2 = query(q1.vectors.clone(), vec![w.0 * scale, w.1 * scale]);
                let rank = |q: &HybridQuery| {
                    let mut s: Vec<(f64, u64)> = tuples.iter()
                        .map(|t| (composite_distance(&schema, t, q).unwrap(), t.id)).collect();
                    s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    s
                };
                let (r1, r2) = (rank(&q1), rank(&q2));
                for (a, b) in r1.iter().zip(&r2) {
                    prop_assert!((a.0 * scale - b.0).abs() <= 1e-9 * (1.0 + b.0.abs()));
                }
                // Exact ties can be perturbed by rounding; compare orders only
                // where the scores are well separated.
                for w in r1.windows(2) {
                    if (w[1].0 - w[0].0).abs() > 1e-9 {
                        let pa = r2.iter().position(|x| x.1 == w[0].1).unwrap();
                        let pb = r2.iter().position(|x| x.1 == w[1].1).unwrap();
                        prop_assert!(pa < pb);
                    }
                }
            }

            #[test]
            fn adding_predicate_never_grows_result(
                prices in proptest::collection::vec(0.0f64..100.0, 1..60),
                t1 in 0.0f64..100.0,
                t2 in 0.0f64..100.0,
            ) {
                let mut table = Table::new(schema_1x4()).unwrap();
                table.insert_batch(prices.iter().enumerate().map(|(i, p)| tuple(i as u64, *p, "A")).collect()).unwrap();
                let one = table.bind(&[Predicate::lt("price", t1)]).unwrap();
                let two = table.bind(&[Predicate::lt("price", t1), Predicate::ge("price", t2)]).unwrap();
                for r in 0..table.len() {
                    prop_assert!(!two.matches(&table, r) || one.matches(&table, r));
                }
            }
        }
    }
}
