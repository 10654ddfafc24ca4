//! Structured query files: one JSON object per line. Query vectors are either
//! inline or stored in a sidecar `.fvecs` file next to the JSON file, in
//! query-major, column-minor order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{read_fvecs, write_fvecs, HybridQuery, Predicate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: u64,
    pub k: usize,
    pub target_recall: f64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub predicates: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f32>>>,
    /// Index of this query's first vector in the sidecar file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_offset: Option<usize>,
    /// Free-form label, e.g. the selectivity stratum a generator targeted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// Exact selectivity measured when the query was generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<f64>,
}

impl QueryRecord {
    pub fn new(id: u64, query: &HybridQuery) -> Self {
        QueryRecord {
            id,
            k: query.k,
            target_recall: query.target_recall,
            weights: query.weights.clone(),
            predicates: query.predicates.clone(),
            vectors: Some(query.vectors.clone()),
            vector_offset: None,
            tag: None,
            selectivity: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("fvecs")
}

/// Writes one line per query; with `sidecar` the vectors go to
/// [`sidecar_path`] instead of the JSON.
pub fn write_queries(path: &Path, records: &[QueryRecord], sidecar: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut side = Vec::new();
    for r in records {
        let mut r = r.clone();
        if sidecar {
            let vs = r
                .vectors
                .take()
                .ok_or_else(|| Error::format(format!("query {} has no vectors", r.id)))?;
            r.vector_offset = Some(side.len());
            side.extend(vs);
        }
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    if sidecar {
        write_fvecs(File::create(sidecar_path(path))?, &side)?;
    }
    Ok(())
}

/// Reads records and resolves sidecar references so every returned record
/// carries inline vectors.
pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: QueryRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(format!("line {}: {e}", n + 1)))?;
        records.push(r);
    }
    if records.iter().any(|r| r.vectors.is_none()) {
        let side = read_fvecs(File::open(sidecar_path(path))?)?;
        for r in &mut records {
            if r.vectors.is_some() {
                continue;
            }
            let off = r
                .vector_offset
                .ok_or_else(|| Error::format(format!("query {} has neither vectors nor an offset", r.id)))?;
            let n = r.weights.len();
            let vs = side
                .get(off..off + n)
                .ok_or_else(|| Error::format(format!("query {} points past the sidecar", r.id)))?;
            r.vectors = Some(vs.to_vec());
            r.vector_offset = None;
        }
    }
    Ok(records)
}

impl TryFrom<&QueryRecord> for HybridQuery {
    type Error = Error;

    fn try_from(r: &QueryRecord) -> Result<Self> {
        Ok(HybridQuery {
            predicates: r.predicates.clone(),
            vectors: r
                .vectors
                .clone()
                .ok_or_else(|| Error::format(format!("query {} has no vectors", r.id)))?,
            weights: r.weights.clone(),
            k: r.k,
            target_recall: r.target_recall,
        })
    }
}
