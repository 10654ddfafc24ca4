use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{exec_decomposed, exec_sequential, exec_single_index, CostModel, ResultSet};
use crate::encoder::{load_bundle, save_bundle, EncoderBundle, EncoderConfig};
use crate::error::{Error, Result};
use crate::features::{
    assemble_features, encode_query_scalars, preprobe, FeatureLayout, FeatureVector, ProbeResult, DEFAULT_PROBE_EF,
    DEFAULT_PROBE_K,
};
use crate::index::{load_index, save_index, BuildParams, GraphIndex};
use crate::plan::{load_models, save_models, OptimizerModels, PlanChoice, SubqueryParams};
use crate::stats::{StatsCatalog, DEFAULT_BINS};
use crate::store::{load_table, save_table, HybridQuery, Table, Tuple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub probe_k: usize,
    pub probe_ef: usize,
    pub stats_bins: usize,
    pub index: BuildParams,
    pub cost: CostModel,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            probe_k: DEFAULT_PROBE_K,
            probe_ef: DEFAULT_PROBE_EF,
            stats_bins: DEFAULT_BINS,
            index: BuildParams::default(),
            cost: CostModel::default(),
        }
    }
}

/// Plan and parameters chosen for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedQuery {
    pub plan: PlanChoice,
    pub params: Option<SubqueryParams>,
    pub features: Option<FeatureVector>,
    pub planning: Duration,
}

/// A table with its indexes, statistics, encoder and optimizer models.
#[derive(Clone, Debug)]
pub struct Engine {
    table: Table,
    indexes: Vec<GraphIndex>,
    stats: Option<StatsCatalog>,
    encoder: Option<EncoderBundle>,
    models: Option<OptimizerModels>,
    config: EngineConfig,
    layout: FeatureLayout,
    forced_plan: Option<PlanChoice>,
    forced_params: Option<SubqueryParams>,
}

impl Engine {
    pub fn new(table: Table, config: EngineConfig) -> Self {
        let layout = FeatureLayout::new(table.schema());
        Engine {
            table,
            indexes: Vec::new(),
            stats: None,
            encoder: None,
            models: None,
            config,
            layout,
            forced_plan: None,
            forced_params: None,
        }
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Replaces the configuration. Built components are kept; rebuild them
    /// for changed build parameters to take effect.
    pub fn set_config(&mut self, config: EngineConfig) {
        self.config = config;
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn stats(&self) -> Option<&StatsCatalog> {
        self.stats.as_ref()
    }

    pub fn encoder(&self) -> Option<&EncoderBundle> {
        self.encoder.as_ref()
    }

    pub fn models(&self) -> Option<&OptimizerModels> {
        self.models.as_ref()
    }

    pub fn indexes(&self) -> &[GraphIndex] {
        &self.indexes
    }

    pub fn vector_dims(&self) -> Vec<usize> {
        self.table.schema().vector_columns.iter().map(|c| c.dim).collect()
    }

    pub fn build_indexes(&mut self) -> Result<()> {
        self.indexes = (0..self.table.schema().num_vector_columns())
            .map(|c| GraphIndex::build(&self.table, c, self.config.index))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn build_stats(&mut self) -> Result<()> {
        self.stats = Some(StatsCatalog::build(&self.table, self.config.stats_bins)?);
        Ok(())
    }

    /// Fits the encoder on the whole table, which also settles any pending
    /// inserts.
    pub fn train_encoder(&mut self, config: EncoderConfig) -> Result<()> {
        self.encoder = Some(EncoderBundle::fit(&self.table, config)?);
        self.table.clear_pending_updates();
        Ok(())
    }

    /// Indexes, statistics and encoder with the given encoder config.
    pub fn build_all(&mut self, encoder: EncoderConfig) -> Result<()> {
        self.build_indexes()?;
        self.build_stats()?;
        self.train_encoder(encoder)
    }

    pub fn set_indexes(&mut self, indexes: Vec<GraphIndex>) -> Result<()> {
        let n = self.table.schema().num_vector_columns();
        if indexes.len() != n {
            return Err(Error::IndexMissing(indexes.len().min(n)));
        }
        for (i, idx) in indexes.iter().enumerate() {
            let dim = self.table.schema().vector_columns[i].dim;
            if idx.dim() != dim || idx.len() != self.table.len() {
                return Err(Error::format(format!("index {i} does not match the table")));
            }
        }
        self.indexes = indexes;
        Ok(())
    }

    pub fn set_stats(&mut self, stats: StatsCatalog) {
        self.stats = Some(stats);
    }

    pub fn set_encoder(&mut self, encoder: EncoderBundle) {
        self.encoder = Some(encoder);
    }

    pub fn set_models(&mut self, models: OptimizerModels) -> Result<()> {
        if models.feature_width() != self.layout.width() {
            return Err(Error::LayoutMismatch(format!(
                "models expect {} features, layout has {}",
                models.feature_width(),
                self.layout.width()
            )));
        }
        self.models = Some(models);
        Ok(())
    }

    pub fn clear_models(&mut self) {
        self.models = None;
    }

    /// Overrides the plan model; `params` overrides the parameter model.
    pub fn force_plan(&mut self, plan: Option<PlanChoice>, params: Option<SubqueryParams>) {
        self.forced_plan = plan;
        self.forced_params = params;
    }

    pub fn index_refs(&self) -> Result<Vec<&GraphIndex>> {
        let n = self.table.schema().num_vector_columns();
        if self.indexes.len() < n {
            return Err(Error::EngineNotReady("vector indexes are not built".into()));
        }
        Ok(self.indexes.iter().collect())
    }

    pub fn probe(&self, query: &HybridQuery) -> Result<ProbeResult> {
        preprobe(
            &self.table,
            &self.index_refs()?,
            query,
            self.config.probe_k,
            self.config.probe_ef,
        )
    }

    /// Assembles `X_in` for a query.
    pub fn features(&self, query: &HybridQuery) -> Result<FeatureVector> {
        query.validate(self.table.schema())?;
        let stats = self
            .stats
            .as_ref()
            .ok_or_else(|| Error::EngineNotReady("statistics are not built".into()))?;
        let encoder = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::EngineNotReady("encoder is not trained".into()))?;
        let recon = encoder.score(query)?;
        let scalar = encode_query_scalars(self.table.schema(), stats, query)?;
        let probe = self.probe(query)?;
        assemble_features(&self.layout, &recon, &scalar, stats, &probe, query, self.table.len())
    }

    pub fn plan(&self, query: &HybridQuery) -> Result<PlannedQuery> {
        let start = Instant::now();
        if self.forced_plan == Some(PlanChoice::SequentialScan) {
            return Ok(PlannedQuery {
                plan: PlanChoice::SequentialScan,
                params: None,
                features: None,
                planning: start.elapsed(),
            });
        }
        if let (Some(plan), Some(params)) = (self.forced_plan, &self.forced_params) {
            return Ok(PlannedQuery {
                plan,
                params: Some(params.clone()),
                features: None,
                planning: start.elapsed(),
            });
        }
        let models = self
            .models
            .as_ref()
            .ok_or_else(|| Error::EngineNotReady("optimizer models are not trained".into()))?;
        let x = self.features(query)?;
        let plan = match self.forced_plan {
            Some(p) => p,
            None => models.select_plan(&x)?,
        };
        let rows = self.table.len();
        let params = match plan {
            PlanChoice::SequentialScan => None,
            PlanChoice::DecomposedIndexScan => Some(models.recommend_params(&x, query, rows)?),
            PlanChoice::SingleIndexScan(i) => {
                let p = models.recommend_single(&x, query, i, rows)?;
                Some(SubqueryParams::uniform(query.vectors.len(), p))
            }
        };
        Ok(PlannedQuery {
            plan,
            params,
            features: Some(x),
            planning: start.elapsed(),
        })
    }

    /// Plans with the learned optimizer (or the forced override) and runs it.
    pub fn execute(&self, query: &HybridQuery) -> Result<ResultSet> {
        let planned = self.plan(query)?;
        let mut rs = self.execute_plan(query, planned.plan, planned.params.as_ref())?;
        rs.timings.planning = planned.planning;
        Ok(rs)
    }

    /// Runs a fixed plan; index plans need `params`.
    pub fn execute_plan(&self, query: &HybridQuery, plan: PlanChoice, params: Option<&SubqueryParams>) -> Result<ResultSet> {
        plan.validate(self.table.schema().num_vector_columns())?;
        match plan {
            PlanChoice::SequentialScan => exec_sequential(&self.table, query),
            PlanChoice::DecomposedIndexScan => {
                let params = params.ok_or_else(|| Error::InvalidPlan("decomposed plan needs parameters".into()))?;
                exec_decomposed(&self.table, &self.index_refs()?, query, params)
            }
            PlanChoice::SingleIndexScan(i) => {
                let params = params.ok_or_else(|| Error::InvalidPlan("single-index plan needs parameters".into()))?;
                let idx = self.index_refs()?[i];
                let p = params
                    .columns
                    .get(i)
                    .ok_or_else(|| Error::InvalidPlan(format!("no parameters for column {i}")))?;
                exec_single_index(&self.table, idx, i, query, p)
            }
        }
    }

    pub fn cost(&self, result: &ResultSet) -> f64 {
        self.config.cost.cost(result, &self.vector_dims())
    }

    /// Inserts into the table and every built index; statistics are rebuilt
    /// once they go stale. Rows stay in the pending buffer until
    /// [`Engine::apply_pending_updates`].
    pub fn insert_batch(&mut self, tuples: Vec<Tuple>) -> Result<usize> {
        let staged: Vec<(u64, Vec<Vec<f32>>)> = tuples.iter().map(|t| (t.id, t.vectors.clone())).collect();
        let n = self.table.insert_batch(tuples)?;
        if !self.indexes.is_empty() {
            for (id, vectors) in &staged {
                for (idx, v) in self.indexes.iter_mut().zip(vectors) {
                    idx.insert(*id, v)?;
                }
            }
        }
        if let Some(stats) = &mut self.stats {
            stats.refresh(&self.table)?;
        }
        Ok(n)
    }

    /// Fine-tunes the encoder on buffered inserts. Returns `None` when the
    /// buffer is empty.
    pub fn apply_pending_updates(&mut self) -> Result<Option<Vec<Vec<f64>>>> {
        let pending = self.table.pending_updates().to_vec();
        if pending.is_empty() {
            return Ok(None);
        }
        let encoder = self
            .encoder
            .as_mut()
            .ok_or_else(|| Error::EngineNotReady("encoder is not trained".into()))?;
        encoder.incremental_update(&mut self.table, &pending).map(Some)
    }

    /// Writes everything built so far into `dir`. Components that were never
    /// built are left out, and stale files for them are removed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        serde_json::to_writer_pretty(File::create(dir.join(CONFIG_FILE))?, &self.config)?;
        save_table(&self.table, &dir.join(TABLE_DIR))?;
        let pending = dir.join(PENDING_FILE);
        if self.table.pending_updates().is_empty() {
            remove_if_exists(&pending)?;
        } else {
            serde_json::to_writer(File::create(&pending)?, self.table.pending_updates())?;
        }
        for i in 0..self.table.schema().num_vector_columns() {
            let path = dir.join(index_file(i));
            match self.indexes.get(i) {
                Some(idx) => save_index(idx, BufWriter::new(File::create(path)?))?,
                None => remove_if_exists(&path)?,
            }
        }
        match &self.stats {
            Some(s) => s.save(BufWriter::new(File::create(dir.join(STATS_FILE))?))?,
            None => remove_if_exists(&dir.join(STATS_FILE))?,
        }
        match &self.encoder {
            Some(e) => save_bundle(e, &dir.join(ENCODER_DIR))?,
            None => remove_dir_if_exists(&dir.join(ENCODER_DIR))?,
        }
        match &self.models {
            Some(m) => save_models(m, &dir.join(MODELS_DIR))?,
            None => remove_dir_if_exists(&dir.join(MODELS_DIR))?,
        }
        Ok(())
    }

    /// Loads an engine saved with [`Engine::save`]; missing components stay
    /// unbuilt.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: EngineConfig = serde_json::from_reader(BufReader::new(File::open(dir.join(CONFIG_FILE))?))?;
        let mut table = load_table(&dir.join(TABLE_DIR))?;
        let pending = dir.join(PENDING_FILE);
        if pending.exists() {
            let ids: Vec<u64> = serde_json::from_reader(BufReader::new(File::open(pending)?))?;
            table.set_pending_updates(ids)?;
        }
        let n = table.schema().num_vector_columns();
        let mut engine = Engine::new(table, config);
        let paths: Vec<PathBuf> = (0..n).map(|i| dir.join(index_file(i))).collect();
        if paths.iter().all(|p| p.exists()) {
            let indexes = paths
                .iter()
                .map(|p| load_index(BufReader::new(File::open(p)?)))
                .collect::<Result<Vec<_>>>()?;
            engine.set_indexes(indexes)?;
        }
        if dir.join(STATS_FILE).exists() {
            engine.set_stats(StatsCatalog::load(BufReader::new(File::open(dir.join(STATS_FILE))?))?);
        }
        if dir.join(ENCODER_DIR).exists() {
            engine.set_encoder(load_bundle(&dir.join(ENCODER_DIR))?);
        }
        if dir.join(MODELS_DIR).exists() {
            engine.set_models(load_models(&dir.join(MODELS_DIR))?)?;
        }
        Ok(engine)
    }
}

const CONFIG_FILE: &str = "engine.json";
const TABLE_DIR: &str = "table";
const PENDING_FILE: &str = "pending.json";
const STATS_FILE: &str = "stats.bin";
const ENCODER_DIR: &str = "encoder";
const MODELS_DIR: &str = "optimizer";

fn index_file(column: usize) -> String {
    format!("index_{column}.hnsw")
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

fn remove_dir_if_exists(path: &Path) -> Result<()> {
    match fs::remove_dir_all(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}
