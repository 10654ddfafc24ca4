//! Key-value configuration file (TOML) shared by all subcommands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hybridq_core::bench::{TableSpec, WorkloadSpec};
use hybridq_core::encoder::EncoderConfig;
use hybridq_core::exec::EngineConfig;
use hybridq_core::plan::{LabelOptions, ModelConfig};
use serde::Deserialize;

/// Every section is optional; absent keys keep their defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Overrides the configuration stored with an engine directory.
    pub engine: Option<EngineConfig>,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub labels: LabelOptions,
    /// Seed for sampling and labeling optimizer training queries.
    pub label_seed: u64,
    #[serde(skip)]
    seed: Option<u64>,
}

impl Config {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg: Config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Config::default(),
        };
        if let Some(s) = seed {
            cfg.seed = Some(s);
            cfg.encoder.seed = s;
            cfg.model.seed = s;
            cfg.label_seed = s;
            if let Some(e) = &mut cfg.engine {
                e.index.seed = s;
            }
        }
        Ok(cfg)
    }

    /// The engine configuration to use, layered over `base`.
    pub fn engine_config(&self, base: &EngineConfig) -> EngineConfig {
        let mut c = self.engine.clone().unwrap_or_else(|| base.clone());
        if let Some(s) = self.seed {
            c.index.seed = s;
        }
        c
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratifier {
    /// Exact selectivity by full scan.
    #[default]
    Selectivity,
    /// Mean local satisfaction rate of an unfiltered probe.
    LocalRate,
}

/// Benchmark description read by `benchgen --spec`.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    /// Generate a synthetic table; without it the workload targets `--db`.
    pub table: Option<TableSpec>,
    pub workload: WorkloadSpec,
    pub stratify: Stratifier,
    pub probe_k: usize,
    pub stats_bins: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            table: None,
            workload: WorkloadSpec::default(),
            stratify: Stratifier::Selectivity,
            probe_k: 50,
            stats_bins: 100,
        }
    }
}

impl BenchSpec {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
        let mut spec: BenchSpec = toml::from_str(&text).with_context(|| format!("parsing spec {}", path.display()))?;
        if let Some(s) = seed {
            spec.workload.seed = s;
            if let Some(t) = &mut spec.table {
                t.seed = s;
            }
        }
        Ok(spec)
    }
}
