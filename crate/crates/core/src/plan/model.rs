//! The optimizer's networks: a plan classifier over `N + 2` classes, a
//! per-column parameter regressor in log2 space and a per-column
//! iterative-scan mode classifier. The regressor and mode classifier share
//! their inputs; they are separate networks because the substrate trains a
//! single loss per network.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::training::{Configuration, TrainingExample};
use super::{ColumnParams, PlanChoice, SubqueryParams};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, SCALAR_SLOTS};
use crate::index::IterativeScan;
use crate::nn::{self, Activation, FeedForwardNet, Loss, OptimizerKind, Standardizer, TrainConfig};
use crate::store::HybridQuery;

/// Fewest examples `OptimizerModels::train` accepts.
pub const MIN_EXAMPLES: usize = 50;
const FORMAT_VERSION: u32 = 1;
const MODES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub plan_hidden: Vec<usize>,
    pub param_hidden: Vec<usize>,
    pub plan_train: TrainConfig,
    pub param_train: TrainConfig,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let base = TrainConfig {
            loss: Loss::CrossEntropy,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 150,
            seed: 0x0b7,
            optimizer: OptimizerKind::adam(),
        };
        ModelConfig {
            plan_hidden: vec![64, 32],
            param_hidden: vec![64, 32],
            plan_train: base,
            param_train: TrainConfig {
                loss: Loss::MeanSquaredError,
                ..base
            },
            holdout_fraction: 0.2,
            seed: 0x0b7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan_train.validate()?;
        self.param_train.validate()?;
        if !(0.0..0.9).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig("holdout_fraction must lie in [0, 0.9)".into()));
        }
        if self.plan_hidden.contains(&0) || self.param_hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layers must be non-empty".into()));
        }
        Ok(())
    }
}

/// Held-out quality of freshly trained models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub train_examples: usize,
    pub holdout_examples: usize,
    pub plan_train_accuracy: f64,
    pub plan_accuracy: f64,
    /// Held-out label counts per plan class.
    pub holdout_class_counts: Vec<usize>,
    pub mode_accuracy: f64,
    /// Mean absolute error of `log2 k_i/k`, `log2 ef_search` and
    /// `log2 max_scan/k_i` on held-out rows.
    pub param_mae_log2: [f64; 3],
    pub plan_final_loss: f64,
    pub param_final_loss: f64,
}

/// Slot offsets inside `X_in`, recovered from its width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Slots {
    n: usize,
    width: usize,
    probe: usize,
    selectivity: usize,
    weights: usize,
    k_norm: usize,
}

impl Slots {
    fn new(n: usize, width: usize) -> Result<Self> {
        let fixed = 3 * n + 4;
        if width < fixed || (width - fixed) % SCALAR_SLOTS != 0 {
            return Err(Error::LayoutMismatch(format!("{width} features cannot hold {n} vector columns")));
        }
        let m = (width - fixed) / SCALAR_SLOTS;
        let probe = n + m * SCALAR_SLOTS + 1;
        Ok(Slots {
            n,
            width,
            probe,
            selectivity: probe + n + 1,
            weights: probe + n + 2,
            k_norm: probe + 2 * n + 2,
        })
    }

    /// `X_in` plus log transforms of the slots spanning orders of magnitude.
    fn model_input(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        v.push((x[self.selectivity] + 1e-5).ln());
        v.push((x[self.k_norm] + 1e-7).ln());
        v.extend(x[self.probe..self.probe + self.n].iter().map(|r| (r + 0.01).ln()));
        v
    }

    fn param_input(&self, base: &[f64], column: usize, x: &[f64], single: bool) -> Vec<f64> {
        let mut v = base.to_vec();
        v.extend((0..self.n).map(|i| if i == column { 1.0 } else { 0.0 }));
        v.push(x[self.weights + column]);
        v.push(if single { 1.0 } else { 0.0 });
        v
    }
}

fn param_targets(p: &ColumnParams, k: usize) -> Vec<f64> {
    vec![
        (p.k as f64 / k as f64).log2(),
        (p.ef_search as f64).log2(),
        (p.max_scan_tuples as f64 / p.k as f64).log2(),
    ]
}

fn one_hot(class: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i == class { 1.0 } else { 0.0 }).collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    config: ModelConfig,
    slots: Slots,
    plan_norm: Standardizer,
    param_norm: Standardizer,
    target_norm: Standardizer,
    metrics: ValidationMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerModels {
    plan_net: FeedForwardNet,
    param_net: FeedForwardNet,
    mode_net: FeedForwardNet,
    meta: Meta,
}

struct ParamRows {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    modes: Vec<Vec<f64>>,
}

impl OptimizerModels {
    pub fn feature_width(&self) -> usize {
        self.meta.slots.width
    }

    pub fn num_vector_columns(&self) -> usize {
        self.meta.slots.n
    }

    pub fn metrics(&self) -> &ValidationMetrics {
        &self.meta.metrics
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    fn check(&self, x: &FeatureVector) -> Result<()> {
        if x.values.len() != self.meta.slots.width {
            return Err(Error::LayoutMismatch(format!(
                "models expect {} features, got {}",
                self.meta.slots.width,
                x.values.len()
            )));
        }
        Ok(())
    }

    /// Softmax probabilities over plan classes.
    pub fn plan_probabilities(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check(x)?;
        let input = self.meta.plan_norm.apply(&self.meta.slots.model_input(&x.values));
        Ok(nn::softmax(&self.plan_net.forward(&input)?))
    }

    pub fn select_plan(&self, x: &FeatureVector) -> Result<PlanChoice> {
        let p = self.plan_probabilities(x)?;
        PlanChoice::from_class(argmax(&p), self.meta.slots.n)
    }

    fn predict_column(&self, x: &[f64], base: &[f64], column: usize, single: bool, k: usize, rows: usize) -> Result<ColumnParams> {
        let input = self
            .meta
            .param_norm
            .apply(&self.meta.slots.param_input(base, column, x, single));
        let z = self.param_net.forward(&input)?;
        let t: Vec<f64> = z
            .iter()
            .zip(&self.meta.target_norm.mean)
            .zip(&self.meta.target_norm.std)
            .map(|((z, m), s)| z * s + m)
            .collect();
        let mode = argmax(&self.mode_net.forward(&input)?);
        let pow = |e: f64| 2f64.powf(e.clamp(-2.0, 40.0));
        let k_i = (k as f64 * pow(t[0])).round().max(1.0) as usize;
        Ok(ColumnParams {
            k: k_i,
            ef_search: pow(t[1]).round() as usize,
            iterative_scan: IterativeScan::from_index(mode).unwrap_or(IterativeScan::Strict),
            max_scan_tuples: (k_i as f64 * pow(t[2])).round().min(usize::MAX as f64 / 2.0) as usize,
        }
        .clamped(k, rows))
    }

    /// Per-column parameters for a decomposed plan, clamped to valid ranges.
    pub fn recommend_params(&self, x: &FeatureVector, query: &HybridQuery, table_rows: usize) -> Result<SubqueryParams> {
        self.check(x)?;
        let base = self.meta.slots.model_input(&x.values);
        Ok(SubqueryParams {
            columns: (0..self.meta.slots.n)
                .map(|i| self.predict_column(&x.values, &base, i, false, query.k, table_rows))
                .collect::<Result<_>>()?,
        })
    }

    /// Parameters for a single-index plan on `column`.
    pub fn recommend_single(
        &self,
        x: &FeatureVector,
        query: &HybridQuery,
        column: usize,
        table_rows: usize,
    ) -> Result<ColumnParams> {
        self.check(x)?;
        if column >= self.meta.slots.n {
            return Err(Error::InvalidPlan(format!("single-index column {column} out of range")));
        }
        let base = self.meta.slots.model_input(&x.values);
        self.predict_column(&x.values, &base, column, true, query.k, table_rows)
    }

    fn param_rows(slots: &Slots, examples: &[&TrainingExample]) -> ParamRows {
        let mut rows = ParamRows {
            inputs: Vec::new(),
            targets: Vec::new(),
            modes: Vec::new(),
        };
        for e in examples {
            let base = slots.model_input(&e.features);
            let mut push = |column: usize, single: bool, p: &ColumnParams| {
                rows.inputs.push(slots.param_input(&base, column, &e.features, single));
                rows.targets.push(param_targets(p, e.query.k));
                rows.modes.push(one_hot(p.iterative_scan.index(), MODES));
            };
            if let Configuration::Decomposed(p) = &e.best_for(PlanChoice::DecomposedIndexScan).config {
                for (i, c) in p.columns.iter().enumerate() {
                    push(i, false, c);
                }
            }
            for i in 0..slots.n {
                if let Configuration::Single(col, p) = &e.best_for(PlanChoice::SingleIndexScan(i)).config {
                    push(*col, true, p);
                }
            }
        }
        rows
    }

    /// Trains all three networks on an 80/20 (by default) seeded split.
    pub fn train(examples: &[TrainingExample], config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if examples.len() < MIN_EXAMPLES {
            return Err(Error::InsufficientData {
                needed: MIN_EXAMPLES,
                got: examples.len(),
            });
        }
        let n = examples[0].query.vectors.len();
        let slots = Slots::new(n, examples[0].features.len())?;
        if let Some(bad) = examples
            .iter()
            .find(|e| e.features.len() != slots.width || e.query.vectors.len() != n || e.class_best.len() != n + 2)
        {
            return Err(Error::LayoutMismatch(format!(
                "example with {} features and {} columns does not match the first example",
                bad.features.len(),
                bad.query.vectors.len()
            )));
        }

        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        let holdout = (examples.len() as f64 * config.holdout_fraction).round() as usize;
        let (held, trained) = order.split_at(holdout);
        let train_ex: Vec<&TrainingExample> = trained.iter().map(|&i| &examples[i]).collect();
        let held_ex: Vec<&TrainingExample> = held.iter().map(|&i| &examples[i]).collect();
        let classes = PlanChoice::num_classes(n);

        // Plan classifier.
        let plan_raw: Vec<Vec<f64>> = train_ex.iter().map(|e| slots.model_input(&e.features)).collect();
        let plan_norm = Standardizer::fit(&plan_raw);
        let plan_in: Vec<Vec<f64>> = plan_raw.iter().map(|r| plan_norm.apply(r)).collect();
        let plan_t: Vec<Vec<f64>> = train_ex
            .iter()
            .map(|e| one_hot(e.label_plan().class_index(), classes))
            .collect();
        let mut sizes = vec![plan_in[0].len()];
        sizes.extend(&config.plan_hidden);
        sizes.push(classes);
        let mut plan_net = FeedForwardNet::new(&sizes, Activation::Relu, Activation::Identity, config.seed)?;
        let plan_curve = nn::train(
            &mut plan_net,
            &plan_in,
            &plan_t,
            &TrainConfig {
                loss: Loss::CrossEntropy,
                ..config.plan_train
            },
        )?;

        // Parameter regressor and mode classifier.
        let rows = Self::param_rows(&slots, &train_ex);
        let param_norm = Standardizer::fit(&rows.inputs);
        let target_norm = Standardizer::fit(&rows.targets);
        let p_in: Vec<Vec<f64>> = rows.inputs.iter().map(|r| param_norm.apply(r)).collect();
        let p_t: Vec<Vec<f64>> = rows.targets.iter().map(|r| target_norm.apply(r)).collect();
        let mut sizes = vec![p_in[0].len()];
        sizes.extend(&config.param_hidden);
        sizes.push(3);
        let mut param_net = FeedForwardNet::new(&sizes, Activation::Relu, Activation::Identity, config.seed ^ 1)?;
        let param_curve = nn::train(
            &mut param_net,
            &p_in,
            &p_t,
            &TrainConfig {
                loss: Loss::MeanSquaredError,
                ..config.param_train
            },
        )?;
        *sizes.last_mut().unwrap() = MODES;
        let mut mode_net = FeedForwardNet::new(&sizes, Activation::Relu, Activation::Identity, config.seed ^ 2)?;
        nn::train(
            &mut mode_net,
            &p_in,
            &rows.modes,
            &TrainConfig {
                loss: Loss::CrossEntropy,
                ..config.param_train
            },
        )?;

        let mut models = OptimizerModels {
            plan_net,
            param_net,
            mode_net,
            meta: Meta {
                format_version: FORMAT_VERSION,
                config: config.clone(),
                slots,
                plan_norm,
                param_norm,
                target_norm,
                metrics: ValidationMetrics::default(),
            },
        };
        models.meta.metrics = models.evaluate_split(&train_ex, &held_ex)?;
        models.meta.metrics.plan_final_loss = plan_curve.last().copied().unwrap_or(f64::NAN);
        models.meta.metrics.param_final_loss = param_curve.last().copied().unwrap_or(f64::NAN);
        Ok(models)
    }

    fn plan_accuracy(&self, examples: &[&TrainingExample]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(f64::NAN);
        }
        let mut hit = 0;
        for e in examples {
            let x = FeatureVector {
                values: e.features.clone(),
            };
            if self.select_plan(&x)? == e.label_plan() {
                hit += 1;
            }
        }
        Ok(hit as f64 / examples.len() as f64)
    }

    fn evaluate_split(&self, train: &[&TrainingExample], held: &[&TrainingExample]) -> Result<ValidationMetrics> {
        let slots = &self.meta.slots;
        let mut class_counts = vec![0; PlanChoice::num_classes(slots.n)];
        for e in held {
            class_counts[e.label_plan().class_index()] += 1;
        }
        let rows = Self::param_rows(slots, held);
        let mut mae = [0.0; 3];
        let mut mode_hits = 0;
        for ((input, target), mode) in rows.inputs.iter().zip(&rows.targets).zip(&rows.modes) {
            let z = self.meta.param_norm.apply(input);
            let out = self.param_net.forward(&z)?;
            for j in 0..3 {
                let pred = out[j] * self.meta.target_norm.std[j] + self.meta.target_norm.mean[j];
                mae[j] += (pred - target[j]).abs();
            }
            if argmax(&self.mode_net.forward(&z)?) == argmax(mode) {
                mode_hits += 1;
            }
        }
        let count = rows.inputs.len();
        if count > 0 {
            mae.iter_mut().for_each(|m| *m /= count as f64);
        }
        Ok(ValidationMetrics {
            train_examples: train.len(),
            holdout_examples: held.len(),
            plan_train_accuracy: self.plan_accuracy(train)?,
            plan_accuracy: self.plan_accuracy(held)?,
            holdout_class_counts: class_counts,
            mode_accuracy: if count > 0 { mode_hits as f64 / count as f64 } else { f64::NAN },
            param_mae_log2: mae,
            plan_final_loss: f64::NAN,
            param_final_loss: f64::NAN,
        })
    }

    /// Plan accuracy on arbitrary labeled examples.
    pub fn evaluate(&self, examples: &[TrainingExample]) -> Result<f64> {
        let refs: Vec<&TrainingExample> = examples.iter().collect();
        self.plan_accuracy(&refs)
    }
}

const META_FILE: &str = "optimizer.json";
const NETS: [&str; 3] = ["plan.hqnn", "params.hqnn", "mode.hqnn"];

pub fn save_models(models: &OptimizerModels, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(META_FILE))?), &models.meta)?;
    for (name, net) in NETS.iter().zip([&models.plan_net, &models.param_net, &models.mode_net]) {
        nn::save_net(net, BufWriter::new(File::create(dir.join(name))?))?;
    }
    Ok(())
}

pub fn load_models(dir: &Path) -> Result<OptimizerModels> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::ModelMissing);
    }
    let meta: Meta = serde_json::from_reader(BufReader::new(File::open(meta_path)?))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported optimizer format {}", meta.format_version)));
    }
    let load = |name: &str| -> Result<FeedForwardNet> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::ModelMissing);
        }
        nn::load_net(BufReader::new(File::open(path)?))
    };
    let plan_net = load(NETS[0])?;
    let param_net = load(NETS[1])?;
    let mode_net = load(NETS[2])?;
    if plan_net.output_size() != PlanChoice::num_classes(meta.slots.n)
        || plan_net.input_size() != meta.plan_norm.mean.len()
        || param_net.input_size() != meta.param_norm.mean.len()
    {
        return Err(Error::LayoutMismatch("stored networks do not match their metadata".into()));
    }
    Ok(OptimizerModels {
        plan_net,
        param_net,
        mode_net,
        meta,
    })
}
