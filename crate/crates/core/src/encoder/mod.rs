//! Learns the joint distribution of each vector column and the scalar
//! columns, so that an unusual vector/predicate pairing shows up as a high
//! reconstruction error.
//!
//! Per vector column `i`:
//! - `M` frozen predictors map the vector to each scalar column,
//! - one trainable projector maps the vector to a small free embedding,
//! - an autoencoder reconstructs `[frozen outputs ; projector ; E_s]`, where
//!   `E_s` is the one-hot encoding of every scalar column.

mod persist;
mod scalar;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{
    self, Activation, FeedForwardNet, Gradients, Loss, Optimizer, OptimizerKind, Standardizer, TrainConfig,
};
use crate::store::{HybridQuery, Predicate, Table};

pub use scalar::{fit_scalar_encoders, representative_values, ScalarEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Bins for numeric scalar one-hot encodings.
    pub bins: usize,
    /// Most frequent categories kept per categorical column; the rest map to OTHER.
    pub max_categories: usize,
    pub sample_fraction: f64,
    pub min_samples: usize,
    pub max_samples: usize,
    pub frozen_hidden: usize,
    pub trainable_hidden: usize,
    pub trainable_out: usize,
    pub predictor_train: TrainConfig,
    pub autoencoder_train: TrainConfig,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    /// Strength of the L2 pull toward pre-update weights while fine-tuning.
    pub finetune_anchor: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let base = TrainConfig {
            loss: Loss::MeanSquaredError,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            optimizer: OptimizerKind::adam(),
        };
        EncoderConfig {
            bins: 10,
            max_categories: 64,
            sample_fraction: 0.1,
            min_samples: 2000,
            max_samples: 50_000,
            frozen_hidden: 64,
            trainable_hidden: 64,
            trainable_out: 16,
            predictor_train: base,
            autoencoder_train: TrainConfig { epochs: 30, ..base },
            finetune_epochs: 10,
            finetune_learning_rate: 5e-4,
            finetune_anchor: 10.0,
            seed: 0x00e1_c0de,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.max_categories == 0 {
            return Err(Error::InvalidConfig("bins and max_categories must be positive".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidConfig("sample_fraction must be in (0, 1]".into()));
        }
        if self.frozen_hidden == 0 || self.trainable_hidden == 0 || self.trainable_out == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.finetune_epochs == 0 {
            return Err(Error::InvalidConfig("finetune_epochs must be positive".into()));
        }
        if !(self.finetune_anchor >= 0.0) {
            return Err(Error::InvalidConfig("finetune_anchor must be non-negative".into()));
        }
        self.predictor_train.validate()?;
        self.autoencoder_train.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn sample_size(&self, n: usize) -> usize {
        let frac = (n as f64 * self.sample_fraction).ceil() as usize;
        frac.max(self.min_samples).min(self.max_samples).min(n)
    }
}

/// What a frozen predictor's output means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PredictorTarget {
    /// Regression on the z-scored value.
    Numeric { mean: f64, std: f64 },
    /// Classification over the encoder's kept categories.
    Categorical { classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ColumnModel {
    pub(crate) input_norm: Standardizer,
    pub(crate) frozen: Vec<FeedForwardNet>,
    pub(crate) trainable: FeedForwardNet,
    pub(crate) autoencoder: Option<FeedForwardNet>,
}

/// Per-column reconstruction errors for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionScore {
    pub per_column: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBundle {
    pub(crate) config: EncoderConfig,
    pub(crate) vector_dims: Vec<usize>,
    pub(crate) scalar_names: Vec<String>,
    pub(crate) scalar_encoders: Vec<ScalarEncoder>,
    pub(crate) targets: Vec<PredictorTarget>,
    pub(crate) columns: Vec<ColumnModel>,
    pub(crate) predictors_trained: bool,
}

impl EncoderBundle {
    /// Fits scalar encoders and initializes (untrained) networks.
    pub fn new(table: &Table, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let scalar_encoders = fit_scalar_encoders(table, config.bins, config.max_categories)?;
        let schema = table.schema();
        let targets: Vec<PredictorTarget> = scalar_encoders
            .iter()
            .enumerate()
            .map(|(j, enc)| match enc {
                ScalarEncoder::Categorical { categories } => PredictorTarget::Categorical {
                    classes: categories.len(),
                },
                ScalarEncoder::Numeric { .. } => {
                    let values = table.numeric_column(j).expect("numeric");
                    let s = Standardizer::fit(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>());
                    PredictorTarget::Numeric {
                        mean: s.mean[0],
                        std: s.std[0],
                    }
                }
            })
            .collect();
        let mut seed = config.seed;
        let mut next_seed = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            seed
        };
        let mut columns = Vec::new();
        for (i, def) in schema.vector_columns.iter().enumerate() {
            let rows = sample_rows(table.len(), config.sample_size(table.len()), config.seed ^ i as u64);
            let sample: Vec<Vec<f64>> = rows.iter().map(|&r| to_f64(table.vector(i, r))).collect();
            let input_norm = Standardizer::fit(&sample);
            let frozen = targets
                .iter()
                .map(|t| {
                    let out = match t {
                        PredictorTarget::Numeric { .. } => 1,
                        PredictorTarget::Categorical { classes } => (*classes).max(1),
                    };
                    FeedForwardNet::new(
                        &[def.dim, config.frozen_hidden, config.frozen_hidden, out],
                        Activation::Relu,
                        Activation::Identity,
                        next_seed(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let trainable = FeedForwardNet::new(
                &[def.dim, config.trainable_hidden, config.trainable_out],
                Activation::Relu,
                Activation::Identity,
                next_seed(),
            )?;
            columns.push(ColumnModel {
                input_norm,
                frozen,
                trainable,
                autoencoder: None,
            });
        }
        Ok(EncoderBundle {
            config,
            vector_dims: schema.vector_columns.iter().map(|c| c.dim).collect(),
            scalar_names: schema.scalar_columns.iter().map(|c| c.name.clone()).collect(),
            scalar_encoders,
            targets,
            columns,
            predictors_trained: false,
        })
    }

    /// Runs the full pipeline: scalar encoders, frozen predictors, then one
    /// autoencoder per vector column.
    pub fn fit(table: &Table, config: EncoderConfig) -> Result<Self> {
        let mut b = EncoderBundle::new(table, config)?;
        b.train_frozen_predictors(table)?;
        for i in 0..b.columns.len() {
            b.train_autoencoder(table, i)?;
        }
        Ok(b)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn scalar_encoders(&self) -> &[ScalarEncoder] {
        &self.scalar_encoders
    }

    pub fn num_vector_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn frozen_net(&self, column: usize, scalar: usize) -> &FeedForwardNet {
        &self.columns[column].frozen[scalar]
    }

    pub fn trainable_net(&self, column: usize) -> &FeedForwardNet {
        &self.columns[column].trainable
    }

    pub fn autoencoder(&self, column: usize) -> Option<&FeedForwardNet> {
        self.columns[column].autoencoder.as_ref()
    }

    pub fn is_trained(&self) -> bool {
        self.predictors_trained && self.columns.iter().all(|c| c.autoencoder.is_some())
    }

    /// Width of `E_s`.
    pub fn scalar_width(&self) -> usize {
        self.scalar_encoders.iter().map(ScalarEncoder::width).sum()
    }

    /// Width of `E_v` for vector column `i`.
    pub fn vector_width(&self, column: usize) -> usize {
        let c = &self.columns[column];
        c.frozen.iter().map(FeedForwardNet::output_size).sum::<usize>() + c.trainable.output_size()
    }

    /// Trains one predictor per (vector column, scalar column) on a sample of
    /// the table, then freezes it. Returns the final epoch loss of each.
    pub fn train_frozen_predictors(&mut self, table: &Table) -> Result<Vec<Vec<f64>>> {
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        let rows = sample_rows(table.len(), self.config.sample_size(table.len()), self.config.seed);
        let cfg = self.config.predictor_train;
        let losses = self.fit_predictors(table, &rows, cfg, None)?;
        self.predictors_trained = true;
        Ok(losses)
    }

    fn fit_predictors(
        &mut self,
        table: &Table,
        rows: &[usize],
        cfg: TrainConfig,
        anchor: Option<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let targets: Vec<Vec<Vec<f64>>> = (0..self.targets.len())
            .map(|j| rows.iter().map(|&r| self.predictor_target(table, j, r)).collect())
            .collect();
        let mut losses = Vec::new();
        for i in 0..self.columns.len() {
            let inputs: Vec<Vec<f64>> =
                rows.iter().map(|&r| self.columns[i].input_norm.apply(&to_f64(table.vector(i, r)))).collect();
            let mut col_losses = Vec::new();
            for j in 0..self.targets.len() {
                let loss = match self.targets[j] {
                    PredictorTarget::Numeric { .. } => Loss::MeanSquaredError,
                    PredictorTarget::Categorical { .. } => Loss::CrossEntropy,
                };
                let net = &mut self.columns[i].frozen[j];
                let before = anchor.map(|lambda| (net.clone(), lambda));
                net.unfreeze();
                let curve = nn::train_anchored(
                    net,
                    &inputs,
                    &targets[j],
                    &TrainConfig {
                        loss,
                        seed: cfg.seed ^ ((i as u64) << 32 | j as u64),
                        ..cfg
                    },
                    before.as_ref().map(|(n, l)| (n, *l)),
                )?;
                net.freeze();
                col_losses.push(*curve.last().expect("epochs >= 1"));
            }
            losses.push(col_losses);
        }
        Ok(losses)
    }

    fn predictor_target(&self, table: &Table, j: usize, row: usize) -> Vec<f64> {
        match &self.targets[j] {
            PredictorTarget::Numeric { mean, std } => {
                vec![(table.numeric_column(j).expect("numeric")[row] - mean) / std]
            }
            PredictorTarget::Categorical { classes } => {
                let mut t = vec![0.0; (*classes).max(1)];
                let value = table.scalar(j, row).to_owned();
                if let Some(slot) = self.scalar_encoders[j].slot(&value) {
                    if slot < *classes {
                        t[slot] = 1.0;
                    }
                }
                t
            }
        }
    }

    fn check_dim(&self, column: usize, v: &[f32]) -> Result<()> {
        let expected = *self
            .vector_dims
            .get(column)
            .ok_or_else(|| Error::UnknownColumn(format!("vector column {column}")))?;
        if v.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: v.len() });
        }
        Ok(())
    }

    fn frozen_segment(&self, column: usize, x: &[f64]) -> Result<Vec<f64>> {
        let c = &self.columns[column];
        let mut out = Vec::new();
        for (net, t) in c.frozen.iter().zip(&self.targets) {
            let y = net.forward(x)?;
            match t {
                PredictorTarget::Numeric { .. } => out.extend(y),
                PredictorTarget::Categorical { .. } => out.extend(nn::softmax(&y)),
            }
        }
        Ok(out)
    }

    /// `E_v`: frozen predictor outputs in scalar-column order, then the
    /// trainable projection.
    pub fn encode_vector(&self, column: usize, v: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(column, v)?;
        let x = self.columns[column].input_norm.apply(&to_f64(v));
        let mut e = self.frozen_segment(column, &x)?;
        e.extend(self.columns[column].trainable.forward(&x)?);
        Ok(e)
    }

    /// `E_s` for a stored row.
    pub fn encode_row_scalars(&self, table: &Table, row: usize) -> Vec<f64> {
        self.scalar_encoders
            .iter()
            .enumerate()
            .flat_map(|(j, enc)| enc.encode(&table.scalar(j, row).to_owned()))
            .collect()
    }

    /// `E_s` for a query: each column's predicates are reduced to one
    /// representative value; unconstrained columns get a uniform vector.
    pub fn encode_predicates(&self, predicates: &[Predicate]) -> Result<Vec<f64>> {
        let reps = representative_values(&self.scalar_names, &self.scalar_encoders, predicates)?;
        Ok(self
            .scalar_encoders
            .iter()
            .zip(&reps)
            .flat_map(|(enc, rep)| match rep {
                Some(v) => enc.encode(v),
                None => enc.uniform(),
            })
            .collect())
    }

    fn autoencoder_ready(&self, column: usize) -> Result<&FeedForwardNet> {
        self.columns
            .get(column)
            .ok_or_else(|| Error::UnknownColumn(format!("vector column {column}")))?
            .autoencoder
            .as_ref()
            .ok_or_else(|| Error::NotFitted(format!("autoencoder for vector column {column}")))
    }

    /// Mean squared reconstruction error of an already-assembled `E`.
    pub fn reconstruction_error_encoded(&self, column: usize, e: &[f64]) -> Result<f64> {
        let ae = self.autoencoder_ready(column)?;
        let out = ae.forward(e)?;
        Ok(Loss::MeanSquaredError.value(&out, e))
    }

    pub fn reconstruction_error(&self, column: usize, q: &[f32], predicates: &[Predicate]) -> Result<f64> {
        self.autoencoder_ready(column)?;
        let mut e = self.encode_vector(column, q)?;
        e.extend(self.encode_predicates(predicates)?);
        self.reconstruction_error_encoded(column, &e)
    }

    /// Data-side error of a stored tuple.
    pub fn row_reconstruction_error(&self, table: &Table, column: usize, row: usize) -> Result<f64> {
        self.autoencoder_ready(column)?;
        let mut e = self.encode_vector(column, table.vector(column, row))?;
        e.extend(self.encode_row_scalars(table, row));
        self.reconstruction_error_encoded(column, &e)
    }

    pub fn score(&self, query: &HybridQuery) -> Result<ReconstructionScore> {
        let per_column = (0..self.columns.len())
            .map(|i| self.reconstruction_error(i, &query.vectors[i], &query.predicates))
            .collect::<Result<_>>()?;
        Ok(ReconstructionScore { per_column })
    }

    /// Trains the column-`i` autoencoder end to end with the trainable
    /// projector; frozen predictors are read only.
    pub fn train_autoencoder(&mut self, table: &Table, column: usize) -> Result<Vec<f64>> {
        if !self.predictors_trained {
            return Err(Error::NotFitted("frozen predictors".into()));
        }
        if column >= self.columns.len() {
            return Err(Error::UnknownColumn(format!("vector column {column}")));
        }
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        let width = self.vector_width(column) + self.scalar_width();
        if self.columns[column].autoencoder.is_none() {
            let bottleneck = (width / 4).max(8);
            let hidden = width.max(bottleneck * 2);
            self.columns[column].autoencoder = Some(FeedForwardNet::new(
                &[width, hidden, bottleneck, hidden, width],
                Activation::Relu,
                Activation::Identity,
                self.config.seed ^ 0xae ^ ((column as u64) << 8),
            )?);
        }
        let rows = sample_rows(
            table.len(),
            self.config.sample_size(table.len()),
            self.config.seed ^ 0x5a ^ column as u64,
        );
        let cfg = self.config.autoencoder_train;
        self.fit_autoencoder(table, column, &rows, cfg, None)
    }

    fn fit_autoencoder(
        &mut self,
        table: &Table,
        column: usize,
        rows: &[usize],
        cfg: TrainConfig,
        anchor: Option<f64>,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        struct Sample {
            x: Vec<f64>,
            frozen: Vec<f64>,
            scalars: Vec<f64>,
        }
        let samples: Vec<Sample> = rows
            .iter()
            .map(|&r| {
                let x = self.columns[column].input_norm.apply(&to_f64(table.vector(column, r)));
                Ok(Sample {
                    frozen: self.frozen_segment(column, &x)?,
                    scalars: self.encode_row_scalars(table, r),
                    x,
                })
            })
            .collect::<Result<_>>()?;

        let model = &mut self.columns[column];
        let ae = model.autoencoder.as_mut().expect("initialized");
        let tr = &mut model.trainable;
        let offset = samples[0].frozen.len();
        let tr_width = tr.output_size();
        let anchors = anchor.map(|lambda| (lambda, ae.clone(), tr.clone()));
        let mut ae_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, ae);
        let mut tr_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, tr);
        let mut ae_grads = Gradients::zeros_like(ae);
        let mut tr_grads = Gradients::zeros_like(tr);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ self.config.seed ^ column as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut curve = Vec::with_capacity(cfg.epochs);
        let mut e = Vec::new();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                ae_grads.clear();
                tr_grads.clear();
                for &s in batch {
                    let s = &samples[s];
                    let tr_trace = tr.forward_trace(&s.x)?;
                    e.clear();
                    e.extend_from_slice(&s.frozen);
                    e.extend_from_slice(tr_trace.output());
                    e.extend_from_slice(&s.scalars);
                    let ae_trace = ae.forward_trace(&e)?;
                    let (loss, g) = Loss::MeanSquaredError.value_and_grad(ae_trace.output(), &e);
                    total += loss;
                    let g_in = ae.backward(&ae_trace, &g, &mut ae_grads);
                    // E is both the input and the target, so its total
                    // gradient is (∂out/∂E)ᵀg − g.
                    let g_tr: Vec<f64> = (offset..offset + tr_width).map(|k| g_in[k] - g[k]).collect();
                    tr.backward(&tr_trace, &g_tr, &mut tr_grads);
                }
                let scale = 1.0 / batch.len() as f64;
                ae_grads.scale(scale);
                tr_grads.scale(scale);
                if let Some((lambda, ae0, tr0)) = &anchors {
                    ae_grads.add_anchor_penalty(ae, ae0, *lambda);
                    tr_grads.add_anchor_penalty(tr, tr0, *lambda);
                }
                ae_opt.step(ae, &ae_grads)?;
                tr_opt.step(tr, &tr_grads)?;
            }
            curve.push(total / samples.len() as f64);
        }
        Ok(curve)
    }

    /// Fine-tunes every network on newly inserted rows only: predictors are
    /// unfrozen, trained and re-frozen, then each autoencoder continues
    /// training. Clears the table's pending-update buffer. Returns the
    /// autoencoder loss curve per vector column.
    pub fn incremental_update(&mut self, table: &mut Table, new_ids: &[u64]) -> Result<Vec<Vec<f64>>> {
        if new_ids.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if !self.is_trained() {
            return Err(Error::NotFitted("bundle must be trained before fine-tuning".into()));
        }
        let rows = new_ids
            .iter()
            .map(|&id| table.row_of(id).ok_or(Error::UnknownId(id)))
            .collect::<Result<Vec<_>>>()?;
        let tune = |base: TrainConfig| TrainConfig {
            epochs: self.config.finetune_epochs,
            learning_rate: self.config.finetune_learning_rate,
            seed: base.seed ^ 0xf1,
            ..base
        };
        let (pcfg, acfg) = (tune(self.config.predictor_train), tune(self.config.autoencoder_train));
        self.fit_predictors(table, &rows, pcfg, Some(self.config.finetune_anchor))?;
        let curves = (0..self.columns.len())
            .map(|i| self.fit_autoencoder(table, i, &rows, acfg, Some(self.config.finetune_anchor)))
            .collect::<Result<Vec<_>>>()?;
        table.clear_pending_updates();
        Ok(curves)
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Sorted sample of `m` distinct rows out of `n`.
fn sample_rows(n: usize, m: usize, seed: u64) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, n, m).into_vec();
    rows.sort_unstable();
    rows
}

pub use persist::{load_bundle, save_bundle};
