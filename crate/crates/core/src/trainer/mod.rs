//! Mini-batch training with evaluation, artifact export, and per-period
//! delta emission.

mod artifact;
mod data;
mod delta;
mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, PipelineConfig};
use crate::delta_stream::{DeltaError, DeltaMessage, DeltaSink};
use crate::model::{
    backward_into, evaluate_metrics, forward, log_loss, regularization_loss, ModelError, ModelParams, SparseGradient,
};

pub use artifact::{
    artifact_from_bytes, artifact_to_bytes, export, load_artifact, tensor_directory, ArtifactError, ArtifactMetadata,
    ModelArtifact, TensorEntry, ARTIFACT_MAGIC,
};
pub use data::{load_dataset, parse_label, read_dataset, CsvRow, Dataset};
pub use delta::{emit_delta, DeltaAccumulator};
pub use optim::{Adam, AdamConfig, VectorAdam};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("data error at row {row}: {reason}")]
    Data { row: usize, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("delta sink failed: {0}")]
    Delta(#[from] DeltaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean training loss (logloss plus regularization) over the epoch.
    pub train_loss: f64,
    /// Absent when the epoch was not evaluated or AUC is undefined.
    pub auc: Option<f64>,
    pub logloss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub steps: u64,
    pub model_version: u64,
    pub deltas_emitted: u64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn auc_curve(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.auc).collect()
    }

    pub fn final_auc(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.auc)
    }

    pub fn final_logloss(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.logloss)
    }
}

/// Hooks into the training loop.
pub trait TrainObserver {
    /// Called before step `step` (1-based) runs on these example indices.
    fn on_batch(&mut self, _step: u64, _batch: &[usize]) {}

    /// Called after each epoch; returning `false` ends training.
    fn on_epoch(&mut self, _report: &EpochReport) -> bool {
        true
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// True iff the best value (first occurrence of the maximum) is more than
/// `patience` entries before the last one.
pub fn early_stop_check(curve: &[f64], patience: usize) -> bool {
    let Some(best) = curve
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
            Some((_, b)) if v <= b => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
    else {
        return false;
    };
    curve.len() - 1 - best > patience
}

pub fn predict(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>, ModelError> {
    data.features
        .iter()
        .map(|fv| forward(params, fv).map(|t| t.probability))
        .collect()
}

/// `(auc, logloss)` on `data`; AUC is absent when only one class occurs,
/// both are absent for an empty set.
pub fn evaluate_params(params: &ModelParams, data: &Dataset) -> Result<(Option<f64>, Option<f64>), TrainError> {
    if data.is_empty() {
        return Ok((None, None));
    }
    let scores = predict(params, data)?;
    Ok(match evaluate_metrics(&scores, &data.labels) {
        Ok(m) => (Some(m.auc), Some(m.logloss)),
        Err((ModelError::DegenerateLabels, logloss)) => (None, Some(logloss)),
        Err((e, _)) => return Err(e.into()),
    })
}

/// Owns the parameters, optimizer state, and delta bookkeeping of one run.
pub struct Trainer {
    config: PipelineConfig,
    params: ModelParams,
    adam: Adam,
    acc: DeltaAccumulator,
    rng: ChaCha8Rng,
    steps: u64,
    deltas_emitted: u64,
}

impl Trainer {
    /// Seeded initialization; the same RNG stream then drives shuffling.
    pub fn new(config: PipelineConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.train_config.seed);
        let params = ModelParams::init(config.features(), &config.model_config, &mut rng);
        let adam = Adam::new(&params, AdamConfig::from(&config.train_config));
        Self {
            config,
            params,
            adam,
            acc: DeltaAccumulator::default(),
            rng,
            steps: 0,
            deltas_emitted: 0,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// One optimizer step on the mean gradient of `batch`. Returns the mean
    /// loss before the update.
    pub fn step(&mut self, data: &Dataset, batch: &[usize]) -> Result<f64, TrainError> {
        let reg = self.config.model_config.embedding_regularization;
        let scale = 1.0 / batch.len() as f64;
        let mut grad = SparseGradient::zeros(&self.params);
        let mut loss = 0.0;
        for &i in batch {
            let fv = &data.features[i];
            let trace = forward(&self.params, fv)?;
            loss += log_loss(trace.probability, data.labels[i]) + regularization_loss(&self.params, fv, reg);
            backward_into(&self.params, &trace, fv, data.labels[i], reg, scale, &mut grad, None);
        }
        self.adam.step(&mut self.params, &grad);
        self.acc.record_step(&grad);
        self.steps += 1;
        Ok(loss * scale)
    }

    /// Emits the pending delta, possibly empty, bumping the version.
    pub fn flush_delta(&mut self) -> DeltaMessage {
        self.deltas_emitted += 1;
        emit_delta(&mut self.acc, &mut self.params)
    }

    fn flush_to(&mut self, sink: &mut Option<&mut dyn DeltaSink>) -> Result<(), TrainError> {
        let msg = self.flush_delta();
        if let Some(sink) = sink.as_mut() {
            sink.send(&msg)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<(Option<f64>, Option<f64>), TrainError> {
        evaluate_params(&self.params, data)
    }

    /// Runs the configured epochs. A delta is emitted every
    /// `delta_period_steps` steps and once more at the end if anything
    /// changed since the last one.
    pub fn fit(
        &mut self,
        train: &Dataset,
        eval: &Dataset,
        mut sink: Option<&mut dyn DeltaSink>,
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainReport, TrainError> {
        let tc = self.config.train_config.clone();
        let interval = self.config.eval_config.eval_interval.max(1);
        let period = tc.delta_period_steps.max(1) as u64;
        let mut epochs = Vec::new();
        let mut stopped_early = false;
        let mut order: Vec<usize> = (0..train.len()).collect();

        for epoch in 1..=tc.num_epochs {
            order.shuffle(&mut self.rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(tc.batch_size.max(1)) {
                observer.on_batch(self.steps + 1, batch);
                loss_sum += self.step(train, batch)? * batch.len() as f64;
                if self.steps.is_multiple_of(period) {
                    self.flush_to(&mut sink)?;
                }
            }
            let (auc, logloss) = if epoch % interval == 0 || epoch == tc.num_epochs {
                self.evaluate(eval)?
            } else {
                (None, None)
            };
            let report = EpochReport {
                epoch,
                train_loss: if train.is_empty() { 0.0 } else { loss_sum / train.len() as f64 },
                auc,
                logloss,
            };
            log::info!(
                "epoch {epoch}: train_loss {:.5} auc {:?} logloss {:?}",
                report.train_loss,
                report.auc,
                report.logloss
            );
            let proceed = observer.on_epoch(&report);
            epochs.push(report);
            if !proceed {
                stopped_early = epoch < tc.num_epochs;
                break;
            }
            if tc.early_stop_patience > 0 {
                let curve: Vec<f64> = epochs.iter().filter_map(|e| e.auc).collect();
                if early_stop_check(&curve, tc.early_stop_patience) {
                    stopped_early = epoch < tc.num_epochs;
                    break;
                }
            }
        }
        if !self.acc.is_empty() {
            self.flush_to(&mut sink)?;
        }
        Ok(TrainReport {
            epochs,
            steps: self.steps,
            model_version: self.params.version,
            deltas_emitted: self.deltas_emitted,
            stopped_early,
        })
    }

    pub fn into_artifact(self) -> ModelArtifact {
        ModelArtifact {
            metadata: ArtifactMetadata {
                seed: self.config.train_config.seed,
                steps: self.steps,
            },
            config: self.config,
            params: self.params,
        }
    }
}

/// Trains on in-memory datasets.
pub fn train_datasets(
    cfg: &PipelineConfig,
    train: &Dataset,
    eval: &Dataset,
    sink: Option<&mut dyn DeltaSink>,
    observer: &mut dyn TrainObserver,
) -> Result<(ModelArtifact, TrainReport), TrainError> {
    let mut trainer = Trainer::new(cfg.clone());
    let report = trainer.fit(train, eval, sink, observer)?;
    Ok((trainer.into_artifact(), report))
}

/// Loads both CSV files with the config's features and trains.
pub fn train(
    cfg: &PipelineConfig,
    train_path: &Path,
    eval_path: &Path,
    sink: Option<&mut dyn DeltaSink>,
) -> Result<(ModelArtifact, TrainReport), TrainError> {
    let train = load_dataset(train_path, &cfg.data_config, cfg.features())?;
    let eval = load_dataset(eval_path, &cfg.data_config, cfg.features())?;
    train_datasets(cfg, &train, &eval, sink, &mut NoObserver)
}
