//! Slot importance from learned stochastic gates, and pruning by importance.
//!
//! Each slot `i` has a gate `z_i = σ((log_alpha_i + ln u − ln(1−u)) / τ)`
//! with `u ~ U(0, 1)` that scales the slot's pooled embedding and
//! first-order term. Model weights train on the training split with sampled
//! gates; gate parameters train on the validation split against
//! `logloss + λ_g Σ σ(log_alpha_i)`. The keep probability `σ(log_alpha_i)`
//! is the slot's importance.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::feature_gen::{FeatureSpec, FeatureVector};
use crate::model::{backward_into, forward_gated, log_loss, sigmoid, ModelParams, SparseGradient};
use crate::trainer::{load_dataset, Adam, AdamConfig, Dataset, TrainError};
use crate::trainer::VectorAdam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Relaxation temperature, in (0, 1].
    pub temperature: f64,
    /// Weight of the expected-open-gates penalty.
    pub sparsity: f64,
    pub learning_rate: f64,
    pub init_log_alpha: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            sparsity: 1e-3,
            learning_rate: 0.05,
            init_log_alpha: 0.0,
        }
    }
}

/// Relaxed gate value for one noise draw `u ∈ (0, 1)`.
pub fn gate_value(log_alpha: f64, u: f64, temperature: f64) -> f64 {
    sigmoid((log_alpha + u.ln() - (1.0 - u).ln()) / temperature)
}

/// `∂z/∂log_alpha` given the gate value `z`.
pub fn gate_derivative(z: f64, temperature: f64) -> f64 {
    z * (1.0 - z) / temperature
}

/// Mean gate loss over `batch` with fixed noise `noise[k][slot]`.
pub fn gate_loss(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    noise: &[Vec<f64>],
    log_alpha: &[f64],
    cfg: &GateConfig,
) -> f64 {
    let mut total = 0.0;
    for (k, &i) in batch.iter().enumerate() {
        let z: Vec<f64> = log_alpha
            .iter()
            .zip(&noise[k])
            .map(|(&a, &u)| gate_value(a, u, cfg.temperature))
            .collect();
        let trace = forward_gated(params, &data.features[i], Some(&z)).expect("dataset matches params");
        total += log_loss(trace.probability, data.labels[i]);
    }
    total / batch.len() as f64 + cfg.sparsity * log_alpha.iter().map(|&a| sigmoid(a)).sum::<f64>()
}

/// Exact gradient of [`gate_loss`] with respect to `log_alpha`.
pub fn gate_gradient(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    noise: &[Vec<f64>],
    log_alpha: &[f64],
    cfg: &GateConfig,
) -> Vec<f64> {
    let n = log_alpha.len();
    let scale = 1.0 / batch.len() as f64;
    let mut grad: Vec<f64> = log_alpha
        .iter()
        .map(|&a| {
            let p = sigmoid(a);
            cfg.sparsity * p * (1.0 - p)
        })
        .collect();
    let mut scratch = SparseGradient::zeros(params);
    let mut dz = vec![0.0; n];
    for (k, &i) in batch.iter().enumerate() {
        let z: Vec<f64> = log_alpha
            .iter()
            .zip(&noise[k])
            .map(|(&a, &u)| gate_value(a, u, cfg.temperature))
            .collect();
        let fv = &data.features[i];
        let trace = forward_gated(params, fv, Some(&z)).expect("dataset matches params");
        dz.iter_mut().for_each(|d| *d = 0.0);
        backward_into(params, &trace, fv, data.labels[i], 0.0, scale, &mut scratch, Some(&mut dz));
        for s in 0..n {
            grad[s] += dz[s] * gate_derivative(z[s], cfg.temperature);
        }
    }
    grad
}

/// A model trained with gates, evaluated with deterministic gates `z = p`.
#[derive(Debug, Clone)]
pub struct GatedModel {
    pub params: ModelParams,
    pub log_alpha: Vec<f64>,
}

impl GatedModel {
    pub fn keep_probabilities(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|&a| sigmoid(a)).collect()
    }

    pub fn predict(&self, fv: &FeatureVector) -> f64 {
        let p = self.keep_probabilities();
        forward_gated(&self.params, fv, Some(&p)).expect("features match params").probability
    }
}

/// Slot name and keep probability, sorted by descending importance.
pub type Importances = Vec<(String, f64)>;

fn draw_noise(rng: &mut ChaCha8Rng, rows: usize, slots: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..slots).map(|_| rng.random::<f64>().clamp(1e-6, 1.0 - 1e-6)).collect())
        .collect()
}

/// Alternating optimization over `num_epochs` passes of the training set:
/// each training batch step (gates sampled, gate parameters frozen) is
/// followed by a gate step on the next validation batch (weights frozen).
pub fn train_with_gates(
    cfg: &PipelineConfig,
    train: &Dataset,
    valid: &Dataset,
    gate_cfg: &GateConfig,
) -> Result<(Importances, GatedModel), TrainError> {
    let specs = cfg.features();
    let n = specs.len();
    let tc = &cfg.train_config;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut params = ModelParams::init(specs, &cfg.model_config, &mut rng);
    let mut adam = Adam::new(&params, AdamConfig::from(tc));
    let mut log_alpha = vec![gate_cfg.init_log_alpha; n];
    let mut gate_adam = VectorAdam::new(
        n,
        AdamConfig {
            learning_rate: gate_cfg.learning_rate,
            ..AdamConfig::from(tc)
        },
    );
    let reg = cfg.model_config.embedding_regularization;
    let bs = tc.batch_size.max(1);

    let mut train_order: Vec<usize> = (0..train.len()).collect();
    let mut valid_order: Vec<usize> = (0..valid.len()).collect();
    valid_order.shuffle(&mut rng);
    let mut valid_pos = 0;

    for epoch in 0..tc.num_epochs {
        train_order.shuffle(&mut rng);
        for batch in train_order.chunks(bs) {
            // Weight step.
            let scale = 1.0 / batch.len() as f64;
            let mut grad = SparseGradient::zeros(&params);
            let noise = draw_noise(&mut rng, batch.len(), n);
            for (k, &i) in batch.iter().enumerate() {
                let z: Vec<f64> = log_alpha
                    .iter()
                    .zip(&noise[k])
                    .map(|(&a, &u)| gate_value(a, u, gate_cfg.temperature))
                    .collect();
                let fv = &train.features[i];
                let trace = forward_gated(&params, fv, Some(&z))?;
                backward_into(&params, &trace, fv, train.labels[i], reg, scale, &mut grad, None);
            }
            adam.step(&mut params, &grad);

            // Gate step.
            if valid.is_empty() {
                continue;
            }
            let mut vbatch = Vec::with_capacity(bs);
            while vbatch.len() < bs.min(valid.len()) {
                if valid_pos == valid_order.len() {
                    valid_order.shuffle(&mut rng);
                    valid_pos = 0;
                }
                vbatch.push(valid_order[valid_pos]);
                valid_pos += 1;
            }
            let noise = draw_noise(&mut rng, vbatch.len(), n);
            let g = gate_gradient(&params, valid, &vbatch, &noise, &log_alpha, gate_cfg);
            gate_adam.step(&mut log_alpha, &g);
        }
        log::info!(
            "gate epoch {}: keep probabilities {:?}",
            epoch + 1,
            log_alpha.iter().map(|&a| (sigmoid(a) * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }

    let model = GatedModel { params, log_alpha };
    let mut importances: Importances = specs
        .iter()
        .zip(model.keep_probabilities())
        .map(|(s, p)| (s.name.clone(), p))
        .collect();
    sort_importances(&mut importances);
    Ok((importances, model))
}

/// Descending importance, ties by ascending name.
pub fn sort_importances(imp: &mut Importances) {
    imp.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

pub fn train_with_gates_files(
    cfg: &PipelineConfig,
    train_path: &Path,
    valid_path: &Path,
    gate_cfg: &GateConfig,
) -> Result<(Importances, GatedModel), TrainError> {
    let train = load_dataset(train_path, &cfg.data_config, cfg.features())?;
    let valid = load_dataset(valid_path, &cfg.data_config, cfg.features())?;
    train_with_gates(cfg, &train, &valid, gate_cfg)
}

/// Keeps the `⌈keep_fraction · n⌉` most important slots, in their original
/// order. Slots absent from `importances` rank last.
pub fn select(specs: &[FeatureSpec], importances: &Importances, keep_fraction: f64) -> Vec<FeatureSpec> {
    let n = specs.len();
    let keep = ((keep_fraction.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n);
    let score = |name: &str| {
        importances
            .iter()
            .find(|(s, _)| s == name)
            .map_or(f64::NEG_INFINITY, |(_, p)| *p)
    };
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| {
        score(&specs[b].name)
            .total_cmp(&score(&specs[a].name))
            .then_with(|| specs[a].name.cmp(&specs[b].name))
    });
    let mut kept: Vec<usize> = ranked[..keep].to_vec();
    kept.sort_unstable();
    kept.into_iter().map(|i| specs[i].clone()).collect()
}

/// `{"slot": p, ...}` in descending-importance order.
pub fn importance_report_json(imp: &Importances) -> String {
    let body: Vec<String> = imp
        .iter()
        .map(|(name, p)| format!("{}:{}", serde_json::Value::from(name.as_str()), serde_json::Value::from(*p)))
        .collect();
    format!("{{{}}}", body.join(","))
}
