//! Adam with lazy sparse moments: a row's moments and values change only on
//! steps whose batch references it. Bias correction uses the global step.

use crate::config::TrainConfig;
use crate::model::{ModelParams, SparseGradient};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(t: &TrainConfig) -> Self {
        Self {
            learning_rate: t.learning_rate,
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            epsilon: t.adam_epsilon,
        }
    }
}

/// First and second moments for a flat parameter vector.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    dense: Vec<Moments>,
    /// Per slot, `vocab × (dim + 1)`: embedding row then first-order weight.
    sparse: Vec<Moments>,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: AdamConfig) -> Self {
        let width = params.dim() + 1;
        Self {
            cfg,
            step: 0,
            dense: params.dense.tensors().iter().map(|t| Moments::zeros(t.len())).collect(),
            sparse: params
                .tables
                .iter()
                .map(|t| Moments::zeros(t.vocab as usize * width))
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with the given gradient. Every dense parameter moves;
    /// only rows present in `grad.slots` move among the sparse ones.
    pub fn step(&mut self, params: &mut ModelParams, grad: &SparseGradient) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let update = |p: &mut f32, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = (*p as f64 - learning_rate * m_hat / (v_hat.sqrt() + epsilon)) as f32;
        };

        let mut dense_grads: Vec<&[f64]> = Vec::with_capacity(self.dense.len());
        for (w, b) in &grad.dense.layers {
            dense_grads.push(w);
            dense_grads.push(b);
        }
        let bias_grad = [grad.dense.bias];
        dense_grads.push(&bias_grad);
        for ((tensor, g), mom) in params.dense.tensors_mut().into_iter().zip(dense_grads).zip(&mut self.dense) {
            for (i, p) in tensor.iter_mut().enumerate() {
                update(p, g[i], &mut mom.m[i], &mut mom.v[i]);
            }
        }

        let width = params.dim() + 1;
        for (s, rows) in grad.slots.iter().enumerate() {
            let table = &mut params.tables[s];
            let mom = &mut self.sparse[s];
            for (&row, rg) in rows {
                let base = row as usize * width;
                let values = &mut table.values[row as usize * (width - 1)..(row as usize + 1) * (width - 1)];
                for (k, p) in values.iter_mut().enumerate() {
                    update(p, rg.embedding[k], &mut mom.m[base + k], &mut mom.v[base + k]);
                }
                let k = width - 1;
                update(
                    &mut table.first_order[row as usize],
                    rg.first_order,
                    &mut mom.m[base + k],
                    &mut mom.v[base + k],
                );
            }
        }
    }
}

/// Plain Adam over a dense vector.
#[derive(Debug, Clone)]
pub struct VectorAdam {
    cfg: AdamConfig,
    step: u64,
    moments: Moments,
}

impl VectorAdam {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: Moments::zeros(len),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.moments.m[i];
            let v = &mut self.moments.v[i];
            *m = beta1 * *m + (1.0 - beta1) * grad[i];
            *v = beta2 * *v + (1.0 - beta2) * grad[i] * grad[i];
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::random_model;
    use crate::model::RowGradient;

    fn cfg() -> AdamConfig {
        AdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With zero moments the bias-corrected first step is lr · sign(g).
        let mut x = vec![1.0, -2.0, 0.5];
        let mut opt = VectorAdam::new(3, cfg());
        opt.step(&mut x, &[3.0, -0.01, 0.0]);
        assert!((x[0] - 0.9).abs() < 1e-6);
        assert!((x[1] - -1.9).abs() < 1e-6);
        assert_eq!(x[2], 0.5);
    }

    #[test]
    fn untouched_rows_frozen() {
        let (_, mut p) = random_model(5, 2, 3, &[4], 10);
        let before = p.clone();
        let mut opt = Adam::new(&p, cfg());
        let mut g = SparseGradient::zeros(&p);
        g.slots[1].insert(
            7,
            RowGradient {
                embedding: vec![1.0, -1.0, 0.0],
                first_order: 2.0,
            },
        );
        g.dense.bias = 1.0;
        opt.step(&mut p, &g);
        for s in 0..2 {
            for r in 0..10u64 {
                let same = p.tables[s].row(r) == before.tables[s].row(r)
                    && p.tables[s].first_order[r as usize] == before.tables[s].first_order[r as usize];
                assert_eq!(same, !(s == 1 && r == 7), "slot {s} row {r}");
            }
        }
        assert!((p.tables[1].row(7)[0] - (before.tables[1].row(7)[0] - 0.1)).abs() < 1e-6);
        assert!((p.dense.bias - (before.dense.bias - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut x = vec![3.0, -4.0];
        let mut opt = VectorAdam::new(2, cfg());
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }
}
