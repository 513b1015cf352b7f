use std::collections::BTreeMap;

use crate::config::ModelType;
use crate::feature_gen::{FeatureVector, Pooling};

use super::forward::{sigmoid, ForwardTrace};
use super::params::ParamSource;

/// Gradient for one referenced row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient {
    pub embedding: Vec<f64>,
    pub first_order: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradient {
    /// `(weights, bias)` per MLP layer, shaped like the parameters.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub bias: f64,
}

/// Gradients keyed by the rows actually referenced, plus dense gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    pub slots: Vec<BTreeMap<u64, RowGradient>>,
    pub dense: DenseGradient,
}

impl SparseGradient {
    pub fn zeros<P: ParamSource + ?Sized>(params: &P) -> Self {
        let dense = params.dense();
        Self {
            slots: vec![BTreeMap::new(); params.num_slots()],
            dense: DenseGradient {
                layers: dense
                    .layers
                    .iter()
                    .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.outputs]))
                    .collect(),
                bias: 0.0,
            },
        }
    }

    pub fn touched_rows(&self) -> usize {
        self.slots.iter().map(BTreeMap::len).sum()
    }
}

/// Exact gradient of `logloss + reg · Σ_{distinct referenced rows} ‖row‖²`
/// for one example.
pub fn backward<P: ParamSource + ?Sized>(
    params: &P,
    trace: &ForwardTrace,
    fv: &FeatureVector,
    label: f64,
    reg: f64,
) -> SparseGradient {
    let mut grad = SparseGradient::zeros(params);
    backward_into(params, trace, fv, label, reg, 1.0, &mut grad, None);
    grad
}

/// Adds `scale ×` the per-example gradient into `grad`. When the trace was
/// gated and `gate_grads` is given, `scale × ∂loss/∂gate` is added per slot.
#[allow(clippy::too_many_arguments)]
pub fn backward_into<P: ParamSource + ?Sized>(
    params: &P,
    trace: &ForwardTrace,
    fv: &FeatureVector,
    label: f64,
    reg: f64,
    scale: f64,
    grad: &mut SparseGradient,
    gate_grads: Option<&mut [f64]>,
) {
    let dim = params.dim();
    let dense = params.dense();
    let num_slots = trace.contributions.len();
    // The logit gradient of BCE is σ(logit) − y; clipping only guards the loss value.
    let d_logit = scale * (sigmoid(trace.logit) - label);
    let gate = |s: usize| trace.gates.as_ref().map_or(1.0, |g| g[s]);

    grad.dense.bias += d_logit;

    // Gradient w.r.t. the gated pooled vectors, concatenated in slot order.
    let mut d_pooled = vec![0.0f64; num_slots * dim];

    if !dense.layers.is_empty() {
        let mut delta = vec![d_logit];
        for l in (0..dense.layers.len()).rev() {
            let layer = &dense.layers[l];
            let input = &trace.activations[l];
            let (gw, gb) = &mut grad.dense.layers[l];
            for o in 0..layer.outputs {
                gb[o] += delta[o];
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
            }
            let mut d_input = vec![0.0f64; layer.inputs];
            for o in 0..layer.outputs {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (d, wi) in d_input.iter_mut().zip(w) {
                    *d += delta[o] * *wi as f64;
                }
            }
            if l > 0 {
                let pre = &trace.pre_activations[l - 1];
                for (d, z) in d_input.iter_mut().zip(pre) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_input;
        }
        d_pooled.copy_from_slice(&delta);
    }

    if dense.kind == ModelType::Deepfm {
        for s in 0..num_slots {
            let g = gate(s);
            let pooled = &trace.contributions[s].pooled;
            for k in 0..dim {
                d_pooled[s * dim + k] += d_logit * (trace.fm_sum[k] - g * pooled[k]);
            }
        }
    }

    if let Some(gg) = gate_grads {
        for s in 0..num_slots {
            let c = &trace.contributions[s];
            let dot: f64 = (0..dim).map(|k| d_pooled[s * dim + k] * c.pooled[k]).sum();
            gg[s] += dot + d_logit * c.first_order;
        }
    }

    for (s, feats) in fv.slots.iter().enumerate() {
        if feats.ids.is_empty() {
            continue;
        }
        let g = gate(s);
        let mean_div = if params.pooling(s) == Pooling::Mean {
            feats.ids.len() as f64
        } else {
            1.0
        };
        let d_row = &d_pooled[s * dim..(s + 1) * dim];
        let slot_grads = &mut grad.slots[s];
        for (k, &id) in feats.ids.iter().enumerate() {
            let w = feats.weights.as_ref().map_or(1.0, |ws| ws[k] as f64);
            let entry = slot_grads.entry(id).or_insert_with(|| RowGradient {
                embedding: vec![0.0; dim],
                first_order: 0.0,
            });
            let coef = g * w / mean_div;
            for (e, d) in entry.embedding.iter_mut().zip(d_row) {
                *e += coef * d;
            }
            entry.first_order += d_logit * g * w;
        }
        if reg > 0.0 {
            let mut distinct = feats.ids.clone();
            distinct.sort_unstable();
            distinct.dedup();
            for id in distinct {
                let row = params.embedding(s, id);
                let entry = slot_grads.get_mut(&id).expect("row inserted above");
                for (e, v) in entry.embedding.iter_mut().zip(row) {
                    *e += scale * 2.0 * reg * *v as f64;
                }
            }
        }
    }
}

/// Regularization part of the loss for one example.
pub fn regularization_loss<P: ParamSource + ?Sized>(params: &P, fv: &FeatureVector, reg: f64) -> f64 {
    if reg == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (s, feats) in fv.slots.iter().enumerate() {
        let mut distinct = feats.ids.clone();
        distinct.sort_unstable();
        distinct.dedup();
        for id in distinct {
            total += params
                .embedding(s, id)
                .iter()
                .map(|v| (*v as f64) * (*v as f64))
                .sum::<f64>();
        }
    }
    reg * total
}
