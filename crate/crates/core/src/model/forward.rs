use crate::config::ModelType;
use crate::feature_gen::{FeatureVector, Pooling, SlotFeatures};

use super::params::{DenseParams, EmbeddingTable, ParamSource};
use super::ModelError;

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

const LANES: usize = 8;

/// `acc += weight * row`, element-wise. Processes fixed-width lanes so the
/// loop vectorizes; each element still sees the same sequence of additions
/// as a plain scalar loop, so the result is bit-identical to one.
#[inline]
pub fn accumulate_row(acc: &mut [f64], row: &[f32], weight: f64) {
    debug_assert_eq!(acc.len(), row.len());
    let mut acc_chunks = acc.chunks_exact_mut(LANES);
    let mut row_chunks = row.chunks_exact(LANES);
    for (a, r) in (&mut acc_chunks).zip(&mut row_chunks) {
        for lane in 0..LANES {
            a[lane] += weight * r[lane] as f64;
        }
    }
    for (a, r) in acc_chunks.into_remainder().iter_mut().zip(row_chunks.remainder()) {
        *a += weight * *r as f64;
    }
}

/// Pooled embedding plus first-order partial sum for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotContribution {
    pub pooled: Vec<f64>,
    pub first_order: f64,
}

/// Pools the rows named by `feats` from `slot` of `src`. Rows are accumulated
/// in id-list order; an empty list yields zeros for both sum and mean.
pub fn slot_contribution<P: ParamSource + ?Sized>(
    src: &P,
    slot: usize,
    feats: &SlotFeatures,
) -> Result<SlotContribution, ModelError> {
    let dim = src.dim();
    let vocab = src.vocab(slot);
    let mut pooled = vec![0.0f64; dim];
    let mut first_order = 0.0f64;
    for (k, &id) in feats.ids.iter().enumerate() {
        if id >= vocab {
            return Err(ModelError::IndexOutOfRange { slot, id, vocab });
        }
        let w = feats.weights.as_ref().map_or(1.0, |ws| ws[k] as f64);
        accumulate_row(&mut pooled, src.embedding(slot, id), w);
        first_order += w * src.first_order(slot, id) as f64;
    }
    if src.pooling(slot) == Pooling::Mean && feats.ids.len() > 1 {
        let n = feats.ids.len() as f64;
        for v in &mut pooled {
            *v /= n;
        }
    }
    Ok(SlotContribution { pooled, first_order })
}

/// Sum or mean of the listed rows of `table`.
pub fn pooled_lookup(
    table: &EmbeddingTable,
    ids: &[u64],
    pooling: Pooling,
) -> Result<Vec<f64>, ModelError> {
    let mut pooled = vec![0.0f64; table.dim];
    for &id in ids {
        if id >= table.vocab {
            return Err(ModelError::IndexOutOfRange {
                slot: 0,
                id,
                vocab: table.vocab,
            });
        }
        accumulate_row(&mut pooled, table.row(id), 1.0);
    }
    if pooling == Pooling::Mean && ids.len() > 1 {
        let n = ids.len() as f64;
        for v in &mut pooled {
            *v /= n;
        }
    }
    Ok(pooled)
}

/// FM second-order term `Σ_{i<j} <e_i, e_j>` via the square-of-sum identity.
pub fn fm_second_order<V: AsRef<[f64]>>(pooled: &[V]) -> Result<f64, ModelError> {
    let Some(first) = pooled.first() else {
        return Ok(0.0);
    };
    let dim = first.as_ref().len();
    if let Some(bad) = pooled.iter().find(|v| v.as_ref().len() != dim) {
        return Err(ModelError::DimensionMismatch {
            expected: dim,
            got: bad.as_ref().len(),
        });
    }
    Ok(fm_with_sum(pooled.iter().map(AsRef::as_ref), dim).0)
}

fn fm_with_sum<'a>(pooled: impl Iterator<Item = &'a [f64]>, dim: usize) -> (f64, Vec<f64>) {
    let mut sum = vec![0.0f64; dim];
    let mut sum_sq = vec![0.0f64; dim];
    for e in pooled {
        for k in 0..dim {
            sum[k] += e[k];
            sum_sq[k] += e[k] * e[k];
        }
    }
    let mut fm = 0.0;
    for k in 0..dim {
        fm += sum[k] * sum[k] - sum_sq[k];
    }
    (0.5 * fm, sum)
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Ungated per-slot contributions.
    pub contributions: Vec<SlotContribution>,
    /// Per-slot multiplicative gates, when the pass was gated.
    pub gates: Option<Vec<f64>>,
    /// Sum of the (gated) pooled vectors, used by the FM gradient.
    pub fm_sum: Vec<f64>,
    pub fm: f64,
    pub first_order: f64,
    /// `activations[0]` is the MLP input; `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    pub mlp_out: f64,
    pub logit: f64,
    pub probability: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Combines per-slot contributions into the logit:
/// `bias + Σ first_order + fm(pooled) + mlp(concat pooled)`, each term
/// accumulated in slot order.
pub fn assemble(
    dense: &DenseParams,
    contributions: Vec<SlotContribution>,
    gates: Option<&[f64]>,
) -> ForwardTrace {
    let dim = contributions.first().map_or(0, |c| c.pooled.len());
    let gate = |s: usize| gates.map_or(1.0, |g| g[s]);

    let mut first_order = 0.0f64;
    for (s, c) in contributions.iter().enumerate() {
        first_order += match gates {
            Some(g) => g[s] * c.first_order,
            None => c.first_order,
        };
    }

    let gated: Vec<Vec<f64>>;
    let pooled: Vec<&[f64]> = match gates {
        None => contributions.iter().map(|c| c.pooled.as_slice()).collect(),
        Some(_) => {
            gated = contributions
                .iter()
                .enumerate()
                .map(|(s, c)| c.pooled.iter().map(|v| gate(s) * v).collect())
                .collect();
            gated.iter().map(Vec::as_slice).collect()
        }
    };

    let (fm, fm_sum) = match dense.kind {
        ModelType::Deepfm => fm_with_sum(pooled.iter().copied(), dim),
        ModelType::Lr => (0.0, vec![0.0; dim]),
    };

    let mut activations = Vec::with_capacity(dense.layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(dense.layers.len());
    let mut mlp_out = 0.0;
    if !dense.layers.is_empty() {
        let input: Vec<f64> = pooled.iter().flat_map(|p| p.iter().copied()).collect();
        activations.push(input);
        let last = dense.layers.len() - 1;
        for (l, layer) in dense.layers.iter().enumerate() {
            let x = &activations[l];
            let mut z = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let mut acc = layer.bias[o] as f64;
                for (wi, xi) in w.iter().zip(x) {
                    acc += *wi as f64 * xi;
                }
                z.push(acc);
            }
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        mlp_out = activations[last + 1][0];
    }

    let mut logit = dense.bias as f64;
    logit += first_order;
    logit += fm;
    logit += mlp_out;
    ForwardTrace {
        contributions,
        gates: gates.map(<[f64]>::to_vec),
        fm_sum,
        fm,
        first_order,
        activations,
        pre_activations,
        mlp_out,
        logit,
        probability: clip_probability(sigmoid(logit)),
    }
}

pub fn forward<P: ParamSource + ?Sized>(
    params: &P,
    fv: &FeatureVector,
) -> Result<ForwardTrace, ModelError> {
    forward_gated(params, fv, None)
}

/// Forward pass with each slot's pooled embedding and first-order partial
/// scaled by `gates[slot]`.
pub fn forward_gated<P: ParamSource + ?Sized>(
    params: &P,
    fv: &FeatureVector,
    gates: Option<&[f64]>,
) -> Result<ForwardTrace, ModelError> {
    if fv.slots.len() != params.num_slots() {
        return Err(ModelError::SlotMismatch {
            expected: params.num_slots(),
            got: fv.slots.len(),
        });
    }
    let contributions = fv
        .slots
        .iter()
        .enumerate()
        .map(|(s, feats)| slot_contribution(params, s, feats))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(params.dense(), contributions, gates))
}

/// Clipped binary cross-entropy of a probability against a 0/1 label.
pub fn log_loss(probability: f64, label: f64) -> f64 {
    let p = clip_probability(probability);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}
