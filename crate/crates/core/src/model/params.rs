use rand::Rng;

use crate::config::{ModelConfig, ModelType};
use crate::feature_gen::{FeatureSpec, Pooling};

/// Embedding rows plus the parallel first-order weight column for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub name: String,
    pub vocab: u64,
    pub dim: usize,
    pub pooling: Pooling,
    /// Row-major `vocab × dim`.
    pub values: Vec<f32>,
    pub first_order: Vec<f32>,
}

impl EmbeddingTable {
    pub fn zeros(name: &str, vocab: u64, dim: usize, pooling: Pooling) -> Self {
        Self {
            name: name.to_string(),
            vocab,
            dim,
            pooling,
            values: vec![0.0; vocab as usize * dim],
            first_order: vec![0.0; vocab as usize],
        }
    }

    #[inline]
    pub fn row(&self, id: u64) -> &[f32] {
        let start = id as usize * self.dim;
        &self.values[start..start + self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, id: u64) -> &mut [f32] {
        let start = id as usize * self.dim;
        &mut self.values[start..start + self.dim]
    }
}

/// Fully connected layer, weights stored `outputs × inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

/// Everything that is not row-indexed: the MLP and the global bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub kind: ModelType,
    /// Hidden layers (ReLU) followed by the linear output layer. Empty for LR.
    pub layers: Vec<DenseLayer>,
    pub bias: f32,
}

impl DenseParams {
    /// Dense tensors in wire order: `w0, b0, w1, b1, ..., bias`.
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &self.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out.push(std::slice::from_ref(&self.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.push(std::slice::from_mut(&mut self.bias));
        out
    }

    pub fn tensor_count(&self) -> usize {
        self.layers.len() * 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tables: Vec<EmbeddingTable>,
    pub dense: DenseParams,
    pub version: u64,
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by the config.
    pub fn zeros(specs: &[FeatureSpec], model: &ModelConfig) -> Self {
        let dim = model.embedding_dim;
        let tables = specs
            .iter()
            .map(|s| EmbeddingTable::zeros(&s.name, s.table_rows(), dim, s.pooling))
            .collect();
        let layers = match model.model_type {
            ModelType::Lr => Vec::new(),
            ModelType::Deepfm => {
                let mut widths = vec![specs.len() * dim];
                widths.extend(&model.mlp_hidden_dims);
                widths.push(1);
                widths.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect()
            }
        };
        Self {
            tables,
            dense: DenseParams {
                kind: model.model_type,
                layers,
                bias: 0.0,
            },
            version: 0,
        }
    }

    /// Embeddings `U(-0.01, 0.01)`, first-order weights and biases zero,
    /// MLP weights Glorot-uniform.
    pub fn init<R: Rng>(specs: &[FeatureSpec], model: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(specs, model);
        for t in &mut p.tables {
            for v in &mut t.values {
                *v = rng.random_range(-0.01f32..0.01f32);
            }
        }
        for l in &mut p.dense.layers {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt() as f32;
            for w in &mut l.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.tables.first().map(|t| t.dim).unwrap_or(0)
    }

    pub fn total_rows(&self) -> u64 {
        self.tables.iter().map(|t| t.vocab).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tables
            .iter()
            .all(|t| t.values.iter().chain(&t.first_order).all(|v| v.is_finite()))
            && self.dense.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        fn same(a: &[f32], b: &[f32]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.version == other.version
            && self.tables.len() == other.tables.len()
            && self.tables.iter().zip(&other.tables).all(|(a, b)| {
                a.name == b.name
                    && a.vocab == b.vocab
                    && a.dim == b.dim
                    && same(&a.values, &b.values)
                    && same(&a.first_order, &b.first_order)
            })
            && self.dense.kind == other.dense.kind
            && self.dense.tensor_count() == other.dense.tensor_count()
            && self.dense.layers.iter().zip(&other.dense.layers).all(|(a, b)| {
                a.inputs == b.inputs && a.outputs == b.outputs
            })
            && self
                .dense
                .tensors()
                .iter()
                .zip(other.dense.tensors())
                .all(|(a, b)| same(a, b))
    }
}

/// Read access to parameters; implemented by the trainer's flat tables and
/// by the server's copy-on-write snapshots so both share one forward pass.
pub trait ParamSource {
    fn num_slots(&self) -> usize;
    fn dim(&self) -> usize;
    fn vocab(&self, slot: usize) -> u64;
    fn pooling(&self, slot: usize) -> Pooling;
    /// Embedding row; `row < vocab(slot)`.
    fn embedding(&self, slot: usize, row: u64) -> &[f32];
    fn first_order(&self, slot: usize, row: u64) -> f32;
    fn dense(&self) -> &DenseParams;
}

impl ParamSource for ModelParams {
    fn num_slots(&self) -> usize {
        self.tables.len()
    }

    fn dim(&self) -> usize {
        ModelParams::dim(self)
    }

    fn vocab(&self, slot: usize) -> u64 {
        self.tables[slot].vocab
    }

    fn pooling(&self, slot: usize) -> Pooling {
        self.tables[slot].pooling
    }

    #[inline]
    fn embedding(&self, slot: usize, row: u64) -> &[f32] {
        self.tables[slot].row(row)
    }

    #[inline]
    fn first_order(&self, slot: usize, row: u64) -> f32 {
        self.tables[slot].first_order[row as usize]
    }

    fn dense(&self) -> &DenseParams {
        &self.dense
    }
}
