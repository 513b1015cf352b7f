use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::delta_stream::{validate_delta, ApplyError, ApplyOutcome, DeltaMessage};
use crate::feature_gen::{generate, generate_slot, FeatureError, FeatureSpec, FeatureVector, Pooling, RawRecord};
use crate::model::{assemble, forward, slot_contribution, DenseParams, ModelParams, ParamSource, SlotContribution};
use crate::trainer::{load_artifact, ArtifactError, ModelArtifact};

use super::lru::LruCache;

/// Rows per copy-on-write chunk.
pub const CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone)]
struct Chunk {
    values: Vec<f32>,
    first_order: Vec<f32>,
}

#[derive(Debug, Clone)]
struct CowTable {
    vocab: u64,
    dim: usize,
    pooling: Pooling,
    chunks: Vec<Arc<Chunk>>,
}

impl CowTable {
    fn from_flat(values: &[f32], first_order: &[f32], vocab: u64, dim: usize, pooling: Pooling) -> Self {
        let chunks = first_order
            .chunks(CHUNK_ROWS)
            .zip(values.chunks(CHUNK_ROWS * dim.max(1)))
            .map(|(fo, v)| {
                Arc::new(Chunk {
                    values: v.to_vec(),
                    first_order: fo.to_vec(),
                })
            })
            .collect();
        Self {
            vocab,
            dim,
            pooling,
            chunks,
        }
    }
}

/// An immutable, internally consistent view of the parameters at one
/// version. Unchanged chunks are shared between successive snapshots.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub version: u64,
    tables: Vec<CowTable>,
    dense: Arc<DenseParams>,
}

impl Snapshot {
    fn from_params(p: &ModelParams) -> Self {
        Self {
            version: p.version,
            tables: p
                .tables
                .iter()
                .map(|t| CowTable::from_flat(&t.values, &t.first_order, t.vocab, t.dim, t.pooling))
                .collect(),
            dense: Arc::new(p.dense.clone()),
        }
    }

    /// Copies the snapshot into flat parameters with the given table names.
    pub fn to_params(&self, specs: &[FeatureSpec]) -> ModelParams {
        let tables = self
            .tables
            .iter()
            .zip(specs)
            .map(|(t, spec)| crate::model::EmbeddingTable {
                name: spec.name.clone(),
                vocab: t.vocab,
                dim: t.dim,
                pooling: t.pooling,
                values: t.chunks.iter().flat_map(|c| c.values.iter().copied()).collect(),
                first_order: t.chunks.iter().flat_map(|c| c.first_order.iter().copied()).collect(),
            })
            .collect();
        ModelParams {
            tables,
            dense: (*self.dense).clone(),
            version: self.version,
        }
    }

    fn with_delta(&self, msg: &DeltaMessage) -> Self {
        let mut next = self.clone();
        for r in &msg.sparse {
            let table = &mut next.tables[r.slot as usize];
            let dim = table.dim;
            let row = r.row as usize;
            let chunk = Arc::make_mut(&mut table.chunks[row / CHUNK_ROWS]);
            let local = row % CHUNK_ROWS;
            chunk.values[local * dim..(local + 1) * dim].copy_from_slice(&r.values[..dim]);
            chunk.first_order[local] = r.values[dim];
        }
        if !msg.dense.is_empty() {
            let dense = Arc::make_mut(&mut next.dense);
            let mut tensors = dense.tensors_mut();
            for r in &msg.dense {
                tensors[r.tensor as usize].copy_from_slice(&r.values);
            }
        }
        next.version = msg.model_version;
        next
    }
}

impl ParamSource for Snapshot {
    fn num_slots(&self) -> usize {
        self.tables.len()
    }

    fn dim(&self) -> usize {
        self.tables.first().map_or(0, |t| t.dim)
    }

    fn vocab(&self, slot: usize) -> u64 {
        self.tables[slot].vocab
    }

    fn pooling(&self, slot: usize) -> Pooling {
        self.tables[slot].pooling
    }

    #[inline]
    fn embedding(&self, slot: usize, row: u64) -> &[f32] {
        let t = &self.tables[slot];
        let row = row as usize;
        let local = row % CHUNK_ROWS;
        &t.chunks[row / CHUNK_ROWS].values[local * t.dim..(local + 1) * t.dim]
    }

    #[inline]
    fn first_order(&self, slot: usize, row: u64) -> f32 {
        let row = row as usize;
        self.tables[slot].chunks[row / CHUNK_ROWS].first_order[row % CHUNK_ROWS]
    }

    fn dense(&self) -> &DenseParams {
        &self.dense
    }
}

/// Which part of a request a slot's inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Every source column starts with `user_`.
    User,
    /// Every source column starts with `item_` or is `item_key`.
    Item,
    /// Anything else, including user × item crosses. Never cached.
    Context,
}

pub fn slot_side(spec: &FeatureSpec) -> Side {
    if spec.source_columns.iter().all(|c| c.starts_with("user_")) {
        Side::User
    } else if spec.source_columns.iter().all(|c| c.starts_with("item_")) {
        Side::Item
    } else {
        Side::Context
    }
}

/// One item to score: its cache key and raw features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ItemRequest {
    pub item_key: String,
    #[serde(default)]
    pub features: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(default)]
    pub user: BTreeMap<String, String>,
    pub items: Vec<ItemRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub model_version: u64,
    /// One entry per requested item; `None` where that item failed.
    pub scores: Vec<Option<f64>>,
    pub errors: Vec<ItemError>,
    pub cache_hits: u64,
}

/// The raw record a request presents for one item. `user_` columns are read
/// from the user map, `item_` columns and `item_key` from the item, and any
/// other column from the item first, then the user.
pub struct RequestRecord<'a> {
    pub user: &'a BTreeMap<String, String>,
    pub item: &'a ItemRequest,
}

impl RawRecord for RequestRecord<'_> {
    fn get(&self, column: &str) -> Option<&str> {
        if column == "item_key" {
            Some(&self.item.item_key)
        } else if column.starts_with("user_") {
            self.user.get(column).map(String::as_str)
        } else if column.starts_with("item_") {
            self.item.features.get(column).map(String::as_str)
        } else {
            self.item
                .features
                .get(column)
                .or_else(|| self.user.get(column))
                .map(String::as_str)
        }
    }
}

/// Splits a flat raw record into the user map and item request the server
/// would receive for it.
pub fn split_record(record: &BTreeMap<String, String>, item_key: &str) -> (BTreeMap<String, String>, ItemRequest) {
    let mut user = BTreeMap::new();
    let mut features = BTreeMap::new();
    for (k, v) in record {
        if k == "item_key" {
            continue;
        }
        if k.starts_with("user_") {
            user.insert(k.clone(), v.clone());
        } else {
            features.insert(k.clone(), v.clone());
        }
    }
    (
        user,
        ItemRequest {
            item_key: item_key.to_string(),
            features,
        },
    )
}

/// Item-side per-slot contributions, cached per (version, item key).
pub type ItemPartial = Arc<Vec<SlotContribution>>;

pub struct ItemCache {
    lru: Mutex<LruCache<(u64, String), ItemPartial>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ItemCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            lru: Mutex::new(LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn hit_rate(&self) -> f64 {
        let (h, m) = (self.hits(), self.misses());
        if h + m == 0 {
            0.0
        } else {
            h as f64 / (h + m) as f64
        }
    }

    /// The lookup and any computation happen under one lock, so hit/miss
    /// outcomes are linearizable per key.
    fn get_or_compute(
        &self,
        key: (u64, String),
        compute: impl FnOnce() -> Result<ItemPartial, FeatureError>,
    ) -> Result<(ItemPartial, bool), FeatureError> {
        let out = self.lru.lock().unwrap().get_or_try_insert_with(key, compute)?;
        if out.1 {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        Ok(out)
    }
}

/// Scoring model with lock-free reads and a single delta writer.
pub struct ServingModel {
    config: PipelineConfig,
    sides: Vec<Side>,
    item_slots: Vec<usize>,
    store: ArcSwap<Snapshot>,
    writer: Mutex<()>,
    deltas_applied: AtomicU64,
}

impl ServingModel {
    pub fn from_artifact(artifact: &ModelArtifact) -> Self {
        let sides: Vec<Side> = artifact.config.features().iter().map(slot_side).collect();
        let item_slots = (0..sides.len()).filter(|&s| sides[s] == Side::Item).collect();
        Self {
            config: artifact.config.clone(),
            sides,
            item_slots,
            store: ArcSwap::from_pointee(Snapshot::from_params(&artifact.params)),
            writer: Mutex::new(()),
            deltas_applied: AtomicU64::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        Ok(Self::from_artifact(&load_artifact(path)?))
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        self.config.features()
    }

    pub fn sides(&self) -> &[Side] {
        &self.sides
    }

    pub fn version(&self) -> u64 {
        self.store.load().version
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.store.load_full()
    }

    pub fn deltas_applied(&self) -> u64 {
        self.deltas_applied.load(Ordering::Relaxed)
    }

    /// Builds the next snapshot off to the side and publishes it with one
    /// atomic swap; readers keep whatever snapshot they already hold.
    pub fn apply_delta(&self, msg: &DeltaMessage) -> Result<ApplyOutcome, ApplyError> {
        let _guard = self.writer.lock().unwrap();
        let current = self.store.load_full();
        if msg.model_version <= current.version {
            return Ok(ApplyOutcome::Skipped);
        }
        validate_delta(&*current, msg)?;
        self.store.store(Arc::new(current.with_delta(msg)));
        self.deltas_applied.fetch_add(1, Ordering::Relaxed);
        Ok(ApplyOutcome::Applied(msg.model_version))
    }

    /// Scores every item against a single snapshot.
    pub fn score(&self, req: &ScoreRequest, cache: Option<&ItemCache>) -> ScoreResponse {
        let snap = self.snapshot();
        self.score_with(&snap, req, cache)
    }

    pub fn score_with(&self, snap: &Snapshot, req: &ScoreRequest, cache: Option<&ItemCache>) -> ScoreResponse {
        let specs = self.specs();
        let n = req.items.len();
        let mut scores = vec![None; n];
        let mut errors = Vec::new();
        let mut cache_hits = 0;

        // User-side slots depend only on the user map.
        let empty_item = ItemRequest::default();
        let user_record = RequestRecord {
            user: &req.user,
            item: &empty_item,
        };
        let mut user_parts: Vec<Option<SlotContribution>> = vec![None; specs.len()];
        for (s, spec) in specs.iter().enumerate() {
            if self.sides[s] != Side::User {
                continue;
            }
            match generate_slot(&user_record, spec).map(|f| slot_contribution(snap, s, &f)) {
                Ok(Ok(c)) => user_parts[s] = Some(c),
                Ok(Err(e)) => return self.fail_all(snap, n, e.to_string()),
                Err(e) => return self.fail_all(snap, n, e.to_string()),
            }
        }

        for (i, item) in req.items.iter().enumerate() {
            let record = RequestRecord { user: &req.user, item };
            let compute_item = || -> Result<ItemPartial, FeatureError> {
                self.item_slots
                    .iter()
                    .map(|&s| {
                        let feats = generate_slot(&record, &specs[s])?;
                        Ok(slot_contribution(snap, s, &feats).expect("generated ids are in range"))
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(Arc::new)
            };
            let item_part = match cache {
                Some(c) => c
                    .get_or_compute((snap.version, item.item_key.clone()), compute_item)
                    .map(|(v, hit)| {
                        cache_hits += hit as u64;
                        v
                    }),
                None => compute_item(),
            };
            let item_part = match item_part {
                Ok(p) => p,
                Err(e) => {
                    errors.push(ItemError {
                        index: i,
                        message: e.to_string(),
                    });
                    continue;
                }
            };

            let mut contributions = Vec::with_capacity(specs.len());
            let mut next_item = 0;
            let mut failed = None;
            for (s, spec) in specs.iter().enumerate() {
                let c = match self.sides[s] {
                    Side::User => user_parts[s].clone().expect("computed above"),
                    Side::Item => {
                        next_item += 1;
                        item_part[next_item - 1].clone()
                    }
                    Side::Context => match generate_slot(&record, spec) {
                        Ok(f) => slot_contribution(snap, s, &f).expect("generated ids are in range"),
                        Err(e) => {
                            failed = Some(e.to_string());
                            break;
                        }
                    },
                };
                contributions.push(c);
            }
            match failed {
                Some(message) => errors.push(ItemError { index: i, message }),
                None => scores[i] = Some(assemble(snap.dense(), contributions, None).probability),
            }
        }
        ScoreResponse {
            model_version: snap.version,
            scores,
            errors,
            cache_hits,
        }
    }

    fn fail_all(&self, snap: &Snapshot, n: usize, message: String) -> ScoreResponse {
        ScoreResponse {
            model_version: snap.version,
            scores: vec![None; n],
            errors: (0..n)
                .map(|index| ItemError {
                    index,
                    message: message.clone(),
                })
                .collect(),
            cache_hits: 0,
        }
    }

    /// Features exactly as the server derives them for one item.
    pub fn request_features(&self, user: &BTreeMap<String, String>, item: &ItemRequest) -> Result<FeatureVector, FeatureError> {
        generate(&RequestRecord { user, item }, self.specs())
    }

    /// Reference path: full feature generation and a plain forward pass.
    pub fn score_uncached(&self, snap: &Snapshot, user: &BTreeMap<String, String>, item: &ItemRequest) -> Result<f64, FeatureError> {
        let fv = self.request_features(user, item)?;
        Ok(forward(snap, &fv).expect("generated ids are in range").probability)
    }
}
