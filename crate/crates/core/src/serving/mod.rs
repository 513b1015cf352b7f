//! Online scoring: copy-on-write parameter snapshots, an LRU cache of
//! item-side partial results, live delta application, and an HTTP API.

mod batch;
mod http;
mod lru;
mod model;

pub use batch::score_csv;
pub use http::{http_serve, parse_score_request, percentile, poll_once, MetricsReport, ServeOptions, ServerHandle, LATENCY_WINDOW};
pub use lru::LruCache;
pub use model::{
    slot_side, split_record, ItemCache, ItemError, ItemPartial, ItemRequest, RequestRecord, ScoreRequest, ScoreResponse,
    ServingModel, Side, Snapshot, CHUNK_ROWS,
};
