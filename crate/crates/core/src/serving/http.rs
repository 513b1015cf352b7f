use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::delta_stream::{decode_delta, ApplyOutcome, FrameConsumer};

use super::model::{ItemCache, ItemRequest, ScoreRequest, ServingModel};

/// Requests kept for latency percentiles.
pub const LATENCY_WINDOW: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub qps: f64,
    pub cache_hit_rate: f64,
    pub latency_p50_us: u64,
    pub latency_p95_us: u64,
    pub latency_p99_us: u64,
    pub deltas_applied: u64,
    pub requests: u64,
    pub model_version: u64,
}

struct Stats {
    started: Instant,
    requests: AtomicU64,
    latencies: Mutex<VecDeque<u64>>,
}

impl Stats {
    fn record(&self, micros: u64) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut w = self.latencies.lock().unwrap();
        if w.len() == LATENCY_WINDOW {
            w.pop_front();
        }
        w.push_back(micros);
    }
}

/// Nearest-rank percentile of an ascending slice; 0 when empty.
pub fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

struct AppState {
    model: Arc<ServingModel>,
    cache: Arc<ItemCache>,
    stats: Stats,
}

impl AppState {
    fn metrics(&self) -> MetricsReport {
        let mut lat: Vec<u64> = self.stats.latencies.lock().unwrap().iter().copied().collect();
        lat.sort_unstable();
        let requests = self.stats.requests.load(Ordering::Relaxed);
        let elapsed = self.stats.started.elapsed().as_secs_f64().max(1e-9);
        MetricsReport {
            qps: requests as f64 / elapsed,
            cache_hit_rate: self.cache.hit_rate(),
            latency_p50_us: percentile(&lat, 0.50),
            latency_p95_us: percentile(&lat, 0.95),
            latency_p99_us: percentile(&lat, 0.99),
            deltas_applied: self.model.deltas_applied(),
            requests,
            model_version: self.model.version(),
        }
    }
}

fn raw_map(v: &Value, what: &str) -> Result<BTreeMap<String, String>, String> {
    let obj = v.as_object().ok_or_else(|| format!("`{what}` must be an object"))?;
    let mut out = BTreeMap::new();
    for (k, v) in obj {
        let s = match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Null => continue,
            _ => return Err(format!("`{what}.{k}` must be a scalar")),
        };
        out.insert(k.clone(), s);
    }
    Ok(out)
}

/// Parses a request body. Feature values may be strings, numbers, or
/// booleans; nulls count as missing.
pub fn parse_score_request(body: &[u8]) -> Result<ScoreRequest, String> {
    let v: Value = serde_json::from_slice(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = v.as_object().ok_or("request must be a JSON object")?;
    if let Some(k) = obj.keys().find(|k| *k != "user" && *k != "items") {
        return Err(format!("unknown field `{k}`"));
    }
    let user = match obj.get("user") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(u) => raw_map(u, "user")?,
    };
    let items = obj
        .get("items")
        .and_then(Value::as_array)
        .ok_or("`items` must be an array")?
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let key = item
                .get("item_key")
                .and_then(Value::as_str)
                .ok_or_else(|| format!("items[{i}].item_key must be a string"))?;
            let features = match item.get("features") {
                None | Some(Value::Null) => BTreeMap::new(),
                Some(f) => raw_map(f, &format!("items[{i}].features"))?,
            };
            Ok(ItemRequest {
                item_key: key.to_string(),
                features,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(ScoreRequest { user, items })
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let start = Instant::now();
    let req = match parse_score_request(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let st = state.clone();
    let resp = match tokio::task::spawn_blocking(move || st.model.score(&req, Some(&st.cache))).await {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    state.stats.record(start.elapsed().as_micros() as u64);
    Json(resp).into_response()
}

async fn version(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({ "model_version": state.model.version() })).into_response()
}

async fn metrics(State(state): State<Arc<AppState>>) -> Response {
    Json(state.metrics()).into_response()
}

pub struct ServeOptions {
    pub bind: String,
    pub poll_interval: Duration,
}

/// A running HTTP service and its delta poller.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    server: Option<JoinHandle<std::io::Result<()>>>,
    poller: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn join(mut self) -> std::io::Result<()> {
        let r = self.server.take().map_or(Ok(()), |h| h.join().expect("server thread panicked"));
        self.stop.store(true, Ordering::SeqCst);
        if let Some(p) = self.poller.take() {
            let _ = p.join();
        }
        r
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.server.take() {
            let _ = h.join();
        }
        if let Some(p) = self.poller.take() {
            let _ = p.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_all();
    }
}

/// Drains every available frame and applies it. Undecodable or rejected
/// frames are logged and skipped.
pub fn poll_once(model: &ServingModel, consumer: &mut dyn FrameConsumer) -> usize {
    let mut applied = 0;
    loop {
        let frame = match consumer.consume(Duration::ZERO) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                log::warn!("delta queue error: {e}");
                break;
            }
        };
        match decode_delta(&frame) {
            Ok(msg) => match model.apply_delta(&msg) {
                Ok(ApplyOutcome::Applied(v)) => {
                    applied += 1;
                    log::info!("applied delta version {v}");
                }
                Ok(ApplyOutcome::Skipped) => log::debug!("skipped stale delta version {}", msg.model_version),
                Err(e) => log::warn!("rejected delta version {}: {e}", msg.model_version),
            },
            Err(e) => log::warn!("dropping undecodable delta frame: {e}"),
        }
        if let Err(e) = consumer.commit() {
            log::warn!("could not persist queue cursor: {e}");
        }
    }
    applied
}

/// Starts the HTTP service on its own runtime thread, plus a poller thread
/// that drains `consumer` every `poll_interval`.
pub fn http_serve(
    model: Arc<ServingModel>,
    cache: Arc<ItemCache>,
    consumer: Option<Box<dyn FrameConsumer>>,
    opts: &ServeOptions,
) -> std::io::Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(&opts.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));

    let poller = match consumer {
        None => None,
        Some(mut consumer) => {
            let model = model.clone();
            let stop = stop.clone();
            let interval = opts.poll_interval;
            Some(std::thread::Builder::new().name("delta-poller".into()).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    poll_once(&model, consumer.as_mut());
                    let deadline = Instant::now() + interval;
                    while !stop.load(Ordering::SeqCst) && Instant::now() < deadline {
                        std::thread::sleep((deadline - Instant::now()).min(Duration::from_millis(20)));
                    }
                }
            })?)
        }
    };

    let state = Arc::new(AppState {
        model,
        cache,
        stats: Stats {
            started: Instant::now(),
            requests: AtomicU64::new(0),
            latencies: Mutex::new(VecDeque::with_capacity(LATENCY_WINDOW)),
        },
    });
    let app = Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/version", get(version))
        .route("/v1/metrics", get(metrics))
        .with_state(state);
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = std::thread::Builder::new().name("http-server".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    })?;
    Ok(ServerHandle {
        addr,
        stop,
        shutdown: Some(tx),
        server: Some(server),
        poller,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.5), 50);
        assert_eq!(percentile(&v, 0.95), 95);
        assert_eq!(percentile(&v, 0.99), 99);
        assert_eq!(percentile(&[7], 0.99), 7);
        assert_eq!(percentile(&[], 0.5), 0);
    }

    #[test]
    fn request_parsing() {
        let r = parse_score_request(br#"{"user":{"user_id":"u1","user_age":31,"x":null},"items":[{"item_key":"a","features":{"item_id":"a"}}]}"#)
            .unwrap();
        assert_eq!(r.user.get("user_age").map(String::as_str), Some("31"));
        assert!(!r.user.contains_key("x"));
        assert_eq!(r.items[0].item_key, "a");
        assert!(parse_score_request(b"{not json").is_err());
        assert!(parse_score_request(br#"{"items":[{"features":{}}]}"#).is_err());
        assert!(parse_score_request(br#"{"items":[], "extra": 1}"#).is_err());
        assert!(parse_score_request(br#"{"user":{"a":[1]},"items":[]}"#).is_err());
    }
}
