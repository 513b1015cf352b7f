//! Online-learning sample pipeline. Impressions, clicks and serving-time
//! feature logs arrive as JSON lines in arbitrary order; the joiner labels
//! each impression against a click window and attaches its feature
//! snapshot, driven by an event-time watermark.

mod joiner;
mod oracle;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::DataConfig;

pub use joiner::StreamJoiner;
pub use oracle::batch_join;

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("invalid join config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for StreamError {
    fn from(e: std::io::Error) -> Self {
        StreamError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Impression,
    Click,
    FeatureLog,
}

pub type Payload = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    /// Milliseconds.
    pub event_time: i64,
    pub request_id: String,
    pub item_key: String,
    pub payload: Payload,
}

impl Event {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "kind": self.kind,
            "event_time": self.event_time,
            "request_id": self.request_id,
            "item_key": self.item_key,
            "payload": self.payload,
        })
        .to_string()
    }
}

/// Parses one JSON-lines event. Payload values may be strings, numbers or
/// booleans; nulls are dropped. Feature logs may omit `item_key`.
pub fn parse_event(line: &str) -> Result<Event, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = v.as_object().ok_or("event must be a JSON object")?;
    let kind = match obj.get("kind").and_then(Value::as_str) {
        Some("impression") => EventKind::Impression,
        Some("click") => EventKind::Click,
        Some("feature_log") => EventKind::FeatureLog,
        Some(other) => return Err(format!("unknown kind `{other}`")),
        None => return Err("missing `kind`".into()),
    };
    let event_time = obj
        .get("event_time")
        .and_then(Value::as_i64)
        .filter(|&t| t >= 0)
        .ok_or("`event_time` must be a non-negative integer")?;
    let request_id = obj
        .get("request_id")
        .and_then(Value::as_str)
        .ok_or("`request_id` must be a string")?
        .to_string();
    let item_key = match obj.get("item_key") {
        Some(Value::String(s)) => s.clone(),
        None | Some(Value::Null) if kind == EventKind::FeatureLog => String::new(),
        _ => return Err("`item_key` must be a string".into()),
    };
    let mut payload = Payload::new();
    match obj.get("payload") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let s = match v {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    Value::Null => continue,
                    _ => return Err(format!("payload field `{k}` must be a scalar")),
                };
                payload.insert(k.clone(), s);
            }
        }
        Some(_) => return Err("`payload` must be an object".into()),
    }
    Ok(Event {
        kind,
        event_time,
        request_id,
        item_key,
        payload,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinConfig {
    pub label_window_ms: i64,
    pub allowed_lateness_ms: i64,
}

impl JoinConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.label_window_ms <= 0 {
            return Err(StreamError::Config("label window must be positive".into()));
        }
        if self.allowed_lateness_ms < 0 {
            return Err(StreamError::Config("allowed lateness must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LabeledSample {
    pub request_id: String,
    pub item_key: String,
    pub label: u8,
    pub features: Payload,
    pub event_time: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinStats {
    pub dups: u64,
    pub late_dropped: u64,
    pub feature_missing: u64,
    pub samples: u64,
    pub malformed: u64,
}

/// Column holding the impression's item key in sample output.
pub const ITEM_KEY_COLUMN: &str = "item_key";

/// Raw features of a joined impression: the feature log snapshot, then
/// impression payload fields it lacks, then the item key.
pub(crate) fn sample_features(log: &Payload, impression: &Payload, item_key: &str) -> Payload {
    let mut out = log.clone();
    for (k, v) in impression {
        out.entry(k.clone()).or_insert_with(|| v.clone());
    }
    out.insert(ITEM_KEY_COLUMN.to_string(), item_key.to_string());
    out
}

/// Deduplicates a batch of events: the first impression per
/// (request_id, item_key) and the earliest click per key survive. Returns
/// the survivors in input order and the number dropped.
pub fn aggregate_events(events: &[Event]) -> (Vec<Event>, u64) {
    let mut first_impression: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut earliest_click: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut dups = 0u64;
    for (i, e) in events.iter().enumerate() {
        let key = (e.request_id.as_str(), e.item_key.as_str());
        match e.kind {
            EventKind::Impression => {
                if let std::collections::btree_map::Entry::Vacant(slot) = first_impression.entry(key) {
                    slot.insert(i);
                } else {
                    dups += 1;
                }
            }
            EventKind::Click => match earliest_click.get(&key) {
                Some(&j) => {
                    dups += 1;
                    if e.event_time < events[j].event_time {
                        earliest_click.insert(key, i);
                    }
                }
                None => {
                    earliest_click.insert(key, i);
                }
            },
            EventKind::FeatureLog => {}
        }
    }
    let keep: std::collections::BTreeSet<usize> = first_impression
        .values()
        .chain(earliest_click.values())
        .copied()
        .collect();
    let out = events
        .iter()
        .enumerate()
        .filter(|(i, e)| e.kind == EventKind::FeatureLog || keep.contains(i))
        .map(|(_, e)| e.clone())
        .collect();
    (out, dups)
}

/// Writes samples as a headered CSV in `data`'s dialect: the label column,
/// then the sorted union of feature columns. Absent features are empty
/// cells.
pub fn write_samples_csv<W: Write>(samples: &[LabeledSample], data: &DataConfig, out: W) -> Result<(), StreamError> {
    let columns: std::collections::BTreeSet<&str> = samples
        .iter()
        .flat_map(|s| s.features.keys().map(String::as_str))
        .filter(|c| *c != data.label_column)
        .collect();
    let mut w = csv::WriterBuilder::new().delimiter(data.delimiter_byte()).from_writer(out);
    let io = |e: csv::Error| StreamError::Io(e.to_string());
    w.write_record(std::iter::once(data.label_column.as_str()).chain(columns.iter().copied()))
        .map_err(io)?;
    for s in samples {
        let label = s.label.to_string();
        let row = std::iter::once(label.as_str())
            .chain(columns.iter().map(|c| s.features.get(*c).map_or("", String::as_str)));
        w.write_record(row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the streaming join over JSON lines from `input`. Malformed lines are
/// logged, counted and skipped.
pub fn join_lines<R: BufRead>(input: R, cfg: JoinConfig) -> Result<(Vec<LabeledSample>, JoinStats), StreamError> {
    let mut joiner = StreamJoiner::new(cfg)?;
    let mut samples = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Err(e) = joiner.push_line(&line, &mut samples) {
            log::warn!("skipping malformed event on line {}: {e}", n + 1);
        }
    }
    joiner.finish(&mut samples);
    Ok((samples, joiner.stats()))
}

/// Opens an event source: `tcp://host:port` listens for one connection and
/// reads until it closes, `-` is stdin, anything else is a file path.
pub fn open_event_source(source: &str) -> Result<Box<dyn BufRead>, StreamError> {
    if let Some(addr) = source.strip_prefix("tcp://") {
        let listener = std::net::TcpListener::bind(addr)?;
        log::info!("waiting for event stream on {}", listener.local_addr()?);
        let (conn, peer) = listener.accept()?;
        log::info!("event stream connected from {peer}");
        return Ok(Box::new(BufReader::new(conn)));
    }
    if source == "-" {
        return Ok(Box::new(BufReader::new(std::io::stdin())));
    }
    Ok(Box::new(BufReader::new(std::fs::File::open(source)?)))
}

/// Reads events from `source`, writes the joined samples CSV to `output`
/// and returns the counters.
pub fn run_pipeline(source: &str, cfg: JoinConfig, data: &DataConfig, output: &Path) -> Result<JoinStats, StreamError> {
    cfg.validate()?;
    let input = open_event_source(source)?;
    let (samples, stats) = join_lines(input, cfg)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(output)?);
    write_samples_csv(&samples, data, file)?;
    Ok(stats)
}
