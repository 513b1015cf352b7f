use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::{parse_event, sample_features, Event, EventKind, JoinConfig, JoinStats, LabeledSample, Payload, StreamError};

type Key = (String, String);

struct Pending {
    event_time: i64,
    payload: Payload,
    clicks: Vec<i64>,
}

/// Single-threaded event-time joiner.
///
/// The watermark is the largest event time seen minus the allowed lateness.
/// An event older than the watermark on arrival is dropped as late. An
/// impression at `t0` is emitted once the watermark passes `t0 + W`, with
/// label 1 if some click for its key lies in `[t0, t0 + W]`, joined to the
/// earliest feature log of its request timed within `[t0 - L, t0 + W]`.
/// Clicks with no impression yet are kept until the watermark passes them;
/// feature logs until it passes `tl + W + L`.
pub struct StreamJoiner {
    cfg: JoinConfig,
    max_seen: Option<i64>,
    pending: HashMap<Key, Pending>,
    due: BTreeSet<(i64, String, String)>,
    orphan_clicks: HashMap<Key, Vec<i64>>,
    orphan_index: BTreeMap<i64, Vec<Key>>,
    logs: HashMap<String, Vec<(i64, Payload)>>,
    log_index: BTreeMap<i64, Vec<String>>,
    seen_impressions: HashSet<Key>,
    seen_clicks: HashSet<Key>,
    seen_logs: HashSet<String>,
    stats: JoinStats,
}

impl StreamJoiner {
    pub fn new(cfg: JoinConfig) -> Result<Self, StreamError> {
        cfg.validate()?;
        Ok(StreamJoiner {
            cfg,
            max_seen: None,
            pending: HashMap::new(),
            due: BTreeSet::new(),
            orphan_clicks: HashMap::new(),
            orphan_index: BTreeMap::new(),
            logs: HashMap::new(),
            log_index: BTreeMap::new(),
            seen_impressions: HashSet::new(),
            seen_clicks: HashSet::new(),
            seen_logs: HashSet::new(),
            stats: JoinStats::default(),
        })
    }

    pub fn watermark(&self) -> Option<i64> {
        self.max_seen.map(|m| m - self.cfg.allowed_lateness_ms)
    }

    pub fn stats(&self) -> JoinStats {
        self.stats
    }

    /// Impressions, orphan clicks and feature logs currently held.
    pub fn buffered(&self) -> usize {
        self.pending.len()
            + self.orphan_clicks.values().map(Vec::len).sum::<usize>()
            + self.logs.values().map(Vec::len).sum::<usize>()
    }

    /// Parses and pushes one line; malformed lines are counted.
    pub fn push_line(&mut self, line: &str, out: &mut Vec<LabeledSample>) -> Result<(), String> {
        match parse_event(line) {
            Ok(e) => {
                self.push(e, out);
                Ok(())
            }
            Err(e) => {
                self.stats.malformed += 1;
                Err(e)
            }
        }
    }

    pub fn push(&mut self, e: Event, out: &mut Vec<LabeledSample>) {
        if self.watermark().is_some_and(|wm| e.event_time < wm) {
            self.stats.late_dropped += 1;
            return;
        }
        let t = e.event_time;
        match e.kind {
            EventKind::Impression => self.on_impression(e),
            EventKind::Click => self.on_click(e),
            EventKind::FeatureLog => {
                if !self.seen_logs.insert(e.request_id.clone()) {
                    self.stats.dups += 1;
                }
                self.log_index.entry(t).or_default().push(e.request_id.clone());
                self.logs.entry(e.request_id).or_default().push((t, e.payload));
            }
        }
        self.max_seen = Some(self.max_seen.map_or(t, |m| m.max(t)));
        let wm = self.watermark().unwrap();
        self.advance(wm, out);
    }

    /// Flushes everything as if the watermark had reached infinity.
    pub fn finish(&mut self, out: &mut Vec<LabeledSample>) {
        self.advance(i64::MAX, out);
    }

    fn on_impression(&mut self, e: Event) {
        let key = (e.request_id, e.item_key);
        if !self.seen_impressions.insert(key.clone()) {
            self.stats.dups += 1;
            if let Some(p) = self.pending.get_mut(&key) {
                if (e.event_time, &e.payload) < (p.event_time, &p.payload) {
                    self.due.remove(&(p.event_time, key.0.clone(), key.1.clone()));
                    self.due.insert((e.event_time, key.0.clone(), key.1.clone()));
                    p.event_time = e.event_time;
                    p.payload = e.payload;
                }
            }
            return;
        }
        let clicks = self.orphan_clicks.remove(&key).unwrap_or_default();
        self.due.insert((e.event_time, key.0.clone(), key.1.clone()));
        self.pending.insert(
            key,
            Pending {
                event_time: e.event_time,
                payload: e.payload,
                clicks,
            },
        );
    }

    fn on_click(&mut self, e: Event) {
        let key = (e.request_id, e.item_key);
        if !self.seen_clicks.insert(key.clone()) {
            self.stats.dups += 1;
        }
        if let Some(p) = self.pending.get_mut(&key) {
            p.clicks.push(e.event_time);
            return;
        }
        self.orphan_index.entry(e.event_time).or_default().push(key.clone());
        self.orphan_clicks.entry(key).or_default().push(e.event_time);
    }

    fn advance(&mut self, wm: i64, out: &mut Vec<LabeledSample>) {
        let w = self.cfg.label_window_ms;
        let l = self.cfg.allowed_lateness_ms;

        while let Some(first) = self.due.first() {
            if first.0.saturating_add(w) >= wm {
                break;
            }
            let (t0, rid, item) = self.due.pop_first().unwrap();
            let key = (rid, item);
            let p = self.pending.remove(&key).expect("due impression is pending");
            let label = p.clicks.iter().any(|&tc| tc >= t0 && tc <= t0 + w) as u8;
            let log = self
                .logs
                .get(&key.0)
                .and_then(|ls| ls.iter().filter(|(tl, _)| *tl >= t0 - l && *tl <= t0 + w).min());
            match log {
                None => self.stats.feature_missing += 1,
                Some((_, snapshot)) => {
                    let features = sample_features(snapshot, &p.payload, &key.1);
                    self.stats.samples += 1;
                    out.push(LabeledSample {
                        request_id: key.0,
                        item_key: key.1,
                        label,
                        features,
                        event_time: t0,
                    });
                }
            }
        }

        while let Some((&tc, _)) = self.orphan_index.first_key_value() {
            if tc >= wm {
                break;
            }
            for key in self.orphan_index.pop_first().unwrap().1 {
                if let Some(times) = self.orphan_clicks.get_mut(&key) {
                    if let Some(i) = times.iter().position(|&x| x == tc) {
                        times.swap_remove(i);
                    }
                    if times.is_empty() {
                        self.orphan_clicks.remove(&key);
                    }
                }
            }
        }

        while let Some((&tl, _)) = self.log_index.first_key_value() {
            if tl.saturating_add(w + l) >= wm {
                break;
            }
            for rid in self.log_index.pop_first().unwrap().1 {
                if let Some(entries) = self.logs.get_mut(&rid) {
                    if let Some(i) = entries.iter().position(|(x, _)| *x == tl) {
                        entries.swap_remove(i);
                    }
                    if entries.is_empty() {
                        self.logs.remove(&rid);
                    }
                }
            }
        }
    }
}
