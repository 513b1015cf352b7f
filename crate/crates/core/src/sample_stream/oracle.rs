use std::collections::{BTreeMap, HashMap};

use super::{sample_features, Event, EventKind, JoinConfig, JoinStats, LabeledSample, Payload};

/// Offline join over a complete arrival sequence. An event is late when its
/// time is below the largest earlier event time minus the allowed lateness;
/// everything else is joined by brute force over the whole log.
pub fn batch_join(arrivals: &[Event], cfg: JoinConfig) -> (Vec<LabeledSample>, JoinStats) {
    let mut stats = JoinStats::default();
    let mut max_seen: Option<i64> = None;
    let mut on_time = Vec::new();
    for e in arrivals {
        if max_seen.is_some_and(|m| e.event_time < m - cfg.allowed_lateness_ms) {
            stats.late_dropped += 1;
            continue;
        }
        max_seen = Some(max_seen.map_or(e.event_time, |m| m.max(e.event_time)));
        on_time.push(e);
    }

    let mut impressions: BTreeMap<(&str, &str), Vec<(i64, &Payload)>> = BTreeMap::new();
    let mut clicks: HashMap<(&str, &str), Vec<i64>> = HashMap::new();
    let mut logs: HashMap<&str, Vec<(i64, &Payload)>> = HashMap::new();
    for e in &on_time {
        let key = (e.request_id.as_str(), e.item_key.as_str());
        match e.kind {
            EventKind::Impression => impressions.entry(key).or_default().push((e.event_time, &e.payload)),
            EventKind::Click => clicks.entry(key).or_default().push(e.event_time),
            EventKind::FeatureLog => logs.entry(&e.request_id).or_default().push((e.event_time, &e.payload)),
        }
    }
    let extra = |n: usize| n as u64 - 1;
    stats.dups = impressions.values().map(|v| extra(v.len())).sum::<u64>()
        + clicks.values().map(|v| extra(v.len())).sum::<u64>()
        + logs.values().map(|v| extra(v.len())).sum::<u64>();

    let w = cfg.label_window_ms;
    let l = cfg.allowed_lateness_ms;
    let mut samples = Vec::new();
    for ((rid, item), versions) in &impressions {
        let &(t0, payload) = versions.iter().min().unwrap();
        let clicked = clicks
            .get(&(*rid, *item))
            .is_some_and(|cs| cs.iter().any(|&tc| tc >= t0 && tc <= t0 + w));
        let log = logs
            .get(rid)
            .and_then(|ls| ls.iter().filter(|(tl, _)| *tl >= t0 - l && *tl <= t0 + w).min());
        match log {
            None => stats.feature_missing += 1,
            Some((_, snapshot)) => samples.push(LabeledSample {
                request_id: rid.to_string(),
                item_key: item.to_string(),
                label: clicked as u8,
                features: sample_features(snapshot, payload, item),
                event_time: t0,
            }),
        }
    }
    stats.samples = samples.len() as u64;
    (samples, stats)
}
