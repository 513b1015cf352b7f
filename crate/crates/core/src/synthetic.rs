//! Seeded synthetic workloads: a logistic-rule CTR dataset and impression /
//! click / feature-log event streams.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_config, DataConfig, PipelineConfig};
use crate::sample_stream::{Event, EventKind, JoinConfig, Payload};

/// Pipeline config matching the columns of [`rule_rows`].
pub const RULE_CONFIG: &str = r#"{
  "data_config": {"label_column": "label"},
  "feature_config": {"features": [
    {"name": "user_id", "kind": "id", "vocab_size": 1000},
    {"name": "user_age", "kind": "numeric_bucket", "boundaries": [25, 35, 45, 55]},
    {"name": "item_id", "kind": "id", "vocab_size": 1000},
    {"name": "item_cat", "kind": "id", "vocab_size": 64},
    {"name": "hour", "kind": "numeric_bucket", "boundaries": [6, 12, 18]},
    {"name": "user_x_cat", "kind": "cross", "vocab_size": 2048, "source_columns": ["user_age", "item_cat"]}
  ]},
  "model_config": {"embedding_dim": 8, "mlp_hidden_dims": [16]},
  "train_config": {"learning_rate": 0.01, "batch_size": 64, "num_epochs": 5, "delta_period_steps": 50},
  "eval_config": {}
}"#;

pub fn rule_config() -> PipelineConfig {
    parse_config(RULE_CONFIG).expect("built-in config is valid")
}

pub const RULE_USERS: usize = 200;
pub const RULE_ITEMS: usize = 300;
pub const RULE_CATS: usize = 20;

/// One labelled raw record.
pub type RawRow = (u8, BTreeMap<String, String>);

/// Hidden weights of the logistic rule, fixed by `rule_seed`.
pub struct LogisticRule {
    user: Vec<f64>,
    item: Vec<f64>,
    cat: Vec<f64>,
    item_cat: Vec<usize>,
    age_slope: f64,
}

impl LogisticRule {
    pub fn new(rule_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rule_seed);
        let mut draw = |n: usize, s: f64| (0..n).map(|_| rng.random_range(-s..s)).collect::<Vec<f64>>();
        let user = draw(RULE_USERS, 8.0);
        let item = draw(RULE_ITEMS, 8.0);
        let cat = draw(RULE_CATS, 4.0);
        let item_cat = (0..RULE_ITEMS).map(|i| (i * 7 + 3) % RULE_CATS).collect();
        Self {
            user,
            item,
            cat,
            item_cat,
            age_slope: 3.0,
        }
    }

    pub fn logit(&self, user: usize, item: usize, age: u32) -> f64 {
        self.user[user] + self.item[item] + self.cat[self.item_cat[item]] + self.age_slope * (age as f64 - 45.0) / 25.0
    }

    /// `n` records with labels drawn from the sigmoid of the rule's logit.
    pub fn rows(&self, seed: u64, n: usize) -> Vec<RawRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let user = rng.random_range(0..RULE_USERS);
                let item = rng.random_range(0..RULE_ITEMS);
                let age: u32 = rng.random_range(18..72);
                let hour: u32 = rng.random_range(0..24);
                let p = 1.0 / (1.0 + (-self.logit(user, item, age)).exp());
                let label = rng.random_bool(p) as u8;
                let mut raw = BTreeMap::new();
                raw.insert("user_id".to_string(), format!("u{user}"));
                raw.insert("user_age".to_string(), age.to_string());
                raw.insert("item_id".to_string(), format!("i{item}"));
                raw.insert("item_cat".to_string(), format!("c{}", self.item_cat[item]));
                raw.insert("hour".to_string(), hour.to_string());
                (label, raw)
            })
            .collect()
    }
}

/// Labelled rows of the default rule (rule seed 7).
pub fn rule_rows(seed: u64, n: usize) -> Vec<RawRow> {
    LogisticRule::new(7).rows(seed, n)
}

/// Headered CSV in `data`'s dialect: the label column, then the sorted
/// union of raw columns. Missing values are empty cells.
pub fn rows_to_csv(rows: &[RawRow], data: &DataConfig) -> String {
    let columns: std::collections::BTreeSet<&str> = rows
        .iter()
        .flat_map(|(_, r)| r.keys().map(String::as_str))
        .filter(|c| *c != data.label_column)
        .collect();
    let mut w = csv::WriterBuilder::new()
        .delimiter(data.delimiter_byte())
        .from_writer(Vec::new());
    w.write_record(std::iter::once(data.label_column.as_str()).chain(columns.iter().copied()))
        .expect("in-memory write");
    for (label, raw) in rows {
        let label = label.to_string();
        w.write_record(std::iter::once(label.as_str()).chain(columns.iter().map(|c| raw.get(*c).map_or("", String::as_str))))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// A random event log in event-time order. Each request has one feature
/// log (missing for about 5% of requests, timed within `[t - L, t + W/2]`)
/// and one to three impressions at time `t`. About 30% of impressions get a
/// click up to `1.2 W` later. Roughly 5% of impressions and 10% of clicks
/// are exact duplicates.
pub fn random_event_log(seed: u64, n_events: usize, cfg: JoinConfig) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = cfg.label_window_ms;
    let mut events = Vec::with_capacity(n_events + 16);
    let mut t = 0i64;
    let mut req = 0u64;
    while events.len() < n_events {
        t += rng.random_range(0..w / 4 + 1);
        let rid = format!("r{req}");
        req += 1;
        let mut log = Payload::new();
        log.insert("user_id".into(), format!("u{}", rng.random_range(0..50)));
        log.insert("hour".into(), rng.random_range(0..24).to_string());
        if rng.random_bool(0.95) {
            let tl = t + rng.random_range(-cfg.allowed_lateness_ms..=w / 2);
            events.push(Event {
                kind: EventKind::FeatureLog,
                event_time: tl.max(0),
                request_id: rid.clone(),
                item_key: String::new(),
                payload: log,
            });
        }
        for _ in 0..rng.random_range(1..4) {
            let item = format!("i{}", rng.random_range(0..40));
            let mut p = Payload::new();
            p.insert("item_cat".into(), format!("c{}", rng.random_range(0..5)));
            let imp = Event {
                kind: EventKind::Impression,
                event_time: t,
                request_id: rid.clone(),
                item_key: item.clone(),
                payload: p,
            };
            if rng.random_bool(0.05) {
                events.push(imp.clone());
            }
            events.push(imp);
            if rng.random_bool(0.3) {
                let tc = t + rng.random_range(0..=w + w / 5);
                let copies = if rng.random_bool(0.1) { 2 } else { 1 };
                for _ in 0..copies {
                    events.push(Event {
                        kind: EventKind::Click,
                        event_time: tc,
                        request_id: rid.clone(),
                        item_key: item.clone(),
                        payload: Payload::new(),
                    });
                }
            }
        }
    }
    events.sort_by_key(|e| e.event_time);
    events
}

/// Arrival order for `events`: each is delayed by a uniform amount in
/// `[0, max_delay]` and the stream is sorted by arrival time. With
/// `max_delay` at most the allowed lateness no event arrives late.
pub fn shuffle_arrival(events: &[Event], max_delay: i64, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(i64, u32, Event)> = events
        .iter()
        .map(|e| (e.event_time + rng.random_range(0..=max_delay), rng.random(), e.clone()))
        .collect();
    keyed.sort_by_key(|(a, tie, _)| (*a, *tie));
    keyed.into_iter().map(|(_, _, e)| e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::read_dataset;

    #[test]
    fn rule_csv_loads_with_rule_config() {
        let cfg = rule_config();
        let rows = rule_rows(1, 300);
        let csv = rows_to_csv(&rows, &cfg.data_config);
        assert!(csv.starts_with("label,hour,item_cat,item_id,user_age,user_id\n"));
        let ds = read_dataset(csv.as_bytes(), &cfg.data_config, cfg.features()).unwrap();
        assert_eq!(ds.len(), 300);
        let positives = ds.labels.iter().filter(|&&y| y == 1.0).count();
        assert!(positives > 30 && positives < 270, "{positives}");
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(rule_rows(3, 50), rule_rows(3, 50));
        let cfg = JoinConfig {
            label_window_ms: 1000,
            allowed_lateness_ms: 100,
        };
        let log = random_event_log(4, 200, cfg);
        assert!(log.len() >= 200);
        assert!(log.windows(2).all(|w| w[0].event_time <= w[1].event_time));
        assert_eq!(shuffle_arrival(&log, 100, 1), shuffle_arrival(&log, 100, 1));
    }
}
