//! Deterministic feature generation.
//!
//! The same functions run inside the trainer (over CSV rows) and the server
//! (over JSON request maps); nothing here depends on which side calls it.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Separator placed between the two halves of a crossed value.
pub const CROSS_SEPARATOR: u8 = 0x01;
/// Separator between values inside one multi-valued cell.
pub const MULTI_VALUE_SEPARATOR: char = '|';
/// Maximum number of combinations a single cross produces.
pub const MAX_CROSS_COMBINATIONS: usize = 100;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("slot `{slot}`: column `{column}` has non-numeric value {value:?}")]
    InvalidValue {
        slot: String,
        column: String,
        value: String,
    },
    #[error("non-finite value {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Id,
    MultiId,
    NumericBucket,
    NumericRaw,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub vocab_size: u64,
    pub boundaries: Vec<f64>,
    pub source_columns: Vec<String>,
    pub pooling: Pooling,
}

impl FeatureSpec {
    pub fn id(name: &str, vocab_size: u64) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Id,
            vocab_size,
            boundaries: Vec::new(),
            source_columns: vec![name.to_string()],
            pooling: Pooling::Sum,
        }
    }

    pub fn is_hashed(&self) -> bool {
        matches!(self.kind, FeatureKind::Id | FeatureKind::MultiId | FeatureKind::Cross)
    }

    /// Number of rows in this slot's embedding table.
    pub fn table_rows(&self) -> u64 {
        match self.kind {
            FeatureKind::NumericBucket => self.boundaries.len() as u64 + 1,
            FeatureKind::NumericRaw => 1,
            _ => self.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("slot name must not be empty".into());
        }
        if self.is_hashed() && self.vocab_size < 2 {
            return Err(format!("slot `{}`: vocab_size must be >= 2", self.name));
        }
        let want_sources = if self.kind == FeatureKind::Cross { 2 } else { 1 };
        if self.source_columns.len() != want_sources {
            return Err(format!(
                "slot `{}`: expected {want_sources} source column(s), got {}",
                self.name,
                self.source_columns.len()
            ));
        }
        if self.boundaries.iter().any(|b| !b.is_finite())
            || self.boundaries.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(format!("slot `{}`: boundaries must be finite and strictly increasing", self.name));
        }
        Ok(())
    }
}

/// Generated values for one slot. `weights`, when present, has one entry per id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotFeatures {
    pub ids: Vec<u64>,
    pub weights: Option<Vec<f32>>,
}

/// Per-slot features, indexed in the order of the feature spec list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub slots: Vec<SlotFeatures>,
}

impl FeatureVector {
    /// Dense values carried by `numeric_raw` slots, in slot order.
    pub fn dense_values(&self, specs: &[FeatureSpec]) -> Vec<f32> {
        specs
            .iter()
            .zip(&self.slots)
            .filter(|(s, _)| s.kind == FeatureKind::NumericRaw)
            .map(|(_, f)| f.weights.as_ref().and_then(|w| w.first().copied()).unwrap_or(0.0))
            .collect()
    }

    /// Canonical text form: one line per slot, sorted by slot name,
    /// `name\tid,id,...` with a third `\tw,w,...` column when weights exist.
    /// Weights use the shortest representation that round-trips the f32.
    pub fn canonical(&self, specs: &[FeatureSpec]) -> String {
        let mut order: Vec<usize> = (0..specs.len()).collect();
        order.sort_by(|&a, &b| specs[a].name.cmp(&specs[b].name));
        let mut out = String::new();
        for i in order {
            let slot = &self.slots[i];
            out.push_str(&specs[i].name);
            out.push('\t');
            for (k, id) in slot.ids.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{id}").unwrap();
            }
            if let Some(ws) = &slot.weights {
                out.push('\t');
                for (k, w) in ws.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    write!(out, "{w:?}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Column lookup over a raw record.
pub trait RawRecord {
    fn get(&self, column: &str) -> Option<&str>;
}

impl RawRecord for HashMap<String, String> {
    fn get(&self, column: &str) -> Option<&str> {
        HashMap::get(self, column).map(String::as_str)
    }
}

impl RawRecord for BTreeMap<String, String> {
    fn get(&self, column: &str) -> Option<&str> {
        BTreeMap::get(self, column).map(String::as_str)
    }
}

/// Two records viewed as one; `front` wins on overlapping columns.
pub struct Layered<'a, A: ?Sized, B: ?Sized> {
    pub front: &'a A,
    pub back: &'a B,
}

impl<A: RawRecord + ?Sized, B: RawRecord + ?Sized> RawRecord for Layered<'_, A, B> {
    fn get(&self, column: &str) -> Option<&str> {
        self.front.get(column).or_else(|| self.back.get(column))
    }
}

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn hash_id(raw: &[u8], vocab_size: u64) -> u64 {
    debug_assert!(vocab_size >= 2);
    fnv1a64(raw) % vocab_size
}

/// Number of boundaries `b` with `value >= b`.
pub fn bucketize(value: f64, boundaries: &[f64]) -> Result<u64, FeatureError> {
    if !value.is_finite() {
        return Err(FeatureError::NonFinite(value));
    }
    Ok(boundaries.partition_point(|&b| value >= b) as u64)
}

/// Cartesian product `a × b`, each pair joined by [`CROSS_SEPARATOR`], in
/// a-major order and capped at [`MAX_CROSS_COMBINATIONS`].
pub fn cross<A: AsRef<[u8]>, B: AsRef<[u8]>>(a: &[A], b: &[B]) -> Vec<Vec<u8>> {
    a.iter()
        .flat_map(|x| {
            b.iter().map(move |y| {
                let (x, y) = (x.as_ref(), y.as_ref());
                let mut v = Vec::with_capacity(x.len() + 1 + y.len());
                v.extend_from_slice(x);
                v.push(CROSS_SEPARATOR);
                v.extend_from_slice(y);
                v
            })
        })
        .take(MAX_CROSS_COMBINATIONS)
        .collect()
}

fn split_values(cell: Option<&str>) -> Vec<&str> {
    match cell {
        None => Vec::new(),
        Some(text) => text.split(MULTI_VALUE_SEPARATOR).filter(|s| !s.is_empty()).collect(),
    }
}

fn parse_numeric(spec: &FeatureSpec, column: &str, text: &str) -> Result<f64, FeatureError> {
    text.trim().parse::<f64>().map_err(|_| FeatureError::InvalidValue {
        slot: spec.name.clone(),
        column: column.to_string(),
        value: text.to_string(),
    })
}

/// Features for a single slot. Missing or empty source cells produce an
/// empty id list (or a zero dense value for `numeric_raw`).
pub fn generate_slot<R: RawRecord + ?Sized>(
    record: &R,
    spec: &FeatureSpec,
) -> Result<SlotFeatures, FeatureError> {
    let column = spec.source_columns[0].as_str();
    let cell = record.get(column).filter(|s| !s.is_empty());
    let features = match spec.kind {
        FeatureKind::Id => SlotFeatures {
            ids: cell
                .map(|v| vec![hash_id(v.as_bytes(), spec.vocab_size)])
                .unwrap_or_default(),
            weights: None,
        },
        FeatureKind::MultiId => SlotFeatures {
            ids: split_values(cell)
                .into_iter()
                .map(|v| hash_id(v.as_bytes(), spec.vocab_size))
                .collect(),
            weights: None,
        },
        FeatureKind::NumericBucket => match cell {
            None => SlotFeatures::default(),
            Some(text) => {
                let x = parse_numeric(spec, column, text)?;
                SlotFeatures {
                    ids: vec![bucketize(x, &spec.boundaries)?],
                    weights: None,
                }
            }
        },
        FeatureKind::NumericRaw => {
            let x = match cell {
                None => 0.0,
                Some(text) => {
                    let x = parse_numeric(spec, column, text)?;
                    if !x.is_finite() {
                        return Err(FeatureError::NonFinite(x));
                    }
                    x
                }
            };
            SlotFeatures {
                ids: vec![0],
                weights: Some(vec![x as f32]),
            }
        }
        FeatureKind::Cross => {
            let a = split_values(cell);
            let b = split_values(record.get(spec.source_columns[1].as_str()));
            SlotFeatures {
                ids: cross(&a, &b)
                    .iter()
                    .map(|v| hash_id(v, spec.vocab_size))
                    .collect(),
                weights: None,
            }
        }
    };
    Ok(features)
}

/// Applies every spec to `record`. Slots are independent of each other.
pub fn generate<R: RawRecord + ?Sized>(
    record: &R,
    specs: &[FeatureSpec],
) -> Result<FeatureVector, FeatureError> {
    let slots = specs
        .iter()
        .map(|spec| generate_slot(record, spec))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureVector { slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    // Independent FNV-1a 64 reference, written from the published constants
    // as a plain loop over u128 arithmetic truncated to 64 bits.
    fn fnv_reference(data: &[u8]) -> u64 {
        let mut h: u128 = 14695981039346656037;
        for &b in data {
            h ^= b as u128;
            h = (h * 1099511628211) & 0xffff_ffff_ffff_ffff;
        }
        h as u64
    }

    fn rec(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn specs() -> Vec<FeatureSpec> {
        vec![
            FeatureSpec::id("user", 1000),
            FeatureSpec {
                name: "tags".into(),
                kind: FeatureKind::MultiId,
                vocab_size: 97,
                boundaries: vec![],
                source_columns: vec!["tags".into()],
                pooling: Pooling::Mean,
            },
            FeatureSpec {
                name: "age".into(),
                kind: FeatureKind::NumericBucket,
                vocab_size: 0,
                boundaries: vec![0.0, 10.0, 100.0],
                source_columns: vec!["age".into()],
                pooling: Pooling::Sum,
            },
            FeatureSpec {
                name: "price".into(),
                kind: FeatureKind::NumericRaw,
                vocab_size: 0,
                boundaries: vec![],
                source_columns: vec!["price".into()],
                pooling: Pooling::Sum,
            },
            FeatureSpec {
                name: "user_x_tags".into(),
                kind: FeatureKind::Cross,
                vocab_size: 50,
                boundaries: vec![],
                source_columns: vec!["user".into(), "tags".into()],
                pooling: Pooling::Sum,
            },
        ]
    }

    #[test]
    fn fnv_known_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), fnv_reference(b"a"));
        assert_eq!(fnv_reference(b"a"), 0xaf63dc4c8601ec8c);
        for v in [2u64, 7, 1000, 100_000] {
            assert_eq!(hash_id(b"", v), 0xcbf29ce484222325 % v);
            assert_eq!(hash_id(b"a", v), 0xaf63dc4c8601ec8c % v);
            assert_eq!(hash_id(b"u1", v), hash_id(b"u1", v));
        }
    }

    #[test]
    fn bucketize_examples() {
        let b = [0.0, 10.0, 100.0];
        let count = |x: f64| b.iter().filter(|&&e| x >= e).count() as u64;
        assert_eq!(bucketize(-1.0, &b).unwrap(), 0);
        assert_eq!(bucketize(5.0, &b).unwrap(), count(5.0));
        assert_eq!(bucketize(5.0, &b).unwrap(), 1);
        assert_eq!(bucketize(100.0, &b).unwrap(), 3);
        assert!(matches!(bucketize(f64::NAN, &b), Err(FeatureError::NonFinite(x)) if x.is_nan()));
    }

    #[test]
    fn bucketize_infinite() {
        assert!(matches!(bucketize(f64::INFINITY, &[1.0]), Err(FeatureError::NonFinite(_))));
    }

    #[test]
    fn cross_examples() {
        assert_eq!(cross(&["u1"], &["i1"]), vec![b"u1\x01i1".to_vec()]);
        assert_eq!(cross(&["a", "b"], &["x"]), vec![b"a\x01x".to_vec(), b"b\x01x".to_vec()]);
        assert!(cross::<&str, &str>(&[], &["x"]).is_empty());
        let many: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        let out = cross(&many, &many);
        assert_eq!(out.len(), MAX_CROSS_COMBINATIONS);
        assert_eq!(out[99], b"4\x0119".to_vec());
    }

    #[test]
    fn generate_examples() {
        let s = vec![FeatureSpec::id("user", 1000)];
        let fv = generate(&rec(&[("user", "u1")]), &s).unwrap();
        assert_eq!(fv.slots[0].ids, vec![fnv_reference(b"u1") % 1000]);
        let fv = generate(&rec(&[]), &s).unwrap();
        assert!(fv.slots[0].ids.is_empty());

        let all = specs();
        let fv = generate(&rec(&[("tags", "a|b|a"), ("user", "u")]), &all).unwrap();
        let (a, b) = (fnv_reference(b"a") % 97, fnv_reference(b"b") % 97);
        assert_eq!(fv.slots[1].ids, vec![a, b, a]);
        assert_eq!(fv.slots[3].ids, vec![0]);
        assert_eq!(fv.slots[3].weights, Some(vec![0.0]));
        assert_eq!(fv.slots[4].ids.len(), 3);
        assert_eq!(fv.slots[4].ids[0], fnv_reference(b"u\x01a") % 50);
    }

    #[test]
    fn numeric_parse_errors() {
        let all = specs();
        assert!(matches!(
            generate(&rec(&[("age", "old")]), &all),
            Err(FeatureError::InvalidValue { .. })
        ));
        assert!(matches!(
            generate(&rec(&[("price", "abc")]), &all),
            Err(FeatureError::InvalidValue { .. })
        ));
        assert!(matches!(generate(&rec(&[("price", "inf")]), &all), Err(FeatureError::NonFinite(_))));
        let fv = generate(&rec(&[("age", "42"), ("price", "2.5")]), &all).unwrap();
        assert_eq!(fv.slots[2].ids, vec![2]);
        assert_eq!(fv.dense_values(&all), vec![2.5]);
    }

    #[test]
    fn canonical_form_sorted_by_name() {
        let all = specs();
        let fv = generate(&rec(&[("user", "u"), ("tags", "x"), ("price", "1.5")]), &all).unwrap();
        let text = fv.canonical(&all);
        let names: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(names, vec!["age", "price", "tags", "user", "user_x_tags"]);
        assert!(text.contains("price\t0\t1.5\n"));
    }

    #[test]
    fn layered_front_wins() {
        let front = rec(&[("a", "1")]);
        let back = rec(&[("a", "2"), ("b", "3")]);
        let l = Layered { front: &front, back: &back };
        assert_eq!(l.get("a"), Some("1"));
        assert_eq!(l.get("b"), Some("3"));
        assert_eq!(l.get("c"), None);
    }

    #[test]
    fn slot_order_independence() {
        let all = specs();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for i in 0..200 {
            let r = rec(&[
                ("user", &format!("u{i}")),
                ("tags", &format!("t{}|t{}", i % 7, i % 3)),
                ("age", &format!("{}", i as f64 * 0.7 - 5.0)),
                ("price", &format!("{}", i as f64 / 3.0)),
            ]);
            let forward = generate(&r, &all).unwrap();
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.reverse();
            for pass in 0..2 {
                if pass == 1 {
                    order.shuffle(&mut rng);
                }
                let mut slots = vec![SlotFeatures::default(); all.len()];
                for &k in &order {
                    slots[k] = generate_slot(&r, &all[k]).unwrap();
                }
                assert_eq!(FeatureVector { slots }, forward);
            }
        }
    }

    proptest! {
        #[test]
        fn ids_stay_in_range(user in ".{0,12}", tags in "[a-z|]{0,20}", age in -1e6f64..1e6, vocab in 2u64..5000) {
            let mut all = specs();
            all[0].vocab_size = vocab;
            all[1].vocab_size = vocab;
            all[4].vocab_size = vocab;
            let r = rec(&[("user", &user), ("tags", &tags), ("age", &age.to_string())]);
            let fv = generate(&r, &all).unwrap();
            for (spec, slot) in all.iter().zip(&fv.slots) {
                prop_assert!(slot.ids.iter().all(|&id| id < spec.table_rows()));
                if let Some(w) = &slot.weights {
                    prop_assert_eq!(w.len(), slot.ids.len());
                }
            }
        }
    }
}
