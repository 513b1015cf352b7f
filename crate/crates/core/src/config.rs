//! Pipeline configuration and hyper-parameter search spaces.
//!
//! A pipeline config is a JSON object with exactly five sections:
//! `data_config`, `feature_config`, `model_config`, `train_config` and
//! `eval_config`. Every field not given explicitly is filled with its
//! default, and the canonical serialization writes all of them back out so a
//! config embedded in an artifact fully describes the run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::feature_gen::{FeatureKind, FeatureSpec, Pooling};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value at `{0}`: {1}")]
    InvalidValue(String, String),
}

const SECTIONS: [&str; 5] = [
    "data_config",
    "feature_config",
    "model_config",
    "train_config",
    "eval_config",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub train_path: String,
    pub eval_path: String,
    pub format: String,
    pub label_column: String,
    pub delimiter: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_path: String::new(),
            eval_path: String::new(),
            format: "csv".into(),
            label_column: "label".into(),
            delimiter: ",".into(),
        }
    }
}

impl DataConfig {
    pub fn delimiter_byte(&self) -> u8 {
        self.delimiter.as_bytes()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub features: Vec<FeatureSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    Deepfm,
    Lr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_type: ModelType,
    pub embedding_dim: usize,
    pub mlp_hidden_dims: Vec<usize>,
    pub embedding_regularization: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_type: ModelType::Deepfm,
            embedding_dim: 8,
            mlp_hidden_dims: vec![16],
            embedding_regularization: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_epochs: usize,
    pub seed: u64,
    pub delta_period_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Epochs without eval-AUC improvement before training stops; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 256,
            num_epochs: 1,
            seed: 42,
            delta_period_steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            early_stop_patience: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub metrics: Vec<String>,
    /// Evaluate every `eval_interval` epochs (the last epoch is always evaluated).
    pub eval_interval: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: vec!["auc".into(), "logloss".into()],
            eval_interval: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data_config: DataConfig,
    pub feature_config: FeatureConfig,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub eval_config: EvalConfig,
}

impl PipelineConfig {
    /// Canonical JSON: sorted keys, shortest round-trip float formatting.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(&self.to_value())
    }

    pub fn to_value(&self) -> Value {
        // serde_json::Map is a BTreeMap here, so keys come out sorted.
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.feature_config.features
    }
}

/// Serializes a JSON value with sorted object keys and no insignificant whitespace.
pub fn canonical_json(value: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let sorted: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, sort(v))).collect();
                Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sort(value)).expect("json value serializes")
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
    config_from_value(&value)
}

pub fn config_from_value(value: &Value) -> Result<PipelineConfig, ConfigError> {
    let root = value
        .as_object()
        .ok_or_else(|| ConfigError::InvalidValue(String::new(), "expected an object".into()))?;
    for key in root.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
    }
    let section = |name: &str| -> Result<Fields<'_>, ConfigError> {
        let v = root
            .get(name)
            .ok_or_else(|| ConfigError::MissingSection(name.to_string()))?;
        Fields::new(v, name.to_string())
    };

    let data_config = {
        let mut f = section("data_config")?;
        let d = DataConfig::default();
        let cfg = DataConfig {
            train_path: f.string("train_path", d.train_path)?,
            eval_path: f.string("eval_path", d.eval_path)?,
            format: f.string("format", d.format)?,
            label_column: f.string("label_column", d.label_column)?,
            delimiter: f.string("delimiter", d.delimiter)?,
        };
        f.finish()?;
        if cfg.format != "csv" {
            return Err(invalid("data_config.format", "only \"csv\" is supported"));
        }
        if cfg.delimiter.len() != 1 {
            return Err(invalid("data_config.delimiter", "must be a single ASCII byte"));
        }
        if cfg.label_column.is_empty() {
            return Err(invalid("data_config.label_column", "must not be empty"));
        }
        cfg
    };

    let feature_config = {
        let mut f = section("feature_config")?;
        let raw = f.required("features")?;
        let list = raw
            .as_array()
            .ok_or_else(|| invalid("feature_config.features", "expected an array"))?;
        let mut features = Vec::with_capacity(list.len());
        for (i, item) in list.iter().enumerate() {
            features.push(parse_feature_spec(item, &format!("feature_config.features.{i}"))?);
        }
        f.finish()?;
        if features.is_empty() {
            return Err(invalid("feature_config.features", "at least one feature is required"));
        }
        let mut names = BTreeSet::new();
        for spec in &features {
            if !names.insert(spec.name.as_str()) {
                return Err(invalid(
                    "feature_config.features",
                    &format!("duplicate slot name `{}`", spec.name),
                ));
            }
        }
        FeatureConfig { features }
    };

    let model_config = {
        let mut f = section("model_config")?;
        let d = ModelConfig::default();
        let model_type = match f.optional("model_type") {
            None => d.model_type,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|_| invalid("model_config.model_type", "expected \"deepfm\" or \"lr\""))?,
        };
        let cfg = ModelConfig {
            model_type,
            embedding_dim: f.usize("embedding_dim", d.embedding_dim)?,
            mlp_hidden_dims: f.usize_list("mlp_hidden_dims", d.mlp_hidden_dims)?,
            embedding_regularization: f.f64("embedding_regularization", d.embedding_regularization)?,
        };
        f.finish()?;
        if cfg.embedding_dim < 1 || cfg.embedding_dim > u16::MAX as usize - 1 {
            return Err(invalid("model_config.embedding_dim", "must be in [1, 65534]"));
        }
        if cfg.embedding_regularization < 0.0 {
            return Err(invalid("model_config.embedding_regularization", "must be >= 0"));
        }
        if cfg.mlp_hidden_dims.contains(&0) {
            return Err(invalid("model_config.mlp_hidden_dims", "layer widths must be >= 1"));
        }
        cfg
    };

    let train_config = {
        let mut f = section("train_config")?;
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: f.f64("learning_rate", d.learning_rate)?,
            batch_size: f.usize("batch_size", d.batch_size)?,
            num_epochs: f.usize("num_epochs", d.num_epochs)?,
            seed: f.u64("seed", d.seed)?,
            delta_period_steps: f.usize("delta_period_steps", d.delta_period_steps)?,
            adam_beta1: f.f64("adam_beta1", d.adam_beta1)?,
            adam_beta2: f.f64("adam_beta2", d.adam_beta2)?,
            adam_epsilon: f.f64("adam_epsilon", d.adam_epsilon)?,
            early_stop_patience: f.usize("early_stop_patience", d.early_stop_patience)?,
        };
        f.finish()?;
        if cfg.learning_rate <= 0.0 {
            return Err(invalid("train_config.learning_rate", "must be > 0"));
        }
        if cfg.batch_size < 1 {
            return Err(invalid("train_config.batch_size", "must be >= 1"));
        }
        if cfg.delta_period_steps < 1 {
            return Err(invalid("train_config.delta_period_steps", "must be >= 1"));
        }
        for (name, b) in [("adam_beta1", cfg.adam_beta1), ("adam_beta2", cfg.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(&format!("train_config.{name}"), "must be in [0, 1)"));
            }
        }
        if cfg.adam_epsilon <= 0.0 {
            return Err(invalid("train_config.adam_epsilon", "must be > 0"));
        }
        cfg
    };

    let eval_config = {
        let mut f = section("eval_config")?;
        let d = EvalConfig::default();
        let cfg = EvalConfig {
            metrics: f.string_list("metrics", d.metrics)?,
            eval_interval: f.usize("eval_interval", d.eval_interval)?,
        };
        f.finish()?;
        for m in &cfg.metrics {
            if m != "auc" && m != "logloss" {
                return Err(invalid("eval_config.metrics", &format!("unknown metric `{m}`")));
            }
        }
        if cfg.eval_interval < 1 {
            return Err(invalid("eval_config.eval_interval", "must be >= 1"));
        }
        cfg
    };

    Ok(PipelineConfig {
        data_config,
        feature_config,
        model_config,
        train_config,
        eval_config,
    })
}

/// Parses a standalone `feature_config` fragment (`{"features": [...]}`).
pub fn parse_feature_config(text: &str) -> Result<FeatureConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
    let mut f = Fields::new(&value, "feature_config".into())?;
    let list = f
        .required("features")?
        .as_array()
        .ok_or_else(|| invalid("feature_config.features", "expected an array"))?;
    let features = list
        .iter()
        .enumerate()
        .map(|(i, item)| parse_feature_spec(item, &format!("feature_config.features.{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    f.finish()?;
    Ok(FeatureConfig { features })
}

fn parse_feature_spec(value: &Value, path: &str) -> Result<FeatureSpec, ConfigError> {
    let mut f = Fields::new(value, path.to_string())?;
    let name = f.required_string("name")?;
    let kind: FeatureKind = serde_json::from_value(f.required("kind")?.clone()).map_err(|_| {
        invalid(
            &format!("{path}.kind"),
            "expected one of id, multi_id, numeric_bucket, numeric_raw, cross",
        )
    })?;
    let source_columns = f.string_list("source_columns", vec![name.clone()])?;
    let vocab_size = f.u64("vocab_size", 0)?;
    let boundaries = f.f64_list("boundaries", Vec::new())?;
    let pooling = match f.optional("pooling") {
        None => Pooling::Sum,
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| invalid(&format!("{path}.pooling"), "expected \"sum\" or \"mean\""))?,
    };
    f.finish()?;
    let spec = FeatureSpec {
        name,
        kind,
        vocab_size,
        boundaries,
        source_columns,
        pooling,
    };
    spec.validate()
        .map_err(|reason| invalid(path, &reason))?;
    Ok(spec)
}

fn invalid(path: &str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue(path.to_string(), reason.to_string())
}

/// Reader over one JSON object that tracks consumed keys so leftovers can be
/// reported as unknown.
struct Fields<'a> {
    obj: &'a Map<String, Value>,
    path: String,
    seen: BTreeSet<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(value: &'a Value, path: String) -> Result<Self, ConfigError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ConfigError::InvalidValue(path.clone(), "expected an object".into()))?;
        Ok(Self {
            obj,
            path,
            seen: BTreeSet::new(),
        })
    }

    fn key_path(&self, key: &str) -> String {
        format!("{}.{}", self.path, key)
    }

    fn optional(&mut self, key: &'a str) -> Option<&'a Value> {
        self.seen.insert(key);
        self.obj.get(key)
    }

    fn required(&mut self, key: &'a str) -> Result<&'a Value, ConfigError> {
        let path = self.key_path(key);
        self.optional(key)
            .ok_or_else(|| ConfigError::InvalidValue(path, "required field missing".into()))
    }

    fn required_string(&mut self, key: &'a str) -> Result<String, ConfigError> {
        let path = self.key_path(key);
        self.required(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ConfigError::InvalidValue(path, "expected a string".into()))
    }

    fn string(&mut self, key: &'a str, default: String) -> Result<String, ConfigError> {
        let path = self.key_path(key);
        match self.optional(key) {
            None => Ok(default),
            Some(v) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| ConfigError::InvalidValue(path, "expected a string".into())),
        }
    }

    fn f64(&mut self, key: &'a str, default: f64) -> Result<f64, ConfigError> {
        let path = self.key_path(key);
        match self.optional(key) {
            None => Ok(default),
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Ok(x),
                _ => Err(ConfigError::InvalidValue(path, "expected a finite number".into())),
            },
        }
    }

    fn u64(&mut self, key: &'a str, default: u64) -> Result<u64, ConfigError> {
        let path = self.key_path(key);
        match self.optional(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| {
                ConfigError::InvalidValue(path, "expected a non-negative integer".into())
            }),
        }
    }

    fn usize(&mut self, key: &'a str, default: usize) -> Result<usize, ConfigError> {
        self.u64(key, default as u64).map(|v| v as usize)
    }

    fn usize_list(&mut self, key: &'a str, default: Vec<usize>) -> Result<Vec<usize>, ConfigError> {
        let path = self.key_path(key);
        match self.optional(key) {
            None => Ok(default),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_u64().map(|x| x as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    ConfigError::InvalidValue(path, "expected non-negative integers".into())
                }),
            Some(_) => Err(ConfigError::InvalidValue(path, "expected an array".into())),
        }
    }

    fn f64_list(&mut self, key: &'a str, default: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
        let path = self.key_path(key);
        match self.optional(key) {
            None => Ok(default),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| ConfigError::InvalidValue(path, "expected finite numbers".into())),
            Some(_) => Err(ConfigError::InvalidValue(path, "expected an array".into())),
        }
    }

    fn string_list(&mut self, key: &'a str, default: Vec<String>) -> Result<Vec<String>, ConfigError> {
        let path = self.key_path(key);
        match self.optional(key) {
            None => Ok(default),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| ConfigError::InvalidValue(path, "expected strings".into())),
            Some(_) => Err(ConfigError::InvalidValue(path, "expected an array".into())),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        for key in self.obj.keys() {
            if !self.seen.contains(key.as_str()) {
                return Err(ConfigError::UnknownKey(format!("{}.{}", self.path, key)));
            }
        }
        Ok(())
    }
}

/// Returns a copy of `cfg` with the leaf at the dotted `path` replaced by `value`.
///
/// Array elements are addressed by index (`feature_config.features.0.vocab_size`).
/// Integral floats are accepted for integer leaves so sampled search values
/// can target integer knobs.
pub fn apply_override(
    cfg: &PipelineConfig,
    path: &str,
    value: &Value,
) -> Result<PipelineConfig, ConfigError> {
    let mut root = cfg.to_value();
    let mut node = &mut root;
    for part in path.split('.') {
        node = match node {
            Value::Object(m) => m.get_mut(part),
            Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?;
    }
    if node.is_object() {
        return Err(ConfigError::UnknownKey(path.to_string()));
    }
    let replacement = coerce_like(node, value)
        .ok_or_else(|| invalid(path, &format!("type mismatch: cannot assign {value}")))?;
    *node = replacement;
    config_from_value(&root)
}

fn coerce_like(current: &Value, value: &Value) -> Option<Value> {
    match (current, value) {
        (Value::Number(c), Value::Number(v)) if c.is_u64() || c.is_i64() => {
            if v.is_u64() || v.is_i64() {
                Some(value.clone())
            } else {
                let x = v.as_f64()?;
                (x.fract() == 0.0 && x >= 0.0 && x < u64::MAX as f64).then(|| Value::from(x as u64))
            }
        }
        (Value::Number(_), Value::Number(v)) => Some(Value::from(v.as_f64()?)),
        (Value::String(_), Value::String(_))
        | (Value::Bool(_), Value::Bool(_))
        | (Value::Array(_), Value::Array(_)) => Some(value.clone()),
        _ => None,
    }
}

/// One search-space distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Choice(Vec<Value>),
    RandInt { lo: i64, hi: i64 },
}

/// Dotted config path → distribution. Iteration order is the sorted path order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchSpace {
    pub entries: BTreeMap<String, Distribution>,
}

pub fn parse_search_space(text: &str) -> Result<SearchSpace, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| invalid("", "search space must be an object"))?;
    let mut entries = BTreeMap::new();
    for (path, spec) in obj {
        let mut f = Fields::new(spec, path.clone())?;
        let kind = f.required_string("_type")?;
        let values = f
            .required("_value")?
            .as_array()
            .ok_or_else(|| invalid(&format!("{path}._value"), "expected an array"))?
            .clone();
        f.finish()?;
        let bounds = || -> Result<(f64, f64), ConfigError> {
            let nums: Option<Vec<f64>> = values.iter().map(Value::as_f64).collect();
            match nums.as_deref() {
                Some(&[lo, hi]) if lo.is_finite() && hi.is_finite() && lo < hi => Ok((lo, hi)),
                _ => Err(invalid(path, "expected two finite bounds with lo < hi")),
            }
        };
        let dist = match kind.as_str() {
            "uniform" => {
                let (lo, hi) = bounds()?;
                Distribution::Uniform { lo, hi }
            }
            "loguniform" => {
                let (lo, hi) = bounds()?;
                if lo <= 0.0 {
                    return Err(invalid(path, "loguniform requires lo > 0"));
                }
                Distribution::LogUniform { lo, hi }
            }
            "choice" => {
                if values.is_empty() {
                    return Err(invalid(path, "choice list must be non-empty"));
                }
                Distribution::Choice(values)
            }
            "randint" => {
                let ints: Option<Vec<i64>> = values.iter().map(Value::as_i64).collect();
                match ints.as_deref() {
                    Some(&[lo, hi]) if lo < hi => Distribution::RandInt { lo, hi },
                    _ => return Err(invalid(path, "randint expects integer bounds lo < hi")),
                }
            }
            other => return Err(invalid(path, &format!("unknown _type `{other}`"))),
        };
        entries.insert(path.clone(), dist);
    }
    Ok(SearchSpace { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn minimal() -> Value {
        json!({
            "data_config": {},
            "feature_config": {"features": [{"name": "user_id", "kind": "id", "vocab_size": 1000}]},
            "model_config": {},
            "train_config": {},
            "eval_config": {}
        })
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(&minimal().to_string()).unwrap();
        assert_eq!(cfg.train_config.learning_rate, 0.001);
        assert_eq!(cfg.train_config.batch_size, 256);
        assert_eq!(cfg.model_config.embedding_dim, 8);
        assert_eq!(cfg.train_config.seed, 42);
        assert_eq!(cfg.train_config.delta_period_steps, 100);
        assert_eq!(cfg.features()[0].source_columns, vec!["user_id".to_string()]);
        let canon = cfg.to_canonical_json();
        assert!(canon.contains("\"delta_period_steps\":100"));
        assert_eq!(parse_config(&canon).unwrap(), cfg);
    }

    #[test]
    fn missing_section() {
        let mut v = minimal();
        v.as_object_mut().unwrap().remove("eval_config");
        assert_eq!(
            parse_config(&v.to_string()),
            Err(ConfigError::MissingSection("eval_config".into()))
        );
    }

    #[test]
    fn negative_regularization_rejected() {
        let mut v = minimal();
        v["model_config"]["embedding_regularization"] = json!(-1);
        assert!(matches!(
            parse_config(&v.to_string()),
            Err(ConfigError::InvalidValue(p, _)) if p == "model_config.embedding_regularization"
        ));
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        let mut v = minimal();
        v["extra"] = json!(1);
        assert_eq!(parse_config(&v.to_string()), Err(ConfigError::UnknownKey("extra".into())));
        let mut v = minimal();
        v["train_config"]["learnin_rate"] = json!(0.1);
        assert_eq!(
            parse_config(&v.to_string()),
            Err(ConfigError::UnknownKey("train_config.learnin_rate".into()))
        );
        let mut v = minimal();
        v["feature_config"]["features"][0]["vocab"] = json!(3);
        assert_eq!(
            parse_config(&v.to_string()),
            Err(ConfigError::UnknownKey("feature_config.features.0.vocab".into()))
        );
    }

    #[test]
    fn duplicate_slot_names_rejected() {
        let mut v = minimal();
        v["feature_config"]["features"] = json!([
            {"name": "a", "kind": "id", "vocab_size": 10},
            {"name": "a", "kind": "id", "vocab_size": 10}
        ]);
        assert!(matches!(parse_config(&v.to_string()), Err(ConfigError::InvalidValue(..))));
    }

    #[test]
    fn zero_batch_and_dim_rejected() {
        for (section, key) in [("train_config", "batch_size"), ("model_config", "embedding_dim")] {
            let mut v = minimal();
            v[section][key] = json!(0);
            assert!(matches!(parse_config(&v.to_string()), Err(ConfigError::InvalidValue(..))));
        }
    }

    #[test]
    fn override_regularization() {
        let cfg = parse_config(&minimal().to_string()).unwrap();
        let out = apply_override(&cfg, "model_config.embedding_regularization", &json!(5e-5)).unwrap();
        assert_eq!(out.model_config.embedding_regularization, 5e-5);
        let mut expect = cfg.clone();
        expect.model_config.embedding_regularization = 5e-5;
        assert_eq!(out, expect);

        let same = apply_override(&cfg, "model_config.embedding_regularization", &json!(0.0)).unwrap();
        assert_eq!(same, cfg);
    }

    #[test]
    fn override_errors() {
        let cfg = parse_config(&minimal().to_string()).unwrap();
        assert_eq!(
            apply_override(&cfg, "model_config.no_such_field", &json!(1)),
            Err(ConfigError::UnknownKey("model_config.no_such_field".into()))
        );
        assert!(matches!(
            apply_override(&cfg, "model_config.embedding_dim", &json!("eight")),
            Err(ConfigError::InvalidValue(..))
        ));
        assert!(matches!(
            apply_override(&cfg, "model_config", &json!(1)),
            Err(ConfigError::UnknownKey(_))
        ));
    }

    #[test]
    fn override_integer_leaf_accepts_integral_float() {
        let cfg = parse_config(&minimal().to_string()).unwrap();
        let out = apply_override(&cfg, "train_config.batch_size", &json!(64.0)).unwrap();
        assert_eq!(out.train_config.batch_size, 64);
        assert!(apply_override(&cfg, "train_config.batch_size", &json!(64.5)).is_err());
    }

    #[test]
    fn search_space_parsing() {
        let s = parse_search_space(
            r#"{"model_config.embedding_regularization": {"_type":"uniform","_value":[1e-6,1e-4]}}"#,
        )
        .unwrap();
        assert_eq!(
            s.entries["model_config.embedding_regularization"],
            Distribution::Uniform { lo: 1e-6, hi: 1e-4 }
        );
        let s = parse_search_space(r#"{"p": {"_type":"choice","_value":[8,16,32]}}"#).unwrap();
        assert_eq!(s.entries["p"], Distribution::Choice(vec![json!(8), json!(16), json!(32)]));
        assert!(matches!(
            parse_search_space(r#"{"p": {"_type":"loguniform","_value":[0,1]}}"#),
            Err(ConfigError::InvalidValue(..))
        ));
        assert!(parse_search_space(r#"{"p": {"_type":"normal","_value":[0,1]}}"#).is_err());
        assert!(parse_search_space(r#"{"p": {"_type":"uniform","_value":[1,1]}}"#).is_err());
        assert!(parse_search_space(r#"{"p": {"_type":"choice","_value":[]}}"#).is_err());
        assert!(parse_search_space(r#"{"p": {"_type":"randint","_value":[1.5,3]}}"#).is_err());
    }
}
