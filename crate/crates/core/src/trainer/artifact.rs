//! Model artifact file:
//!
//! ```text
//! "ERMODEL1" | header_len u32 LE | header JSON (canonical) | f32 LE payloads
//! ```
//!
//! The header is `{config, metadata: {seed, steps}, model_version, tensors}`
//! where `tensors` lists `{name, shape, offset}` in payload order. Offsets are
//! byte offsets from the start of the payload section. Tensor order is
//! `emb/<slot>` and `fo/<slot>` per slot, then `mlp/<i>/w`, `mlp/<i>/b` per
//! layer, then `bias`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{canonical_json, config_from_value, PipelineConfig};
use crate::model::ModelParams;

pub const ARTIFACT_MAGIC: &[u8; 8] = b"ERMODEL1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArtifactError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("malformed model artifact: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub seed: u64,
    pub steps: u64,
}

/// A trained model together with the exact config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub config: PipelineConfig,
    pub params: ModelParams,
    pub metadata: ArtifactMetadata,
}

impl ModelArtifact {
    pub fn version(&self) -> u64 {
        self.params.version
    }

    /// Bitwise equality of parameters plus equality of config and metadata.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config && self.metadata == other.metadata && self.params.bit_eq(&other.params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<u64>,
    pub offset: u64,
}

impl TensorEntry {
    pub fn elements(&self) -> u64 {
        self.shape.iter().product()
    }
}

/// Tensors of `params` in file order, with their directory entries.
fn tensor_layout(params: &ModelParams) -> Vec<(TensorEntry, Vec<&[f32]>)> {
    let mut named: Vec<(String, Vec<u64>, Vec<&[f32]>)> = Vec::new();
    for t in &params.tables {
        named.push((format!("emb/{}", t.name), vec![t.vocab, t.dim as u64], vec![&t.values]));
        named.push((format!("fo/{}", t.name), vec![t.vocab], vec![&t.first_order]));
    }
    for (i, l) in params.dense.layers.iter().enumerate() {
        named.push((format!("mlp/{i}/w"), vec![l.outputs as u64, l.inputs as u64], vec![&l.weights]));
        named.push((format!("mlp/{i}/b"), vec![l.outputs as u64], vec![&l.bias]));
    }
    named.push(("bias".into(), vec![], vec![std::slice::from_ref(&params.dense.bias)]));

    let mut offset = 0u64;
    named
        .into_iter()
        .map(|(name, shape, data)| {
            let entry = TensorEntry { name, shape, offset };
            offset += entry.elements() * 4;
            (entry, data)
        })
        .collect()
}

pub fn tensor_directory(params: &ModelParams) -> Vec<TensorEntry> {
    tensor_layout(params).into_iter().map(|(e, _)| e).collect()
}

pub fn artifact_to_bytes(artifact: &ModelArtifact) -> Vec<u8> {
    let layout = tensor_layout(&artifact.params);
    let header = json!({
        "config": artifact.config.to_value(),
        "metadata": artifact.metadata,
        "model_version": artifact.params.version,
        "tensors": layout.iter().map(|(e, _)| e).collect::<Vec<_>>(),
    });
    let header = canonical_json(&header);
    let payload: u64 = layout.iter().map(|(e, _)| e.elements() * 4).sum();
    let mut out = Vec::with_capacity(12 + header.len() + payload as usize);
    out.extend_from_slice(ARTIFACT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, parts) in &layout {
        for part in parts {
            for v in *part {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn format_err(msg: impl Into<String>) -> ArtifactError {
    ArtifactError::Format(msg.into())
}

pub fn artifact_from_bytes(bytes: &[u8]) -> Result<ModelArtifact, ArtifactError> {
    if bytes.len() < 12 || &bytes[..8] != ARTIFACT_MAGIC {
        return Err(format_err("missing ERMODEL1 magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err("header extends past end of file"))?;
    let header: Value =
        serde_json::from_slice(&bytes[12..header_end]).map_err(|e| format_err(format!("header JSON: {e}")))?;
    let config = config_from_value(header.get("config").ok_or_else(|| format_err("header lacks config"))?)
        .map_err(|e| format_err(format!("embedded config: {e}")))?;
    let metadata: ArtifactMetadata = serde_json::from_value(
        header.get("metadata").cloned().ok_or_else(|| format_err("header lacks metadata"))?,
    )
    .map_err(|e| format_err(format!("metadata: {e}")))?;
    let version = header
        .get("model_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| format_err("header lacks model_version"))?;
    let directory: Vec<TensorEntry> = serde_json::from_value(
        header.get("tensors").cloned().ok_or_else(|| format_err("header lacks tensors"))?,
    )
    .map_err(|e| format_err(format!("tensor directory: {e}")))?;

    let mut params = ModelParams::zeros(config.features(), &config.model_config);
    params.version = version;
    let expected = tensor_directory(&params);
    if directory != expected {
        return Err(format_err("tensor directory does not match the embedded config"));
    }
    let payload = &bytes[header_end..];
    let needed: u64 = expected.iter().map(|e| e.elements() * 4).sum();
    if payload.len() as u64 != needed {
        return Err(format_err(format!(
            "payload is {} bytes, directory requires {needed}",
            payload.len()
        )));
    }

    let mut targets: Vec<&mut [f32]> = Vec::with_capacity(expected.len());
    for t in &mut params.tables {
        targets.push(&mut t.values);
        targets.push(&mut t.first_order);
    }
    targets.extend(params.dense.tensors_mut());
    for (entry, target) in expected.iter().zip(targets) {
        let start = entry.offset as usize;
        let src = &payload[start..start + target.len() * 4];
        for (dst, chunk) in target.iter_mut().zip(src.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(ModelArtifact {
        config,
        params,
        metadata,
    })
}

pub fn export(artifact: &ModelArtifact, path: &Path) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| ArtifactError::Io(e.to_string()))?;
    }
    std::fs::write(path, artifact_to_bytes(artifact)).map_err(|e| ArtifactError::Io(format!("{}: {e}", path.display())))
}

pub fn load_artifact(path: &Path) -> Result<ModelArtifact, ArtifactError> {
    let bytes = std::fs::read(path).map_err(|e| ArtifactError::Io(format!("{}: {e}", path.display())))?;
    artifact_from_bytes(&bytes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::parse_config;
    use rand::SeedableRng;

    pub fn small_config() -> PipelineConfig {
        parse_config(
            r#"{
              "data_config": {"train_path": "t.csv", "eval_path": "e.csv"},
              "feature_config": {"features": [
                {"name": "user_id", "kind": "id", "vocab_size": 13},
                {"name": "price", "kind": "numeric_bucket", "boundaries": [1.0, 5.0], "source_columns": ["price"]},
                {"name": "tags", "kind": "multi_id", "vocab_size": 7, "pooling": "mean"}
              ]},
              "model_config": {"embedding_dim": 3, "mlp_hidden_dims": [5, 4]},
              "train_config": {},
              "eval_config": {}
            }"#,
        )
        .unwrap()
    }

    pub fn random_artifact(seed: u64) -> ModelArtifact {
        let config = small_config();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(config.features(), &config.model_config, &mut rng);
        for t in &mut params.tables {
            for v in &mut t.first_order {
                *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
        }
        params.dense.bias = -0.0;
        params.version = seed * 3;
        ModelArtifact {
            config,
            params,
            metadata: ArtifactMetadata { seed, steps: seed + 1 },
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        for seed in 0..20 {
            let a = random_artifact(seed);
            let b = artifact_from_bytes(&artifact_to_bytes(&a)).unwrap();
            assert!(a.bit_eq(&b));
            assert_eq!(artifact_to_bytes(&a), artifact_to_bytes(&b));
        }
    }

    #[test]
    fn offsets_are_gapless() {
        let a = random_artifact(1);
        let dir = tensor_directory(&a.params);
        let names: Vec<_> = dir.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "emb/user_id", "fo/user_id", "emb/price", "fo/price", "emb/tags", "fo/tags", "mlp/0/w", "mlp/0/b",
                "mlp/1/w", "mlp/1/b", "mlp/2/w", "mlp/2/b", "bias"
            ]
        );
        let mut expect = 0;
        for e in &dir {
            assert_eq!(e.offset, expect);
            expect += e.shape.iter().product::<u64>() * 4;
        }
        assert_eq!(dir[2].shape, vec![3, 3]);
        assert_eq!(dir[6].shape, vec![5, 9]);
        let bytes = artifact_to_bytes(&a);
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
        assert_eq!(bytes.len() as u64, 12 + hlen + expect);
    }

    #[test]
    fn truncation_and_corruption_fail() {
        let bytes = artifact_to_bytes(&random_artifact(2));
        for cut in [0, 7, 11, 12, 40, bytes.len() - 1] {
            assert!(matches!(artifact_from_bytes(&bytes[..cut]), Err(ArtifactError::Format(_))), "cut {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(artifact_from_bytes(&longer).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(artifact_from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[13] = b'#';
        assert!(artifact_from_bytes(&bad).is_err());
    }

    #[test]
    fn export_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.erm");
        let a = random_artifact(3);
        export(&a, &path).unwrap();
        assert!(load_artifact(&path).unwrap().bit_eq(&a));
        assert!(matches!(load_artifact(&dir.path().join("missing")), Err(ArtifactError::Io(_))));
    }
}
