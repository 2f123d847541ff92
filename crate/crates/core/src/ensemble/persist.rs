//! Model container: `MAGIC`, little-endian `u32` version, `u64` payload
//! length, SHA-256 of the payload, then a JSON payload. Tensors are stored
//! as base64 of their little-endian `f64` bytes so values round-trip exactly.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wcaps_autodiff::Tensor;

use super::{DomainModel, EnsembleModel, TrainingMeta};
use crate::dbd::{Aggregation, DomainStats};
use crate::error::{Error, Result};
use crate::layers::{
    BiGruParams, CapsuleParams, GruParams, HeadParams, NetworkArch, NetworkParams,
};
use crate::text::{EmbeddingTable, PipelineConfig, Vocabulary};

pub const MAGIC: &[u8; 8] = b"WCAPSENS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 32;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: String,
}

impl From<&Tensor> for StoredTensor {
    fn from(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }
}

impl StoredTensor {
    fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Integrity(format!("tensor data: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Integrity(
                "tensor byte length is not a multiple of 8".into(),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| Error::Integrity(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct StoredDomain {
    name: String,
    params: Vec<(String, StoredTensor)>,
    routing_iterations: usize,
    meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    domains: Vec<String>,
    pipeline: PipelineConfig,
    arch: NetworkArch,
    aggregation: Aggregation,
    vocabulary: Vocabulary,
    embeddings: StoredTensor,
    stats: DomainStats,
    models: Vec<StoredDomain>,
}

fn restore_params(stored: &StoredDomain, arch: &NetworkArch) -> Result<NetworkParams> {
    let h = arch.hidden_dim;
    let mut params = NetworkParams {
        bigru: BiGruParams {
            forward: GruParams::zeros(arch.embed_dim, h),
            backward: GruParams::zeros(arch.embed_dim, h),
        },
        capsule: CapsuleParams {
            weights: Tensor::zeros(&[0, 0, 0, 0]),
            routing_iterations: stored.routing_iterations,
        },
        head: HeadParams::zeros(arch.flat_dim()),
    };
    let slots = params.named_mut();
    if slots.len() != stored.params.len() {
        return Err(Error::Integrity(format!(
            "domain `{}` stores {} tensors, expected {}",
            stored.name,
            stored.params.len(),
            slots.len()
        )));
    }
    for ((name, slot), (stored_name, t)) in slots.into_iter().zip(&stored.params) {
        if &name != stored_name {
            return Err(Error::Integrity(format!(
                "expected `{name}`, found `{stored_name}`"
            )));
        }
        *slot = t.decode()?;
    }
    params.bigru.forward.validate()?;
    params.bigru.backward.validate()?;
    params.capsule.validate()?;
    Ok(params)
}

pub fn model_to_bytes(model: &EnsembleModel) -> Result<Vec<u8>> {
    let payload = Payload {
        domains: model.domains().to_vec(),
        pipeline: model.pipeline.clone(),
        arch: model.arch,
        aggregation: model.aggregation,
        vocabulary: model.vocab.clone(),
        embeddings: model.embeddings.matrix().into(),
        stats: model.stats.clone(),
        models: model
            .models
            .iter()
            .map(|m| StoredDomain {
                name: m.domain.clone(),
                params: m
                    .params
                    .named()
                    .into_iter()
                    .map(|(n, t)| (n, t.into()))
                    .collect(),
                routing_iterations: m.params.capsule.routing_iterations,
                meta: m.meta.clone(),
            })
            .collect(),
    };
    let body = serde_json::to_vec(&payload).map_err(|e| Error::Integrity(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&body));
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EnsembleModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Integrity("file is shorter than its header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Integrity("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != len {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, header says {len}",
            body.len()
        )));
    }
    if Sha256::digest(body).as_slice() != &bytes[20..52] {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let payload: Payload =
        serde_json::from_slice(body).map_err(|e| Error::Integrity(e.to_string()))?;
    let models = payload
        .models
        .iter()
        .map(|m| {
            Ok(DomainModel {
                domain: m.name.clone(),
                params: restore_params(m, &payload.arch)?,
                meta: m.meta.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = EnsembleModel {
        pipeline: payload.pipeline,
        arch: payload.arch,
        aggregation: payload.aggregation,
        vocab: payload.vocabulary,
        embeddings: EmbeddingTable::from_matrix(payload.embeddings.decode()?)?,
        stats: payload.stats,
        models,
    };
    if model.domains() != payload.domains.as_slice() {
        return Err(Error::Integrity(
            "domain list disagrees with statistics".into(),
        ));
    }
    model.check_consistency()?;
    Ok(model)
}

pub fn save_model(model: &EnsembleModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    model_from_bytes(&fs::read(path)?)
}
