//! Binary model checkpoints.
//!
//! Layout: magic `INTFCKPT`, format version (u32 LE), header length (u64 LE),
//! JSON header, parameter values (little-endian, `dtype` width), then the
//! SHA-256 of all preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ANNOTATION_SCHEMA_VERSION;
use crate::error::{Error, Result};
use crate::fusion::{IntFormer, IntFormerConfig};
use crate::nn::{ParamSet, ParamSpec};
use crate::preprocess::NormStats;
use crate::scalar::Scalar;
use crate::training::Profile;

pub const MAGIC: &[u8; 8] = b"INTFCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub profile: Profile,
    pub seed: u64,
    pub epoch: usize,
    pub annotation_schema: u32,
}

impl CheckpointMeta {
    pub fn new(profile: Profile, seed: u64, epoch: usize) -> Self {
        CheckpointMeta {
            profile,
            seed,
            epoch,
            annotation_schema: ANNOTATION_SCHEMA_VERSION,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    model: IntFormerConfig,
    norm: NormStats,
    meta: CheckpointMeta,
    params: Vec<ParamSpec>,
}

#[derive(Debug)]
pub struct Checkpoint<T> {
    pub model: IntFormer<T>,
    pub norm: NormStats,
    pub meta: CheckpointMeta,
}

/// `intformer_<profile>_seed<seed>_epoch<epoch>.ckpt`
pub fn checkpoint_file_name(meta: &CheckpointMeta) -> String {
    format!("intformer_{}_seed{}_epoch{:03}.ckpt", meta.profile, meta.seed, meta.epoch)
}

pub fn encode<T: Scalar>(model: &IntFormer<T>, norm: &NormStats, meta: &CheckpointMeta) -> Vec<u8> {
    let header = Header {
        dtype: T::DTYPE.into(),
        model: model.config().clone(),
        norm: norm.clone(),
        meta: meta.clone(),
        params: model.params().specs().to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + model.parameter_count() * T::BYTES + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in model.params().values() {
        v.write_le(&mut out);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 20 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not an IntFormer checkpoint (bad magic or truncated)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch: file is corrupted or truncated".into()));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("header length exceeds file size".into()))?;
    let header: Header =
        serde_json::from_slice(&body[20..header_end]).map_err(|e| bad(format!("invalid header schema: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(bad(format!("checkpoint holds {} values, requested {}", header.dtype, T::DTYPE)));
    }
    if header.meta.annotation_schema != ANNOTATION_SCHEMA_VERSION {
        return Err(bad(format!(
            "annotation schema version {} is not supported (expected {ANNOTATION_SCHEMA_VERSION})",
            header.meta.annotation_schema
        )));
    }
    let data = &body[header_end..];
    let n: usize = header.params.iter().map(|s| s.len()).sum();
    if data.len() != n * T::BYTES {
        return Err(bad(format!("expected {} parameter bytes, found {}", n * T::BYTES, data.len())));
    }
    let values: Vec<T> = data.chunks_exact(T::BYTES).map(T::read_le).collect();
    let params = ParamSet::from_parts(header.params, values).ok_or_else(|| bad("inconsistent parameter table".into()))?;
    let model = IntFormer::from_params(header.model, params)?;
    Ok(Checkpoint {
        model,
        norm: header.norm,
        meta: header.meta,
    })
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &IntFormer<T>, norm: &NormStats, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode(model, norm, meta))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode(&fs::read(path)?)
}
