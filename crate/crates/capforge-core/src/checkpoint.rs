//! Named-tensor checkpoint storage (the ACPT1 format) and the initialization
//! policy: load pretrained weights everywhere except the randomly initialized
//! cross-attention layers (and any other carve-outs the policy names).
//!
//! ACPT1 layout: 8-byte magic `ACPT1\0\0\0`, little-endian u64 header length,
//! UTF-8 JSON manifest, then the raw little-endian f32 payload. Manifest
//! entries carry `{name, dtype, shape, offset}` with offsets relative to the
//! payload start; entries must tile the payload exactly (no gaps, no
//! overlap). An optional `meta` object rides along for run configuration and
//! audit records.
//!
//! Random-init conventions by tensor role:
//! - decoder weight matrices and embeddings: N(0, 0.02^2) truncated at 2
//!   sigma,
//! - encoder convolution/linear weights: Kaiming-uniform over fan-in,
//! - biases and norm shifts: 0; norm scales: 1; running stats: mean 0, var 1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NamedTensor, ParamKind};
use crate::rng::Rng;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"ACPT1\0\0\0";
pub const FORMAT_VERSION: u32 = 1;
/// Standard deviation of the truncated-normal draw for decoder weights.
pub const RANDOM_INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic (not an ACPT1 file)")]
    BadMagic,
    #[error("checkpoint truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("manifest parse error: {0}")]
    Manifest(String),
    #[error("duplicate tensor name {name:?} in manifest")]
    DuplicateName { name: String },
    #[error("tensor {name:?} has unsupported dtype {dtype:?}")]
    BadDtype { name: String, dtype: String },
    #[error("tensor {name:?} payload range is out of bounds or overlapping")]
    BadLayout { name: String },
    #[error("payload of {got} bytes does not match manifest total of {expected}")]
    PayloadSize { expected: usize, got: usize },
    #[error("checkpoint is missing tensors (or shapes clash): {0:?}")]
    MissingTensors(Vec<String>),
    #[error("tensor {name:?}: checkpoint shape {ckpt:?} does not match model shape {model:?}")]
    ShapeClash { name: String, ckpt: Vec<usize>, model: Vec<usize> },
    #[error("parameter {name:?} matches no init-policy partition")]
    UnmatchedParameter { name: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// In-memory named-tensor store; payloads are always f32 (the on-disk type).
#[derive(Debug, Clone, Default)]
pub struct TensorStore {
    map: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "store shape/data mismatch");
        self.map.insert(name.into(), (shape, data));
    }

    pub fn get(&self, name: &str) -> Option<&(Vec<usize>, Vec<f32>)> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        self.map.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &(Vec<usize>, Vec<f32>))> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Snapshot of model tensors (lowered to f32, the storage type).
    pub fn from_named<F: Scalar>(tensors: &[NamedTensor<F>]) -> Self {
        let mut store = Self::new();
        for nt in tensors {
            store.insert(
                nt.name.clone(),
                nt.tensor.shape().to_vec(),
                nt.tensor.to_vec().iter().map(|v| v.as_f32()).collect(),
            );
        }
        store
    }
}

/// Serializes a store (entries ordered by name, offsets packed tight).
pub fn save(store: &TensorStore, meta: Option<serde_json::Value>) -> Vec<u8> {
    let mut entries = Vec::with_capacity(store.len());
    let mut offset = 0u64;
    for (name, (shape, data)) in store.iter() {
        entries.push(ManifestEntry {
            name: name.to_owned(),
            dtype: "f32".to_owned(),
            shape: shape.clone(),
            offset,
        });
        offset += (data.len() * 4) as u64;
    }
    let manifest = CheckpointManifest { version: FORMAT_VERSION, entries, meta };
    let header = serde_json::to_vec(&manifest).expect("manifest serialization");
    let mut out = Vec::with_capacity(8 + 8 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, (_, data)) in store.iter() {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses and validates an ACPT1 image.
pub fn load(bytes: &[u8]) -> Result<(TensorStore, Option<serde_json::Value>), CheckpointError> {
    if bytes.len() < 8 || &bytes[0..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated { needed: 16, available: bytes.len() });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16 + header_len;
    if bytes.len() < payload_start {
        return Err(CheckpointError::Truncated { needed: payload_start, available: bytes.len() });
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(manifest.version));
    }
    let payload = &bytes[payload_start..];
    let mut seen = BTreeSet::new();
    let mut ranges: Vec<(u64, u64, &ManifestEntry)> = Vec::with_capacity(manifest.entries.len());
    let mut total = 0usize;
    for entry in &manifest.entries {
        if !seen.insert(entry.name.clone()) {
            return Err(CheckpointError::DuplicateName { name: entry.name.clone() });
        }
        if entry.dtype != "f32" {
            return Err(CheckpointError::BadDtype {
                name: entry.name.clone(),
                dtype: entry.dtype.clone(),
            });
        }
        let nbytes = entry.shape.iter().product::<usize>() * 4;
        total += nbytes;
        ranges.push((entry.offset, entry.offset + nbytes as u64, entry));
    }
    if total != payload.len() {
        return Err(CheckpointError::PayloadSize { expected: total, got: payload.len() });
    }
    ranges.sort_by_key(|r| r.0);
    let mut cursor = 0u64;
    for (start, end, entry) in &ranges {
        if *start != cursor || *end > payload.len() as u64 {
            return Err(CheckpointError::BadLayout { name: entry.name.clone() });
        }
        cursor = *end;
    }
    let mut store = TensorStore::new();
    for (start, end, entry) in ranges {
        let data: Vec<f32> = payload[start as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(entry.name.clone(), entry.shape.clone(), data);
    }
    Ok((store, manifest.meta))
}

// ---------------------------------------------------------------------------
// Init policy
// ---------------------------------------------------------------------------

/// Partition of parameter names into checkpoint-loaded and randomly
/// initialized sets. Prefixes are dot-path patterns where `*` matches one
/// segment; a pattern matches any name it is a segment-prefix of. The random
/// partition takes precedence, so it carves exceptions out of the pretrained
/// set. `random_embedding_rows` names rows of `decoder.embed.token` that are
/// randomly initialized even though the table itself is pretrained (the
/// caption boundary tokens, which have no pretrained rows).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitPolicy {
    pub pretrained_prefixes: Vec<String>,
    pub random_prefixes: Vec<String>,
    pub random_embedding_rows: Vec<usize>,
    pub seed: u64,
}

pub const TOKEN_EMBED_NAME: &str = "decoder.embed.token";

impl InitPolicy {
    /// The paper arrangement: decoder from the checkpoint, cross-attention
    /// (plus the added output bias) random, encoder random. `soc`/`eoc`
    /// embedding rows are randomized since no pretrained row exists for them.
    pub fn pretrained_decoder(soc_id: u32, eoc_id: u32, seed: u64) -> Self {
        InitPolicy {
            pretrained_prefixes: vec!["decoder".into()],
            random_prefixes: vec![
                "decoder.*.crossattn".into(),
                "decoder.out_bias".into(),
                "encoder".into(),
            ],
            random_embedding_rows: vec![soc_id as usize, eoc_id as usize],
            seed,
        }
    }

    /// The ablation arm: everything random.
    pub fn all_random(seed: u64) -> Self {
        InitPolicy {
            pretrained_prefixes: vec![],
            random_prefixes: vec!["decoder".into(), "encoder".into()],
            random_embedding_rows: vec![],
            seed,
        }
    }

    pub fn classify(&self, name: &str) -> Option<Partition> {
        if self.random_prefixes.iter().any(|p| pattern_matches(p, name)) {
            Some(Partition::Random)
        } else if self.pretrained_prefixes.iter().any(|p| pattern_matches(p, name)) {
            Some(Partition::Pretrained)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Pretrained,
    Random,
}

/// Segment-prefix pattern match: `decoder.*.crossattn` matches
/// `decoder.block0.crossattn.wq`.
fn pattern_matches(pattern: &str, name: &str) -> bool {
    let pat: Vec<&str> = pattern.split('.').filter(|s| !s.is_empty()).collect();
    let segs: Vec<&str> = name.split('.').collect();
    if pat.len() > segs.len() {
        return false;
    }
    pat.iter().zip(segs.iter()).all(|(p, s)| *p == "*" || p == s)
}

/// Where a tensor's values came from after `apply_init_policy`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum Provenance {
    Pretrained,
    Random,
    /// Pretrained table with the listed rows randomly initialized.
    PretrainedWithRandomRows { rows: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Per-parameter provenance report emitted by `apply_init_policy`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitAudit {
    pub policy: InitPolicy,
    pub entries: Vec<AuditEntry>,
}

impl InitAudit {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("audit serialization")
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn fan_in(shape: &[usize]) -> usize {
    match shape {
        [_, c_in, kh, kw] => c_in * kh * kw,
        [rows, _] => *rows,
        [n] => *n,
        _ => shape.iter().product(),
    }
}

/// Fills a tensor with its role's random-init distribution.
pub fn random_init_tensor<F: Scalar>(nt: &NamedTensor<F>, rng: &mut Rng) {
    let is_encoder = nt.name.starts_with("encoder");
    let shape = nt.tensor.shape().to_vec();
    match nt.kind {
        ParamKind::Weight => {
            if is_encoder {
                let bound = (6.0 / fan_in(&shape) as f64).sqrt();
                nt.tensor.update_data(|d| {
                    for v in d.iter_mut() {
                        *v = F::from_f64(rng.uniform(-bound, bound));
                    }
                });
            } else {
                nt.tensor.update_data(|d| {
                    for v in d.iter_mut() {
                        *v = F::from_f64(rng.truncated_normal(RANDOM_INIT_STD));
                    }
                });
            }
        }
        ParamKind::Embedding => {
            nt.tensor.update_data(|d| {
                for v in d.iter_mut() {
                    *v = F::from_f64(rng.truncated_normal(RANDOM_INIT_STD));
                }
            });
        }
        ParamKind::Bias | ParamKind::Beta => {
            nt.tensor.update_data(|d| d.fill(F::zero()));
        }
        ParamKind::Gamma => {
            nt.tensor.update_data(|d| d.fill(F::one()));
        }
        ParamKind::Buffer => {
            // running statistics: identity normalization
            let value = if nt.name.ends_with("running_var") { F::one() } else { F::zero() };
            nt.tensor.update_data(|d| d.fill(value));
        }
    }
}

fn load_into<F: Scalar>(tensor: &crate::tensor::Tensor<F>, data: &[f32]) {
    tensor.update_data(|d| {
        for (slot, v) in d.iter_mut().zip(data.iter()) {
            *slot = F::from_f32(*v);
        }
    });
}

/// Applies the init policy: pretrained-partition tensors are loaded from the
/// checkpoint bit-exactly, random-partition tensors are drawn from the
/// seeded generator per their role. Returns the per-parameter audit.
///
/// The token-embedding table accepts a checkpoint with either the full row
/// count or the row count minus the policy's random rows (which must then be
/// the trailing rows); the random rows are drawn, not loaded, in both cases.
pub fn apply_init_policy<F: Scalar>(
    tensors: &[NamedTensor<F>],
    checkpoint: &TensorStore,
    policy: &InitPolicy,
    rng: &mut Rng,
) -> Result<InitAudit, CheckpointError> {
    // classify everything first so errors precede any mutation
    let mut plan: Vec<(&NamedTensor<F>, Partition)> = Vec::with_capacity(tensors.len());
    let mut missing = Vec::new();
    for nt in tensors {
        let partition = policy
            .classify(&nt.name)
            .ok_or_else(|| CheckpointError::UnmatchedParameter { name: nt.name.clone() })?;
        if partition == Partition::Pretrained {
            match checkpoint.get(&nt.name) {
                None => missing.push(nt.name.clone()),
                Some((shape, _)) => {
                    let ok = if nt.name == TOKEN_EMBED_NAME {
                        token_embed_rows(nt.tensor.shape(), shape, policy).is_some()
                    } else {
                        shape == nt.tensor.shape()
                    };
                    if !ok {
                        return Err(CheckpointError::ShapeClash {
                            name: nt.name.clone(),
                            ckpt: shape.clone(),
                            model: nt.tensor.shape().to_vec(),
                        });
                    }
                }
            }
        }
        plan.push((nt, partition));
    }
    if !missing.is_empty() {
        return Err(CheckpointError::MissingTensors(missing));
    }

    let mut entries = Vec::with_capacity(plan.len());
    for (nt, partition) in plan {
        let provenance = match partition {
            Partition::Random => {
                random_init_tensor(nt, rng);
                Provenance::Random
            }
            Partition::Pretrained => {
                let (shape, data) = checkpoint.get(&nt.name).expect("checked above");
                if nt.name == TOKEN_EMBED_NAME && !policy.random_embedding_rows.is_empty() {
                    let loaded_rows = token_embed_rows(nt.tensor.shape(), shape, policy)
                        .expect("checked above");
                    let dim = nt.tensor.shape()[1];
                    nt.tensor.update_data(|d| {
                        for row in 0..loaded_rows {
                            for j in 0..dim {
                                d[row * dim + j] = F::from_f32(data[row * dim + j]);
                            }
                        }
                    });
                    let mut rows = policy.random_embedding_rows.clone();
                    rows.sort_unstable();
                    for &row in &rows {
                        let dim = nt.tensor.shape()[1];
                        nt.tensor.update_data(|d| {
                            for j in 0..dim {
                                d[row * dim + j] = F::from_f64(rng.truncated_normal(RANDOM_INIT_STD));
                            }
                        });
                    }
                    Provenance::PretrainedWithRandomRows { rows }
                } else {
                    load_into(&nt.tensor, data);
                    Provenance::Pretrained
                }
            }
        };
        entries.push(AuditEntry {
            name: nt.name.clone(),
            shape: nt.tensor.shape().to_vec(),
            provenance,
        });
    }
    Ok(InitAudit { policy: policy.clone(), entries })
}

/// How many leading rows of the token embedding come from the checkpoint.
/// `Some(rows)` when the shapes are compatible, `None` otherwise.
fn token_embed_rows(model: &[usize], ckpt: &[usize], policy: &InitPolicy) -> Option<usize> {
    if model.len() != 2 || ckpt.len() != 2 || model[1] != ckpt[1] {
        return None;
    }
    let v = model[0];
    let k = policy.random_embedding_rows.len();
    if ckpt[0] == v {
        Some(v - k)
    } else if k > 0 && ckpt[0] + k == v {
        // trailing-row layout required: the random rows are the appended ones
        let trailing: Vec<usize> = (v - k..v).collect();
        let mut rows = policy.random_embedding_rows.clone();
        rows.sort_unstable();
        (rows == trailing).then_some(v - k)
    } else {
        None
    }
}

/// Loads every model tensor from the store, bit-exactly, requiring exact
/// name and shape coverage (checkpoint restore, as opposed to policy init).
pub fn load_exact<F: Scalar>(
    tensors: &[NamedTensor<F>],
    store: &TensorStore,
) -> Result<(), CheckpointError> {
    let mut missing = Vec::new();
    for nt in tensors {
        match store.get(&nt.name) {
            None => missing.push(nt.name.clone()),
            Some((shape, _)) if shape != nt.tensor.shape() => {
                return Err(CheckpointError::ShapeClash {
                    name: nt.name.clone(),
                    ckpt: shape.clone(),
                    model: nt.tensor.shape().to_vec(),
                });
            }
            Some(_) => {}
        }
    }
    if !missing.is_empty() {
        return Err(CheckpointError::MissingTensors(missing));
    }
    for nt in tensors {
        let (_, data) = store.get(&nt.name).expect("checked above");
        load_into(&nt.tensor, data);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum VerifyStatus {
    PretrainedMatch,
    Random,
    Mismatch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub name: String,
    pub status: VerifyStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub entries: Vec<VerifyEntry>,
    pub mismatches: usize,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.mismatches == 0
    }

    pub fn status(&self, name: &str) -> Option<&VerifyStatus> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.status)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serialization")
    }
}

/// Re-checks a model against a checkpoint under a policy: every
/// pretrained-partition tensor must still be byte-equal to the checkpoint
/// (bit-level f32 comparison). Random-partition tensors are reported, not
/// compared. Zero mismatches is the pass condition.
pub fn verify<F: Scalar>(
    tensors: &[NamedTensor<F>],
    checkpoint: &TensorStore,
    policy: &InitPolicy,
) -> Result<VerifyReport, CheckpointError> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut mismatches = 0;
    for nt in tensors {
        let partition = policy
            .classify(&nt.name)
            .ok_or_else(|| CheckpointError::UnmatchedParameter { name: nt.name.clone() })?;
        let status = match partition {
            Partition::Random => VerifyStatus::Random,
            Partition::Pretrained => {
                let matches = match checkpoint.get(&nt.name) {
                    None => false,
                    Some((shape, data)) => {
                        if nt.name == TOKEN_EMBED_NAME && !policy.random_embedding_rows.is_empty() {
                            match token_embed_rows(nt.tensor.shape(), shape, policy) {
                                None => false,
                                Some(rows) => {
                                    let dim = nt.tensor.shape()[1];
                                    let model = nt.tensor.to_vec();
                                    let mut same = true;
                                    'outer: for row in 0..rows {
                                        if policy.random_embedding_rows.contains(&row) {
                                            continue;
                                        }
                                        for j in 0..dim {
                                            let m = model[row * dim + j].as_f32();
                                            if m.to_bits() != data[row * dim + j].to_bits() {
                                                same = false;
                                                break 'outer;
                                            }
                                        }
                                    }
                                    same
                                }
                            }
                        } else if shape != nt.tensor.shape() {
                            false
                        } else {
                            nt.tensor
                                .to_vec()
                                .iter()
                                .zip(data.iter())
                                .all(|(m, c)| m.as_f32().to_bits() == c.to_bits())
                        }
                    }
                };
                if matches {
                    VerifyStatus::PretrainedMatch
                } else {
                    mismatches += 1;
                    VerifyStatus::Mismatch
                }
            }
        };
        entries.push(VerifyEntry { name: nt.name.clone(), status });
    }
    Ok(VerifyReport { entries, mismatches })
}
