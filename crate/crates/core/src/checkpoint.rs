//! Checkpoint serialization.
//!
//! Layout: 8-byte magic, u32 LE format version, u64 LE header length, JSON
//! header (model spec, training metadata, tensor directory), then each
//! tensor's raw little-endian f32 values in directory order. Weight bytes are
//! copied verbatim, so save -> load -> predict is bit-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;
use crate::train::{EpochStats, TrainOutcome};

const MAGIC: &[u8; 8] = b"XAIKITCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    pub seed: u64,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    meta: TrainMeta,
    tensors: Vec<TensorInfo>,
}

impl Checkpoint {
    pub fn from_outcome(out: TrainOutcome) -> Self {
        Checkpoint {
            meta: TrainMeta {
                epochs_run: out.epochs_run,
                seed: out.seed,
                history: out.history,
            },
            model: out.model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<TensorInfo> = self
            .model
            .param_names()
            .into_iter()
            .zip(self.model.params())
            .map(|(name, t)| TensorInfo {
                name,
                shape: t.shape().to_vec(),
            })
            .collect();
        let header = Header {
            spec: self.model.spec.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::format(path, format!("header encode: {e}")))?;
        let payload: usize = self.model.params().iter().map(|t| t.numel() * 4).sum();
        let mut bytes = Vec::with_capacity(8 + 4 + 8 + header_json.len() + payload);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        for t in self.model.params() {
            for &v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fsio::atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsio::read_bytes(path)?;
        let fail = |msg: String| Error::format(path, msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(fail(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20 + header_len;
        if bytes.len() < body {
            return Err(fail("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[20..body])
            .map_err(|e| fail(format!("header decode: {e}")))?;
        header.spec.validate().map_err(|e| fail(format!("invalid spec: {e}")))?;

        let mut cursor = body;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            let numel: usize = info.shape.iter().product();
            let nbytes = numel * 4;
            if bytes.len() < cursor + nbytes {
                return Err(fail(format!("truncated tensor '{}'", info.name)));
            }
            let data: Vec<f32> = bytes[cursor..cursor + nbytes]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += nbytes;
            tensors.push(
                Tensor::new(info.shape.clone(), data)
                    .map_err(|e| fail(format!("tensor '{}': {e}", info.name)))?,
            );
        }
        if cursor != bytes.len() {
            return Err(fail("trailing bytes after tensor payload".into()));
        }
        let model = assemble(path, &header, tensors)?;
        Ok(Checkpoint {
            model,
            meta: header.meta,
        })
    }
}

/// Rebuild a Model from the tensor list, checking every shape against what
/// the spec implies.
fn assemble(path: &Path, header: &Header, tensors: Vec<Tensor>) -> Result<Model> {
    let spec = &header.spec;
    let fail = |msg: String| Error::format(path, msg);
    let expected = 2 * spec.blocks.len() + 2;
    if tensors.len() != expected {
        return Err(fail(format!(
            "expected {expected} tensors for this spec, found {}",
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    let mut names = header.tensors.iter().map(|t| t.name.as_str());
    let mut conv_w = Vec::new();
    let mut conv_b = Vec::new();
    let mut ci = spec.input.0;
    let check = |t: Tensor, want: Vec<usize>, name: Option<&str>| -> Result<Tensor> {
        if t.shape() != want {
            return Err(Error::format(
                path,
                format!(
                    "tensor '{}' has shape {:?}, spec implies {:?}",
                    name.unwrap_or("?"),
                    t.shape(),
                    want
                ),
            ));
        }
        Ok(t)
    };
    for b in &spec.blocks {
        let w = it.next().unwrap();
        conv_w.push(check(w, vec![b.channels, ci, b.kernel, b.kernel], names.next())?);
        let bias = it.next().unwrap();
        conv_b.push(check(bias, vec![b.channels], names.next())?);
        ci = b.channels;
    }
    let features = spec.feature_len();
    let fc_w = check(it.next().unwrap(), vec![features, spec.classes], names.next())?;
    let fc_b = check(it.next().unwrap(), vec![spec.classes], names.next())?;
    Ok(Model {
        spec: spec.clone(),
        conv_w,
        conv_b,
        fc_w,
        fc_b,
    })
}
