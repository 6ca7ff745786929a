//! `LAEO1` checkpoints: the magic bytes, a little-endian `u32` manifest
//! length, a JSON manifest naming every tensor with its shape and byte
//! offset, then the concatenated `f32` little-endian payload.

use std::fs;
use std::path::Path;

use laeo_core::model::{LaeoNet, ModelConfig, PoseNet};
use laeo_core::nn::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_at, Result};
use crate::formats::write_file;

pub const MAGIC: &[u8; 5] = b"LAEO1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// The full pair classifier.
    Laeonet,
    /// Head branch plus angle regressor.
    Posenet,
}

/// Serializable mirror of [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub t: usize,
    pub m: usize,
    pub head_channels: Vec<usize>,
    pub head_strides: Vec<[usize; 3]>,
    pub map_channels: Vec<usize>,
    pub map_strides: Vec<[usize; 3]>,
    pub hidden: usize,
    pub dropout: f64,
    pub l2_eps: f64,
}

impl From<&ModelConfig> for ModelSpec {
    fn from(c: &ModelConfig) -> Self {
        ModelSpec {
            t: c.t,
            m: c.m,
            head_channels: c.head_channels.clone(),
            head_strides: c.head_strides.clone(),
            map_channels: c.map_channels.clone(),
            map_strides: c.map_strides.clone(),
            hidden: c.hidden,
            dropout: c.dropout,
            l2_eps: c.l2_eps,
        }
    }
}

impl From<&ModelSpec> for ModelConfig {
    fn from(s: &ModelSpec) -> Self {
        ModelConfig {
            t: s.t,
            m: s.m,
            head_channels: s.head_channels.clone(),
            head_strides: s.head_strides.clone(),
            map_channels: s.map_channels.clone(),
            map_strides: s.map_strides.clone(),
            hidden: s.hidden,
            dropout: s.dropout,
            l2_eps: s.l2_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    kind: NetKind,
    model: ModelSpec,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: NetKind,
    pub model: ModelConfig,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_laeonet(net: &LaeoNet) -> Self {
        Checkpoint {
            kind: NetKind::Laeonet,
            model: net.config().clone(),
            params: net.params().clone(),
        }
    }

    pub fn from_posenet(net: &PoseNet) -> Self {
        Checkpoint {
            kind: NetKind::Posenet,
            model: net.config().clone(),
            params: net.params().clone(),
        }
    }

    pub fn into_laeonet(self) -> Result<LaeoNet> {
        if self.kind != NetKind::Laeonet {
            return Err(invalid("checkpoint holds a head-pose model, not a pair classifier"));
        }
        Ok(LaeoNet::from_params(&self.model, self.params)?)
    }

    pub fn into_posenet(self) -> Result<PoseNet> {
        if self.kind != NetKind::Posenet {
            return Err(invalid("checkpoint holds a pair classifier, not a head-pose model"));
        }
        Ok(PoseNet::from_params(&self.model, self.params)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (_, name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.len();
        }
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            model: ModelSpec::from(&self.model),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(invalid)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| invalid("not a LAEO1 checkpoint (bad magic)"))?;
        if rest.len() < 4 {
            return Err(invalid("truncated checkpoint header"));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(invalid("truncated checkpoint manifest"));
        }
        let (json, payload) = rest.split_at(len);
        let version: serde_json::Value = serde_json::from_slice(json).map_err(|e| invalid(format!("bad manifest: {e}")))?;
        match version.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(invalid(format!("unsupported checkpoint version {v}"))),
            None => return Err(invalid("checkpoint manifest has no version")),
        }
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| invalid(format!("bad manifest: {e}")))?;
        let mut params = ParamStore::new();
        let mut expected = 0;
        for e in &manifest.tensors {
            if e.offset != expected {
                return Err(invalid(format!("tensor {} at offset {}, expected {expected}", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset + 4 * n;
            let raw = payload
                .get(e.offset..end)
                .ok_or_else(|| invalid(format!("tensor {} runs past the payload", e.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.add(e.name.clone(), Tensor::new(&e.shape, data)?);
            expected = end;
        }
        if expected != payload.len() {
            return Err(invalid(format!("{} trailing payload bytes", payload.len() - expected)));
        }
        Ok(Checkpoint {
            kind: manifest.kind,
            model: ModelConfig::from(&manifest.model),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_at(path))?;
        Self::from_bytes(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }
}
