//! Self-describing policy checkpoints (`.cpck`), all integers little-endian:
//!
//! ```text
//! "CPCK" | version u16 | header_len u32 | header JSON | count u64 | count × f64 | crc32 u32
//! ```
//!
//! The header carries the model dimensions, the training configuration, the dataset
//! normalization statistics and the parameter names and shapes in storage order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{CompactModel, LossTerms, ModelDims};
use super::tape::ParamStore;
use super::PolicyConfig;
use crate::error::{Error, Result};
use crate::store::NormStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CPCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u16,
    pub task: String,
    pub dims: ModelDims,
    pub config: PolicyConfig,
    pub norm: NormStats,
    pub epoch: usize,
    pub loss: LossTerms,
    pub names: Vec<String>,
    pub shapes: Vec<[usize; 2]>,
}

/// A trained model with the statistics needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub task: String,
    pub model: CompactModel,
    pub norm: NormStats,
    pub config: PolicyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: Policy,
    pub epoch: usize,
    pub loss: LossTerms,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.policy;
        let params = &p.model.params;
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            task: p.task.clone(),
            dims: p.model.dims.clone(),
            config: p.config.clone(),
            norm: p.norm.clone(),
            epoch: self.epoch,
            loss: self.loss,
            names: params.names.clone(),
            shapes: params.values.iter().map(|v| [v.nrows(), v.ncols()]).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let count = params.scalar_count();
        let mut out = Vec::with_capacity(json.len() + 8 * count + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for v in &params.values {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format(format!("checkpoint: {m}"));
        if bytes.len() < 4 + 2 + 4 + 8 + 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(bad("checksum mismatch"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
        let hend = 10 + hlen;
        if body.len() < hend + 8 {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[10..hend])?;
        let count = u64::from_le_bytes(body[hend..hend + 8].try_into().expect("8 bytes")) as usize;
        let data = &body[hend + 8..];
        let expected: usize = header.shapes.iter().map(|s| s[0] * s[1]).sum();
        if count != expected || data.len() != 8 * count || header.names.len() != header.shapes.len() {
            return Err(bad("parameter block size mismatch"));
        }
        let mut params = ParamStore::default();
        let mut floats = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for (name, shape) in header.names.iter().zip(&header.shapes) {
            let vals: Vec<f64> = floats.by_ref().take(shape[0] * shape[1]).collect();
            let arr = Array2::from_shape_vec((shape[0], shape[1]), vals).map_err(|e| bad(&e.to_string()))?;
            params.add(name.clone(), arr);
        }
        let model = CompactModel::from_params(header.dims.clone(), params)?;
        Ok(Self {
            policy: Policy {
                task: header.task,
                model,
                norm: header.norm,
                config: header.config,
            },
            epoch: header.epoch,
            loss: header.loss,
        })
    }

    /// Writes through a temporary file and a rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("cpck.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl Policy {
    /// Whether the model was trained with the wrench among its inputs.
    pub fn with_ft(&self) -> bool {
        self.model.dims.with_ft
    }
}
