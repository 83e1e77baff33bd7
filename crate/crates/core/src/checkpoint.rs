//! Binary checkpoint files.
//!
//! ```text
//! "SSRG"                  4 bytes
//! version                 u32 LE, currently 1
//! header length           u64 LE
//! header                  UTF-8 JSON
//! payloads                f32 LE, in header directory order
//! ```
//!
//! The header holds the training configuration, epoch and step counters,
//! RNG state, Adam step counters, and a directory with one record per tensor:
//! name, dtype code (0 = f32), rank, extents, byte offset from the start of
//! the payload section, byte length and CRC32 of the payload bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"SSRG";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: u8,
    pub rank: usize,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdamSteps {
    pub generator: Vec<u64>,
    pub discriminator: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    rng: Rng,
    adam_steps: AdamSteps,
    tensors: Vec<TensorRecord>,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimization steps.
    pub step: u64,
    pub rng: Rng,
    pub adam_steps: AdamSteps,
    /// Named tensors in file order.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut records = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let start = payload.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            records.push(TensorRecord {
                name: name.clone(),
                dtype: DTYPE_F32,
                rank: t.shape().len(),
                shape: t.shape().to_vec(),
                offset: start as u64,
                length: (payload.len() - start) as u64,
                crc32: crc32fast::hash(&payload[start..]),
            });
        }
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng.clone(),
            adam_steps: self.adam_steps.clone(),
            tensors: records,
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encoding: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| Err(Error::Checkpoint(m));
        if bytes.len() < 16 {
            return fail(format!("file of {} bytes is too short for a header", bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return fail("bad magic, not a checkpoint file".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return fail(format!("unsupported version {version}, expected {VERSION}"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(16))
            .filter(|&end| end <= bytes.len());
        let Some(header_end) = header_end else {
            return fail(format!("header length {header_len} exceeds file size"));
        };
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_end = 0u64;
        for rec in &header.tensors {
            let name = &rec.name;
            if rec.dtype != DTYPE_F32 {
                return fail(format!("tensor {name}: unknown dtype code {}", rec.dtype));
            }
            if rec.rank != rec.shape.len() {
                return fail(format!("tensor {name}: rank {} but {} extents", rec.rank, rec.shape.len()));
            }
            let count: usize = rec.shape.iter().product();
            if rec.length != 4 * count as u64 {
                return fail(format!(
                    "tensor {name}: {} payload bytes for {count} elements",
                    rec.length
                ));
            }
            if rec.offset != expected_end {
                return fail(format!("tensor {name}: payload offset {} out of order", rec.offset));
            }
            expected_end = rec.offset + rec.length;
            let Some(raw) = usize::try_from(expected_end)
                .ok()
                .and_then(|end| payload.get(rec.offset as usize..end))
            else {
                return fail(format!("tensor {name}: payload truncated"));
            };
            if crc32fast::hash(raw) != rec.crc32 {
                return fail(format!("tensor {name}: checksum mismatch"));
            }
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&rec.shape, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name.clone(), t));
        }
        if expected_end != payload.len() as u64 {
            return fail(format!(
                "{} trailing bytes after the last tensor",
                payload.len() as u64 - expected_end
            ));
        }
        Ok(Checkpoint {
            config: header.config,
            epoch: header.epoch,
            step: header.step,
            rng: header.rng,
            adam_steps: header.adam_steps,
            tensors,
        })
    }
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
