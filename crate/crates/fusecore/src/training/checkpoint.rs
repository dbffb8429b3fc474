//! Checkpoint file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   magic "FCKP" (4 bytes)
//!        4   format version, u32 (currently 1)
//!        8   parameter count, u32
//! per parameter, sorted by name:
//!            name length, u32 | name, UTF-8 bytes
//!            dtype, u8 (0 = f64)
//!            ndim, u32 | each dim, u32
//!            data, f64 x product(dims)
//!            frozen flag, u8
//! after the table:
//!            train-state length, u32 | train-state JSON
//!            meta length, u32 | meta JSON
//! ```
//!
//! The train-state blob carries the optimizer moments, the schedule, the
//! batch RNG, and the epoch cursor; the meta blob carries the model
//! dimensions, adapter setup, completed stage, and the tokenizer
//! fingerprint. JSON encodes f64 via shortest-round-trip notation, so
//! the restore is bit-exact; saving goes through a temp file and a
//! rename, so an interrupted save never corrupts an existing file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::pipeline::{ModelDims, Pipeline};

use super::TrainState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dims: ModelDims,
    /// Adapter rank/alpha when the language model carries adapters.
    pub lora: Option<(usize, f64)>,
    pub trained_stage: u8,
    pub lm_warmed: bool,
    pub init_seed: u64,
    pub vocab_fingerprint: u64,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serialize pipeline parameters plus training state.
pub fn save_checkpoint(path: &Path, pipeline: &Pipeline, state: &TrainState) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION);
    push_u32(&mut out, pipeline.store.len() as u32);
    for p in pipeline.store.iter() {
        let name = p.name();
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        out.push(0); // dtype f64
        let value = p.value();
        push_u32(&mut out, value.shape().len() as u32);
        for &d in value.shape() {
            push_u32(&mut out, d as u32);
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(p.frozen()));
    }
    let state_json = serde_json::to_vec(state)?;
    push_u32(&mut out, state_json.len() as u32);
    out.extend_from_slice(&state_json);
    let meta = CheckpointMeta {
        dims: pipeline.dims.clone(),
        lora: pipeline.lora_setup,
        trained_stage: pipeline.trained_stage,
        lm_warmed: pipeline.lm_warmed,
        init_seed: pipeline.init_seed,
        vocab_fingerprint: pipeline.vocab.fingerprint(),
    };
    let meta_json = serde_json::to_vec(&meta)?;
    push_u32(&mut out, meta_json.len() as u32);
    out.extend_from_slice(&meta_json);

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("fckp.tmp");
    fs::File::create(&tmp)?.write_all(&out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FuseError::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Restore a pipeline and its training state.
pub fn load_checkpoint(path: &Path) -> Result<(Pipeline, TrainState)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(FuseError::Format(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FuseError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut params: Vec<(String, Vec<usize>, Vec<f64>, bool)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| FuseError::Format("non-utf8 parameter name".into()))?;
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(FuseError::Format(format!("unknown dtype {dtype} for {name}")));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let frozen = r.u8()? != 0;
        params.push((name, shape, data, frozen));
    }
    let state_len = r.u32()? as usize;
    let state: TrainState = serde_json::from_slice(r.take(state_len)?)?;
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;

    let mut pipeline = Pipeline::new(meta.dims, meta.init_seed)?;
    if pipeline.vocab.fingerprint() != meta.vocab_fingerprint {
        return Err(FuseError::Format(
            "checkpoint was written with a different vocabulary".into(),
        ));
    }
    if let Some((rank, alpha)) = meta.lora {
        pipeline.attach_lora(rank, alpha)?;
    }
    pipeline.trained_stage = meta.trained_stage;
    pipeline.lm_warmed = meta.lm_warmed;

    if params.len() != pipeline.store.len() {
        return Err(FuseError::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            params.len(),
            pipeline.store.len()
        )));
    }
    for (name, shape, data, frozen) in params {
        let Some(p) = pipeline.store.get(&name) else {
            return Err(FuseError::Format(format!("unexpected parameter {name}")));
        };
        if p.shape() != shape {
            return Err(FuseError::Format(format!(
                "parameter {name}: shape {:?} in file, {:?} in model",
                shape,
                p.shape()
            )));
        }
        p.set_data(data);
        p.set_frozen(frozen);
    }
    Ok((pipeline, state))
}
