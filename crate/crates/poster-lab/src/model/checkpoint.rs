//! Versioned checkpoint container: JSON header (config, tuning mode, seed
//! lineage) followed by named raw tensors, little-endian f32, with a
//! trailing CRC32 over the whole payload.

use super::{ModelError, ModelParams, TrainMode};
use crate::tensor::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PLCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    cfg: super::ModelConfig,
    mode: TrainMode,
    seed_lineage: Vec<u64>,
    dataset_hash: u64,
}


pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let header = Header {
        cfg: params.cfg.clone(),
        mode: params.mode.clone(),
        seed_lineage: params.seed_lineage.clone(),
        dataset_hash: params.dataset_hash,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;

    let mut payload = Vec::new();
    payload.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    payload.extend_from_slice(&header_json);
    payload.extend_from_slice(&(params.set.entries.len() as u32).to_le_bytes());
    for p in &params.set.entries {
        let name = p.name.as_bytes();
        payload.extend_from_slice(&(name.len() as u16).to_le_bytes());
        payload.extend_from_slice(name);
        payload.extend_from_slice(&(p.value.rows as u32).to_le_bytes());
        payload.extend_from_slice(&(p.value.cols as u32).to_le_bytes());
        payload.push(p.trainable as u8);
        for &v in &p.value.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&payload)?;
    f.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Format("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::Version { found: version, expected: VERSION });
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(payload) != stored_crc {
        return Err(ModelError::Format("checksum mismatch".into()));
    }

    let mut cur = Cursor { buf: payload, pos: 0 };
    let header_len = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| ModelError::Format(e.to_string()))?;
    header.cfg.validate()?;

    let n_tensors = cur.u32()? as usize;
    let mut set = ParamSet::default();
    for _ in 0..n_tensors {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| ModelError::Format("non-utf8 tensor name".into()))?
            .to_string();
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let trainable = cur.take(1)?[0] != 0;
        let raw = cur.take(rows * cols * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Format(format!("non-finite values in tensor {name}")));
        }
        set.push(name, Tensor::from_vec(rows, cols, data), trainable);
    }
    if cur.pos != payload.len() {
        return Err(ModelError::Format("trailing bytes".into()));
    }
    Ok(ModelParams {
        cfg: header.cfg,
        mode: header.mode,
        set,
        seed_lineage: header.seed_lineage,
        dataset_hash: header.dataset_hash,
    })
}
