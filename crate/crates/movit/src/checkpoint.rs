//! Versioned binary model checkpoints: the architecture config as an
//! embedded key/value blob, then named parameter blocks.

use crate::config::{vit_from_kv, vit_to_kv};
use crate::error::{MovitError, Result};
use crate::vit::{ParamSet, VitModel};
use crate::wire::{fnv1a64, push_u16, push_u32, CountingReader};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const CKPT_MAGIC: &[u8; 4] = b"MOVC";
const CKPT_VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &VitModel<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    push_u32(&mut buf, CKPT_VERSION);
    let cfg_blob = vit_to_kv(&model.cfg);
    push_u32(&mut buf, cfg_blob.len() as u32);
    buf.extend_from_slice(cfg_blob.as_bytes());
    push_u32(&mut buf, model.params.len() as u32);
    for p in model.params.iter() {
        push_u16(&mut buf, p.name.len() as u16);
        buf.extend_from_slice(p.name.as_bytes());
        push_u32(&mut buf, p.shape.len() as u32);
        for &d in &p.shape {
            push_u32(&mut buf, d as u32);
        }
        for &v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(model: &VitModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| MovitError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&checkpoint_bytes(model))
        .and_then(|_| w.flush())
        .map_err(|e| MovitError::io(path.display().to_string(), e))
}

pub fn checkpoint_from_reader(r: impl Read) -> Result<VitModel<f32>> {
    let mut r = CountingReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != CKPT_MAGIC {
        return Err(MovitError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {CKPT_MAGIC:?}"),
        });
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(MovitError::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let cfg_len = r.u32("config length")? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact_at(&mut cfg_bytes, "config blob")?;
    let cfg_text = String::from_utf8(cfg_bytes).map_err(|_| MovitError::Format {
        offset: 12,
        message: "config blob is not valid UTF-8".into(),
    })?;
    let cfg = vit_from_kv(&cfg_text)?;
    let num_blocks = r.u32("block count")?;
    let mut params = ParamSet::new();
    for _ in 0..num_blocks {
        let name_len = r.u16("block name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact_at(&mut name_bytes, "block name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| MovitError::Format {
            offset: r.offset,
            message: "block name is not valid UTF-8".into(),
        })?;
        let rank = r.u32("block rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("block dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f32_vec(numel, &format!("block `{name}` data"))?;
        params.add(name, shape, data);
    }
    VitModel::from_params(cfg, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VitModel<f32>> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| MovitError::io(path.display().to_string(), e))?;
    checkpoint_from_reader(BufReader::new(file))
}

pub fn checkpoint_checksum(model: &VitModel<f32>) -> u64 {
    fnv1a64(&checkpoint_bytes(model))
}
