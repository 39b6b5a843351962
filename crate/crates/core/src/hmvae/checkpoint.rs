use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hmvae::descriptor::ArchDescriptor;
use crate::hmvae::model::HmVae;
use crate::skeleton::Skeleton;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"HMVAE1";

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

/// Layout: magic, `u32` length + descriptor JSON, `u32` tensor count, then
/// per tensor `u32` rank, `u32` dims and little-endian `f32` values.
pub fn write_checkpoint(model: &HmVae<f32>, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    let json = serde_json::to_vec(model.descriptor())?;
    put_u32(w, json.len())?;
    w.write_all(&json)?;
    put_u32(w, model.params().len())?;
    for p in model.params() {
        put_u32(w, p.shape().len())?;
        for &d in p.shape() {
            put_u32(w, d)?;
        }
        for v in p.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<HmVae<f32>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let n = get_u32(r)?;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json)?;
    let mut desc: ArchDescriptor = serde_json::from_slice(&json)?;
    desc.skeleton = Skeleton::new(desc.skeleton.joints().to_vec())?;
    let count = get_u32(r)?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = get_u32(r)?;
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    HmVae::from_parts(desc, params).map_err(|e| Error::Checkpoint(format!("parameters do not match descriptor: {e}")))
}

pub fn save_checkpoint(model: &HmVae<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<HmVae<f32>> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
