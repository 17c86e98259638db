//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PCVRCKPT"  u32 version  u8 dtype (0 = f32, 1 = f64)  u64 step
//! u32 len, model config as TOML
//! u32 table count, then per table:
//!     u32 len, name   u32 ndim   u64 dims…   values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Perceiver, PerceiverConfig};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PCVRCKPT";
const VERSION: u32 = 1;

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint-step{step:08}.bin")
}

pub fn encode_checkpoint<T: Scalar>(model: &Perceiver<T>, step: u64) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match T::DTYPE {
        DType::F32 => 0,
        DType::F64 => 1,
    });
    out.extend_from_slice(&step.to_le_bytes());
    let cfg = toml::to_string(model.config()).map_err(|e| Error::Format(e.to_string()))?;
    put_bytes(&mut out, cfg.as_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, table) in params.names().iter().zip(params.tables()) {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(table.ndim() as u32).to_le_bytes());
        for &d in table.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        table.data().iter().for_each(|v| v.write_le(&mut out));
    }
    Ok(out)
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Rebuilds the model from a checkpoint, converting precision if the file
/// was written with the other scalar type. Returns the stored step.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Perceiver<T>, u64)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dtype = match r.take(1)?[0] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let step = r.u64()?;
    let config: PerceiverConfig =
        toml::from_str(&r.string()?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut model = Perceiver::<T>::build(config, 0)?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(Error::Format(format!("checkpoint has {count} tables, config implies {}", model.params().len())));
    }
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * dtype.size())?;
        let data = raw
            .chunks_exact(dtype.size())
            .map(|b| match dtype {
                DType::F32 => T::of(f32::read_le(b) as f64),
                DType::F64 => T::of(f64::read_le(b)),
            })
            .collect();
        model.params_mut().set(&name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((model, step))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Perceiver<T>, step: u64) -> Result<()> {
    fs::write(path, encode_checkpoint(model, step)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Perceiver<T>, u64)> {
    decode_checkpoint(&fs::read(path)?)
}
