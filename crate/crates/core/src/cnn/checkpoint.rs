//! Binary checkpoint: magic, version, scalar width, JSON model config, a
//! free-form provenance tag, then named little-endian tensors.

use ndarray::{ArrayD, IxDyn};

use super::model::{Model, ModelConfig, ModelParams, ParamEntry};
use crate::error::{DataError, Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"DDCNNCK\0";
pub const VERSION: u32 = 1;

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

/// Serializes the model state. Loading the bytes back into the same scalar
/// type reproduces every value bit for bit.
pub fn to_bytes<T: Real>(model: &Model<T>, tag: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    let cfg = serde_json::to_vec(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    put_u64(&mut out, cfg.len() as u64);
    out.extend_from_slice(&cfg);
    put_u64(&mut out, tag.len() as u64);
    out.extend_from_slice(tag.as_bytes());
    put_u64(&mut out, model.params.entries.len() as u64);
    for e in &model.params.entries {
        put_u64(&mut out, e.name.len() as u64);
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.trainable as u8);
        put_u64(&mut out, e.value.ndim() as u64);
        for &d in e.value.shape() {
            put_u64(&mut out, d as u64);
        }
        for &v in e.value.iter() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(DataError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &'static str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| DataError::Malformed(format!("{what} length {n} exceeds the file")).into())
    }
}

/// Model and provenance tag.
pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(Model<T>, String)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(DataError::BadMagic.into());
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(DataError::Version { found: version, expected: VERSION }.into());
    }
    let width = c.u32("scalar width")? as usize;
    if width != 4 && width != 8 {
        return Err(DataError::Malformed(format!("scalar width {width}")).into());
    }
    let n = c.len("config")?;
    let config: ModelConfig =
        serde_json::from_slice(c.take(n, "config")?).map_err(|e| DataError::Malformed(e.to_string()))?;
    let n = c.len("tag")?;
    let tag = String::from_utf8(c.take(n, "tag")?.to_vec()).map_err(|e| DataError::Malformed(e.to_string()))?;
    let count = c.len("tensor count")?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.len("tensor name")?;
        let name = String::from_utf8(c.take(n, "tensor name")?.to_vec())
            .map_err(|e| DataError::Malformed(e.to_string()))?;
        let trainable = c.take(1, "tensor flag")?[0] != 0;
        let ndim = c.len("tensor rank")?;
        let shape = (0..ndim).map(|_| c.len("tensor shape")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&m| m.saturating_mul(width) <= bytes.len())
            .ok_or_else(|| DataError::Malformed(format!("tensor {name} is too large")))?;
        let raw = c.take(numel * width, "tensor data")?;
        let values: Vec<T> = raw
            .chunks_exact(width)
            .map(|b| {
                let v = if width == 8 {
                    f64::from_le_bytes(b.try_into().expect("8 bytes"))
                } else {
                    f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")))
                };
                if width == T::BYTES { T::read_le(b) } else { crate::scalar::lit(v) }
            })
            .collect();
        let value = ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| DataError::Malformed(e.to_string()))?;
        entries.push(ParamEntry { name, value, trainable });
    }
    if c.pos != bytes.len() {
        return Err(DataError::Malformed("trailing bytes after the last tensor".into()).into());
    }
    Ok((Model::from_params(config, ModelParams { entries })?, tag))
}

pub fn save<T: Real>(model: &Model<T>, tag: &str, path: &std::path::Path) -> Result<()> {
    crate::dataset::write_atomic(path, &to_bytes(model, tag)?)
}

pub fn load<T: Real>(path: &std::path::Path) -> Result<(Model<T>, String)> {
    from_bytes(&std::fs::read(path)?)
}
