//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PCRGCKPT"
//! version    u32      currently 1
//! dtype      u8       1 = f32, 2 = f64
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes      (n_meta times, sorted by key)
//!   value    u32 length + UTF-8 bytes
//! n_tensors  u32
//!   name     u32 length + UTF-8 bytes      (n_tensors times, store order)
//!   rank     u32
//!   dims     rank x u64
//! data       every tensor's values in directory order, raw little-endian
//! ```
//!
//! The byte stream is a pure function of the parameter values and metadata.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::{DType, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PCRGCKPT";
pub const VERSION: u32 = 1;

pub type Metadata = BTreeMap<String, String>;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes<F: Real>(store: &ParamStore<F>, meta: &Metadata) -> Vec<u8> {
    let mut out = Vec::with_capacity(store.num_scalars() * F::DTYPE.size() + 1024);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(F::DTYPE.code());
    put_u32(&mut out, meta.len() as u32);
    for (k, v) in meta {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    put_u32(&mut out, store.len() as u32);
    for (_, p) in store.iter() {
        put_str(&mut out, &p.name);
        put_u32(&mut out, p.value.shape().len() as u32);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, p) in store.iter() {
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

/// Decodes a checkpoint, converting values to `F` if they were stored with
/// the other precision.
pub fn from_bytes<F: Real>(bytes: &[u8]) -> Result<(ParamStore<F>, Metadata)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = r.take(1)?[0];
    let dtype =
        DType::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown dtype {code}")))?;
    let mut meta = Metadata::new();
    for _ in 0..r.u32()? {
        let k = r.string()?;
        let v = r.string()?;
        meta.insert(k, v);
    }
    let n = r.u32()? as usize;
    let mut dir = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        dir.push((name, dims));
    }
    let mut store = ParamStore::new();
    for (name, dims) in dir {
        let len: usize = dims.iter().product();
        let raw = r.take(len * dtype.size())?;
        let data: Vec<F> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| F::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| F::of(f64::read_le(c))).collect(),
        };
        store
            .add(name, Tensor::new(dims, data)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((store, meta))
}

pub fn save<F: Real>(path: &Path, store: &ParamStore<F>, meta: &Metadata) -> Result<()> {
    std::fs::write(path, to_bytes(store, meta))?;
    Ok(())
}

pub fn load<F: Real>(path: &Path) -> Result<(ParamStore<F>, Metadata)> {
    from_bytes(&std::fs::read(path)?)
}
