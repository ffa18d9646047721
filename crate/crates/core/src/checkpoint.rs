//! Versioned binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes  "MFCKPT\0\0"
//! version      u32
//! config_len   u32, then config_len bytes of JSON (NetworkConfig)
//! training_step u64
//! seed         u64
//! count        u32
//! count × { name_len u16, name, ndim u8, ndim × u64 dims, f64 values }
//! ```
//!
//! Tensors are learned parameters under their dotted names plus
//! `<norm>.running_mean` / `<norm>.running_var` for every batch-norm layer.
//! Files are written to a sibling temporary and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::{ModelState, NetworkConfig};

pub const MAGIC: &[u8; 8] = b"MFCKPT\0\0";
pub const VERSION: u32 = 1;

fn tensors(model: &ModelState) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut out: Vec<(String, Vec<usize>, &[f64])> = model
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.shape.clone(), p.value.as_slice()))
        .collect();
    for (name, bn) in model.norm_layers() {
        out.push((format!("{name}.running_mean"), vec![bn.channels], &bn.running_mean));
        out.push((format!("{name}.running_var"), vec![bn.channels], &bn.running_var));
    }
    out
}

/// Serialize a model to bytes.
pub fn encode(model: &ModelState) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config)
        .map_err(|e| Error::Config(format!("cannot encode config: {e}")))?;
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg);
    buf.extend_from_slice(&model.training_step.to_le_bytes());
    buf.extend_from_slice(&model.seed.to_le_bytes());
    let ts = tensors(model);
    buf.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for (name, shape, data) in ts {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for d in &shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse bytes produced by [`encode`]. `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let config: NetworkConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| Error::format(path, format!("bad config block: {e}")))?;
    let training_step = r.u64()?;
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut stored: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        stored.insert(name, (shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }

    let mut model = ModelState::build(config, seed)?;
    model.training_step = training_step;
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let (s, d) = stored
            .remove(name)
            .ok_or_else(|| Error::format(path, format!("missing tensor `{name}`")))?;
        if s != shape {
            return Err(Error::format(
                path,
                format!("tensor `{name}` has shape {s:?}, expected {shape:?}"),
            ));
        }
        Ok(d)
    };
    for (name, p) in model.named_params_mut() {
        p.value = take(&name, &p.shape)?;
        p.zero_grad();
    }
    for (name, bn) in model.norm_layers_mut() {
        bn.running_mean = take(&format!("{name}.running_mean"), &[bn.channels])?;
        bn.running_var = take(&format!("{name}.running_var"), &[bn.channels])?;
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor `{extra}`")));
    }
    Ok(model)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

/// Atomically write a checkpoint (write to a temporary, then rename).
pub fn save(model: &ModelState, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let tmp = temp_sibling(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
