//! Binary checkpoint: magic `DUET2x01`, u32 version, length-prefixed config
//! text, u32 parameter count, then for each parameter a u16-prefixed name,
//! u8 rank, u32 dims and little-endian f32 values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::duet::DuetV2;
use crate::error::{Error, Result};
use crate::ndgrad::{ParamSet, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DUET2x01";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(model: &DuetV2<T>, mut out: W) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = model.config().to_text();
    out.write_all(&(cfg.len() as u32).to_le_bytes())?;
    out.write_all(cfg.as_bytes())?;
    out.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for p in model.params().iter() {
        out.write_all(&(p.name.len() as u16).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&[p.value.rank() as u8])?;
        for &d in p.value.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.value.data() {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn save_checkpoint<T: Scalar>(model: &DuetV2<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source_name: &'a str,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Binary {
            source_name: self.source_name.to_string(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let start = self.pos;
        let b = self.take(n, what)?;
        std::str::from_utf8(b).map_err(|_| {
            self.pos = start;
            self.error(format!("{what} is not UTF-8"))
        })
    }
}

/// Parses a checkpoint from memory. Nothing is returned unless the whole
/// file is valid.
pub fn parse_checkpoint(bytes: &[u8], source_name: &str) -> Result<DuetV2<f32>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        source_name,
    };
    if c.take(8, "magic")? != CHECKPOINT_MAGIC {
        c.pos = 0;
        return Err(c.error("bad magic, not a checkpoint"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        c.pos -= 4;
        return Err(c.error(format!("unsupported version {version}")));
    }
    let cfg_len = c.u32("config length")? as usize;
    let cfg_start = c.pos;
    let cfg_text = c.utf8(cfg_len, "config block")?;
    let config = match ModelConfig::from_text(cfg_text) {
        Ok(cfg) => cfg,
        Err(e) => {
            c.pos = cfg_start;
            return Err(c.error(e.to_string()));
        }
    };
    let count = c.u32("parameter count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = c.u16("parameter name length")? as usize;
        let name = c.utf8(name_len, "parameter name")?.to_string();
        let rank = c.u8("rank")? as usize;
        if rank == 0 {
            c.pos -= 1;
            return Err(c.error(format!("parameter {name:?} has rank 0")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n > 0 && n.checked_mul(4).is_some())
            .ok_or_else(|| c.error(format!("parameter {name:?} has invalid shape {shape:?}")))?;
        let raw = c.take(numel * 4, &format!("values of {name:?}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params
            .add(name, Tensor::new(shape, data)?)
            .map_err(|e| c.error(e.to_string()))?;
    }
    if c.pos != bytes.len() {
        return Err(c.error(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    DuetV2::from_params(config, params)
}

pub fn read_checkpoint<R: Read>(mut reader: R, source_name: &str) -> Result<DuetV2<f32>> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(source_name, e))?;
    parse_checkpoint(&bytes, source_name)
}

pub fn load_checkpoint(path: &Path) -> Result<DuetV2<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, &path.display().to_string())
}

/// Loads a checkpoint and checks it was trained for a vocabulary of
/// `vocab_size` ids.
pub fn load_checkpoint_for(path: &Path, vocab_size: usize) -> Result<DuetV2<f32>> {
    let model = load_checkpoint(path)?;
    if model.config().vocab_size != vocab_size {
        return Err(Error::ConfigMismatch(format!(
            "{}: model has vocab_size {}, vocabulary has {vocab_size} ids",
            path.display(),
            model.config().vocab_size
        )));
    }
    Ok(model)
}
