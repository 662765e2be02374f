//! Checkpoint serialization.
//!
//! Layout, all integers little-endian:
//!   magic "T2U1" | format version u32 | config echo (u32 length + UTF-8)
//!   | tensor count u32 | per tensor: name (u16 length + UTF-8), ndim u8,
//!   dims u32 each, then raw f32 data in row-major order.
//!
//! Tensors are enumerated from the model registry (parameters, then batch
//! norm running stats), so a checkpoint restores training-equivalent state,
//! not just weights. Loading is strict: unknown names, missing names, shape
//! mismatches, truncation, and trailing bytes are all errors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Registry;

const MAGIC: [u8; 4] = *b"T2U1";
const VERSION: u32 = 1;
const MAX_NDIM: usize = 8;
const MAX_NUMEL: usize = 1 << 28;
const MAX_ECHO: usize = 1 << 20;

pub fn save_checkpoint(path: &Path, config_echo: &str, reg: &Registry<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(config_echo.len() as u32).to_le_bytes())?;
    w.write_all(config_echo.as_bytes())?;
    let count = reg.all().count();
    w.write_all(&(count as u32).to_le_bytes())?;
    for (name, t) in reg.all() {
        assert!(name.len() <= u16::MAX as usize, "tensor name too long");
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        assert!(t.shape().len() <= MAX_NDIM, "tensor rank too high");
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.to_vec() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct CheckpointData {
    pub config_echo: String,
    /// (name, shape, values) in file order.
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl CheckpointData {
    /// Writes every stored tensor into the matching registry entry.
    /// The name sets must agree exactly.
    pub fn apply(&self, reg: &Registry<f32>) -> Result<()> {
        let by_name: HashMap<&str, usize> = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, (n, _, _))| (n.as_str(), i))
            .collect();
        let expected = reg.all().count();
        if self.tensors.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {} tensors, model has {expected}",
                self.tensors.len()
            )));
        }
        for (name, t) in reg.all() {
            let Some(&i) = by_name.get(name.as_str()) else {
                return Err(Error::Checkpoint(format!("checkpoint lacks tensor {name}")));
            };
            let (_, shape, values) = &self.tensors[i];
            if shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: checkpoint shape {shape:?}, model shape {:?}",
                    t.shape()
                )));
            }
            t.set_data(values.clone());
        }
        Ok(())
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == ErrorKind::UnexpectedEof {
                Error::Checkpoint("truncated checkpoint file".into())
            } else {
                Error::Io(e)
            }
        })
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn utf8(&mut self, len: usize) -> Result<String> {
        let mut b = vec![0u8; len];
        self.fill(&mut b)?;
        String::from_utf8(b).map_err(|_| Error::Checkpoint("non-UTF-8 text field".into()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let mut magic = [0u8; 4];
    r.fill(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let echo_len = r.u32()? as usize;
    if echo_len > MAX_ECHO {
        return Err(Error::Checkpoint(format!("config echo length {echo_len} unreasonable")));
    }
    let config_echo = r.utf8(echo_len)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    let mut seen = HashMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.utf8(name_len)?;
        if seen.insert(name.clone(), ()).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        let ndim = r.u8()? as usize;
        if ndim > MAX_NDIM {
            return Err(Error::Checkpoint(format!("tensor {name}: rank {ndim} unreasonable")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= MAX_NUMEL)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: shape {shape:?} unreasonable")))?;
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.fill(&mut buf)?;
            values.push(f32::from_le_bytes(buf));
        }
        tensors.push((name, shape, values));
    }
    let mut probe = [0u8; 1];
    match r.inner.read_exact(&mut probe) {
        Ok(()) => Err(Error::Checkpoint("trailing bytes after last tensor".into())),
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => Ok(CheckpointData { config_echo, tensors }),
        Err(e) => Err(Error::Io(e)),
    }
}
