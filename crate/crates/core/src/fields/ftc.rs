//! FTC1 tensor container.
//!
//! Layout (little-endian, no padding): magic `FTC1`, u32 entry count, then
//! per entry: u16 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64),
//! u8 rank, rank × u64 extents, row-major payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensorcore::{DType, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"FTC1";

#[derive(Clone, Debug, PartialEq)]
pub enum FtcData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl FtcData {
    pub fn len(&self) -> usize {
        match self {
            FtcData::F32(v) => v.len(),
            FtcData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            FtcData::F32(_) => DType::F32,
            FtcData::F64(_) => DType::F64,
        }
    }
}

/// One named array.
#[derive(Clone, Debug, PartialEq)]
pub struct FtcEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: FtcData,
}

impl FtcEntry {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => FtcData::F32(t.data().iter().map(|v| v.f64() as f32).collect()),
            DType::F64 => FtcData::F64(t.data().iter().map(|v| v.f64()).collect()),
        };
        FtcEntry {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        FtcEntry {
            name: name.into(),
            shape,
            data: FtcData::F64(data),
        }
    }

    /// Values converted to `T`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.data {
            FtcData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            FtcData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        };
        Tensor::new(self.shape.clone(), data)
    }

    pub fn values_f64(&self) -> Vec<f64> {
        match &self.data {
            FtcData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            FtcData::F64(v) => v.clone(),
        }
    }
}

/// Serialized size of `entries` in bytes.
pub fn encoded_len(entries: &[FtcEntry]) -> usize {
    8 + entries
        .iter()
        .map(|e| {
            let elem = match e.data {
                FtcData::F32(_) => 4,
                FtcData::F64(_) => 8,
            };
            2 + e.name.len() + 2 + 8 * e.shape.len() + elem * e.data.len()
        })
        .sum::<usize>()
}

fn validate_entry(e: &FtcEntry) -> Result<()> {
    if e.name.len() > u16::MAX as usize {
        return Err(Error::Format(format!("entry name too long ({} bytes)", e.name.len())));
    }
    if e.shape.len() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} exceeds 255", e.shape.len())));
    }
    let numel = crate::tensorcore::checked_numel_pub(&e.shape)
        .ok_or_else(|| Error::Format(format!("extent overflow in {:?}", e.shape)))?;
    if numel != e.data.len() {
        return Err(Error::Format(format!(
            "entry {:?}: shape {:?} needs {numel} values, has {}",
            e.name,
            e.shape,
            e.data.len()
        )));
    }
    Ok(())
}

pub fn encode(entries: &[FtcEntry]) -> Result<Vec<u8>> {
    if entries.len() > u32::MAX as usize {
        return Err(Error::Format("too many entries".into()));
    }
    let mut out = Vec::with_capacity(encoded_len(entries));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        validate_entry(e)?;
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.data.dtype() as u8);
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &e.data {
            FtcData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            FtcData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file: need {n} bytes for {what} at offset {}, {} available",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<FtcEntry>> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"FTC1\"")));
    }
    let count = c.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for idx in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("entry {idx}: name is not UTF-8")))?
            .to_owned();
        let dtype = c.u8("dtype")?;
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = c.u64("extent")?;
            shape.push(usize::try_from(d).map_err(|_| {
                Error::Format(format!("entry {name:?}: extent {d} overflows usize"))
            })?);
        }
        let numel = crate::tensorcore::checked_numel_pub(&shape)
            .ok_or_else(|| Error::Format(format!("entry {name:?}: extent overflow in {shape:?}")))?;
        let elem = match dtype {
            0 => 4,
            1 => 8,
            other => return Err(Error::Format(format!("entry {name:?}: unknown dtype {other}"))),
        };
        let bytes = numel
            .checked_mul(elem)
            .ok_or_else(|| Error::Format(format!("entry {name:?}: payload size overflow")))?;
        let payload = c.take(bytes, "payload")?;
        let data = if dtype == 0 {
            FtcData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            )
        } else {
            FtcData::F64(
                payload
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            )
        };
        entries.push(FtcEntry { name, shape, data });
    }
    if c.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last entry",
            buf.len() - c.pos
        )));
    }
    Ok(entries)
}

pub fn write_ftc(mut w: impl Write, entries: &[FtcEntry]) -> std::io::Result<()> {
    let bytes = encode(entries).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    w.write_all(&bytes)
}

pub fn read_ftc(mut r: impl Read) -> Result<Vec<FtcEntry>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<reader>", e))?;
    decode(&buf)
}

/// Atomically write `entries` to `path`.
pub fn save_ftc(path: &Path, entries: &[FtcEntry]) -> Result<()> {
    super::write_atomic(path, &encode(entries)?)
}

pub fn load_ftc(path: &Path) -> Result<Vec<FtcEntry>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

/// Find an entry by name.
pub fn find<'a>(entries: &'a [FtcEntry], name: &str) -> Result<&'a FtcEntry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Data(format!("FTC1 file has no entry named {name:?}")))
}
