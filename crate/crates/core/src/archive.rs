//! TARC tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TARC" | version: u32 | count: u32
//! per tensor:
//!   name_len: u32 | name: UTF-8 | dtype: u8 (0 = f32, 1 = f64) | ndim: u8
//!   dims: ndim x u64 | payload: row-major, little-endian elements
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, DenseTensor, Element};

pub const MAGIC: &[u8; 4] = b"TARC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(DenseTensor<f32>),
    F64(DenseTensor<f64>),
}

impl From<DenseTensor<f32>> for AnyTensor {
    fn from(t: DenseTensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<DenseTensor<f64>> for AnyTensor {
    fn from(t: DenseTensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

impl AnyTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AnyTensor::F32(t) => t.len(),
            AnyTensor::F64(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact widening for `f32`, a copy for `f64`.
    pub fn to_f64(&self) -> DenseTensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.clone(),
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, AnyTensor)>,
}

impl Archive {
    pub fn push(&mut self, name: impl Into<String>, tensor: impl Into<AnyTensor>) {
        self.entries.push((name.into(), tensor.into()));
    }

    /// Replaces the tensor called `name`, appending it when absent.
    pub fn replace(&mut self, name: &str, tensor: impl Into<AnyTensor>) {
        let tensor = tensor.into();
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name.to_string(), tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_f64(&self, name: &str) -> Result<DenseTensor<f64>> {
        self.get(name)
            .map(AnyTensor::to_f64)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &AnyTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of stored scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Format("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in &self.entries {
            let name_len = u32::try_from(name.len())
                .map_err(|_| Error::Format(format!("name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.dtype().code());
            let ndim = u8::try_from(tensor.dims().len())
                .map_err(|_| Error::Format(format!("{name}: more than 255 modes")))?;
            out.push(ndim);
            for &d in tensor.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match tensor {
                AnyTensor::F32(t) => write_payload(t, &mut out),
                AnyTensor::F64(t) => write_payload(t, &mut out),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("missing TARC magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut archive = Archive::default();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let code = cur.take(1)?[0];
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::Format(format!("{name}: unknown dtype byte {code}")))?;
            let ndim = cur.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
                dims.push(
                    usize::try_from(d)
                        .map_err(|_| Error::Format(format!("{name}: dim {d} too large")))?,
                );
            }
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: shape overflows")))?;
            let payload = cur.take(
                count
                    .checked_mul(dtype.size_of())
                    .ok_or_else(|| Error::Format(format!("{name}: payload overflows")))?,
            )?;
            let tensor = match dtype {
                DType::F32 => AnyTensor::F32(read_payload(dims, payload)?),
                DType::F64 => AnyTensor::F64(read_payload(dims, payload)?),
            };
            archive.entries.push((name, tensor));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - cur.pos
            )));
        }
        Ok(archive)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_payload<T: Element>(t: &DenseTensor<T>, out: &mut Vec<u8>) {
    out.reserve(t.len() * T::DTYPE.size_of());
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_payload<T: Element>(dims: Vec<usize>, payload: &[u8]) -> Result<DenseTensor<T>> {
    let data = payload
        .chunks_exact(T::DTYPE.size_of())
        .map(T::read_le)
        .collect();
    DenseTensor::new(dims, data)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of archive".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
