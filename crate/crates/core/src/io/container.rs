//! Minimal binary container for named rasters.
//!
//! Layout, all integers little-endian:
//! `b"DKRC"`, `u32` version, `u32` record count, then per record
//! `u16` name length, UTF-8 name, `u8` role, `u8` scalar width (4 or 8),
//! `u8` rank, `u64` per dimension; then every payload in record order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"DKRC";
pub const CONTAINER_VERSION: u32 = 1;
const MAX_RANK: usize = 8;
const WHAT: &str = "raster container";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Feature,
    SelfAttention,
    CrossAttention,
    Pooled,
    Parameter,
    Other,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Feature => 0,
            Role::SelfAttention => 1,
            Role::CrossAttention => 2,
            Role::Pooled => 3,
            Role::Parameter => 4,
            Role::Other => 255,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Role::Feature,
            1 => Role::SelfAttention,
            2 => Role::CrossAttention,
            3 => Role::Pooled,
            4 => Role::Parameter,
            255 => Role::Other,
            t => return Err(Error::malformed(WHAT, format!("unknown role tag {t}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    fn width(&self) -> u8 {
        match self {
            Payload::F32(_) => 4,
            Payload::F64(_) => 8,
        }
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bits_eq(&self, other: &Payload) -> bool {
        match (self, other) {
            (Payload::F32(a), Payload::F32(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Payload::F64(a), Payload::F64(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn new(name: impl Into<String>, role: Role, shape: Vec<usize>, payload: Payload) -> Result<Self> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::invalid("record name is too long"));
        }
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::invalid(format!("record {name}: rank {} outside 1..={MAX_RANK}", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != payload.len() {
            return Err(Error::shape("record", format!("{name}: shape {shape:?} holds {n} values, payload has {}", payload.len())));
        }
        Ok(Record { name, role, shape, payload })
    }

    pub fn from_tensor<T: Scalar>(name: impl Into<String>, role: Role, t: &Tensor<T>) -> Result<Self> {
        let payload = if T::WIDTH == 4 {
            Payload::F32(t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())
        } else {
            Payload::F64(t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        };
        Record::new(name, role, t.shape().to_vec(), payload)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Payload::F64(v) => v.clone(),
        };
        Tensor::new(self.shape.clone(), data)
    }

    pub fn bits_eq(&self, other: &Record) -> bool {
        self.name == other.name && self.role == other.role && self.shape == other.shape && self.payload.bits_eq(&other.payload)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RasterContainer {
    pub records: Vec<Record>,
}

impl RasterContainer {
    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn bits_eq(&self, other: &RasterContainer) -> bool {
        self.records.len() == other.records.len() && self.records.iter().zip(&other.records).all(|(a, b)| a.bits_eq(b))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.records.len()).map_err(|_| Error::invalid("too many records"))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.role.tag());
            out.push(r.payload.width());
            out.push(r.shape.len() as u8);
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for r in &self.records {
            match &r.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::malformed(WHAT, "bad magic"));
        }
        let version = r.u32("version")?;
        if version != CONTAINER_VERSION {
            return Err(Error::Unsupported {
                path: Default::default(),
                detail: format!("container version {version}, expected {CONTAINER_VERSION}"),
            });
        }
        let count = r.u32("record count")? as usize;
        let mut table = Vec::new();
        for i in 0..count {
            let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::malformed(WHAT, format!("record {i} name is not UTF-8")))?
                .to_string();
            let head = r.take(3, "record header")?;
            let role = Role::from_tag(head[0])?;
            let width = head[1];
            if width != 4 && width != 8 {
                return Err(Error::malformed(WHAT, format!("record {name}: scalar width {width}")));
            }
            let rank = head[2] as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(Error::malformed(WHAT, format!("record {name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8, "dimension")?.try_into().expect("8 bytes"));
                let d = usize::try_from(d).map_err(|_| Error::malformed(WHAT, format!("record {name}: dimension {d}")))?;
                n = n.checked_mul(d).ok_or_else(|| Error::malformed(WHAT, format!("record {name}: shape overflows")))?;
                shape.push(d);
            }
            n.checked_mul(width as usize).ok_or_else(|| Error::malformed(WHAT, format!("record {name}: payload overflows")))?;
            table.push((name, role, width, shape, n));
        }
        let mut records = Vec::with_capacity(table.len());
        for (name, role, width, shape, n) in table {
            let raw = r.take(n * width as usize, "payload")?;
            let payload = if width == 4 {
                Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
            } else {
                Payload::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
            };
            records.push(Record { name, role, shape, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed(WHAT, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(RasterContainer { records })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::malformed(WHAT, format!("truncated while reading the {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_container(path: impl AsRef<Path>) -> Result<RasterContainer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    RasterContainer::decode(&bytes).map_err(|e| match e {
        Error::Unsupported { detail, .. } => Error::Unsupported { path: path.to_path_buf(), detail },
        other => other,
    })
}

pub fn write_container(c: &RasterContainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, c.encode()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
