//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `MATC`, `u32` version, `u32` record count,
//! then per record: `u32` name length, UTF-8 name, `u8` dtype
//! (0 = f32, 1 = f64, 2 = u8, 3 = u64), `u32` rank, `u64` extents,
//! `u64` payload byte length, payload. Records are sorted by name.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Params;
use crate::scalar::{DType, Scalar};
use crate::tensor::{Adam, AdamState, Tensor};

pub const MAGIC: &[u8; 4] = b"MATC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl RecordData {
    fn code(&self) -> u8 {
        match self {
            RecordData::F32(_) => 0,
            RecordData::F64(_) => 1,
            RecordData::U8(_) => 2,
            RecordData::U64(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            RecordData::F32(v) => v.len(),
            RecordData::F64(v) => v.len(),
            RecordData::U8(v) => v.len(),
            RecordData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub shape: Vec<usize>,
    pub data: RecordData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub records: BTreeMap<String, Record>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        msg: msg.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| fmt_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: RecordData) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("checkpoint record", &[data.len()], shape));
        }
        self.records.insert(
            name.into(),
            Record {
                shape: shape.to_vec(),
                data,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records.get(name).ok_or_else(|| fmt_err(format!("missing record '{name}'")))
    }

    pub fn put_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let vals = t.to_f64_vec();
        let data = match T::DTYPE {
            DType::F32 => RecordData::F32(vals.iter().map(|&v| v as f32).collect()),
            DType::F64 => RecordData::F64(vals),
        };
        self.insert(name, t.shape(), data).expect("tensor extent matches");
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let r = self.get(name)?;
        let vals: Vec<T> = match (&r.data, T::DTYPE) {
            (RecordData::F32(v), DType::F32) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            (RecordData::F64(v), DType::F64) => v.iter().map(|&x| T::lit(x)).collect(),
            (other, want) => {
                return Err(fmt_err(format!(
                    "record '{name}' has dtype code {}, expected {:?}",
                    other.code(),
                    want
                )))
            }
        };
        Tensor::from_vec(vals, &r.shape)
    }

    pub fn put_u64(&mut self, name: impl Into<String>, v: u64) {
        self.insert(name, &[1], RecordData::U64(vec![v])).expect("one value");
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match &self.get(name)?.data {
            RecordData::U64(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(fmt_err(format!("record '{name}' is not a u64 scalar"))),
        }
    }

    pub fn put_bytes(&mut self, name: impl Into<String>, b: &[u8]) {
        self.insert(name, &[b.len()], RecordData::U8(b.to_vec())).expect("byte length");
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.data {
            RecordData::U8(v) => Ok(v),
            _ => Err(fmt_err(format!("record '{name}' is not a byte record"))),
        }
    }

    /// Stores every parameter of `m` under `prefix.`.
    pub fn put_params<T: Scalar>(&mut self, prefix: &str, m: &impl Params<T>) {
        m.visit(prefix, &mut |name, t| self.put_tensor(name, t));
    }

    /// Replaces every parameter of `m` with its stored value, as a fresh leaf.
    pub fn load_params<T: Scalar>(&self, prefix: &str, m: &mut impl Params<T>) -> Result<()> {
        let mut err = None;
        m.visit_mut(prefix, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match self.tensor::<T>(&name) {
                Ok(v) if v.shape() == t.shape() => *t = v.requires_grad_(true),
                Ok(v) => err = Some(Error::shape("checkpoint parameter", v.shape(), t.shape())),
                Err(e) => err = Some(e),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn put_adam<T: Scalar>(&mut self, prefix: &str, opt: &Adam<T>) {
        for (name, st) in &opt.states {
            let m = Tensor::from_vec(st.m.clone(), &st.shape).expect("state extent");
            let v = Tensor::from_vec(st.v.clone(), &st.shape).expect("state extent");
            self.put_tensor(format!("{prefix}.{name}.m"), &m);
            self.put_tensor(format!("{prefix}.{name}.v"), &v);
            self.put_u64(format!("{prefix}.{name}.t"), st.t);
        }
    }

    /// Restores the moment estimates stored by [`Checkpoint::put_adam`].
    pub fn load_adam<T: Scalar>(&self, prefix: &str, opt: &mut Adam<T>) -> Result<()> {
        opt.states.clear();
        let head = format!("{prefix}.");
        for key in self.records.keys() {
            let Some(rest) = key.strip_prefix(&head) else { continue };
            let Some(name) = rest.strip_suffix(".t") else { continue };
            let m = self.tensor::<T>(&format!("{head}{name}.m"))?;
            let v = self.tensor::<T>(&format!("{head}{name}.v"))?;
            opt.states.insert(
                name.to_string(),
                AdamState {
                    m: m.to_vec(),
                    v: v.to_vec(),
                    shape: m.shape().to_vec(),
                    t: self.u64(key)?,
                },
            );
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, r) in &self.records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(r.data.code());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &e in &r.shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            let mut payload = Vec::new();
            match &r.data {
                RecordData::F32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
                RecordData::F64(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
                RecordData::U8(v) => payload.extend_from_slice(v),
                RecordData::U64(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            }
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(fmt_err("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| fmt_err("record name is not UTF-8"))?
                .to_string();
            let code = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let len = r.u64()? as usize;
            let p = r.take(len)?;
            let (width, data) = match code {
                0 => (4, RecordData::F32(p.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())),
                1 => (8, RecordData::F64(p.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())),
                2 => (1, RecordData::U8(p.to_vec())),
                3 => (8, RecordData::U64(p.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())),
                other => return Err(fmt_err(format!("record '{name}' has unknown dtype {other}"))),
            };
            if !len.is_multiple_of(width) {
                return Err(fmt_err(format!("record '{name}' payload length {len} is not a multiple of {width}")));
            }
            ck.insert(name.clone(), &shape, data)
                .map_err(|_| fmt_err(format!("record '{name}' extent disagrees with its payload")))?;
        }
        if r.pos != buf.len() {
            return Err(fmt_err("trailing bytes after last record"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
