//! Versioned binary container used for network checkpoints, agent and ensemble
//! checkpoints, and replay snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes   b"BEXC"
//! version  u16       currently 1
//! kind     u16 len + UTF-8 bytes   ("mlp", "agent", "ensemble", "replay", ...)
//! count    u32       number of entries
//! entry*   u16 name len + UTF-8 name
//!          u8  tag   0 = f64 array, 1 = u64 array, 2 = UTF-8 string
//!          u64 length (elements for arrays, bytes for strings)
//!          payload   f64 as IEEE-754 bits, u64 raw, string bytes
//! ```
//!
//! Entries keep insertion order. f64 values are stored bit-exactly.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BEXC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    kind: String,
    entries: Vec<(String, Value)>,
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "container",
        reason: reason.into(),
    }
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn entries(&self) -> &[(String, Value)] {
        &self.entries
    }

    pub fn push(&mut self, name: impl Into<String>, value: Value) {
        self.entries.push((name.into(), value));
    }

    pub fn push_f64(&mut self, name: impl Into<String>, values: &[f64]) {
        self.push(name, Value::F64(values.to_vec()));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, values: &[u64]) {
        self.push(name, Value::U64(values.to_vec()));
    }

    pub fn push_str(&mut self, name: impl Into<String>, value: &str) {
        self.push(name, Value::Str(value.to_string()));
    }

    fn get(&self, name: &str) -> Result<&Value> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| malformed(format!("missing entry `{name}`")))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            Value::F64(v) => Ok(v),
            _ => Err(malformed(format!("entry `{name}` is not an f64 array"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Value::U64(v) => Ok(v),
            _ => Err(malformed(format!("entry `{name}` is not a u64 array"))),
        }
    }

    pub fn str(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Value::Str(v) => Ok(v),
            _ => Err(malformed(format!("entry `{name}` is not a string"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_name(&mut out, &self.kind);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, value) in &self.entries {
            write_name(&mut out, name);
            match value {
                Value::F64(v) => {
                    out.push(0);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_bits().to_le_bytes());
                    }
                }
                Value::U64(v) => {
                    out.push(1);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Value::Str(s) => {
                    out.push(2);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(malformed("bad magic header"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(malformed(format!("unsupported version {version}")));
        }
        let kind = r.name()?;
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.name()?;
            let tag = r.take(1)?[0];
            let len = usize::try_from(u64::from_le_bytes(r.array()?))
                .map_err(|_| malformed("length overflow"))?;
            let value = match tag {
                0 => Value::F64(
                    (0..len)
                        .map(|_| r.array().map(|b| f64::from_bits(u64::from_le_bytes(b))))
                        .collect::<Result<_>>()?,
                ),
                1 => Value::U64(
                    (0..len)
                        .map(|_| r.array().map(u64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                2 => Value::Str(
                    String::from_utf8(r.take(len)?.to_vec())
                        .map_err(|_| malformed("string entry is not UTF-8"))?,
                ),
                t => return Err(malformed(format!("unknown tag {t}"))),
            };
            entries.push((name, value));
        }
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes"));
        }
        Ok(Self { kind, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless this container was written with the given kind tag.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(malformed(format!("expected a `{kind}` container, found `{}`", self.kind)))
        }
    }
}

fn write_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed("unexpected end of data"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        buf.copy_from_slice(self.take(N)?);
        Ok(buf)
    }

    fn name(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| malformed("name is not UTF-8"))
    }
}
