//! The `MRCK` checkpoint file.
//!
//! Little-endian. Strings are a `u32` byte length followed by UTF-8 bytes.
//!
//! ```text
//! magic        4 bytes  "MRCK"
//! version      u32      1
//! counters     u32      count, then per counter: name string, u64 value
//! entries      u32      count, then per entry (the manifest):
//!                         net string, layer string, kind u32
//!                         (0 param, 1 buffer, 2 adam first moment, 3 adam second moment),
//!                         rank u32, rank x u32 dims
//! floats       u64      total number of f32 values that follow
//! data         f32 x floats, entries concatenated in manifest order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use latentmap_autodiff::Real;

use super::store::{Net, ParamStore, Role};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

impl EntryKind {
    fn code(self) -> u32 {
        match self {
            EntryKind::Param => 0,
            EntryKind::Buffer => 1,
            EntryKind::AdamM => 2,
            EntryKind::AdamV => 3,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        [EntryKind::Param, EntryKind::Buffer, EntryKind::AdamM, EntryKind::AdamV].into_iter().find(|k| k.code() == c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub net: String,
    pub layer: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub counters: BTreeMap<String, u64>,
    pub entries: Vec<CheckpointEntry>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint", "name is not UTF-8"))
    }
}

impl Checkpoint {
    /// Snapshot of every parameter and buffer in `store`, stored as `f32`.
    pub fn from_store<T: Real>(store: &ParamStore<T>) -> Self {
        let entries = store
            .entries()
            .iter()
            .map(|e| CheckpointEntry {
                net: e.net.name().to_string(),
                layer: e.name.clone(),
                kind: if e.role == Role::Param { EntryKind::Param } else { EntryKind::Buffer },
                shape: e.shape.clone(),
                data: e.values.iter().map(|v| Real::to_f64(*v) as f32).collect(),
            })
            .collect();
        Checkpoint { counters: BTreeMap::new(), entries }
    }

    /// Restores parameters and buffers into a store with the same layout.
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let saved: Vec<&CheckpointEntry> =
            self.entries.iter().filter(|e| matches!(e.kind, EntryKind::Param | EntryKind::Buffer)).collect();
        if saved.len() != store.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} parameter tensors saved, model has {}", saved.len(), store.len()),
            ));
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, e) in ids.into_iter().zip(saved) {
            let have = store.entry(id);
            let role_ok = (have.role == Role::Param) == (e.kind == EntryKind::Param);
            if have.net.name() != e.net || have.name != e.layer || have.shape != e.shape || !role_ok {
                return Err(Error::format(
                    "checkpoint",
                    format!("entry {}.{} {:?} does not match model {}.{} {:?}", e.net, e.layer, e.shape, have.net, have.name, have.shape),
                ));
            }
            for (v, &d) in store.values_mut(id).iter_mut().zip(&e.data) {
                *v = T::from_f64(d as f64);
            }
        }
        Ok(())
    }

    pub fn entries_of(&self, kind: EntryKind) -> impl Iterator<Item = &CheckpointEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn counter(&self, name: &str) -> Option<u64> {
        self.counters.get(name).copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.counters.len() as u32).to_le_bytes());
        for (k, v) in &self.counters {
            put_str(&mut buf, k);
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut buf, &e.net);
            put_str(&mut buf, &e.layer);
            buf.extend_from_slice(&e.kind.code().to_le_bytes());
            buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        let total: usize = self.entries.iter().map(|e| e.data.len()).sum();
        buf.extend_from_slice(&(total as u64).to_le_bytes());
        for e in &self.entries {
            for v in &e.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "missing MRCK magic"));
        }
        let mut rd = Reader { buf, pos: 4 };
        let version = rd.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let mut counters = BTreeMap::new();
        for _ in 0..rd.u32()? {
            let k = rd.string()?;
            counters.insert(k, rd.u64()?);
        }
        let n = rd.u32()? as usize;
        let mut manifest = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let net = rd.string()?;
            if Net::from_name(&net).is_none() {
                return Err(Error::format("checkpoint", format!("unknown network {net:?}")));
            }
            let layer = rd.string()?;
            let code = rd.u32()?;
            let kind = EntryKind::from_code(code).ok_or_else(|| Error::format("checkpoint", format!("entry kind {code}")))?;
            let rank = rd.u32()? as usize;
            let shape = (0..rank).map(|_| rd.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            manifest.push((net, layer, kind, shape));
        }
        let declared = rd.u64()?;
        let expected: u64 = manifest.iter().map(|m| m.3.iter().product::<usize>() as u64).sum();
        let remaining = (buf.len() - rd.pos) as u64;
        if declared != expected || remaining != expected * 4 {
            return Err(Error::format(
                "checkpoint",
                format!("manifest needs {expected} floats, header declares {declared}, file holds {} bytes of data", remaining),
            ));
        }
        let entries = manifest
            .into_iter()
            .map(|(net, layer, kind, shape)| {
                let len = shape.iter().product::<usize>();
                let data = rd.take(len * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Ok(CheckpointEntry { net, layer, kind, shape, data })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint { counters, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
