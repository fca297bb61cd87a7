//! The `MRDS` dataset container.
//!
//! Little-endian throughout. Integers are `u32`, depth and pose values `f32`.
//!
//! ```text
//! header (44 bytes)
//!   magic          4 bytes  "MRDS"
//!   version        u32      1
//!   count          u32      number of records
//!   resolution     u32      image side H = W
//!   joints         u32      J
//!   views          u32      V
//!   domains        u32      bit 0 synthetic, bit 1 real
//!   seed_lo        u32      generator seed, low word
//!   seed_hi        u32      generator seed, high word
//!   mm_per_pixel   f32
//!   depth_range_mm f32      depth offset that maps to +-1
//! record (count times, fixed size)
//!   id             u32      equals the record index
//!   split          u32      0 train, 1 test, 2 test (validation subset)
//!   label_rank     u32      position in the labeled order, 0xFFFFFFFF if not a training id
//!   pose           3J f32   view-0 camera frame, mm, relative to the view-0 crop center
//!   synthetic      V x H x W f32, row-major (present if domain bit 0)
//!   real           V x H x W f32, row-major (present if domain bit 1)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::pose::Pose;

pub const MAGIC: &[u8; 4] = b"MRDS";
pub const CONTAINER_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 44;
pub const NO_RANK: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    /// Test id that also belongs to the fixed validation subset.
    Validation,
}

impl Split {
    fn code(self) -> u32 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
            Split::Validation => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            2 => Some(Split::Validation),
            _ => None,
        }
    }

    pub fn is_test(self) -> bool {
        matches!(self, Split::Test | Split::Validation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainFlags(pub u32);

impl DomainFlags {
    pub const SYNTHETIC: DomainFlags = DomainFlags(1);
    pub const REAL: DomainFlags = DomainFlags(2);
    pub const BOTH: DomainFlags = DomainFlags(3);

    pub fn has_synthetic(self) -> bool {
        self.0 & 1 != 0
    }

    pub fn has_real(self) -> bool {
        self.0 & 2 != 0
    }

    fn count(self) -> usize {
        self.has_synthetic() as usize + self.has_real() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: u32,
    pub resolution: u32,
    pub joints: u32,
    pub views: u32,
    pub domains: DomainFlags,
    pub seed: u64,
    pub mm_per_pixel: f32,
    pub depth_range_mm: f32,
}

impl DatasetHeader {
    pub fn record_len(&self) -> usize {
        let px = (self.resolution * self.resolution) as usize;
        12 + 12 * self.joints as usize + self.domains.count() * self.views as usize * px * 4
    }
}

/// One correspondence id: its pose and its per-view images in each domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u32,
    pub split: Split,
    pub label_rank: u32,
    pose: Pose,
    pub synthetic: Vec<DepthImage>,
    pub real: Vec<DepthImage>,
}

impl Record {
    pub fn new(id: u32, split: Split, label_rank: u32, pose: Pose, synthetic: Vec<DepthImage>, real: Vec<DepthImage>) -> Self {
        Record { id, split, label_rank, pose, synthetic, real }
    }

    /// Direct pose access, bypassing the label guard.
    ///
    /// Training code must go through [`LabelGuard`](super::LabelGuard); this is for
    /// serialization, evaluation against test labels and offline analysis.
    pub fn pose_unguarded(&self) -> &Pose {
        &self.pose
    }
}

/// An in-memory dataset, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    header: DatasetHeader,
    records: Vec<Record>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f32(&mut self) -> f32 {
        f32::from_bits(self.u32())
    }

    fn f32s(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.f32()).collect()
    }
}

impl Dataset {
    pub fn new(header: DatasetHeader, records: Vec<Record>) -> Result<Self> {
        let ds = Dataset { header, records };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.count as usize != self.records.len() {
            return Err(Error::format("dataset", format!("header count {} but {} records", h.count, self.records.len())));
        }
        let res = h.resolution as usize;
        for (i, r) in self.records.iter().enumerate() {
            if r.id as usize != i {
                return Err(Error::format("dataset", format!("record {i} has id {}", r.id)));
            }
            if r.pose.joint_count() != h.joints as usize {
                return Err(Error::format("dataset", format!("record {i} has {} joints", r.pose.joint_count())));
            }
            for (present, imgs, name) in
                [(h.domains.has_synthetic(), &r.synthetic, "synthetic"), (h.domains.has_real(), &r.real, "real")]
            {
                let expected = if present { h.views as usize } else { 0 };
                if imgs.len() != expected || imgs.iter().any(|im| im.size() != res) {
                    return Err(Error::format("dataset", format!("record {i}: bad {name} views")));
                }
            }
        }
        Ok(())
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, id: u32) -> &Record {
        &self.records[id as usize]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.header.resolution as usize
    }

    pub fn joints(&self) -> usize {
        self.header.joints as usize
    }

    /// Millimeters per normalized pose unit.
    pub fn pose_scale_mm(&self) -> f64 {
        self.header.depth_range_mm as f64
    }

    pub fn ids_where(&self, pred: impl Fn(&Record) -> bool) -> Vec<u32> {
        self.records.iter().filter(|r| pred(r)).map(|r| r.id).collect()
    }

    pub fn train_ids(&self) -> Vec<u32> {
        self.ids_where(|r| r.split == Split::Train)
    }

    pub fn test_ids(&self) -> Vec<u32> {
        self.ids_where(|r| r.split.is_test())
    }

    pub fn validation_ids(&self) -> Vec<u32> {
        self.ids_where(|r| r.split == Split::Validation)
    }

    /// Training ids whose labeled rank is below `n`, in rank order.
    pub fn labeled_ids(&self, n: usize) -> Vec<u32> {
        let mut ids: Vec<(u32, u32)> = self
            .records
            .iter()
            .filter(|r| r.split == Split::Train && (r.label_rank as usize) < n)
            .map(|r| (r.label_rank, r.id))
            .collect();
        ids.sort_unstable();
        ids.into_iter().map(|(_, id)| id).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut buf = Vec::with_capacity(HEADER_LEN + self.records.len() * h.record_len());
        buf.extend_from_slice(MAGIC);
        for v in [h.version, h.count, h.resolution, h.joints, h.views, h.domains.0, h.seed as u32, (h.seed >> 32) as u32] {
            put_u32(&mut buf, v);
        }
        put_f32(&mut buf, h.mm_per_pixel);
        put_f32(&mut buf, h.depth_range_mm);
        for r in &self.records {
            put_u32(&mut buf, r.id);
            put_u32(&mut buf, r.split.code());
            put_u32(&mut buf, r.label_rank);
            for v in r.pose.flat() {
                put_f32(&mut buf, v as f32);
            }
            for img in r.synthetic.iter().chain(&r.real) {
                for &v in img.data() {
                    put_f32(&mut buf, v);
                }
            }
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_LEN || &buf[..4] != MAGIC {
            return Err(Error::format("dataset container", "missing MRDS magic"));
        }
        let mut rd = Reader { buf, pos: 4 };
        let version = rd.u32();
        if version != CONTAINER_VERSION {
            return Err(Error::format("dataset container", format!("unsupported version {version}")));
        }
        let (count, resolution, joints, views, domains) = (rd.u32(), rd.u32(), rd.u32(), rd.u32(), DomainFlags(rd.u32()));
        let seed = rd.u32() as u64 | (rd.u32() as u64) << 32;
        let (mm_per_pixel, depth_range_mm) = (rd.f32(), rd.f32());
        if domains.0 == 0 || domains.0 > 3 {
            return Err(Error::format("dataset container", format!("invalid domain flags {}", domains.0)));
        }
        let header = DatasetHeader { version, count, resolution, joints, views, domains, seed, mm_per_pixel, depth_range_mm };
        let expected = (count as u64) * header.record_len() as u64 + HEADER_LEN as u64;
        if buf.len() as u64 != expected {
            return Err(Error::format(
                "dataset container",
                format!("header declares {count} records ({expected} bytes) but file has {} bytes", buf.len()),
            ));
        }
        let res = resolution as usize;
        let px = res * res;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = rd.u32();
            let split_code = rd.u32();
            let split = Split::from_code(split_code)
                .ok_or_else(|| Error::format("dataset container", format!("record {id}: split code {split_code}")))?;
            let label_rank = rd.u32();
            let pose = Pose::from_flat(&rd.f32s(3 * joints as usize).into_iter().map(f64::from).collect::<Vec<_>>());
            let mut read_views = |present: bool| -> Vec<DepthImage> {
                if !present {
                    return Vec::new();
                }
                (0..views).map(|_| DepthImage::new(res, rd.f32s(px))).collect()
            };
            let synthetic = read_views(domains.has_synthetic());
            let real = read_views(domains.has_real());
            records.push(Record { id, split, label_rank, pose, synthetic, real });
        }
        Dataset::new(header, records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// SHA-256 of the encoded container, hex.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
