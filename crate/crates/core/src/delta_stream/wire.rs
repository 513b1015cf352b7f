//! Delta frame layout (all integers little-endian):
//!
//! ```text
//! "ERDU" | format_version u32 = 1 | model_version u64 | sparse_count u32 | dense_count u32
//! sparse record: slot u16 | row u64 | width u16 | width × f32
//! dense record:  tensor u16 | len u32 | len × f32
//! CRC32 (IEEE) over every preceding byte
//! ```
//!
//! A sparse record's payload is the slot's embedding row followed by the
//! row's first-order weight, so `width = embedding_dim + 1`.

use super::DeltaError;

pub const MAGIC: &[u8; 4] = b"ERDU";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRecord {
    pub slot: u16,
    pub row: u64,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseRecord {
    pub tensor: u16,
    pub values: Vec<f32>,
}

/// Current values of every parameter changed during one period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaMessage {
    pub model_version: u64,
    pub sparse: Vec<SparseRecord>,
    pub dense: Vec<DenseRecord>,
}

impl DeltaMessage {
    pub fn is_empty(&self) -> bool {
        self.sparse.is_empty() && self.dense.is_empty()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        fn same(a: &[f32], b: &[f32]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.model_version == other.model_version
            && self.sparse.len() == other.sparse.len()
            && self.dense.len() == other.dense.len()
            && self
                .sparse
                .iter()
                .zip(&other.sparse)
                .all(|(a, b)| a.slot == b.slot && a.row == b.row && same(&a.values, &b.values))
            && self
                .dense
                .iter()
                .zip(&other.dense)
                .all(|(a, b)| a.tensor == b.tensor && same(&a.values, &b.values))
    }
}

pub fn encode_delta(msg: &DeltaMessage) -> Vec<u8> {
    let payload: usize = msg.sparse.iter().map(|r| 12 + 4 * r.values.len()).sum::<usize>()
        + msg.dense.iter().map(|r| 6 + 4 * r.values.len()).sum::<usize>();
    let mut out = Vec::with_capacity(HEADER_LEN + payload + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&msg.model_version.to_le_bytes());
    out.extend_from_slice(&(msg.sparse.len() as u32).to_le_bytes());
    out.extend_from_slice(&(msg.dense.len() as u32).to_le_bytes());
    for r in &msg.sparse {
        out.extend_from_slice(&r.slot.to_le_bytes());
        out.extend_from_slice(&r.row.to_le_bytes());
        out.extend_from_slice(&(r.values.len() as u16).to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for r in &msg.dense {
        out.extend_from_slice(&r.tensor.to_le_bytes());
        out.extend_from_slice(&(r.values.len() as u32).to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DeltaError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DeltaError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DeltaError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DeltaError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DeltaError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DeltaError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| DeltaError::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_delta(frame: &[u8]) -> Result<DeltaMessage, DeltaError> {
    if frame.len() < HEADER_LEN + 4 {
        return Err(DeltaError::Format(format!("frame too short ({} bytes)", frame.len())));
    }
    let (body, crc_bytes) = frame.split_at(frame.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if &body[..4] != MAGIC {
        return Err(DeltaError::Format("bad magic".into()));
    }
    if stored != computed {
        return Err(DeltaError::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(DeltaError::Format(format!("unsupported format version {version}")));
    }
    let model_version = r.u64()?;
    let sparse_count = r.u32()? as usize;
    let dense_count = r.u32()? as usize;
    // Each record needs at least 12 (sparse) or 6 (dense) bytes; reject
    // absurd counts before allocating.
    if sparse_count.saturating_mul(12).saturating_add(dense_count.saturating_mul(6)) > body.len() {
        return Err(DeltaError::Format("record counts exceed frame size".into()));
    }
    let mut sparse = Vec::with_capacity(sparse_count);
    for _ in 0..sparse_count {
        let slot = r.u16()?;
        let row = r.u64()?;
        let width = r.u16()? as usize;
        sparse.push(SparseRecord {
            slot,
            row,
            values: r.f32s(width)?,
        });
    }
    let mut dense = Vec::with_capacity(dense_count);
    for _ in 0..dense_count {
        let tensor = r.u16()?;
        let len = r.u32()? as usize;
        dense.push(DenseRecord {
            tensor,
            values: r.f32s(len)?,
        });
    }
    if r.pos != body.len() {
        return Err(DeltaError::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(DeltaMessage {
        model_version,
        sparse,
        dense,
    })
}
