//! Little-endian header and column codecs shared by the SNPF and SNPS files.

use crate::error::{Error, Result};

pub(crate) const HEADER_LEN: usize = 32;
pub(crate) const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub magic: [u8; 4],
    pub kind: u32,
    pub rows: u32,
    pub dim: u32,
    pub classes: u32,
    pub has_positions: bool,
    pub has_parts: bool,
}

impl Header {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.to_le_bytes());
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&self.classes.to_le_bytes());
        out.push(self.has_positions as u8);
        out.push(self.has_parts as u8);
        // padding up to the fixed header length
        out.extend_from_slice(&[0u8; 6]);
    }

    pub fn read(reader: &mut ByteReader<'_>, expected_magic: [u8; 4]) -> Result<Self> {
        let magic = reader.array::<4>()?;
        if magic != expected_magic {
            return Err(Error::BadMagic {
                expected: expected_magic,
                found: magic,
            });
        }
        let version = reader.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let kind = reader.u32()?;
        let rows = reader.u32()?;
        let dim = reader.u32()?;
        let classes = reader.u32()?;
        let flags = reader.array::<2>()?;
        reader.array::<6>()?;
        Ok(Header {
            magic,
            kind,
            rows,
            dim,
            classes,
            has_positions: flags[0] != 0,
            has_parts: flags[1] != 0,
        })
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn require(&self, len: usize) -> Result<()> {
        if self.remaining() < len {
            return Err(Error::TruncatedPayload {
                expected: self.pos + len,
                found: self.bytes.len(),
            });
        }
        Ok(())
    }

    pub fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        self.require(len)?;
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn i32s(&mut self, count: usize) -> Result<Vec<i32>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_i32(out: &mut Vec<u8>, value: i32) {
    out.extend_from_slice(&value.to_le_bytes());
}

pub(crate) fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::InvalidSet(format!("{what} {value} exceeds u32 range")))
}
