//! Shared binary container used by every on-disk artifact.
//!
//! Layout (all integers little-endian):
//!
//! | offset      | size  | content                                   |
//! |-------------|-------|-------------------------------------------|
//! | 0           | 4     | magic (`QTM1`, `QTM8`, `QDS1`, `QCL1`)    |
//! | 4           | 8     | header length `H` as `u64`                |
//! | 12          | `H`   | UTF-8 JSON header                         |
//! | 12 + `H`    | rest  | payload: concatenated raw buffers         |
//!
//! Buffers are referenced from the header by [`BufferRef`], whose `offset`
//! is relative to the first payload byte. Buffers are packed in the order
//! they were written, with no padding.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER_OFFSET: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I8,
    I32,
    U64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::I8 => 1,
            DType::F32 | DType::I32 => 4,
            DType::U64 => 8,
        }
    }
}

/// Location of one raw buffer inside the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferRef {
    pub dtype: DType,
    pub offset: u64,
    /// Element count (not bytes).
    pub len: u64,
}

impl BufferRef {
    pub fn byte_len(&self) -> u64 {
        self.len * self.dtype.size() as u64
    }
}

#[derive(Debug, Default)]
pub struct PayloadWriter {
    bytes: Vec<u8>,
}

impl PayloadWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn start(&self, dtype: DType, len: usize) -> BufferRef {
        BufferRef { dtype, offset: self.bytes.len() as u64, len: len as u64 }
    }

    pub fn f32s(&mut self, data: &[f32]) -> BufferRef {
        let r = self.start(DType::F32, data.len());
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        r
    }

    pub fn i8s(&mut self, data: &[i8]) -> BufferRef {
        let r = self.start(DType::I8, data.len());
        self.bytes.extend(data.iter().map(|&v| v as u8));
        r
    }

    pub fn i32s(&mut self, data: &[i32]) -> BufferRef {
        let r = self.start(DType::I32, data.len());
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        r
    }

    pub fn u64s(&mut self, data: &[u64]) -> BufferRef {
        let r = self.start(DType::U64, data.len());
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        r
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// Bounds-checked view over a payload.
#[derive(Debug, Clone, Copy)]
pub struct Payload<'a> {
    bytes: &'a [u8],
}

impl<'a> Payload<'a> {
    fn slice(&self, r: &BufferRef, want: DType) -> Result<&'a [u8]> {
        if r.dtype != want {
            return Err(Error::Malformed(format!(
                "buffer dtype {:?}, expected {:?}",
                r.dtype, want
            )));
        }
        let start = usize::try_from(r.offset)
            .map_err(|_| Error::Malformed("buffer offset overflow".into()))?;
        let len = usize::try_from(r.byte_len())
            .map_err(|_| Error::Malformed("buffer length overflow".into()))?;
        let end = start
            .checked_add(len)
            .ok_or_else(|| Error::Malformed("buffer range overflow".into()))?;
        self.bytes.get(start..end).ok_or_else(|| {
            Error::Malformed(format!(
                "buffer [{start}, {end}) outside payload of {} bytes",
                self.bytes.len()
            ))
        })
    }

    pub fn f32s(&self, r: &BufferRef) -> Result<Vec<f32>> {
        Ok(self
            .slice(r, DType::F32)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn i8s(&self, r: &BufferRef) -> Result<Vec<i8>> {
        Ok(self.slice(r, DType::I8)?.iter().map(|&b| b as i8).collect())
    }

    pub fn i32s(&self, r: &BufferRef) -> Result<Vec<i32>> {
        Ok(self
            .slice(r, DType::I32)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn u64s(&self, r: &BufferRef) -> Result<Vec<u64>> {
        Ok(self
            .slice(r, DType::U64)?
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn encode<H: Serialize>(magic: &[u8; 4], header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(HEADER_OFFSET + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode<'a, H: DeserializeOwned>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(H, Payload<'a>)> {
    if bytes.len() < HEADER_OFFSET {
        return Err(Error::Malformed(format!("{} bytes is too short for a container", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(Error::Malformed(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let hend = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(HEADER_OFFSET))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Malformed(format!("header length {hlen} exceeds file")))?;
    let header = serde_json::from_slice(&bytes[HEADER_OFFSET..hend])?;
    Ok((header, Payload { bytes: &bytes[hend..] }))
}

pub fn write_file<H: Serialize>(path: &Path, magic: &[u8; 4], header: &H, payload: &[u8]) -> Result<()> {
    std::fs::write(path, encode(magic, header, payload)?)?;
    Ok(())
}
