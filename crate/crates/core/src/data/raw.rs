//! Little-endian raw tensor and label files.
//!
//! Tensor file: magic `CDT1`, dtype `u8` (0 = f32, 1 = u8 pixels scaled by
//! 1/255 on read), rank `u8`, each dim as `u32`, then the payload.
//! Label file: magic `CDL1`, count `u32`, then labels as `u16`.

use thiserror::Error;

use crate::tensor::{Tensor, MAX_RANK};

pub const TENSOR_MAGIC: &[u8; 4] = b"CDT1";
pub const LABEL_MAGIC: &[u8; 4] = b"CDL1";
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_U8: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("truncated {what}: needed {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported rank {0}")]
    BadRank(u8),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("label {label} at index {index} is outside [0, {num_classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("image tensor must be N x C x H x W, got shape {0:?}")]
    NotImages(Vec<usize>),
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("pixel value {value} at offset {offset} is outside [0, 1]")]
    PixelOutOfRange { offset: usize, value: f32 },
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                what: self.what,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: *expected,
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Byte length of the f32 encoding of a tensor with this shape.
pub fn encoded_tensor_len(shape: &[usize]) -> usize {
    4 + 1 + 1 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn encode_tensor(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one tensor from the front of `buf`, returning it and the bytes consumed.
pub fn decode_tensor(buf: &[u8]) -> Result<(Tensor<f32>, usize), FormatError> {
    let mut r = Reader::new(buf, "tensor");
    r.magic(TENSOR_MAGIC)?;
    let dtype = r.u8()?;
    let rank = r.u8()?;
    if rank as usize > MAX_RANK {
        return Err(FormatError::BadRank(rank));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(FormatError::Truncated {
            what: "tensor",
            needed: usize::MAX,
            available: r.remaining(),
        })?;
    let data: Vec<f32> = match dtype {
        DTYPE_F32 => {
            let bytes = r.take(numel.saturating_mul(4))?;
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        DTYPE_U8 => r.take(numel)?.iter().map(|&b| b as f32 / 255.0).collect(),
        other => return Err(FormatError::UnsupportedDtype(other)),
    };
    let t = Tensor::new(shape, data).expect("length checked against shape");
    Ok((t, r.position()))
}

pub fn encode_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 2 * labels.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for &l in labels {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    out
}

pub fn decode_labels(buf: &[u8]) -> Result<Vec<usize>, FormatError> {
    let mut r = Reader::new(buf, "labels");
    r.magic(LABEL_MAGIC)?;
    let n = r.u32()? as usize;
    let mut labels = Vec::with_capacity(n.min(buf.len()));
    for _ in 0..n {
        labels.push(r.u16()? as usize);
    }
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    Ok(labels)
}
