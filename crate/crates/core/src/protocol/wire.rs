//! Little-endian message layout.
//!
//! Every message starts with `CDM1`, a version byte and a message-type byte.
//!
//! Seed batch: client `u32`, entry count `u32`, then `(t: u32, alpha: u64)`
//! per entry with `t` strictly increasing.
//!
//! Payload: client `u32`, num_classes `u32`, embedding_dim `u32`, synthetic
//! length `u64`, the synthetic set bytes, round count `u32`, then per round
//! `t: u32` and a presence mask of `ceil(num_classes / 8)` bytes (bit `y % 8`
//! of byte `y / 8`), followed for each present class in ascending order by
//! the real batch size `u32` and `embedding_dim` f32 mean values.

use thiserror::Error;

use crate::data::FormatError;
use crate::distill::SyntheticSet;

use super::schedule::SeedBatch;

pub const WIRE_MAGIC: &[u8; 4] = b"CDM1";
pub const WIRE_VERSION: u8 = 1;
pub const SEED_BATCH_HEADER_BYTES: usize = 6 + 4 + 4;
pub const PAYLOAD_HEADER_BYTES: usize = 6 + 4 + 4 + 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    SeedBatch = 1,
    Payload = 2,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("expected message type {expected}, found {found}")]
    WrongMessageType { expected: u8, found: u8 },
    #[error("truncated message: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("round {t} follows round {previous}: rounds must be strictly increasing")]
    DuplicateRound { previous: u32, t: u32 },
    #[error("presence mask for round {t} sets bits beyond class count {num_classes}")]
    MaskPadding { t: u32, num_classes: u32 },
    #[error("round {t} class {class}: present mean with zero batch size")]
    EmptyBatch { t: u32, class: usize },
    #[error("synthetic set holds {synthetic} classes, header says {header}")]
    ClassCountMismatch { header: u32, synthetic: usize },
    #[error("synthetic set length {declared} disagrees with its encoding ({actual})")]
    SyntheticLength { declared: u64, actual: usize },
    #[error("synthetic set: {0}")]
    Synthetic(#[from] FormatError),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

/// One present class mean: the real batch size it came from and the vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMean {
    pub batch_size: u32,
    pub mean: Vec<f32>,
}

/// `L_{t,k}` for one round: `None` where the client had no examples.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMeans {
    pub t: u32,
    pub per_class: Vec<Option<ClassMean>>,
}

impl RoundMeans {
    pub fn present(&self) -> usize {
        self.per_class.iter().filter(|m| m.is_some()).count()
    }
}

/// The uplink `(S_k, L_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPayload {
    pub client: u32,
    pub embedding_dim: u32,
    pub synthetic: SyntheticSet<f32>,
    pub rounds: Vec<RoundMeans>,
}

impl ClientPayload {
    pub fn num_classes(&self) -> usize {
        self.synthetic.num_classes()
    }

    pub fn present_means(&self) -> usize {
        self.rounds.iter().map(RoundMeans::present).sum()
    }

    pub fn round(&self, t: u32) -> Option<&RoundMeans> {
        self.rounds
            .binary_search_by_key(&t, |r| r.t)
            .ok()
            .map(|i| &self.rounds[i])
    }

    /// Exact encoded size.
    pub fn encoded_len(&self) -> usize {
        payload_bytes(
            self.rounds.len(),
            self.num_classes(),
            self.embedding_dim as usize,
            self.synthetic.encoded_len(),
            self.present_means(),
        )
    }
}

fn mask_bytes(num_classes: usize) -> usize {
    num_classes.div_ceil(8)
}

/// Encoded payload size in bytes.
pub fn payload_bytes(
    rounds: usize,
    num_classes: usize,
    embedding_dim: usize,
    synthetic_bytes: usize,
    present: usize,
) -> usize {
    PAYLOAD_HEADER_BYTES
        + synthetic_bytes
        + rounds * (4 + mask_bytes(num_classes))
        + present * (4 * embedding_dim + 4)
}

pub fn seed_batch_bytes(entries: usize) -> usize {
    SEED_BATCH_HEADER_BYTES + 12 * entries
}

fn header(out: &mut Vec<u8>, kind: MessageType) {
    out.extend_from_slice(WIRE_MAGIC);
    out.push(WIRE_VERSION);
    out.push(kind as u8);
}

pub fn encode_seed_batch(batch: &SeedBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(seed_batch_bytes(batch.entries.len()));
    header(&mut out, MessageType::SeedBatch);
    out.extend_from_slice(&batch.client.to_le_bytes());
    out.extend_from_slice(&(batch.entries.len() as u32).to_le_bytes());
    for &(t, alpha) in &batch.entries {
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&alpha.to_le_bytes());
    }
    out
}

/// Panics if a present mean's length differs from `embedding_dim`, a round's
/// class count differs from the synthetic set's, or round indices are not
/// strictly increasing: those payloads have no valid encoding.
pub fn encode_payload(payload: &ClientPayload) -> Vec<u8> {
    let classes = payload.num_classes();
    let dim = payload.embedding_dim as usize;
    let synthetic = payload.synthetic.encode();
    let mut out = Vec::with_capacity(payload.encoded_len());
    header(&mut out, MessageType::Payload);
    out.extend_from_slice(&payload.client.to_le_bytes());
    out.extend_from_slice(&(classes as u32).to_le_bytes());
    out.extend_from_slice(&payload.embedding_dim.to_le_bytes());
    out.extend_from_slice(&(synthetic.len() as u64).to_le_bytes());
    out.extend_from_slice(&synthetic);
    out.extend_from_slice(&(payload.rounds.len() as u32).to_le_bytes());
    let mut previous = None;
    for round in &payload.rounds {
        assert!(previous < Some(round.t), "rounds must be strictly increasing");
        previous = Some(round.t);
        assert_eq!(round.per_class.len(), classes, "round class count");
        out.extend_from_slice(&round.t.to_le_bytes());
        let mut mask = vec![0u8; mask_bytes(classes)];
        for (y, m) in round.per_class.iter().enumerate() {
            if m.is_some() {
                mask[y / 8] |= 1 << (y % 8);
            }
        }
        out.extend_from_slice(&mask);
        for m in round.per_class.iter().flatten() {
            assert_eq!(m.mean.len(), dim, "mean vector length");
            out.extend_from_slice(&m.batch_size.to_le_bytes());
            for v in &m.mean {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, kind: MessageType) -> Result<(), DecodeError> {
        let magic = self.take(4)?;
        if magic != WIRE_MAGIC {
            return Err(DecodeError::BadMagic(magic.to_vec()));
        }
        let bytes = self.take(2)?;
        if bytes[0] != WIRE_VERSION {
            return Err(DecodeError::UnsupportedVersion(bytes[0]));
        }
        if bytes[1] != kind as u8 {
            return Err(DecodeError::WrongMessageType {
                expected: kind as u8,
                found: bytes[1],
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

pub fn decode_seed_batch(buf: &[u8]) -> Result<SeedBatch, DecodeError> {
    let mut c = Cursor { buf, pos: 0 };
    c.header(MessageType::SeedBatch)?;
    let client = c.u32()?;
    let count = c.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(buf.len() / 12));
    for _ in 0..count {
        let t = c.u32()?;
        let alpha = c.u64()?;
        if let Some(&(previous, _)) = entries.last() {
            if t <= previous {
                return Err(DecodeError::DuplicateRound { previous, t });
            }
        }
        entries.push((t, alpha));
    }
    c.finish()?;
    Ok(SeedBatch { client, entries })
}

pub fn decode_payload(buf: &[u8]) -> Result<ClientPayload, DecodeError> {
    let mut c = Cursor { buf, pos: 0 };
    c.header(MessageType::Payload)?;
    let client = c.u32()?;
    let num_classes = c.u32()?;
    let embedding_dim = c.u32()?;
    let declared = c.u64()?;
    let syn_len = usize::try_from(declared).unwrap_or(usize::MAX);
    let syn_bytes = c.take(syn_len)?;
    let (mut synthetic, used) = SyntheticSet::<f32>::decode(syn_bytes)?;
    if used != syn_bytes.len() {
        return Err(DecodeError::SyntheticLength {
            declared,
            actual: used,
        });
    }
    synthetic.reset_momentum();
    if synthetic.num_classes() != num_classes as usize {
        return Err(DecodeError::ClassCountMismatch {
            header: num_classes,
            synthetic: synthetic.num_classes(),
        });
    }
    let classes = num_classes as usize;
    let dim = embedding_dim as usize;
    let count = c.u32()? as usize;
    let mut rounds: Vec<RoundMeans> = Vec::with_capacity(count.min(buf.len()));
    for _ in 0..count {
        let t = c.u32()?;
        if let Some(previous) = rounds.last().map(|r| r.t) {
            if t <= previous {
                return Err(DecodeError::DuplicateRound { previous, t });
            }
        }
        let mask = c.take(mask_bytes(classes))?;
        let beyond = (classes..mask.len() * 8).any(|bit| mask[bit / 8] >> (bit % 8) & 1 == 1);
        if beyond {
            return Err(DecodeError::MaskPadding { t, num_classes });
        }
        let mut per_class = Vec::with_capacity(classes);
        for y in 0..classes {
            if mask[y / 8] >> (y % 8) & 1 == 0 {
                per_class.push(None);
                continue;
            }
            let batch_size = c.u32()?;
            if batch_size == 0 {
                return Err(DecodeError::EmptyBatch { t, class: y });
            }
            let mean = (0..dim).map(|_| c.f32()).collect::<Result<Vec<_>, _>>()?;
            per_class.push(Some(ClassMean { batch_size, mean }));
        }
        rounds.push(RoundMeans { t, per_class });
    }
    c.finish()?;
    Ok(ClientPayload {
        client,
        embedding_dim,
        synthetic,
        rounds,
    })
}
