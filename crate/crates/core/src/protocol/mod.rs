//! The single-round exchange: the server's pre-committed seed schedule, the
//! byte-exact wire messages, and a trace recorder for auditing traffic.

mod schedule;
mod trace;
mod wire;

pub use schedule::{build_schedule, participants_per_round, Round, SeedBatch, SeedSchedule};
pub use trace::{Direction, MessageEvent, Phase, ProtocolTrace, TraceAudit};
pub use wire::{
    decode_payload, decode_seed_batch, encode_payload, encode_seed_batch, payload_bytes,
    seed_batch_bytes, ClassMean, ClientPayload, DecodeError, MessageType, RoundMeans,
    PAYLOAD_HEADER_BYTES, SEED_BATCH_HEADER_BYTES, WIRE_MAGIC, WIRE_VERSION,
};
