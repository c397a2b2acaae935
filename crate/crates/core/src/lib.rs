//! Single-round collaborative dataset distillation by distribution matching.
//!
//! Clients each hold a private shard of a labelled image dataset. The
//! server commits up front to a schedule of random encoder seeds, sends
//! each client its seeds in one message, and receives back a locally
//! distilled synthetic set plus the client's mean real-data embeddings under
//! every scheduled encoder. It then refines the union of the synthetic sets
//! against those means without further communication.

pub mod data;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernel;
pub mod orchestrator;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{Scalar, Tensor};
