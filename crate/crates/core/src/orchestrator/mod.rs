//! End-to-end runs: client work, server refinement, the merged-local
//! baseline, and a centralized reference.

mod client;
mod report;
mod server;

use serde::{Deserialize, Serialize};

pub use client::{client_run, round_means, ClientStreams};
pub use report::{run, shards_for, AccuracyPoint, EvalOptions, LossPoint, RunOutput, RunReport};
pub use server::{
    centralized_refine, merge_synthetic, server_refine, server_targets, Observer, RefineOutcome,
};

use crate::data::PartitionSpec;
use crate::distill::DMConfig;
use crate::encoder::EncoderSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Seeds out, one payload back per client, then server refinement.
    CollabDm,
    /// Union of the clients' local distillations with no refinement.
    LocalDm,
    /// One data holder with the whole training set, every round.
    Centralized,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::CollabDm => "collabdm",
            Mode::LocalDm => "localdm",
            Mode::Centralized => "centralized",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collabdm" => Ok(Mode::CollabDm),
            "localdm" => Ok(Mode::LocalDm),
            "centralized" => Ok(Mode::Centralized),
            _ => Err(Error::config(format!(
                "unknown mode {s:?} (expected collabdm, localdm or centralized)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub dm: DMConfig,
    pub encoder: EncoderSpec,
    pub partition: PartitionSpec,
    /// Server iterations `T`.
    pub rounds: usize,
    /// Fraction of clients scheduled per round.
    pub epsilon: f64,
    pub master_seed: u64,
    pub eval_every: usize,
    /// Per-class size of the server's initial set; `None` keeps the whole
    /// union of client sets.
    pub global_ipc: Option<usize>,
    pub eval: Option<EvalOptions>,
}

impl RunConfig {
    /// Defaults around an encoder spec: one client, full participation,
    /// `T = 200`, global IPC equal to the local IPC.
    pub fn new(mode: Mode, encoder: EncoderSpec, partition: PartitionSpec) -> Self {
        let dm = DMConfig::default();
        Self {
            mode,
            dm,
            encoder,
            partition,
            rounds: 200,
            epsilon: 1.0,
            master_seed: 0,
            eval_every: 50,
            global_ipc: Some(dm.ipc),
            eval: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dm.validate()?;
        self.encoder.validate()?;
        self.partition.validate()?;
        crate::distill::check_pae_factor(self.dm.pae, self.encoder.height, self.encoder.width)?;
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config(format!(
                "participation fraction must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if self.global_ipc == Some(0) {
            return Err(Error::config("global IPC must be positive"));
        }
        if let Some(e) = &self.eval {
            e.validate()?;
        }
        Ok(())
    }
}
