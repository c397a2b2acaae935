use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Server to client.
    Downlink,
    /// Client to server.
    Uplink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    Exchange,
    ServerRefinement,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEvent {
    pub client: usize,
    pub direction: Direction,
    pub bytes: usize,
    pub phase: Phase,
}

#[derive(Debug)]
struct Log {
    phase: Phase,
    events: Vec<MessageEvent>,
}

/// Append-only message log. Appends are serialized through a mutex so
/// concurrently running clients can record into one trace.
#[derive(Debug)]
pub struct ProtocolTrace {
    log: Mutex<Log>,
}

impl Default for ProtocolTrace {
    fn default() -> Self {
        Self::new()
    }
}

impl ProtocolTrace {
    pub fn new() -> Self {
        Self {
            log: Mutex::new(Log {
                phase: Phase::Setup,
                events: Vec::new(),
            }),
        }
    }

    pub fn set_phase(&self, phase: Phase) {
        self.log.lock().expect("trace lock").phase = phase;
    }

    pub fn record(&self, client: usize, direction: Direction, bytes: usize) {
        let mut log = self.log.lock().expect("trace lock");
        let phase = log.phase;
        log.events.push(MessageEvent {
            client,
            direction,
            bytes,
            phase,
        });
    }

    pub fn events(&self) -> Vec<MessageEvent> {
        self.log.lock().expect("trace lock").events.clone()
    }

    pub fn audit(&self, num_clients: usize) -> TraceAudit {
        let log = self.log.lock().expect("trace lock");
        let mut audit = TraceAudit {
            downlinks: vec![0; num_clients],
            uplinks: vec![0; num_clients],
            during_refinement: 0,
            unknown_clients: 0,
        };
        for e in &log.events {
            if e.phase == Phase::ServerRefinement {
                audit.during_refinement += 1;
            }
            let counts = match e.direction {
                Direction::Downlink => &mut audit.downlinks,
                Direction::Uplink => &mut audit.uplinks,
            };
            match counts.get_mut(e.client) {
                Some(c) => *c += 1,
                None => audit.unknown_clients += 1,
            }
        }
        audit
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceAudit {
    pub downlinks: Vec<usize>,
    pub uplinks: Vec<usize>,
    pub during_refinement: usize,
    pub unknown_clients: usize,
}

impl TraceAudit {
    /// Exactly one message each way per client and silence while the server refines.
    pub fn single_round(&self) -> bool {
        self.downlinks.iter().all(|&c| c == 1)
            && self.uplinks.iter().all(|&c| c == 1)
            && self.during_refinement == 0
            && self.unknown_clients == 0
    }
}
