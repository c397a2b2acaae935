use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dirichlet_partition, ClientShard, Dataset};
use crate::distill::SyntheticSet;
use crate::error::{Error, Result};
use crate::eval::{evaluate, ClassifierSpec};
use crate::orchestrator::{
    centralized_refine, client_run, server_refine, ClientStreams, Mode, RefineOutcome, RunConfig,
};
use crate::protocol::{
    build_schedule, decode_payload, decode_seed_batch, encode_payload, encode_seed_batch,
    payload_bytes, ClientPayload, Direction, MessageEvent, Phase, ProtocolTrace, TraceAudit,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub classifier: ClassifierSpec,
    pub repeats: usize,
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("evaluation needs at least one repeat"));
        }
        self.classifier.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub t: u32,
    pub loss: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub iteration: u32,
    /// Mean uplink bytes per client for a run stopped at `iteration`.
    pub bytes_per_client: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub losses: Vec<LossPoint>,
    pub accuracy: Vec<AccuracyPoint>,
    pub downlink_bytes: Vec<usize>,
    pub uplink_bytes: Vec<usize>,
    /// Mean vectors each client sent.
    pub present_means: Vec<usize>,
    pub stored_scalars: usize,
    pub audit: TraceAudit,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn losses_csv(&self) -> String {
        let mut out = String::from("t,loss\n");
        for p in &self.losses {
            out.push_str(&format!("{},{}\n", p.t, p.loss));
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("iteration,bytes_per_client,mean_accuracy,std\n");
        for p in &self.accuracy {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                p.iteration, p.bytes_per_client, p.mean, p.std
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub synthetic: SyntheticSet<f32>,
    /// Encoded downlink and uplink message per client.
    pub seed_batches: Vec<Vec<u8>>,
    pub payloads: Vec<Vec<u8>>,
    pub events: Vec<MessageEvent>,
}

/// Uplink size had the run stopped after iteration `t`.
fn bytes_through(payload: &ClientPayload, t: u32) -> usize {
    let rounds: Vec<_> = payload.rounds.iter().filter(|r| r.t <= t).collect();
    payload_bytes(
        rounds.len(),
        payload.num_classes(),
        payload.embedding_dim as usize,
        payload.synthetic.encoded_len(),
        rounds.iter().map(|r| r.present()).sum(),
    )
}

/// Executes `config.mode` on `train`, evaluating on `test` when
/// `config.eval` is set.
///
/// Every client's seed batch and payload pass through the wire encoding
/// and the server sees only the decoded payloads. Centralized mode holds all
/// data in one place, so it records the messages a one-client run would
/// exchange without sending them.
pub fn run(config: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<RunOutput> {
    config.validate()?;
    if config.encoder.input_shape() != train.image_shape() {
        return Err(Error::config(format!(
            "encoder expects {:?} images, dataset has {:?}",
            config.encoder.input_shape(),
            train.image_shape()
        )));
    }
    let eval = match (&config.eval, test) {
        (Some(e), Some(test)) => Some((e, test)),
        (Some(_), None) => return Err(Error::config("evaluation requested without a test set")),
        (None, _) => None,
    };
    let mut accuracy = Vec::new();
    let trace = ProtocolTrace::new();
    let num_classes = train.num_classes();

    let (clients, rounds) = match config.mode {
        Mode::CollabDm => (config.partition.clients, config.rounds),
        Mode::LocalDm => (config.partition.clients, 0),
        Mode::Centralized => (1, config.rounds),
    };
    let epsilon = if config.mode == Mode::Centralized {
        1.0
    } else {
        config.epsilon
    };
    let schedule = build_schedule(config.master_seed, rounds, clients, epsilon)?;
    trace.set_phase(Phase::Exchange);

    let (outcome, seed_batches, payloads, uplink, present): (
        RefineOutcome,
        Vec<Vec<u8>>,
        Vec<Vec<u8>>,
        Vec<usize>,
        Vec<usize>,
    ) = match config.mode {
        Mode::CollabDm | Mode::LocalDm => {
            let shards = dirichlet_partition(train, &config.partition)?;
            let exchanged = shards
                .par_iter()
                .map(|shard| {
                    let k = shard.client;
                    let down = encode_seed_batch(&schedule.seed_batch(k));
                    trace.record(k, Direction::Downlink, down.len());
                    let seeds = decode_seed_batch(&down)?;
                    let streams = ClientStreams::for_client(config.master_seed, k);
                    let payload = client_run(shard, train, &seeds, &config.dm, &config.encoder, streams)?;
                    let up = encode_payload(&payload);
                    trace.record(k, Direction::Uplink, up.len());
                    Ok((down, up))
                })
                .collect::<Result<Vec<_>>>()?;
            let (downs, ups): (Vec<_>, Vec<_>) = exchanged.into_iter().unzip();
            let received = ups
                .iter()
                .map(|b| decode_payload(b))
                .collect::<Result<Vec<_>, _>>()?;
            trace.set_phase(Phase::ServerRefinement);
            let mut observer = |t: u32, set: &SyntheticSet<f32>| {
                if let Some((e, test)) = eval {
                    if t == 0 || (t as usize).is_multiple_of(config.eval_every) || t as usize == rounds {
                        let bytes = received.iter().map(|p| bytes_through(p, t)).sum::<usize>() as f64
                            / received.len() as f64;
                        let acc = evaluate(set, &e.classifier, test, e.repeats)?;
                        accuracy.push(AccuracyPoint {
                            iteration: t,
                            bytes_per_client: bytes,
                            mean: acc.mean,
                            std: acc.std,
                        });
                    }
                }
                Ok(())
            };
            let outcome = server_refine(&received, &schedule, config, &mut observer)?;
            let uplink = ups.iter().map(Vec::len).collect();
            let present = received.iter().map(ClientPayload::present_means).collect();
            (outcome, downs, ups, uplink, present)
        }
        Mode::Centralized => {
            let down = encode_seed_batch(&schedule.seed_batch(0));
            trace.record(0, Direction::Downlink, down.len());
            let shard = ClientShard::whole(train);
            let present_per_round = (0..num_classes).filter(|&y| !shard.class(y).is_empty()).count();
            let synthetic_bytes =
                SyntheticSet::<f32>::encoded_len_for(num_classes, config.dm.ipc, train.image_shape());
            let dim = config.encoder.embedding_dim();
            let at = move |t: u32| {
                payload_bytes(t as usize, num_classes, dim, synthetic_bytes, t as usize * present_per_round)
            };
            let up = at(rounds as u32);
            trace.record(0, Direction::Uplink, up);
            trace.set_phase(Phase::ServerRefinement);
            let mut observer = |t: u32, set: &SyntheticSet<f32>| {
                if let Some((e, test)) = eval {
                    if t == 0 || (t as usize).is_multiple_of(config.eval_every) || t as usize == rounds {
                        let acc = evaluate(set, &e.classifier, test, e.repeats)?;
                        accuracy.push(AccuracyPoint {
                            iteration: t,
                            bytes_per_client: at(t) as f64,
                            mean: acc.mean,
                            std: acc.std,
                        });
                    }
                }
                Ok(())
            };
            let outcome = centralized_refine(train, config, &mut observer)?;
            (
                outcome,
                vec![down],
                Vec::new(),
                vec![up],
                vec![rounds * present_per_round],
            )
        }
    };
    trace.set_phase(Phase::Done);

    let events = trace.events();
    let report = RunReport {
        config: config.clone(),
        losses: outcome
            .losses
            .iter()
            .map(|&(t, loss)| LossPoint { t, loss })
            .collect(),
        accuracy,
        downlink_bytes: seed_batches.iter().map(Vec::len).collect(),
        uplink_bytes: uplink,
        present_means: present,
        stored_scalars: outcome.synthetic.stored_scalars(),
        audit: trace.audit(clients),
    };
    Ok(RunOutput {
        report,
        synthetic: outcome.synthetic,
        seed_batches,
        payloads,
        events,
    })
}

/// Partition used by a run, exposed so callers can inspect client shards.
pub fn shards_for(config: &RunConfig, train: &Dataset) -> Result<Vec<ClientShard>> {
    match config.mode {
        Mode::Centralized => Ok(vec![ClientShard::whole(train)]),
        _ => dirichlet_partition(train, &config.partition),
    }
}
