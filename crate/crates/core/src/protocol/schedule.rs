use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One global iteration: its encoder seed and participating clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    /// 1-based iteration index.
    pub t: u32,
    pub alpha: u64,
    /// Participating client ids, ascending.
    pub clients: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSchedule {
    pub master_seed: u64,
    pub num_clients: usize,
    pub epsilon: f64,
    pub rounds: Vec<Round>,
}

/// `ceil(epsilon * K)`, with a 1e-9 guard so products such as `0.3 * 10`
/// that land a hair above an integer do not round up.
pub fn participants_per_round(num_clients: usize, epsilon: f64) -> usize {
    let raw = (epsilon * num_clients as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(num_clients)
}

/// Pre-commits every round before any client runs.
///
/// `alpha_t` is the `t`-th output of `RngStream::new(master).substream_str("alpha")`.
/// `Z_t` is the sorted prefix of length `ceil(epsilon * K)` of a Fisher-Yates
/// shuffle of `0..K` driven by `RngStream::new(master).substream_str("clients").substream(t)`.
pub fn build_schedule(
    master_seed: u64,
    rounds: usize,
    num_clients: usize,
    epsilon: f64,
) -> Result<SeedSchedule> {
    if num_clients == 0 {
        return Err(Error::config("schedule needs at least one client"));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::config(format!(
            "participation fraction must lie in (0, 1], got {epsilon}"
        )));
    }
    if rounds > u32::MAX as usize {
        return Err(Error::config("too many rounds"));
    }
    let root = RngStream::new(master_seed);
    let mut alphas = root.substream_str("alpha");
    let clients_root = root.substream_str("clients");
    let m = participants_per_round(num_clients, epsilon);
    let rounds = (1..=rounds as u32)
        .map(|t| {
            let alpha = alphas.next_u64();
            let mut rng = clients_root.substream(u64::from(t));
            let mut perm: Vec<usize> = (0..num_clients).collect();
            rng.partial_shuffle(&mut perm, m);
            perm.truncate(m);
            perm.sort_unstable();
            Round {
                t,
                alpha,
                clients: perm,
            }
        })
        .collect();
    Ok(SeedSchedule {
        master_seed,
        num_clients,
        epsilon,
        rounds,
    })
}

impl SeedSchedule {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// `A_k`: the seeds of every round client `k` takes part in.
    pub fn seed_batch(&self, client: usize) -> SeedBatch {
        SeedBatch {
            client: client as u32,
            entries: self
                .rounds
                .iter()
                .filter(|r| r.clients.binary_search(&client).is_ok())
                .map(|r| (r.t, r.alpha))
                .collect(),
        }
    }
}

/// The downlink message for one client: `(t, alpha_t)` pairs with `t`
/// strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedBatch {
    pub client: u32,
    pub entries: Vec<(u32, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_participation() {
        let s = build_schedule(5, 20, 6, 1.0).unwrap();
        assert!(s.rounds.iter().all(|r| r.clients == (0..6).collect::<Vec<_>>()));
        assert_eq!(s.seed_batch(3).entries.len(), 20);
    }

    #[test]
    fn empty_schedule() {
        let s = build_schedule(5, 0, 3, 0.5).unwrap();
        assert!(s.is_empty());
        assert!(s.seed_batch(0).entries.is_empty());
    }

    #[test]
    fn participant_counts() {
        assert_eq!(participants_per_round(10, 0.3), 3);
        assert_eq!(participants_per_round(4, 0.5), 2);
        assert_eq!(participants_per_round(5, 0.5), 3);
        assert_eq!(participants_per_round(5, 0.01), 1);
    }

    #[test]
    fn validation() {
        assert!(build_schedule(0, 1, 0, 1.0).is_err());
        assert!(build_schedule(0, 1, 2, 0.0).is_err());
        assert!(build_schedule(0, 1, 2, 1.5).is_err());
    }

    #[test]
    fn seed_batches_partition_memberships() {
        let s = build_schedule(17, 50, 5, 0.4).unwrap();
        let total: usize = (0..5).map(|k| s.seed_batch(k).entries.len()).sum();
        assert_eq!(total, 50 * 2);
        for k in 0..5 {
            let b = s.seed_batch(k);
            assert!(b.entries.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }
}
