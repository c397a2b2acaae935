use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Skew {
    /// Per-class client proportions drawn from `Dir(beta * 1_K)`.
    Dirichlet(f64),
    /// Equal proportions `1/K`.
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clients: usize,
    pub skew: Skew,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn dirichlet(clients: usize, beta: f64, seed: u64) -> Self {
        Self {
            clients,
            skew: Skew::Dirichlet(beta),
            seed,
        }
    }

    pub fn iid(clients: usize, seed: u64) -> Self {
        Self {
            clients,
            skew: Skew::Iid,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("partition needs at least one client"));
        }
        if let Skew::Dirichlet(beta) = self.skew {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::config(format!(
                    "Dirichlet concentration must be positive and finite, got {beta}"
                )));
            }
        }
        Ok(())
    }
}

/// One client's slice of a dataset: per-class index lists, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client: usize,
    by_class: Vec<Vec<usize>>,
}

impl ClientShard {
    pub fn new(client: usize, mut by_class: Vec<Vec<usize>>) -> Self {
        for c in &mut by_class {
            c.sort_unstable();
        }
        Self { client, by_class }
    }

    /// A single shard holding every example of `dataset`.
    pub fn whole(dataset: &Dataset) -> Self {
        Self::new(0, dataset.class_indices())
    }

    pub fn class(&self, y: usize) -> &[usize] {
        self.by_class.get(y).map_or(&[], Vec::as_slice)
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_class.iter().flatten().copied()
    }
}

/// Converts proportions to integer counts summing to `n`: floors first, then
/// one extra unit to the largest fractional parts (ties to the lower index).
pub fn largest_remainder_counts(proportions: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = proportions.iter().sum();
    let exact: Vec<f64> = proportions
        .iter()
        .map(|p| if total > 0.0 { p / total * n as f64 } else { 0.0 })
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn assign_class(
    class_indices: &[usize],
    proportions: &[f64],
    rng: &mut RngStream,
    shards: &mut [Vec<Vec<usize>>],
    y: usize,
) {
    let mut pool = class_indices.to_vec();
    rng.shuffle(&mut pool);
    let counts = largest_remainder_counts(proportions, pool.len());
    let mut start = 0;
    for (k, c) in counts.into_iter().enumerate() {
        shards[k][y].extend_from_slice(&pool[start..start + c]);
        start += c;
    }
    debug_assert_eq!(start, pool.len());
}

fn build(shards: Vec<Vec<Vec<usize>>>) -> Vec<ClientShard> {
    shards
        .into_iter()
        .enumerate()
        .map(|(k, by_class)| ClientShard::new(k, by_class))
        .collect()
}

/// Non-IID split. For each class `y`, using `RngStream::new(seed).substream(y)`:
/// draw `p ~ Dir(beta * 1_K)` (skipped for IID), shuffle the class's indices,
/// then hand out contiguous runs of largest-remainder counts to clients
/// `0..K` in order.
pub fn dirichlet_partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    let k = spec.clients;
    let root = RngStream::new(spec.seed);
    let mut shards = vec![vec![Vec::new(); dataset.num_classes()]; k];
    for (y, indices) in dataset.class_indices().iter().enumerate() {
        let mut rng = root.substream(y as u64);
        let p = match spec.skew {
            Skew::Dirichlet(beta) => rng.dirichlet(k, beta),
            Skew::Iid => vec![1.0 / k as f64; k],
        };
        assign_class(indices, &p, &mut rng, &mut shards, y);
    }
    Ok(build(shards))
}

/// As [`dirichlet_partition`] with caller-supplied per-class proportions
/// (`proportions[y][k]`) in place of the Dirichlet draw.
pub fn partition_with_proportions(
    dataset: &Dataset,
    proportions: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if proportions.len() != dataset.num_classes() {
        return Err(Error::config(format!(
            "{} proportion rows for {} classes",
            proportions.len(),
            dataset.num_classes()
        )));
    }
    let k = proportions.first().map_or(0, Vec::len);
    if k == 0 || proportions.iter().any(|p| p.len() != k) {
        return Err(Error::config("proportion rows must share a nonzero client count"));
    }
    if proportions
        .iter()
        .flatten()
        .any(|p| !(p.is_finite() && *p >= 0.0))
        || proportions.iter().any(|row| row.iter().sum::<f64>() <= 0.0)
    {
        return Err(Error::config("proportions must be non-negative with positive sum"));
    }
    let root = RngStream::new(seed);
    let mut shards = vec![vec![Vec::new(); dataset.num_classes()]; k];
    for (y, indices) in dataset.class_indices().iter().enumerate() {
        let mut rng = root.substream(y as u64);
        assign_class(indices, &proportions[y], &mut rng, &mut shards, y);
    }
    Ok(build(shards))
}

/// Up to `batch` indices of class `y` drawn uniformly without replacement
/// (a Fisher-Yates prefix). Returns every index, shuffled, when the shard
/// holds fewer, and nothing when it holds none.
pub fn sample_class_indices(
    shard: &ClientShard,
    y: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    let mut pool = shard.class(y).to_vec();
    let m = batch.min(pool.len());
    rng.partial_shuffle(&mut pool, m);
    pool.truncate(m);
    pool
}

pub fn sample_class_batch(
    shard: &ClientShard,
    dataset: &Dataset,
    y: usize,
    batch: usize,
    rng: &mut RngStream,
) -> Tensor<f32> {
    dataset.gather(&sample_class_indices(shard, y, batch, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy, ToyConfig};

    fn toy() -> Dataset {
        generate_toy(&ToyConfig {
            per_class: 37,
            ..ToyConfig::default()
        })
        .unwrap()
        .0
    }

    fn assert_set_partition(d: &Dataset, shards: &[ClientShard]) {
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        for s in shards {
            for y in 0..d.num_classes() {
                assert!(s.class(y).iter().all(|&i| d.labels()[i] == y));
            }
        }
    }

    #[test]
    fn single_client_owns_everything() {
        let d = toy();
        let shards = dirichlet_partition(&d, &PartitionSpec::dirichlet(1, 0.1, 3)).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0], ClientShard::whole(&d));
    }

    #[test]
    fn degenerate_proportions() {
        let d = toy();
        let p = vec![vec![1.0, 0.0, 0.0]; d.num_classes()];
        let shards = partition_with_proportions(&d, &p, 9).unwrap();
        assert_eq!(shards[0].len(), d.len());
        assert!(shards[1].is_empty() && shards[2].is_empty());
    }

    #[test]
    fn set_partition_for_many_specs() {
        let d = toy();
        for seed in 0..10 {
            for &k in &[2, 3, 7] {
                for &beta in &[0.05, 0.5, 5.0] {
                    let s = dirichlet_partition(&d, &PartitionSpec::dirichlet(k, beta, seed)).unwrap();
                    assert_set_partition(&d, &s);
                }
                assert_set_partition(&d, &dirichlet_partition(&d, &PartitionSpec::iid(k, seed)).unwrap());
            }
        }
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder_counts(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder_counts(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(largest_remainder_counts(&[1.0 / 3.0; 3], 2), vec![1, 1, 0]);
    }

    #[test]
    fn invalid_specs() {
        assert!(PartitionSpec::dirichlet(0, 1.0, 0).validate().is_err());
        assert!(PartitionSpec::dirichlet(2, 0.0, 0).validate().is_err());
        assert!(PartitionSpec::dirichlet(2, f64::NAN, 0).validate().is_err());
    }

    #[test]
    fn batch_sampling_edges() {
        let shard = ClientShard::new(0, vec![vec![3, 5, 8], vec![]]);
        let mut rng = RngStream::new(1);
        let mut full = sample_class_indices(&shard, 0, 3, &mut rng);
        full.sort_unstable();
        assert_eq!(full, vec![3, 5, 8]);
        assert_eq!(sample_class_indices(&shard, 0, 10, &mut rng).len(), 3);
        assert!(sample_class_indices(&shard, 1, 4, &mut rng).is_empty());
        let two = sample_class_indices(&shard, 0, 2, &mut rng);
        assert_eq!(two.len(), 2);
        assert_ne!(two[0], two[1]);
    }

    #[test]
    fn single_draw_frequencies_are_uniform() {
        let n = 8;
        let shard = ClientShard::new(0, vec![(0..n).collect()]);
        let mut rng = RngStream::new(2024);
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[sample_class_indices(&shard, 0, 1, &mut rng)[0]] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "{c} vs {mean} +/- {sigma}");
        }
    }
}
