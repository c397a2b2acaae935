use crate::data::{sample_class_batch, ClientShard, Dataset};
use crate::distill::{class_mean_embedding, init_synthetic, local_distill, DMConfig};
use crate::encoder::{materialize, EncoderSpec};
use crate::error::{Error, Result};
use crate::protocol::{ClassMean, ClientPayload, RoundMeans, SeedBatch};
use crate::rng::RngStream;

/// A client's private randomness: one stream for local distillation and one
/// root whose `substream(t)` draws the real batches for round `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientStreams {
    pub local: RngStream,
    pub means: RngStream,
}

impl ClientStreams {
    /// Streams under `master -> "client" -> k`.
    pub fn for_client(master_seed: u64, client: usize) -> Self {
        let root = RngStream::new(master_seed)
            .substream_str("client")
            .substream(client as u64);
        Self {
            local: root.substream_str("local"),
            means: root.substream_str("means"),
        }
    }
}

/// Per-class mean embeddings of one real batch per class under encoder
/// `alpha`. Classes the shard lacks come back as `None`.
pub fn round_means(
    shard: &ClientShard,
    dataset: &Dataset,
    alpha: u64,
    spec: &EncoderSpec,
    batch: usize,
    rng: &mut RngStream,
) -> Result<Vec<Option<ClassMean>>> {
    let params = materialize::<f32>(alpha, spec)?;
    (0..dataset.num_classes())
        .map(|y| {
            let real = sample_class_batch(shard, dataset, y, batch, rng);
            let rows = real.rows();
            Ok(class_mean_embedding(&params, &real)?.map(|mean| ClassMean {
                batch_size: rows as u32,
                mean,
            }))
        })
        .collect()
}

/// Local distillation followed by the round means for every seed in
/// `seeds`. A client with an empty shard returns its noise initialization
/// and no present means.
pub fn client_run(
    shard: &ClientShard,
    dataset: &Dataset,
    seeds: &SeedBatch,
    dm: &DMConfig,
    spec: &EncoderSpec,
    streams: ClientStreams,
) -> Result<ClientPayload> {
    let client = shard.client;
    let wrap = |e: Error| Error::Client {
        client,
        detail: e.to_string(),
    };
    if seeds.client as usize != client {
        return Err(Error::Protocol(format!(
            "seed batch for client {} delivered to client {client}",
            seeds.client
        )));
    }
    let mut local = streams.local;
    let mut synthetic = if shard.is_empty() {
        init_synthetic(shard, dataset, dm.ipc, dm.pae, &mut local).map_err(wrap)?
    } else {
        local_distill(shard, dataset, dm, spec, &mut local).map_err(wrap)?
    };
    synthetic.reset_momentum();
    let rounds = seeds
        .entries
        .iter()
        .map(|&(t, alpha)| {
            let mut rng = streams.means.substream(u64::from(t));
            Ok(RoundMeans {
                t,
                per_class: round_means(shard, dataset, alpha, spec, dm.batch, &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    Ok(ClientPayload {
        client: client as u32,
        embedding_dim: spec.embedding_dim() as u32,
        synthetic,
        rounds,
    })
}
