use crate::data::{ClientShard, Dataset};
use crate::distill::{dm_grad, local_distill, sgd_step, ClassMeans, SyntheticSet};
use crate::encoder::{materialize, EncoderParams};
use crate::error::{Error, Result};
use crate::orchestrator::{round_means, ClientStreams, RunConfig};
use crate::protocol::{build_schedule, ClientPayload, Round, SeedSchedule};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Sees the initial set as iteration 0 and the set after every iteration `t`.
pub type Observer<'a> = &'a mut dyn FnMut(u32, &SyntheticSet<f32>) -> Result<()>;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub synthetic: SyntheticSet<f32>,
    /// `(t, loss)` for every server iteration, measured before its update.
    pub losses: Vec<(u32, f32)>,
}

fn server_stream(master_seed: u64) -> RngStream {
    RngStream::new(master_seed).substream_str("server")
}

/// Per-class union of `sets`, optionally cut down to `global_ipc` images.
///
/// Real-initialized images come first. When subsampling, each class draws
/// uniformly from its real-initialized candidates first and from noise
/// candidates only if those run out, using `rng.substream(y)`.
pub fn merge_synthetic(
    sets: &[&SyntheticSet<f32>],
    global_ipc: Option<usize>,
    rng: RngStream,
) -> Result<SyntheticSet<f32>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::input("no synthetic sets to merge"))?;
    let classes = first.num_classes();
    let shape = first.image_shape();
    for s in sets {
        if s.num_classes() != classes || s.image_shape() != shape || s.pae_l() != first.pae_l() {
            return Err(Error::Protocol(format!(
                "synthetic sets disagree: {} classes of {:?} (l={}) vs {} classes of {:?} (l={})",
                classes,
                shape,
                first.pae_l(),
                s.num_classes(),
                s.image_shape(),
                s.pae_l()
            )));
        }
    }
    let total: usize = sets.iter().map(|s| s.ipc()).sum();
    let ipc = global_ipc.unwrap_or(total);
    if ipc > total {
        return Err(Error::config(format!(
            "global IPC {ipc} exceeds the {total} images per class the clients supplied"
        )));
    }
    let mut images = Vec::with_capacity(classes);
    let mut real_init = Vec::with_capacity(classes);
    for y in 0..classes {
        let mut real = Vec::new();
        let mut noise = Vec::new();
        for (k, s) in sets.iter().enumerate() {
            for i in 0..s.ipc() {
                if i < s.real_init()[y] {
                    real.push((k, i));
                } else {
                    noise.push((k, i));
                }
            }
        }
        if global_ipc.is_some() {
            let mut r = rng.substream(y as u64);
            r.shuffle(&mut real);
            r.shuffle(&mut noise);
        }
        let n_real = real.len().min(ipc);
        let chosen: Vec<(usize, usize)> = real.into_iter().chain(noise).take(ipc).collect();
        let parts: Vec<&[f32]> = chosen
            .iter()
            .map(|&(k, i)| sets[k].class_images(y).row(i))
            .collect();
        let [c, h, w] = shape;
        images.push(Tensor::new([ipc, c, h, w], parts.concat())?);
        real_init.push(n_real);
    }
    SyntheticSet::new(images, real_init, first.pae_l())
}

/// Unweighted mean of the present class means of the clients scheduled in
/// `round`. A class nobody could supply is `None`.
pub fn server_targets(payloads: &[ClientPayload], round: &Round) -> Result<ClassMeans<f32>> {
    let classes = payloads
        .first()
        .map(ClientPayload::num_classes)
        .ok_or_else(|| Error::Protocol("no payloads".into()))?;
    let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; classes];
    for &k in &round.clients {
        let payload = payloads
            .get(k)
            .ok_or_else(|| Error::Protocol(format!("round {} schedules unknown client {k}", round.t)))?;
        let means = payload.round(round.t).ok_or_else(|| {
            Error::Protocol(format!("client {k} sent no means for round {}", round.t))
        })?;
        for (y, m) in means.per_class.iter().enumerate() {
            if let Some(m) = m {
                let (acc, n) = sums[y].get_or_insert_with(|| (vec![0.0; m.mean.len()], 0));
                for (a, &v) in acc.iter_mut().zip(&m.mean) {
                    *a += f64::from(v);
                }
                *n += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| s.map(|(acc, n)| acc.into_iter().map(|a| (a / n as f64) as f32).collect()))
        .collect())
}

fn check_payloads(payloads: &[ClientPayload], schedule: &SeedSchedule, config: &RunConfig) -> Result<()> {
    if payloads.len() != schedule.num_clients {
        return Err(Error::Protocol(format!(
            "{} payloads for {} scheduled clients",
            payloads.len(),
            schedule.num_clients
        )));
    }
    let dim = config.encoder.embedding_dim();
    for (k, p) in payloads.iter().enumerate() {
        let bad = |detail: String| Err(Error::Protocol(format!("payload {k}: {detail}")));
        if p.client as usize != k {
            return bad(format!("claims to be from client {}", p.client));
        }
        if p.embedding_dim as usize != dim {
            return bad(format!("embedding dim {} but encoders give {dim}", p.embedding_dim));
        }
        if p.synthetic.image_shape() != config.encoder.input_shape() {
            return bad(format!("synthetic images are {:?}", p.synthetic.image_shape()));
        }
        let expected: Vec<u32> = schedule.seed_batch(k).entries.iter().map(|e| e.0).collect();
        let got: Vec<u32> = p.rounds.iter().map(|r| r.t).collect();
        if expected != got {
            return bad(format!("answers rounds {got:?}, was scheduled for {expected:?}"));
        }
        for r in &p.rounds {
            if r.per_class.len() != p.num_classes()
                || r.per_class.iter().flatten().any(|m| m.mean.len() != dim)
            {
                return bad(format!("malformed means in round {}", r.t));
            }
        }
    }
    Ok(())
}

fn server_step(
    set: &mut SyntheticSet<f32>,
    params: &EncoderParams<f32>,
    targets: &ClassMeans<f32>,
    config: &RunConfig,
    rng: &mut RngStream,
) -> Result<f32> {
    let step = dm_grad(set, targets, params, config.dm.syn_batch_cap, rng)?;
    sgd_step(set, &step.grads, config.dm.server_lr, config.dm.momentum)?;
    Ok(step.loss.total)
}

/// Server distillation from client payloads and the seed schedule alone.
pub fn server_refine(
    payloads: &[ClientPayload],
    schedule: &SeedSchedule,
    config: &RunConfig,
    observer: Observer<'_>,
) -> Result<RefineOutcome> {
    check_payloads(payloads, schedule, config)?;
    let server = server_stream(schedule.master_seed);
    let sets: Vec<&SyntheticSet<f32>> = payloads.iter().map(|p| &p.synthetic).collect();
    let mut synthetic = merge_synthetic(&sets, config.global_ipc, server.substream_str("init"))?;
    observer(0, &synthetic)?;
    let mut rng = server.substream_str("steps");
    let mut losses = Vec::with_capacity(schedule.len());
    for round in &schedule.rounds {
        let targets = server_targets(payloads, round)?;
        let params = materialize::<f32>(round.alpha, &config.encoder)?;
        let loss = server_step(&mut synthetic, &params, &targets, config, &mut rng)?;
        losses.push((round.t, loss));
        observer(round.t, &synthetic)?;
    }
    Ok(RefineOutcome { synthetic, losses })
}

/// Plain distribution matching by a single holder of `dataset`, drawing its
/// randomness exactly where client 0 and the server would.
pub fn centralized_refine(
    dataset: &Dataset,
    config: &RunConfig,
    observer: Observer<'_>,
) -> Result<RefineOutcome> {
    let shard = ClientShard::whole(dataset);
    let mut streams = ClientStreams::for_client(config.master_seed, 0);
    let local = local_distill(&shard, dataset, &config.dm, &config.encoder, &mut streams.local)?;
    let schedule = build_schedule(config.master_seed, config.rounds, 1, 1.0)?;
    let server = server_stream(config.master_seed);
    let mut synthetic = merge_synthetic(&[&local], config.global_ipc, server.substream_str("init"))?;
    observer(0, &synthetic)?;
    let mut rng = server.substream_str("steps");
    let mut losses = Vec::with_capacity(schedule.len());
    for round in &schedule.rounds {
        let mut batch_rng = streams.means.substream(u64::from(round.t));
        let targets: ClassMeans<f32> = round_means(
            &shard,
            dataset,
            round.alpha,
            &config.encoder,
            config.dm.batch,
            &mut batch_rng,
        )?
        .into_iter()
        .map(|m| m.map(|m| m.mean))
        .collect();
        let params = materialize::<f32>(round.alpha, &config.encoder)?;
        let loss = server_step(&mut synthetic, &params, &targets, config, &mut rng)?;
        losses.push((round.t, loss));
        observer(round.t, &synthetic)?;
    }
    Ok(RefineOutcome { synthetic, losses })
}
