use crate::data::{sample_class_batch, sample_class_indices, ClientShard, Dataset};
use crate::distill::{class_mean_embedding, dm_grad, sgd_step, DMConfig, SyntheticSet};
use crate::encoder::{materialize, EncoderSpec};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Per class: up to `ipc` real examples drawn without replacement from the
/// shard, topped up with `U[0, 1)` noise when the shard has fewer.
pub fn init_synthetic(
    shard: &ClientShard,
    dataset: &Dataset,
    ipc: usize,
    pae_l: usize,
    rng: &mut RngStream,
) -> Result<SyntheticSet<f32>> {
    let [c, h, w] = dataset.image_shape();
    let per_image = c * h * w;
    let mut images = Vec::with_capacity(dataset.num_classes());
    let mut real_init = Vec::with_capacity(dataset.num_classes());
    for y in 0..dataset.num_classes() {
        let idx = sample_class_indices(shard, y, ipc, rng);
        let mut data = dataset.gather(&idx).into_data();
        data.extend((0..(ipc - idx.len()) * per_image).map(|_| rng.uniform() as f32));
        images.push(Tensor::new([ipc, c, h, w], data)?);
        real_init.push(idx.len());
    }
    SyntheticSet::new(images, real_init, pae_l)
}

/// Distribution matching on one client's shard.
///
/// Each iteration draws a fresh encoder seed from `rng`, embeds a real batch
/// per class the shard holds, and takes one momentum-SGD step at `local_lr`.
/// Classes absent from the shard are left at their initialization.
pub fn local_distill(
    shard: &ClientShard,
    dataset: &Dataset,
    config: &DMConfig,
    spec: &EncoderSpec,
    rng: &mut RngStream,
) -> Result<SyntheticSet<f32>> {
    config.validate()?;
    spec.validate()?;
    if shard.is_empty() {
        return Err(Error::input("local distillation needs a nonempty shard"));
    }
    if spec.input_shape() != dataset.image_shape() {
        return Err(Error::config(format!(
            "encoder input {:?} does not match images {:?}",
            spec.input_shape(),
            dataset.image_shape()
        )));
    }
    let mut synthetic = init_synthetic(shard, dataset, config.ipc, config.pae, rng)?;
    for _ in 0..config.local_iters {
        let params = materialize::<f32>(rng.next_u64(), spec)?;
        let mut means = Vec::with_capacity(dataset.num_classes());
        for y in 0..dataset.num_classes() {
            let batch = sample_class_batch(shard, dataset, y, config.batch, rng);
            means.push(class_mean_embedding(&params, &batch)?);
        }
        let step = dm_grad(&synthetic, &means, &params, config.syn_batch_cap, rng)?;
        sgd_step(&mut synthetic, &step.grads, config.local_lr, config.momentum)?;
    }
    Ok(synthetic)
}
