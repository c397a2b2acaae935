use collabdm::data::{generate_toy, ClientShard, Dataset, ToyConfig};
use collabdm::distill::{
    class_mean_embedding, dm_grad, dm_loss, init_synthetic, local_distill, pae_expand, DMConfig,
    SyntheticSet,
};
use collabdm::encoder::{materialize, EncoderSpec};
use collabdm::{RngStream, Tensor};

fn toy(seed: u64) -> Dataset {
    generate_toy(&ToyConfig {
        num_classes: 2,
        per_class: 100,
        seed,
        ..ToyConfig::default()
    })
    .unwrap()
    .0
}

/// Mean over `encoders` fresh seeds of the loss between full-class real means
/// and the expanded synthetic set.
fn held_out_loss(set: &SyntheticSet, data: &Dataset, spec: &EncoderSpec, seeds: &[u64]) -> f64 {
    let mut total = 0.0;
    for &s in seeds {
        let p = materialize::<f32>(s, spec).unwrap();
        let real: Vec<_> = (0..data.num_classes())
            .map(|y| class_mean_embedding(&p, &data.gather(&data.class_indices()[y])).unwrap())
            .collect();
        let syn: Vec<_> = (0..set.num_classes())
            .map(|y| Some(pae_expand(set.class_images(y), set.pae_l()).unwrap()))
            .collect();
        total += f64::from(dm_loss(&real, &syn, &p).unwrap().total);
    }
    total / seeds.len() as f64
}

#[test]
fn local_distillation_halves_held_out_loss() {
    let spec = EncoderSpec::desk(1, 16, 16).with_blocks(1, 16);
    let cfg = DMConfig {
        ipc: 10,
        local_iters: 200,
        batch: 64,
        ..DMConfig::default()
    };
    let eval_seeds: Vec<u64> = (1000..1010).collect();
    let mut ratios = Vec::new();
    for seed in 0..5u64 {
        let data = toy(seed);
        let shard = ClientShard::whole(&data);
        let init = init_synthetic(&shard, &data, cfg.ipc, cfg.pae, &mut RngStream::new(seed)).unwrap();
        let fin = local_distill(&shard, &data, &cfg, &spec, &mut RngStream::new(seed)).unwrap();
        let before = held_out_loss(&init, &data, &spec, &eval_seeds);
        let after = held_out_loss(&fin, &data, &spec, &eval_seeds);
        ratios.push(after / before);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    println!("final/initial held-out loss ratios {ratios:?}, mean {mean:.3}");
    assert!(mean <= 0.5, "mean ratio {mean}");
}

#[test]
fn partition_and_expand_changes_gradient() {
    let spec = EncoderSpec::desk(1, 16, 16).with_blocks(1, 8);
    let p = materialize::<f32>(5, &spec).unwrap();
    let data = toy(1);
    let shard = ClientShard::whole(&data);
    let plain = init_synthetic(&shard, &data, 4, 1, &mut RngStream::new(2)).unwrap();
    let expanded = plain.clone().with_pae(2).unwrap();
    let real: Vec<_> = (0..2)
        .map(|y| class_mean_embedding(&p, &data.gather(&data.class_indices()[y])).unwrap())
        .collect();
    let g1 = dm_grad(&plain, &real, &p, 256, &mut RngStream::new(0)).unwrap();
    let g2 = dm_grad(&expanded, &real, &p, 256, &mut RngStream::new(0)).unwrap();
    for y in 0..2 {
        assert_eq!(g1.grads[y].shape(), g2.grads[y].shape());
        assert!(g1.grads[y].max_abs_diff(&g2.grads[y]) > 1e-6);
    }
}

#[test]
fn zero_loss_gives_zero_gradient() {
    let spec = EncoderSpec::desk(1, 16, 16).with_blocks(1, 4);
    let p = materialize::<f64>(5, &spec).unwrap();
    let mut rng = RngStream::new(3);
    let images = vec![Tensor::from_fn([3, 1, 16, 16], |_| rng.uniform())];
    let set = SyntheticSet::new(images, vec![0], 1).unwrap();
    let real = vec![Some(p.embed(set.class_images(0)).unwrap().mean_rows())];
    let g = dm_grad(&set, &real, &p, 256, &mut rng).unwrap();
    assert!(g.loss.total.abs() < 1e-24);
    assert!(g.grads[0].data().iter().all(|v| v.abs() < 1e-12));
}
