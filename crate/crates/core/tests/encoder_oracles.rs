use collabdm::distill::{dm_loss, DmLoss};
use collabdm::encoder::{materialize, EncoderParams, EncoderSpec};
use collabdm::kernel::{avg_pool2, conv2d, instance_norm, relu, INSTANCE_NORM_EPS};
use collabdm::{RngStream, Tensor};

#[test]
fn embed_equals_layer_by_layer_composition() {
    let spec = EncoderSpec::desk(3, 16, 16);
    let params = materialize::<f32>(42, &spec).unwrap();
    let mut rng = RngStream::new(1);
    let x = Tensor::from_fn([3, 3, 16, 16], |_| rng.uniform() as f32);
    let mut h = x.clone();
    for w in params.weights() {
        h = conv2d(&h, w, 1, 1).unwrap();
        h = instance_norm(&h, INSTANCE_NORM_EPS).unwrap();
        h = relu(&h);
        h = avg_pool2(&h).unwrap();
    }
    let expected = h.reshape([3, spec.embedding_dim()]).unwrap();
    let got = params.embed(&x).unwrap();
    assert_eq!(got.shape(), &[3, 256]);
    assert_eq!(got, expected);
}

#[test]
fn constant_one_by_one_encoder_closed_form() {
    // One block, one channel, 1x1 kernel with weight w on a 4x4 image.
    // With z = w x, n = (z - mean) / s, s = sqrt(var + eps) and P the set of
    // positive n, the summed embedding is (1/4) sum_{i in P} n_i, so
    // d/dx_j = (w / 4s) (1[j in P] - |P|/M - n_j S_P / M), S_P = sum_{i in P} n_i.
    let spec = EncoderSpec {
        num_blocks: 1,
        channels: 1,
        kernel: 1,
        in_channels: 1,
        height: 4,
        width: 4,
        epsilon: INSTANCE_NORM_EPS,
    };
    let w = 0.7;
    let params =
        EncoderParams::from_weights(0, spec, vec![Tensor::full([1, 1, 1, 1], w)]).unwrap();
    let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 16.0 + 0.01 * i as f64).collect();
    let input = Tensor::new([1, 1, 4, 4], x.clone()).unwrap();
    let upstream = Tensor::full([1, 4], 1.0);
    let grad = params.embed_input_grad(&input, &upstream).unwrap();

    let m = 16.0;
    let z: Vec<f64> = x.iter().map(|v| w * v).collect();
    let mean = z.iter().sum::<f64>() / m;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    let s = (var + INSTANCE_NORM_EPS).sqrt();
    let n: Vec<f64> = z.iter().map(|v| (v - mean) / s).collect();
    let positive = n.iter().filter(|&&v| v > 0.0).count() as f64;
    let sp: f64 = n.iter().filter(|&&v| v > 0.0).sum();
    for j in 0..16 {
        let ind = if n[j] > 0.0 { 1.0 } else { 0.0 };
        let expected = w / (4.0 * s) * (ind - positive / m - n[j] * sp / m);
        assert!(
            (grad.data()[j] - expected).abs() < 1e-12,
            "pixel {j}: {} vs {expected}",
            grad.data()[j]
        );
    }
    let total: f64 = params.embed(&input).unwrap().data().iter().sum();
    assert!((total - sp / 4.0).abs() < 1e-12);
}

#[test]
fn embedding_dimension_holds_for_all_batches() {
    let spec = EncoderSpec::desk(1, 8, 8).with_blocks(3, 5);
    let params = materialize::<f32>(3, &spec).unwrap();
    for n in [0, 1, 4] {
        let e = params.embed(&Tensor::full([n, 1, 8, 8], 0.5)).unwrap();
        assert_eq!(e.shape(), &[n, spec.embedding_dim()]);
    }
}

fn identity_encoder() -> EncoderParams<f64> {
    // Embedding = instance-normed, rectified, pooled input; used only to get
    // a concrete encoder for loss arithmetic.
    let spec = EncoderSpec {
        num_blocks: 1,
        channels: 1,
        kernel: 1,
        in_channels: 1,
        height: 2,
        width: 4,
        epsilon: INSTANCE_NORM_EPS,
    };
    EncoderParams::from_weights(0, spec, vec![Tensor::full([1, 1, 1, 1], 1.0)]).unwrap()
}

#[test]
fn dm_loss_matched_means_is_zero() {
    let p = identity_encoder();
    let batch = Tensor::from_fn([3, 1, 2, 4], |i| (i % 5) as f64 / 5.0);
    let mean = p.embed(&batch).unwrap().mean_rows();
    let l = dm_loss(&[Some(mean.clone()), Some(mean)], &[Some(batch.clone()), Some(batch)], &p)
        .unwrap();
    assert_eq!(l.total, 0.0);
}

#[test]
fn dm_loss_unit_squared_distance() {
    let p = identity_encoder();
    // A constant image normalizes to zero everywhere, so its embedding is (0, 0).
    let batch = Tensor::full([2, 1, 2, 4], 0.3);
    assert_eq!(p.embed(&batch).unwrap().mean_rows(), vec![0.0, 0.0]);
    let l = dm_loss(&[Some(vec![1.0, 0.0])], &[Some(batch)], &p).unwrap();
    assert_eq!(l, DmLoss { total: 1.0, per_class: vec![Some(1.0)] });
}

#[test]
fn dm_loss_matches_scalar_loops() {
    let spec = EncoderSpec::desk(1, 8, 8).with_blocks(2, 4);
    let p = materialize::<f64>(9, &spec).unwrap();
    let mut rng = RngStream::new(4);
    let d = spec.embedding_dim();
    let real: Vec<Option<Vec<f64>>> = vec![
        Some((0..d).map(|_| rng.uniform()).collect()),
        None,
        Some((0..d).map(|_| rng.uniform()).collect()),
    ];
    let batches: Vec<Option<Tensor<f64>>> = (0..3)
        .map(|y| Some(Tensor::from_fn([y + 1, 1, 8, 8], |_| rng.uniform())))
        .collect();
    let l = dm_loss(&real, &batches, &p).unwrap();

    let mut brute = 0.0;
    for y in [0usize, 2] {
        let b = batches[y].as_ref().unwrap();
        let rows = b.shape()[0];
        for j in 0..d {
            let mut s = 0.0;
            for i in 0..rows {
                let single = Tensor::new([1, 1, 8, 8], b.row(i).to_vec()).unwrap();
                s += p.embed(&single).unwrap().data()[j];
            }
            let diff = real[y].as_ref().unwrap()[j] - s / rows as f64;
            brute += diff * diff;
        }
    }
    assert!((l.total - brute).abs() < 1e-6, "{} vs {brute}", l.total);
    assert_eq!(l.per_class[1], None);
    assert!(l.total >= 0.0);
}

#[test]
fn dm_loss_rejects_wrong_dimension() {
    let p = identity_encoder();
    let r = dm_loss(&[Some(vec![1.0; 3])], &[Some(Tensor::full([1, 1, 2, 4], 0.1))], &p);
    assert!(matches!(r, Err(collabdm::Error::Dimension { .. })));
}
