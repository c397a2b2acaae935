use std::time::Instant;

use collabdm::data::{generate_toy, toy_templates, ClientShard, Dataset, Split, ToyConfig};
use collabdm::distill::{local_distill, DMConfig, SyntheticSet};
use collabdm::encoder::EncoderSpec;
use collabdm::eval::*;
use collabdm::gradcheck::{check_gradient, mask_signature, FD_REL_TOL, FD_STEP};
use collabdm::kernel::{conv2d, instance_norm, linear, INSTANCE_NORM_EPS};
use collabdm::{RngStream, Tensor};

fn flat_params(c: &Classifier<f64>) -> Vec<f64> {
    c.parameters().iter().flat_map(|p| p.data().to_vec()).collect()
}

fn unflatten(c: &Classifier<f64>, flat: &[f64]) -> Classifier<f64> {
    let mut out = c.clone();
    let mut off = 0;
    let params = c
        .parameters()
        .iter()
        .map(|p| {
            let t = Tensor::new(p.shape().to_vec(), flat[off..off + p.len()].to_vec()).unwrap();
            off += p.len();
            t
        })
        .collect();
    out.set_parameters(params).unwrap();
    out
}

/// Signature of every ReLU decision the classifier makes on `x`.
fn regime(c: &Classifier<f64>, x: &Tensor<f64>) -> u64 {
    let n = x.shape()[0];
    let p = c.parameters();
    let mut mask = Vec::new();
    match c.architecture() {
        Architecture::ConvNet { blocks, .. } => {
            let mut h = x.clone();
            for w in &p[..blocks] {
                let normed = instance_norm(&conv2d(&h, w, 1, 1).unwrap(), INSTANCE_NORM_EPS).unwrap();
                mask.extend(normed.data().iter().map(|&v| v > 0.0));
                h = collabdm::kernel::avg_pool2(&collabdm::kernel::relu(&normed)).unwrap();
            }
        }
        Architecture::Mlp { .. } => {
            let flat = x.clone().reshape([n, x.row_len()]).unwrap();
            let pre = linear(&flat, &p[0], Some(&p[1])).unwrap();
            mask.extend(pre.data().iter().map(|&v| v > 0.0));
        }
    }
    mask_signature(&mask)
}

fn check_weights(arch: Architecture, seed: u64) {
    let mut rng = RngStream::new(seed);
    let clf = Classifier::<f64>::new(arch, [2, 8, 8], 3, seed).unwrap();
    let x = Tensor::from_fn([5, 2, 8, 8], |_| rng.uniform());
    let labels = [0, 2, 1, 1, 0];
    let (_, grads) = clf.loss_and_grad(&x, &labels).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let w = flat_params(&clf);
    let mut idx: Vec<usize> = (0..w.len()).collect();
    rng.partial_shuffle(&mut idx, 60);
    idx.truncate(60);
    // Always include the head, which the random subset may miss.
    idx.extend(w.len() - 3..w.len());
    let mut f = |p: &[f64]| unflatten(&clf, p).loss_and_grad(&x, &labels).unwrap().0;
    let mut r = |p: &[f64]| regime(&unflatten(&clf, p), &x);
    let res = check_gradient(&w, &analytic, &idx, FD_STEP, &mut f, Some(&mut r));
    assert!(res.passed(FD_REL_TOL), "{arch} seed {seed}: {res:?}");
    assert!(res.checked > idx.len() / 2, "{res:?}");
}

#[test]
fn classifier_weight_gradients() {
    for seed in 0..3 {
        check_weights(Architecture::ConvNet { blocks: 2, channels: 4 }, seed);
        check_weights(Architecture::ConvNet { blocks: 1, channels: 6 }, seed);
        check_weights(Architecture::Mlp { hidden: 7 }, seed);
    }
}

fn quick(arch: Architecture) -> ClassifierSpec {
    ClassifierSpec {
        arch,
        ..ClassifierSpec::default()
    }
}

#[test]
fn single_class_set_predicts_that_class() {
    let mut rng = RngStream::new(1);
    let images = vec![
        Tensor::from_fn([3, 1, 8, 8], |_| rng.uniform() as f32),
        Tensor::from_fn([3, 1, 8, 8], |_| rng.uniform() as f32),
    ];
    // Two classes declared but only class 1 is represented in training.
    let (all, _) = SyntheticSet::new(images, vec![3, 3], 1).unwrap().expanded().unwrap();
    let clf = train_on(&all, &[1; 6], 2, &quick(Architecture::Mlp { hidden: 8 })).unwrap();
    let probe = Tensor::from_fn([20, 1, 8, 8], |_| rng.uniform() as f32);
    assert!(clf.predict(&probe).unwrap().iter().all(|&p| p == 1));
}

#[test]
fn separable_set_is_fit_exactly_by_mlp() {
    // Class y lights up row block y; linearly separable by construction.
    let mut rng = RngStream::new(2);
    let images: Vec<_> = (0..3)
        .map(|y| {
            Tensor::from_fn([4, 1, 6, 6], |i| {
                let row = (i % 36) / 6;
                let on = row / 2 == y;
                (if on { 0.8 } else { 0.1 }) as f32 + 0.1 * rng.uniform() as f32
            })
        })
        .collect();
    let set = SyntheticSet::new(images, vec![4; 3], 1).unwrap();
    let clf = train_classifier(&set, &quick(Architecture::Mlp { hidden: 16 })).unwrap();
    let (x, labels) = set.expanded().unwrap();
    assert_eq!(clf.predict(&x).unwrap(), labels);
    let again = train_classifier(&set, &quick(Architecture::Mlp { hidden: 16 })).unwrap();
    assert_eq!(clf, again);
}

#[test]
fn memorizer_scores_one_on_its_training_set() {
    let mut rng = RngStream::new(3);
    let n = 12;
    let images = Tensor::from_fn([n, 1, 4, 4], |_| rng.uniform() as f32);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let spec = ClassifierSpec {
        epochs: 2000,
        patience: 2000,
        ..quick(Architecture::Mlp { hidden: 64 })
    };
    let clf = train_on(&images, &labels, 3, &spec).unwrap();
    let data = Dataset::new(images, labels, 3, Split::Train).unwrap();
    assert_eq!(test_accuracy(&clf, &data).unwrap(), 1.0);
}

fn toy_cfg() -> ToyConfig {
    ToyConfig::default()
}

fn nearest_template_accuracy(cfg: &ToyConfig, test: &Dataset) -> f64 {
    let templates = toy_templates(cfg).unwrap();
    let correct = (0..test.len())
        .filter(|&i| {
            let x = test.images().row(i);
            let dist = |t: &Tensor<f32>| -> f64 {
                t.data().iter().zip(x).map(|(a, b)| f64::from(a - b).powi(2)).sum()
            };
            let best = (0..templates.len())
                .min_by(|&a, &b| dist(&templates[a]).total_cmp(&dist(&templates[b])))
                .unwrap();
            best == test.labels()[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

fn distilled(train: &Dataset, iters: usize) -> SyntheticSet {
    let cfg = DMConfig {
        ipc: 10,
        local_iters: iters,
        batch: 128,
        ..DMConfig::default()
    };
    let spec = EncoderSpec::desk(1, 16, 16);
    local_distill(&ClientShard::whole(train), train, &cfg, &spec, &mut RngStream::new(9)).unwrap()
}

#[test]
fn distilled_toy_convnet_tracks_nearest_template() {
    let cfg = toy_cfg();
    let (train, test) = generate_toy(&cfg).unwrap();
    let oracle = nearest_template_accuracy(&cfg, &test);
    let set = distilled(&train, 200);
    let start = Instant::now();
    let acc = evaluate(&set, &ClassifierSpec::default(), &test, 3).unwrap();
    println!(
        "nearest-template {oracle:.4}, convnet {:.4} +/- {:.4} ({:?})",
        acc.mean,
        acc.std,
        start.elapsed()
    );
    assert!(acc.mean >= oracle - 0.03, "{} vs oracle {oracle}", acc.mean);
}

#[test]
fn convnet_distilled_set_transfers_to_mlp() {
    let cfg = toy_cfg();
    let (train, test) = generate_toy(&cfg).unwrap();
    let set = distilled(&train, 100);
    let mlp = Architecture::Mlp { hidden: 64 };
    let m = cross_arch_eval(&[("convnet".into(), &set)], &[mlp], &ClassifierSpec::default(), &test, 2)
        .unwrap();
    let chance = 1.0 / cfg.num_classes as f64;
    println!("mlp on convnet-distilled set: {:.4}", m.cells[0][0].mean);
    assert!(m.cells[0][0].mean >= chance + 0.2);
    assert!(m.to_csv().starts_with("train,test,mean,std\nconvnet,mlp-64,"));
}

#[test]
fn one_by_one_matrix_equals_direct_call() {
    let cfg = ToyConfig {
        per_class: 10,
        test_per_class: 10,
        ..toy_cfg()
    };
    let (train, test) = generate_toy(&cfg).unwrap();
    let set = distilled(&train, 0);
    let spec = ClassifierSpec {
        epochs: 20,
        ..ClassifierSpec::default()
    };
    let m = cross_arch_eval(&[("a".into(), &set)], &[spec.arch], &spec, &test, 1).unwrap();
    let direct = test_accuracy(&train_classifier(&set, &spec).unwrap(), &test).unwrap();
    assert_eq!(m.cells.len(), 1);
    assert_eq!(m.cells[0].len(), 1);
    assert_eq!(m.cells[0][0].mean, direct);
    assert_eq!(m.cells[0][0].std, 0.0);
}
