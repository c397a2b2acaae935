//! Utility of a synthetic set: train a fresh classifier on it and measure
//! accuracy on held-out real data.

mod classifier;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use classifier::{Architecture, Classifier};

use crate::data::Dataset;
use crate::distill::SyntheticSet;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Rows evaluated per forward pass at test time.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub arch: Architecture,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a relative training-loss
    /// improvement of `plateau_tol`.
    pub patience: usize,
    pub plateau_tol: f64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            arch: Architecture::ConvNet {
                blocks: 2,
                channels: 16,
            },
            epochs: 300,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            patience: 30,
            plateau_tol: 1e-3,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("invalid classifier spec {self:?}")));
        }
        Ok(())
    }
}

/// Mini-batch momentum SGD on softmax cross-entropy over `(images, labels)`.
/// Deterministic in `spec.seed`.
pub fn train_on(
    images: &Tensor<f32>,
    labels: &[usize],
    num_classes: usize,
    spec: &ClassifierSpec,
) -> Result<Classifier<f32>> {
    spec.validate()?;
    let [n, c, h, w] = images.dims4("train_on")?;
    if n == 0 || labels.len() != n {
        return Err(Error::input(format!(
            "training needs a nonempty set with one label per image ({n} images, {} labels)",
            labels.len()
        )));
    }
    let mut clf = Classifier::<f32>::new(spec.arch, [c, h, w], num_classes, spec.seed)?;
    let mut order_rng = RngStream::new(spec.seed).substream_str("order");
    let mut velocity: Vec<Tensor<f32>> = clf
        .parameters()
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let (lr, mu) = (spec.lr as f32, spec.momentum as f32);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..spec.epochs {
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let x = images.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = clf.loss_and_grad(&x, &y)?;
            total += f64::from(loss) * chunk.len() as f64;
            for ((p, v), g) in clf.parameters_mut().iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pi, vi), &gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vi = mu * *vi + gi;
                    *pi -= lr * *vi;
                }
            }
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::input("classifier training diverged"));
        }
        if epoch_loss < best * (1.0 - spec.plateau_tol) {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= spec.patience {
                break;
            }
        }
    }
    Ok(clf)
}

/// Trains on the expanded synthetic set; every mini-sample inherits its
/// source image's label.
pub fn train_classifier(synthetic: &SyntheticSet<f32>, spec: &ClassifierSpec) -> Result<Classifier<f32>> {
    let (images, labels) = synthetic.expanded()?;
    train_on(&images, &labels, synthetic.num_classes(), spec)
}

/// Fraction of `test` whose argmax prediction equals the label.
pub fn test_accuracy(clf: &Classifier<f32>, test: &Dataset) -> Result<f64> {
    if test.num_classes() > clf.num_classes() {
        return Err(Error::input(format!(
            "test set has {} classes, classifier {}",
            test.num_classes(),
            clf.num_classes()
        )));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let preds = clf.predict(&test.images().select_rows(chunk))?;
        correct += preds
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == test.labels()[i])
            .count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Mean and population standard deviation over independent trainings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl Accuracy {
    pub fn from_runs(runs: Vec<f64>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let var = runs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            runs,
        }
    }
}

/// Trains `repeats` classifiers (repeat `r` uses seed `spec.seed + r`) and
/// tests each on `test`.
pub fn evaluate(
    synthetic: &SyntheticSet<f32>,
    spec: &ClassifierSpec,
    test: &Dataset,
    repeats: usize,
) -> Result<Accuracy> {
    if repeats == 0 {
        return Err(Error::config("evaluation needs at least one repeat"));
    }
    let (images, labels) = synthetic.expanded()?;
    let runs = (0..repeats as u64)
        .into_par_iter()
        .map(|r| {
            let spec = ClassifierSpec {
                seed: spec.seed.wrapping_add(r),
                ..*spec
            };
            let clf = train_on(&images, &labels, synthetic.num_classes(), &spec)?;
            test_accuracy(&clf, test)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Accuracy::from_runs(runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    /// Label of the encoder family each synthetic set was distilled with.
    pub train: Vec<String>,
    pub test: Vec<Architecture>,
    /// `cells[i][j]`: set `i` evaluated with architecture `j`.
    pub cells: Vec<Vec<Accuracy>>,
}

impl AccuracyMatrix {
    /// One line per cell: `train,test,mean,std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train,test,mean,std\n");
        for (name, row) in self.train.iter().zip(&self.cells) {
            for (arch, cell) in self.test.iter().zip(row) {
                out.push_str(&format!("{name},{arch},{:.6},{:.6}\n", cell.mean, cell.std));
            }
        }
        out
    }
}

/// Evaluates each labelled synthetic set under each test architecture.
pub fn cross_arch_eval(
    sets: &[(String, &SyntheticSet<f32>)],
    test_archs: &[Architecture],
    base: &ClassifierSpec,
    test: &Dataset,
    repeats: usize,
) -> Result<AccuracyMatrix> {
    let cells = sets
        .iter()
        .map(|(_, set)| {
            test_archs
                .iter()
                .map(|&arch| evaluate(set, &ClassifierSpec { arch, ..*base }, test, repeats))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyMatrix {
        train: sets.iter().map(|(n, _)| n.clone()).collect(),
        test: test_archs.to_vec(),
        cells,
    })
}
