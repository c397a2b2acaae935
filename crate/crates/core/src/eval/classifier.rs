use serde::{Deserialize, Serialize};

use crate::encoder::{materialize, trunk_backward, trunk_forward, EncoderSpec};
use crate::error::{Error, Result};
use crate::kernel::{linear, linear_backward, relu, relu_backward, softmax_cross_entropy};
use crate::rng::RngStream;
use crate::tensor::{shape_eq, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Trainable copy of the encoder trunk followed by a linear head.
    ConvNet { blocks: usize, channels: usize },
    /// One hidden ReLU layer on flattened pixels.
    Mlp { hidden: usize },
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::ConvNet { blocks, channels } => write!(f, "convnet-{blocks}x{channels}"),
            Architecture::Mlp { hidden } => write!(f, "mlp-{hidden}"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    /// Parses the [`Display`](std::fmt::Display) form, e.g. `convnet-2x16` or `mlp-128`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown architecture {s:?}"));
        if let Some(rest) = s.strip_prefix("convnet-") {
            let (b, c) = rest.split_once('x').ok_or_else(bad)?;
            return Ok(Architecture::ConvNet {
                blocks: b.parse().map_err(|_| bad())?,
                channels: c.parse().map_err(|_| bad())?,
            });
        }
        if let Some(rest) = s.strip_prefix("mlp-") {
            return Ok(Architecture::Mlp {
                hidden: rest.parse().map_err(|_| bad())?,
            });
        }
        Err(bad())
    }
}

/// A classifier's architecture and its parameter tensors.
///
/// ConvNet parameters are the block weights followed by the head weight
/// `K x D` and bias `K`. MLP parameters are `W1, b1, W2, b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T = f32> {
    arch: Architecture,
    image_shape: [usize; 3],
    num_classes: usize,
    trunk: Option<EncoderSpec>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Classifier<T> {
    /// Fresh parameters drawn from `seed`: Kaiming-normal hidden layers,
    /// `N(0, 1/fan_in)` output layers, zero biases.
    pub fn new(arch: Architecture, image_shape: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("classifier needs at least one class"));
        }
        let [c, h, w] = image_shape;
        let mut rng = RngStream::new(seed);
        let mut normal = |shape: &[usize], std: f64| {
            Tensor::from_fn(shape.to_vec(), |_| T::of(std * rng.normal()))
        };
        match arch {
            Architecture::ConvNet { blocks, channels } => {
                let spec = EncoderSpec::desk(c, h, w).with_blocks(blocks, channels);
                spec.validate()?;
                let trunk_seed = RngStream::new(seed).substream_str("trunk").next_u64();
                let mut params = materialize::<T>(trunk_seed, &spec)?.weights().to_vec();
                let d = spec.embedding_dim();
                params.push(normal(&[num_classes, d], (1.0 / d as f64).sqrt()));
                params.push(Tensor::zeros([num_classes]));
                Ok(Self {
                    arch,
                    image_shape,
                    num_classes,
                    trunk: Some(spec),
                    params,
                })
            }
            Architecture::Mlp { hidden } => {
                let d = c * h * w;
                if hidden == 0 || d == 0 {
                    return Err(Error::config("mlp needs a hidden layer and nonempty input"));
                }
                let params = vec![
                    normal(&[hidden, d], (2.0 / d as f64).sqrt()),
                    Tensor::zeros([hidden]),
                    normal(&[num_classes, hidden], (1.0 / hidden as f64).sqrt()),
                    Tensor::zeros([num_classes]),
                ];
                Ok(Self {
                    arch,
                    image_shape,
                    num_classes,
                    trunk: None,
                    params,
                })
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Replaces every parameter tensor; shapes must match the current ones.
    pub fn set_parameters(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dim(
                "set_parameters",
                format!("{} tensors for {} parameters", params.len(), self.params.len()),
            ));
        }
        for (new, old) in params.iter().zip(&self.params) {
            shape_eq("set_parameters", "parameter", new.shape(), old.shape())?;
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, op: &'static str, x: &Tensor<T>) -> Result<usize> {
        let [n, c, h, w] = x.dims4(op)?;
        shape_eq(op, "image", &[c, h, w], &self.image_shape)?;
        Ok(n)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_input("logits", x)?;
        match &self.trunk {
            Some(spec) => {
                let b = spec.num_blocks;
                let (feat, _) = trunk_forward(&self.params[..b], spec, x, false)?;
                let flat = feat.reshape([n, spec.embedding_dim()])?;
                linear(&flat, &self.params[b], Some(&self.params[b + 1]))
            }
            None => {
                let flat = x.clone().reshape([n, x.row_len()])?;
                let hidden = relu(&linear(&flat, &self.params[0], Some(&self.params[1]))?);
                linear(&hidden, &self.params[2], Some(&self.params[3]))
            }
        }
    }

    /// Mean cross-entropy on `(x, labels)` and its gradient for every parameter.
    pub fn loss_and_grad(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<Tensor<T>>)> {
        let n = self.check_input("loss_and_grad", x)?;
        match &self.trunk {
            Some(spec) => {
                let b = spec.num_blocks;
                let (feat, cache) = trunk_forward(&self.params[..b], spec, x, true)?;
                let feat_shape = feat.shape().to_vec();
                let flat = feat.reshape([n, spec.embedding_dim()])?;
                let logits = linear(&flat, &self.params[b], Some(&self.params[b + 1]))?;
                let (loss, g) = softmax_cross_entropy(&logits, labels)?;
                let head = linear_backward(&flat, &self.params[b], &g)?;
                let (_, mut grads) = trunk_backward(
                    &self.params[..b],
                    spec,
                    &cache.expect("cache requested"),
                    head.input.reshape(feat_shape)?,
                    true,
                )?;
                grads.push(head.weight);
                grads.push(head.bias);
                Ok((loss, grads))
            }
            None => {
                let flat = x.clone().reshape([n, x.row_len()])?;
                let pre = linear(&flat, &self.params[0], Some(&self.params[1]))?;
                let hidden = relu(&pre);
                let logits = linear(&hidden, &self.params[2], Some(&self.params[3]))?;
                let (loss, g) = softmax_cross_entropy(&logits, labels)?;
                let out = linear_backward(&hidden, &self.params[2], &g)?;
                let g_pre = relu_backward(&pre, &out.input)?;
                let first = linear_backward(&flat, &self.params[0], &g_pre)?;
                Ok((loss, vec![first.weight, first.bias, out.weight, out.bias]))
            }
        }
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        let k = self.num_classes;
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}
