//! Distribution matching: the synthetic set, its loss and gradient, and the
//! client-local distillation loop.

mod local;
mod objective;
mod pae;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use local::{init_synthetic, local_distill};
pub use objective::{class_mean_embedding, dm_grad, dm_loss, ClassMeans, DmGrad, DmLoss};
pub use pae::{check_factor as check_pae_factor, pae_expand, pae_expand_adjoint};

use crate::data::raw::{self, FormatError, Reader};
use crate::error::{Error, Result};
use crate::tensor::{shape_eq, Scalar, Tensor};

/// Distillation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DMConfig {
    /// Images per class stored in the synthetic set.
    pub ipc: usize,
    pub local_lr: f64,
    pub server_lr: f64,
    pub local_iters: usize,
    /// Real-data batch size per class.
    pub batch: usize,
    pub momentum: f64,
    /// Partition-and-expand factor; 1 disables it.
    pub pae: usize,
    /// Upper bound on expanded synthetic samples embedded per class and step.
    pub syn_batch_cap: usize,
}

impl Default for DMConfig {
    fn default() -> Self {
        Self {
            ipc: 10,
            local_lr: 1.0,
            server_lr: 10.0,
            local_iters: 1000,
            batch: 512,
            momentum: 0.5,
            pae: 1,
            syn_batch_cap: 256,
        }
    }
}

impl DMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ipc == 0 || self.batch == 0 || self.pae == 0 || self.syn_batch_cap == 0 {
            return Err(Error::config(format!(
                "ipc, batch, pae and syn_batch_cap must be positive: {self:?}"
            )));
        }
        if !(self.local_lr > 0.0 && self.server_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// The distilled dataset: `ipc` stored images for every class plus the
/// SGD momentum buffers that update them.
///
/// Labels are implicit in the class index. `real_init[y]` counts the
/// leading class-`y` images that were initialized from real examples;
/// the rest started as noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet<T = f32> {
    image_shape: [usize; 3],
    pae_l: usize,
    images: Vec<Tensor<T>>,
    momentum: Vec<Tensor<T>>,
    real_init: Vec<usize>,
}

impl<T: Scalar> SyntheticSet<T> {
    pub fn new(images: Vec<Tensor<T>>, real_init: Vec<usize>, pae_l: usize) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::input("synthetic set needs at least one class"))?;
        let [ipc, c, h, w] = first.dims4("synthetic set")?;
        if ipc == 0 {
            return Err(Error::input("synthetic set needs at least one image per class"));
        }
        for t in &images {
            shape_eq("synthetic set", "class images", t.shape(), &[ipc, c, h, w])?;
        }
        if real_init.len() != images.len() || real_init.iter().any(|&r| r > ipc) {
            return Err(Error::input(format!(
                "real-init counts {real_init:?} inconsistent with {} classes of {ipc}",
                images.len()
            )));
        }
        pae::check_factor(pae_l, h, w)?;
        let momentum = images.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Ok(Self {
            image_shape: [c, h, w],
            pae_l,
            images,
            momentum,
            real_init,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.images.len()
    }

    pub fn ipc(&self) -> usize {
        self.images[0].shape()[0]
    }

    pub fn pae_l(&self) -> usize {
        self.pae_l
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn class_images(&self, y: usize) -> &Tensor<T> {
        &self.images[y]
    }

    pub fn class_images_mut(&mut self, y: usize) -> &mut Tensor<T> {
        &mut self.images[y]
    }

    pub fn momentum(&self, y: usize) -> &Tensor<T> {
        &self.momentum[y]
    }

    pub fn real_init(&self) -> &[usize] {
        &self.real_init
    }

    pub fn reset_momentum(&mut self) {
        for m in &mut self.momentum {
            m.data_mut().fill(T::zero());
        }
    }

    /// Stored scalars, `num_classes * ipc * C * H * W`, independent of `pae_l`.
    pub fn stored_scalars(&self) -> usize {
        self.images.iter().map(Tensor::len).sum()
    }

    pub fn pixels_in_unit_range(&self) -> bool {
        self.images
            .iter()
            .flat_map(|t| t.data())
            .all(|&v| v >= T::zero() && v <= T::one())
    }

    /// Expanded training samples and their labels (class-major).
    pub fn expanded(&self) -> Result<(Tensor<T>, Vec<usize>)> {
        let parts = self
            .images
            .iter()
            .map(|t| pae_expand(t, self.pae_l))
            .collect::<Result<Vec<_>>>()?;
        let labels = parts
            .iter()
            .enumerate()
            .flat_map(|(y, p)| std::iter::repeat_n(y, p.shape()[0]))
            .collect();
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Ok((Tensor::concat_rows(&refs)?, labels))
    }

    pub fn cast<U: Scalar>(&self) -> SyntheticSet<U> {
        SyntheticSet {
            image_shape: self.image_shape,
            pae_l: self.pae_l,
            images: self.images.iter().map(Tensor::cast).collect(),
            momentum: self.momentum.iter().map(Tensor::cast).collect(),
            real_init: self.real_init.clone(),
        }
    }

    /// Same pixels under a different partition factor (fresh momentum).
    pub fn with_pae(&self, pae_l: usize) -> Result<Self> {
        Self::new(self.images.clone(), self.real_init.clone(), pae_l)
    }
}

/// Momentum SGD on stored pixels: `v <- momentum * v + g`,
/// `x <- clamp(x - lr * v, 0, 1)`.
pub fn sgd_step<T: Scalar>(
    synthetic: &mut SyntheticSet<T>,
    grads: &[Tensor<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != synthetic.num_classes() {
        return Err(Error::dim(
            "sgd_step",
            format!(
                "{} gradient tensors for {} classes",
                grads.len(),
                synthetic.num_classes()
            ),
        ));
    }
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for ((x, v), g) in synthetic
        .images
        .iter_mut()
        .zip(synthetic.momentum.iter_mut())
        .zip(grads)
    {
        shape_eq("sgd_step", "gradient", g.shape(), x.shape())?;
        for ((xi, vi), &gi) in x.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = mu * *vi + gi;
            *xi = (*xi - lr * *vi).max(T::zero()).min(T::one());
        }
    }
    Ok(())
}

const SYNTHETIC_MAGIC: &[u8; 4] = b"CDS1";

impl SyntheticSet<f32> {
    /// `CDS1`, then `num_classes`, `ipc`, `pae_l` and one real-init count
    /// per class as `u32`, then the stored images as one raw f32 tensor
    /// `(num_classes * ipc) x C x H x W`. Momentum is not serialized.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(SYNTHETIC_MAGIC);
        for v in [self.num_classes(), self.ipc(), self.pae_l] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &r in &self.real_init {
            out.extend_from_slice(&(r as u32).to_le_bytes());
        }
        let refs: Vec<&Tensor<f32>> = self.images.iter().collect();
        let all = Tensor::concat_rows(&refs).expect("classes share a shape");
        raw::encode_tensor(&all, &mut out);
        out
    }

    pub fn encoded_len(&self) -> usize {
        Self::encoded_len_for(self.num_classes(), self.ipc(), self.image_shape)
    }

    /// Encoded size of any set with these dimensions.
    pub fn encoded_len_for(num_classes: usize, ipc: usize, image_shape: [usize; 3]) -> usize {
        let [c, h, w] = image_shape;
        16 + 4 * num_classes + raw::encoded_tensor_len(&[num_classes * ipc, c, h, w])
    }

    /// Decodes from the front of `buf`, returning the set and bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize), FormatError> {
        let mut r = Reader::new(buf, "synthetic set");
        r.magic(SYNTHETIC_MAGIC)?;
        let classes = r.u32()? as usize;
        let ipc = r.u32()? as usize;
        let pae_l = r.u32()? as usize;
        let mut real_init = Vec::with_capacity(classes.min(buf.len()));
        for _ in 0..classes {
            real_init.push(r.u32()? as usize);
        }
        let head = r.position();
        let (all, used) = raw::decode_tensor(&buf[head..])?;
        let shape = all.shape().to_vec();
        if shape.len() != 4 || shape[0] != classes * ipc {
            return Err(FormatError::NotImages(shape));
        }
        let per = ipc * shape[1] * shape[2] * shape[3];
        let data = all.into_data();
        let images = (0..classes)
            .map(|y| {
                Tensor::new(
                    [ipc, shape[1], shape[2], shape[3]],
                    data[y * per..(y + 1) * per].to_vec(),
                )
                .expect("sliced to shape")
            })
            .collect();
        let set = Self::new(images, real_init, pae_l)
            .map_err(|_| FormatError::NotImages(shape.clone()))?;
        Ok((set, head + used))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let buf = std::fs::read(path)?;
        let (set, used) = Self::decode(&buf)?;
        if used != buf.len() {
            return Err(FormatError::TrailingBytes(buf.len() - used).into());
        }
        Ok(set)
    }
}
