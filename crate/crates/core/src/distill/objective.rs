use crate::distill::{pae_expand, pae_expand_adjoint, SyntheticSet};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// Per-class mean embeddings of real data; `None` where no real data contributed.
pub type ClassMeans<T = f32> = Vec<Option<Vec<T>>>;

/// Mean embedding of a batch, or `None` for an empty batch.
pub fn class_mean_embedding<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &Tensor<T>,
) -> Result<Option<Vec<T>>> {
    if batch.rows() == 0 {
        return Ok(None);
    }
    Ok(Some(params.embed(batch)?.mean_rows()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmLoss<T = f32> {
    pub total: T,
    /// Squared mean-embedding distance per class; `None` for skipped classes.
    pub per_class: Vec<Option<T>>,
}

fn check_mean<T>(real: &[T], dim: usize) -> Result<()> {
    if real.len() != dim {
        return Err(Error::dim(
            "dm_loss",
            format!("real mean has {} entries, embedding dim is {dim}", real.len()),
        ));
    }
    Ok(())
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// `sum_y || real_mean_y - mean(embed(syn_batch_y)) ||^2` over classes that
/// have both a real mean and a nonempty synthetic batch.
pub fn dm_loss<T: Scalar>(
    real_means: &[Option<Vec<T>>],
    syn_batches: &[Option<Tensor<T>>],
    params: &EncoderParams<T>,
) -> Result<DmLoss<T>> {
    if real_means.len() != syn_batches.len() {
        return Err(Error::dim(
            "dm_loss",
            format!(
                "{} real means for {} synthetic classes",
                real_means.len(),
                syn_batches.len()
            ),
        ));
    }
    let dim = params.spec().embedding_dim();
    let mut total = T::zero();
    let mut per_class = Vec::with_capacity(real_means.len());
    for (real, syn) in real_means.iter().zip(syn_batches) {
        let term = match (real, syn) {
            (Some(real), Some(batch)) if batch.rows() > 0 => {
                check_mean(real, dim)?;
                let syn_mean = params.embed(batch)?.mean_rows();
                Some(squared_distance(real, &syn_mean))
            }
            _ => None,
        };
        if let Some(t) = term {
            total += t;
        }
        per_class.push(term);
    }
    Ok(DmLoss { total, per_class })
}

#[derive(Debug, Clone)]
pub struct DmGrad<T = f32> {
    pub loss: DmLoss<T>,
    /// Gradient with respect to each class's stored images.
    pub grads: Vec<Tensor<T>>,
}

/// Loss and exact gradient with respect to the stored synthetic pixels.
///
/// Each class contributes its expanded samples (all of them when there are
/// at most `cap`, otherwise `cap` drawn uniformly without replacement from
/// `rng`). The chain runs embedding -> encoder input -> partition-and-expand
/// adjoint. Real means are constants.
pub fn dm_grad<T: Scalar>(
    synthetic: &SyntheticSet<T>,
    real_means: &[Option<Vec<T>>],
    params: &EncoderParams<T>,
    cap: usize,
    rng: &mut RngStream,
) -> Result<DmGrad<T>> {
    let classes = synthetic.num_classes();
    if real_means.len() != classes {
        return Err(Error::dim(
            "dm_grad",
            format!("{} real means for {classes} synthetic classes", real_means.len()),
        ));
    }
    let dim = params.spec().embedding_dim();
    let l = synthetic.pae_l();
    let mut total = T::zero();
    let mut per_class = Vec::with_capacity(classes);
    let mut grads = Vec::with_capacity(classes);
    for (y, real) in real_means.iter().enumerate() {
        let stored = synthetic.class_images(y);
        let Some(real) = real else {
            per_class.push(None);
            grads.push(Tensor::zeros(stored.shape().to_vec()));
            continue;
        };
        check_mean(real, dim)?;
        let expanded = pae_expand(stored, l)?;
        let m = expanded.rows();
        let chosen: Option<Vec<usize>> = (m > cap).then(|| {
            let mut idx: Vec<usize> = (0..m).collect();
            rng.partial_shuffle(&mut idx, cap);
            idx.truncate(cap);
            idx
        });
        let batch = match &chosen {
            Some(idx) => expanded.select_rows(idx),
            None => expanded.clone(),
        };
        let n = batch.rows();
        let mut term = T::zero();
        let (_, dx) = params.embed_with_input_grad(&batch, |emb| {
            let mean = emb.mean_rows();
            let diff: Vec<T> = mean.iter().zip(real).map(|(&s, &r)| s - r).collect();
            term = diff.iter().map(|&d| d * d).sum();
            let scale = T::of(2.0) / T::of(n as f64);
            let row: Vec<T> = diff.iter().map(|&d| d * scale).collect();
            Tensor::from_fn([n, dim], |i| row[i % dim]).reshape([n, dim])
        })?;
        let dx_expanded = match &chosen {
            Some(idx) => {
                let mut full = Tensor::zeros(expanded.shape().to_vec());
                for (src, &dst) in idx.iter().enumerate() {
                    full.row_mut(dst).copy_from_slice(dx.row(src));
                }
                full
            }
            None => dx,
        };
        grads.push(pae_expand_adjoint(&dx_expanded, l)?);
        total += term;
        per_class.push(Some(term));
    }
    Ok(DmGrad {
        loss: DmLoss { total, per_class },
        grads,
    })
}
