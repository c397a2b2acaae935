//! Partition-and-expand: each stored image is cut into an `l x l` grid of
//! crops and every crop is bilinearly resized back to full resolution, so a
//! fixed pixel budget yields `l^2` training samples per stored image.

use crate::error::{Error, Result};
use crate::kernel::{bilinear_upsample, bilinear_upsample_backward};
use crate::tensor::{Scalar, Tensor};

pub fn check_factor(l: usize, h: usize, w: usize) -> Result<()> {
    if l == 0 || !h.is_multiple_of(l) || !w.is_multiple_of(l) {
        return Err(Error::config(format!(
            "partition factor {l} must divide the image extents {h}x{w}"
        )));
    }
    Ok(())
}

/// `n x C x H x W` -> `(n * l^2) x C x H x W`, ordered row-major over
/// (image, crop row, crop column).
pub fn pae_expand<T: Scalar>(images: &Tensor<T>, l: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = images.dims4("pae_expand")?;
    check_factor(l, h, w)?;
    if l == 1 {
        return Ok(images.clone());
    }
    let (ch, cw) = (h / l, w / l);
    let mut crops = Vec::with_capacity(images.len());
    let x = images.data();
    for i in 0..n {
        for r in 0..l {
            for col in 0..l {
                for k in 0..c {
                    let plane = &x[(i * c + k) * h * w..][..h * w];
                    for y in 0..ch {
                        let row = &plane[(r * ch + y) * w + col * cw..][..cw];
                        crops.extend_from_slice(row);
                    }
                }
            }
        }
    }
    let crops = Tensor::new([n * l * l, c, ch, cw], crops)?;
    bilinear_upsample(&crops, h, w)
}

/// Adjoint of [`pae_expand`]: routes gradients of the expanded samples back
/// onto the stored pixels.
pub fn pae_expand_adjoint<T: Scalar>(grad: &Tensor<T>, l: usize) -> Result<Tensor<T>> {
    let [m, c, h, w] = grad.dims4("pae_expand_adjoint")?;
    check_factor(l, h, w)?;
    if l == 1 {
        return Ok(grad.clone());
    }
    if m % (l * l) != 0 {
        return Err(Error::dim(
            "pae_expand_adjoint",
            format!("{m} expanded samples is not a multiple of l^2 = {}", l * l),
        ));
    }
    let n = m / (l * l);
    let (ch, cw) = (h / l, w / l);
    let crops = bilinear_upsample_backward(grad, ch, cw)?;
    let g = crops.data();
    let mut out = vec![T::zero(); n * c * h * w];
    let mut src = 0;
    for i in 0..n {
        for r in 0..l {
            for col in 0..l {
                for k in 0..c {
                    let plane = &mut out[(i * c + k) * h * w..][..h * w];
                    for y in 0..ch {
                        let row = &mut plane[(r * ch + y) * w + col * cw..][..cw];
                        for v in row.iter_mut() {
                            *v += g[src];
                            src += 1;
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, c, h, w], out)
}
