use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output extent of a cross-correlation along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

fn geometry(
    op: &'static str,
    input_shape: [usize; 4],
    weight_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<(usize, Geometry)> {
    let [_, cin, h, w] = input_shape;
    let &[cout, wcin, kh, kw] = weight_shape else {
        return Err(Error::dim(
            op,
            format!("weights must be Cout x Cin x k x k, got {weight_shape:?}"),
        ));
    };
    if wcin != cin {
        return Err(Error::dim(
            op,
            format!("input channel axis is {cin} but weight Cin axis is {wcin}"),
        ));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::dim(
            op,
            format!("kernel axes must be equal and odd, got {kh} x {kw}"),
        ));
    }
    if stride == 0 {
        return Err(Error::dim(op, "stride must be at least 1"));
    }
    let (Some(ho), Some(wo)) = (
        conv_out_extent(h, kh, stride, pad),
        conv_out_extent(w, kw, stride, pad),
    ) else {
        return Err(Error::dim(
            op,
            format!("spatial axes H={h} W={w} smaller than kernel {kh} with pad {pad}"),
        ));
    };
    Ok((
        cout,
        Geometry {
            cin,
            h,
            w,
            k: kh,
            stride,
            pad,
            ho,
            wo,
        },
    ))
}

/// Unfolds one image into a `(Cin*k*k) x (H'*W')` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix entries back, accumulating.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip), no bias.
///
/// `input` is `N x Cin x H x W`, `weights` is `Cout x Cin x k x k` with odd `k`.
/// Output extent is `(H + 2*pad - k) / stride + 1` on each spatial axis.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let dims = input.dims4("conv2d")?;
    let (cout, g) = geometry("conv2d", dims, weights.shape(), stride, pad)?;
    let n = dims[0];
    let in_len = g.cin * g.h * g.w;
    let out_len = cout * g.out_plane();
    let mut out = vec![T::zero(); n * out_len];
    if out_len > 0 {
        out.par_chunks_mut(out_len)
            .enumerate()
            .for_each_init(
                || vec![T::zero(); g.patch() * g.out_plane()],
                |cols, (i, dst)| {
                    im2col(&input.data()[i * in_len..(i + 1) * in_len], &g, cols);
                    T::gemm(
                        cout,
                        g.patch(),
                        g.out_plane(),
                        weights.data(),
                        (g.patch() as isize, 1),
                        cols,
                        (g.out_plane() as isize, 1),
                        T::zero(),
                        dst,
                    );
                },
            );
    }
    Tensor::new([n, cout, g.ho, g.wo], out)
}

/// Vector-Jacobian product of [`conv2d`] with respect to its input.
pub fn conv2d_input_grad<T: Scalar>(
    grad_out: &Tensor<T>,
    weights: &Tensor<T>,
    input_shape: [usize; 4],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (cout, g) = geometry("conv2d_input_grad", input_shape, weights.shape(), stride, pad)?;
    let n = input_shape[0];
    crate::tensor::shape_eq(
        "conv2d_input_grad",
        "upstream gradient",
        grad_out.shape(),
        &[n, cout, g.ho, g.wo],
    )?;
    let in_len = g.cin * g.h * g.w;
    let out_len = cout * g.out_plane();
    let mut dx = vec![T::zero(); n * in_len];
    if in_len > 0 {
        dx.par_chunks_mut(in_len).enumerate().for_each_init(
            || vec![T::zero(); g.patch() * g.out_plane()],
            |cols, (i, dst)| {
                // cols = W^T (patch x Cout) * dY (Cout x plane)
                T::gemm(
                    g.patch(),
                    cout,
                    g.out_plane(),
                    weights.data(),
                    (1, g.patch() as isize),
                    &grad_out.data()[i * out_len..(i + 1) * out_len],
                    (g.out_plane() as isize, 1),
                    T::zero(),
                    cols,
                );
                col2im(cols, &g, dst);
            },
        );
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Vector-Jacobian product of [`conv2d`] with respect to its weights.
///
/// Per-image partial gradients are summed in image order, so the result
/// does not depend on thread scheduling.
pub fn conv2d_weight_grad<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight_shape: [usize; 4],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let dims = input.dims4("conv2d_weight_grad")?;
    let (cout, g) = geometry("conv2d_weight_grad", dims, &weight_shape, stride, pad)?;
    let n = dims[0];
    crate::tensor::shape_eq(
        "conv2d_weight_grad",
        "upstream gradient",
        grad_out.shape(),
        &[n, cout, g.ho, g.wo],
    )?;
    let in_len = g.cin * g.h * g.w;
    let out_len = cout * g.out_plane();
    let w_len = cout * g.patch();
    let partials: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![T::zero(); g.patch() * g.out_plane()],
            |cols, i| {
                im2col(&input.data()[i * in_len..(i + 1) * in_len], &g, cols);
                let mut dw = vec![T::zero(); w_len];
                // dW = dY (Cout x plane) * cols^T (plane x patch)
                T::gemm(
                    cout,
                    g.out_plane(),
                    g.patch(),
                    &grad_out.data()[i * out_len..(i + 1) * out_len],
                    (g.out_plane() as isize, 1),
                    cols,
                    (1, g.out_plane() as isize),
                    T::zero(),
                    &mut dw,
                );
                dw
            },
        )
        .collect();
    let mut total = vec![T::zero(); w_len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    Tensor::new(weight_shape.to_vec(), total)
}
