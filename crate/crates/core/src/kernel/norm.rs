use crate::error::Result;
use crate::tensor::{shape_eq, Scalar, Tensor};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-(sample, channel) normalization without a learned affine:
/// `(x - mean) / sqrt(var + eps)` with the biased variance.
pub fn instance_norm<T: Scalar>(input: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("instance_norm")?;
    let m = h * w;
    let mut out = input.data().to_vec();
    if m == 0 {
        return Tensor::new([n, c, h, w], out);
    }
    for slice in out.chunks_mut(m) {
        let (mean, rstd) = stats(slice, eps);
        for v in slice.iter_mut() {
            *v = (*v - mean) * rstd;
        }
    }
    Tensor::new([n, c, h, w], out)
}

fn stats<T: Scalar>(slice: &[T], eps: f64) -> (T, T) {
    let inv_m = T::one() / T::of(slice.len() as f64);
    let mean = slice.iter().copied().sum::<T>() * inv_m;
    let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
    (mean, T::one() / (var + T::of(eps)).sqrt())
}

/// Input adjoint of [`instance_norm`]; statistics are recomputed from `input`.
///
/// With `xhat = (x - mean) * rstd`, per slice of size `M`:
/// `dx = rstd / M * (M*g - sum(g) - xhat * sum(g * xhat))`.
pub fn instance_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("instance_norm_backward")?;
    shape_eq(
        "instance_norm_backward",
        "upstream gradient",
        grad_out.shape(),
        input.shape(),
    )?;
    let m = h * w;
    let mut dx = vec![T::zero(); input.len()];
    if m == 0 {
        return Tensor::new([n, c, h, w], dx);
    }
    let mf = T::of(m as f64);
    for ((x, g), d) in input
        .data()
        .chunks(m)
        .zip(grad_out.data().chunks(m))
        .zip(dx.chunks_mut(m))
    {
        let (mean, rstd) = stats(x, eps);
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for (&xi, &gi) in x.iter().zip(g) {
            sum_g += gi;
            sum_gx += gi * (xi - mean) * rstd;
        }
        let scale = rstd / mf;
        for ((di, &xi), &gi) in d.iter_mut().zip(x).zip(g) {
            let xhat = (xi - mean) * rstd;
            *di = scale * (mf * gi - sum_g - xhat * sum_gx);
        }
    }
    Tensor::new([n, c, h, w], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_slice_is_zero() {
        let x = Tensor::<f32>::full([1, 1, 3, 3], 5.0);
        let y = instance_norm(&x, INSTANCE_NORM_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_two_point_slice() {
        let x = Tensor::new([1, 1, 1, 2], vec![-1.0f64, 1.0]).unwrap();
        let y = instance_norm(&x, INSTANCE_NORM_EPS).unwrap();
        let expect = 1.0 / (1.0 + INSTANCE_NORM_EPS).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn output_has_zero_mean_unit_variance() {
        let x = Tensor::<f64>::from_fn([2, 2, 4, 4], |i| ((i * 7919) % 31) as f64 * 0.1);
        let y = instance_norm(&x, 0.0).unwrap();
        for s in y.data().chunks(16) {
            let mean: f64 = s.iter().sum::<f64>() / 16.0;
            let var: f64 = s.iter().map(|v| v * v).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
