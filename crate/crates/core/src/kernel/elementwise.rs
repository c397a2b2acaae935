use crate::error::{Error, Result};
use crate::tensor::{shape_eq, Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    shape_eq("relu_backward", "upstream gradient", grad_out.shape(), input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// 2x2 average pooling with stride 2. Spatial extents must be even.
pub fn avg_pool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("avg_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(
            "avg_pool2",
            format!("spatial axes must be even, got H={h} W={w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            let r0 = &src[2 * oy * w..][..w];
            let r1 = &src[(2 * oy + 1) * w..][..w];
            for ox in 0..wo {
                out.push((r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter);
            }
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub fn avg_pool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: [usize; 4],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(
            "avg_pool2_backward",
            format!("spatial axes must be even, got H={h} W={w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    shape_eq(
        "avg_pool2_backward",
        "upstream gradient",
        grad_out.shape(),
        &[n, c, ho, wo],
    )?;
    let quarter = T::of(0.25);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = g[(plane * ho + y / 2) * wo + x / 2] * quarter;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let x = Tensor::new([2], vec![-3.5f32, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        let g = Tensor::new([2], vec![1.0f32, 1.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn pool_constant_window() {
        let x = Tensor::<f32>::full([1, 1, 2, 2], 1.0);
        let y = avg_pool2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn pool_rejects_odd() {
        assert!(avg_pool2(&Tensor::<f32>::zeros([1, 1, 3, 2])).is_err());
        assert!(avg_pool2_backward(&Tensor::<f32>::zeros([1, 1, 1, 1]), [1, 1, 3, 2]).is_err());
    }

    #[test]
    fn pool_adjoint() {
        let x = Tensor::<f64>::from_fn([2, 3, 4, 6], |i| (i as f64 * 0.37).sin());
        let y = avg_pool2(&x).unwrap();
        let g = Tensor::<f64>::from_fn(y.shape().to_vec(), |i| (i as f64 * 1.3).cos());
        let dx = avg_pool2_backward(&g, [2, 3, 4, 6]).unwrap();
        assert!((y.dot(&g) - x.dot(&dx)).abs() < 1e-12);
    }
}
