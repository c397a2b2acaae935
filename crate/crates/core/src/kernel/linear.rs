use crate::error::{Error, Result};
use crate::tensor::{shape_eq, Scalar, Tensor};

/// `y = x W^T + b` with `x: N x D`, `W: O x D`, `b: O`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [n, d] = input.dims2("linear")?;
    let [o, wd] = weight.dims2("linear")?;
    if wd != d {
        return Err(Error::dim(
            "linear",
            format!("input feature axis is {d} but weight input axis is {wd}"),
        ));
    }
    let mut out = vec![T::zero(); n * o];
    if let Some(b) = bias {
        shape_eq("linear", "bias", b.shape(), &[o])?;
        for row in out.chunks_mut(o.max(1)) {
            row.copy_from_slice(b.data());
        }
    }
    if n > 0 && o > 0 {
        T::gemm(
            n,
            d,
            o,
            input.data(),
            (d as isize, 1),
            weight.data(),
            (1, d as isize),
            if bias.is_some() { T::one() } else { T::zero() },
            &mut out,
        );
    }
    Tensor::new([n, o], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let [n, d] = input.dims2("linear_backward")?;
    let [o, wd] = weight.dims2("linear_backward")?;
    if wd != d {
        return Err(Error::dim(
            "linear_backward",
            format!("input feature axis is {d} but weight input axis is {wd}"),
        ));
    }
    shape_eq("linear_backward", "upstream gradient", grad_out.shape(), &[n, o])?;
    let mut dx = vec![T::zero(); n * d];
    let mut dw = vec![T::zero(); o * d];
    if n > 0 && o > 0 && d > 0 {
        // dx = dY (N x O) * W (O x D)
        T::gemm(
            n,
            o,
            d,
            grad_out.data(),
            (o as isize, 1),
            weight.data(),
            (d as isize, 1),
            T::zero(),
            &mut dx,
        );
        // dW = dY^T (O x N) * X (N x D)
        T::gemm(
            o,
            n,
            d,
            grad_out.data(),
            (1, o as isize),
            input.data(),
            (d as isize, 1),
            T::zero(),
            &mut dw,
        );
    }
    let mut db = vec![T::zero(); o];
    for row in grad_out.data().chunks(o.max(1)) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new([n, d], dx)?,
        weight: Tensor::new([o, d], dw)?,
        bias: Tensor::new([o], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let x = Tensor::new([1, 2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::new([3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new([3], vec![0.5, 0.5, 0.5]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[1.5, 2.5, 3.5]);
        let g = linear_backward(&x, &w, &Tensor::full([1, 3], 1.0)).unwrap();
        assert_eq!(g.input.data(), &[2.0, 2.0]);
        assert_eq!(g.weight.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(g.bias.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mismatched_features() {
        let x = Tensor::<f32>::zeros([2, 3]);
        let w = Tensor::<f32>::zeros([4, 2]);
        assert!(linear(&x, &w, None).is_err());
    }
}
