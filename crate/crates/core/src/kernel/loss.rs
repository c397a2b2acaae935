use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean negative log-likelihood of `labels` under `softmax(logits)` and its
/// gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::input(format!(
            "label {y} at row {i} is outside [0, {k})"
        )));
    }
    if n == 0 {
        return Ok((T::zero(), Tensor::zeros([0, k])));
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * k);
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        loss += z.ln() + max - row[y];
        for (j, e) in exps.into_iter().enumerate() {
            let p = e / z;
            let onehot = if j == y { T::one() } else { T::zero() };
            grad.push((p - onehot) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::new([n, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_two_class() {
        let logits = Tensor::<f64>::zeros([3, 2]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn large_margin_saturates() {
        let logits = Tensor::new([1, 3], vec![100.0f64, 0.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-40);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-40));
    }

    #[test]
    fn out_of_range_label() {
        let logits = Tensor::<f32>::zeros([1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Input(_))
        ));
    }
}
