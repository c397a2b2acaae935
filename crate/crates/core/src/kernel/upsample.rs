use crate::error::{Error, Result};
use crate::tensor::{shape_eq, Scalar, Tensor};

/// Source taps for one output axis, half-pixel (align_corners = false)
/// convention: `src = (o + 0.5) * in / out - 0.5`, clamped below at 0.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn check(op: &'static str, h: usize, w: usize, out_h: usize, out_w: usize) -> Result<()> {
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::dim(
            op,
            format!("spatial axes must be nonzero, got {h}x{w} -> {out_h}x{out_w}"),
        ));
    }
    Ok(())
}

/// Bilinear resize of `N x C x h x w` to `N x C x out_h x out_w` with
/// align_corners = false (half-pixel centers, edge clamping).
pub fn bilinear_upsample<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("bilinear_upsample")?;
    check("bilinear_upsample", h, w, out_h, out_w)?;
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, ly) in &ty {
            let ly = T::of(ly);
            for &(x0, x1, lx) in &tx {
                let lx = T::of(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                out.push(top * (T::one() - ly) + bot * ly);
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

/// Adjoint of [`bilinear_upsample`] back onto an `h x w` grid.
pub fn bilinear_upsample_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let [n, c, out_h, out_w] = grad_out.dims4("bilinear_upsample_backward")?;
    check("bilinear_upsample_backward", h, w, out_h, out_w)?;
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        let src = &g[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::of(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::of(lx);
                let v = src[oy * out_w + ox];
                let top = v * (T::one() - ly);
                let bot = v * ly;
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bot * (T::one() - lx);
                dst[y1 * w + x1] += bot * lx;
            }
        }
    }
    let out = Tensor::new([n, c, h, w], dx)?;
    shape_eq("bilinear_upsample_backward", "result", out.shape(), &[n, c, h, w])?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 5], |i| i as f64);
        assert_eq!(bilinear_upsample(&x, 3, 5).unwrap(), x);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full([1, 1, 2, 3], 0.25);
        let y = bilinear_upsample(&x, 8, 9).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn two_by_two_to_four_by_four_averages() {
        // Independent hand weights for half-pixel 2 -> 4 along one axis:
        // rows are x0, .75x0+.25x1, .25x0+.75x1, x1.
        let (a, b, c, d) = (0.1f64, 0.7, 0.4, 0.9);
        let x = Tensor::new([1, 1, 2, 2], vec![a, b, c, d]).unwrap();
        let y = bilinear_upsample(&x, 4, 4).unwrap();
        let axis = [[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]];
        let src = [[a, b], [c, d]];
        for oy in 0..4 {
            for ox in 0..4 {
                let mut v = 0.0;
                for iy in 0..2 {
                    for ix in 0..2 {
                        v += axis[oy][iy] * axis[ox][ix] * src[iy][ix];
                    }
                }
                assert!((y.data()[oy * 4 + ox] - v).abs() < 1e-12);
            }
        }
        // Averaging back down: overall mean preserved exactly, each quadrant
        // mean is 7/8 of its source pixel plus 1/8 of each neighbour mix.
        let down = crate::kernel::avg_pool2(&y).unwrap();
        let mean_in = (a + b + c + d) / 4.0;
        let mean_out = down.data().iter().sum::<f64>() / 4.0;
        assert!((mean_in - mean_out).abs() < 1e-6);
        let q00 = 0.875 * 0.875 * a + 0.875 * 0.125 * (b + c) + 0.125 * 0.125 * d;
        assert!((down.data()[0] - q00).abs() < 1e-6);
    }

    #[test]
    fn adjoint_identity() {
        let x = Tensor::<f64>::from_fn([2, 1, 3, 2], |i| (i as f64 * 0.61).sin());
        let y = bilinear_upsample(&x, 7, 5).unwrap();
        let g = Tensor::<f64>::from_fn(y.shape().to_vec(), |i| (i as f64 * 0.29).cos());
        let dx = bilinear_upsample_backward(&g, 3, 2).unwrap();
        assert!((y.dot(&g) - x.dot(&dx)).abs() < 1e-12);
    }
}
