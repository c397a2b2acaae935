//! Central finite-difference gradient checks.
//!
//! Functions built from ReLU are only piecewise smooth. A check may pass a
//! `regime` probe returning a signature of the active piece (for instance a
//! hash of every ReLU mask); coordinates whose stencil `x +/- h e_i` leaves
//! the piece containing `x` are excluded from the comparison and counted as
//! skipped, since no finite-difference quotient is meaningful across a kink.

/// Step used by the gradient-check suites.
pub const FD_STEP: f64 = 1e-3;
/// Relative error bound used by the gradient-check suites.
pub const FD_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over checked coordinates.
    pub rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.rel_error < tol
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// FNV-1a over a boolean mask, for use as a regime signature.
pub fn mask_signature(mask: &[bool]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in mask {
        h ^= u64::from(b) + 1;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ mask.len() as u64
}

pub type Regime<'a> = &'a mut dyn FnMut(&[f64]) -> u64;

/// Compares `analytic[i]` with `(f(x + h e_i) - f(x - h e_i)) / 2h` for each
/// `i` in `coords`.
pub fn check_gradient(
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    f: &mut dyn FnMut(&[f64]) -> f64,
    mut regime: Option<Regime<'_>>,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let base = regime.as_mut().map(|r| r(x));
    let mut probe = x.to_vec();
    let mut a = Vec::with_capacity(coords.len());
    let mut n = Vec::with_capacity(coords.len());
    let mut skipped = 0;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus_regime = regime.as_mut().map(|r| r(&probe));
        let fp = f(&probe);
        probe[i] = orig - h;
        let minus_regime = regime.as_mut().map(|r| r(&probe));
        let fm = f(&probe);
        probe[i] = orig;
        if base.is_some() && (plus_regime != base || minus_regime != base) {
            skipped += 1;
            continue;
        }
        a.push(analytic[i]);
        n.push((fp - fm) / (2.0 * h));
    }
    GradCheck {
        rel_error: relative_error(&a, &n),
        checked: a.len(),
        skipped,
    }
}

/// Directional variant: `<analytic, v>` against the central difference along `v`.
/// Returns `None` when the stencil crosses a regime boundary.
pub fn check_directional(
    x: &[f64],
    analytic: &[f64],
    direction: &[f64],
    h: f64,
    f: &mut dyn FnMut(&[f64]) -> f64,
    mut regime: Option<Regime<'_>>,
) -> Option<f64> {
    let base = regime.as_mut().map(|r| r(x));
    let plus: Vec<f64> = x.iter().zip(direction).map(|(a, v)| a + h * v).collect();
    let minus: Vec<f64> = x.iter().zip(direction).map(|(a, v)| a - h * v).collect();
    if let Some(r) = regime.as_mut() {
        if Some(r(&plus)) != base || Some(r(&minus)) != base {
            return None;
        }
    }
    let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
    let exact: f64 = analytic.iter().zip(direction).map(|(a, v)| a * v).sum();
    Some(relative_error(&[exact], &[numeric]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let mut f = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        let r = check_gradient(&x, &grad, &[0, 1, 2], FD_STEP, &mut f, None);
        assert!(r.passed(1e-9), "{r:?}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let x = [0.3, -1.2];
        let grad = [0.6, 2.4];
        let mut f = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>();
        let r = check_gradient(&x, &grad, &[0, 1], FD_STEP, &mut f, None);
        assert!(!r.passed(FD_REL_TOL));
    }

    #[test]
    fn kink_is_skipped() {
        let x = [0.0005, 1.0];
        let grad = [1.0, 1.0];
        let mut f = |p: &[f64]| p.iter().map(|v| v.max(0.0)).sum::<f64>();
        let mut regime = |p: &[f64]| mask_signature(&p.iter().map(|v| *v > 0.0).collect::<Vec<_>>());
        let r = check_gradient(&x, &grad, &[0, 1], FD_STEP, &mut f, Some(&mut regime));
        assert_eq!(r.skipped, 1);
        assert!(r.passed(1e-9));
    }
}
