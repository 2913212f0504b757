//! Finite-difference utilities for validating analytic gradients.

/// Central differences of a scalar function at `x`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst mismatch between two gradient vectors.
///
/// Components whose reference magnitude is below `abs_floor` are compared
/// absolutely; the rest relatively.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradMismatch {
    pub max_rel: f64,
    pub max_abs_small: f64,
}

impl GradMismatch {
    pub fn within(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel <= rel_tol && self.max_abs_small <= abs_tol
    }
}

pub fn compare(analytic: &[f64], reference: &[f64], abs_floor: f64) -> GradMismatch {
    assert_eq!(analytic.len(), reference.len());
    let mut out = GradMismatch { max_rel: 0.0, max_abs_small: 0.0 };
    for (a, r) in analytic.iter().zip(reference) {
        let diff = (a - r).abs();
        if r.abs() < abs_floor {
            out.max_abs_small = out.max_abs_small.max(diff);
        } else {
            out.max_rel = out.max_rel.max(diff / r.abs());
        }
    }
    out
}
