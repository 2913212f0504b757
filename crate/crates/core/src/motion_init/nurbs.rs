//! Rational B-spline curves in ℝ³ on a clamped uniform knot vector.

use crate::linalg::Vec3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NurbsError {
    #[error("{count} control points cannot carry a degree-{degree} curve")]
    TooFewControlPoints { count: usize, degree: usize },
    #[error("weight {index} is {weight}; weights must be positive")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("{controls} control points but {weights} weights")]
    CountMismatch { controls: usize, weights: usize },
    #[error("parameter {0} lies outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("control point {0} is not finite")]
    NonFinite(usize),
    #[error("{k} control intervals need at least {needed} frames, got {frames}")]
    TooFewFrames { k: usize, needed: usize, frames: usize },
}

/// `degree + 1` zeros, uniform interior knots, `degree + 1` ones.
pub fn clamped_uniform_knots(controls: usize, degree: usize) -> Vec<f64> {
    let interior = controls - degree - 1;
    let mut knots = vec![0.0; degree + 1];
    knots.extend((1..=interior).map(|i| i as f64 / (interior + 1) as f64));
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    knots
}

#[derive(Debug, Clone, PartialEq)]
pub struct NurbsCurve {
    degree: usize,
    control: Vec<Vec3>,
    weights: Vec<f64>,
    knots: Vec<f64>,
}

impl NurbsCurve {
    pub fn new(control: Vec<Vec3>, weights: Vec<f64>, degree: usize) -> Result<Self, NurbsError> {
        if control.len() != weights.len() {
            return Err(NurbsError::CountMismatch { controls: control.len(), weights: weights.len() });
        }
        if control.len() < degree + 1 || degree == 0 {
            return Err(NurbsError::TooFewControlPoints { count: control.len(), degree });
        }
        if let Some(i) = control.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(NurbsError::NonFinite(i));
        }
        if let Some((index, &weight)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(NurbsError::NonPositiveWeight { index, weight });
        }
        let knots = clamped_uniform_knots(control.len(), degree);
        Ok(Self { degree, control, weights, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control(&self) -> &[Vec3] {
        &self.control
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.control.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control.is_empty()
    }

    /// Same curve with replaced control points.
    pub fn with_control(&self, control: Vec<Vec3>) -> Result<Self, NurbsError> {
        NurbsCurve::new(control, self.weights.clone(), self.degree)
    }

    /// Degree-`d` B-spline basis values for every control point, computed
    /// with the Cox-de Boor recursion.
    pub fn basis(&self, s: f64) -> Result<Vec<f64>, NurbsError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(NurbsError::ParameterOutOfRange(s));
        }
        let n = self.control.len();
        let u = &self.knots;
        let intervals = u.len() - 1;
        // the right end belongs to the last non-empty interval
        let span = if s >= 1.0 { n - 1 } else { (0..intervals).rev().find(|&i| u[i] <= s && s < u[i + 1]).unwrap_or(0) };
        let mut level: Vec<f64> = (0..intervals).map(|i| if i == span { 1.0 } else { 0.0 }).collect();
        for p in 1..=self.degree {
            let next: Vec<f64> = (0..intervals - p)
                .map(|i| {
                    let left = ratio(s - u[i], u[i + p] - u[i]) * level[i];
                    let right = ratio(u[i + p + 1] - s, u[i + p + 1] - u[i + 1]) * level[i + 1];
                    left + right
                })
                .collect();
            level = next;
        }
        Ok(level)
    }

    /// Rational basis `B_k w_k / Σ B_i w_i`.
    pub fn rational_basis(&self, s: f64) -> Result<Vec<f64>, NurbsError> {
        let b = self.basis(s)?;
        let weighted: Vec<f64> = b.iter().zip(&self.weights).map(|(b, w)| b * w).collect();
        let denom: f64 = weighted.iter().sum();
        Ok(weighted.into_iter().map(|v| v / denom).collect())
    }

    pub fn eval(&self, s: f64) -> Result<Vec3, NurbsError> {
        let r = self.rational_basis(s)?;
        let mut out = [0.0; 3];
        for (rk, c) in r.iter().zip(&self.control) {
            for a in 0..3 {
                out[a] += rk * c[a];
            }
        }
        Ok(out)
    }

    /// Rational basis sampled at `s = t/(frames−1)`, row-major `[frames, len]`.
    pub fn sample_matrix(&self, frames: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(frames * self.len());
        for t in 0..frames {
            let s = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
            out.extend(self.rational_basis(s).expect("sample parameter within range"));
        }
        out
    }

    pub fn sample(&self, frames: usize) -> Vec<Vec3> {
        (0..frames)
            .map(|t| {
                let s = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
                self.eval(s).expect("sample parameter within range")
            })
            .collect()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Greville abscissa of control point `k` on the clamped uniform knot vector
/// with `k_max + 1` controls: the mean of the `degree` knots after it.
pub fn greville(k: usize, k_max: usize, degree: usize) -> f64 {
    let spans = (k_max + 1 - degree) as f64;
    let knot = |i: usize| (i.saturating_sub(degree) as f64 / spans).min(1.0);
    (k + 1..=k + degree).map(knot).sum::<f64>() / degree as f64
}

/// Frame index sampled for control point `k` of `k_max + 1`: the frame
/// nearest its Greville abscissa, where that control has most pull.
pub fn control_frame(k: usize, k_max: usize, degree: usize, frames: usize) -> usize {
    (greville(k, k_max, degree) * (frames - 1) as f64).round() as usize
}

/// One curve per joint whose control points are samples of the dense
/// `[T,J,3]` trajectory at the Greville abscissae; `weight(joint, frame)`
/// supplies each control weight.
pub fn project_to_nurbs(
    dense: &[f64],
    frames: usize,
    joints: usize,
    k: usize,
    degree: usize,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<Vec<NurbsCurve>, NurbsError> {
    if k < degree {
        return Err(NurbsError::TooFewControlPoints { count: k + 1, degree });
    }
    if k + 1 > frames {
        return Err(NurbsError::TooFewFrames { k, needed: k + 1, frames });
    }
    (0..joints)
        .map(|j| {
            let mut control = Vec::with_capacity(k + 1);
            let mut weights = Vec::with_capacity(k + 1);
            for c in 0..=k {
                let f = control_frame(c, k, degree, frames);
                let i = (f * joints + j) * 3;
                control.push([dense[i], dense[i + 1], dense[i + 2]]);
                weights.push(weight(j, f));
            }
            NurbsCurve::new(control, weights, degree)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// De Boor's algorithm on homogeneous points: shares no code with the
    /// basis recursion.
    pub(crate) fn de_boor_oracle(curve: &NurbsCurve, s: f64) -> Vec3 {
        let p = curve.degree();
        let u = curve.knots();
        let n = curve.len();
        let span = if s >= 1.0 { n - 1 } else { (p..n).rev().find(|&i| u[i] <= s).unwrap() };
        let mut d: Vec<[f64; 4]> = (0..=p)
            .map(|j| {
                let c = curve.control()[j + span - p];
                let w = curve.weights()[j + span - p];
                [c[0] * w, c[1] * w, c[2] * w, w]
            })
            .collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = j + span - p;
                let den = u[i + 1 + p - r] - u[i];
                let alpha = if den == 0.0 { 0.0 } else { (s - u[i]) / den };
                for a in 0..4 {
                    d[j][a] = (1.0 - alpha) * d[j - 1][a] + alpha * d[j][a];
                }
            }
        }
        let h = d[p];
        [h[0] / h[3], h[1] / h[3], h[2] / h[3]]
    }

    fn random_curve(rng: &mut ChaCha8Rng, n: usize) -> NurbsCurve {
        let control = (0..n).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let weights = (0..n).map(|_| rng.gen_range(0.2..5.0)).collect();
        NurbsCurve::new(control, weights, 3).unwrap()
    }

    #[test]
    fn knot_vector_is_clamped() {
        let k = clamped_uniform_knots(9, 3);
        assert_eq!(k.len(), 13);
        assert_eq!(&k[..4], &[0.0; 4]);
        assert_eq!(&k[9..], &[1.0; 4]);
        assert!(k.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn constant_curve_and_endpoints() {
        let c = NurbsCurve::new(vec![[1.0, -2.0, 0.5]; 6], vec![1.0; 6], 3).unwrap();
        for i in 0..=20 {
            let p = c.eval(i as f64 / 20.0).unwrap();
            for a in 0..3 {
                assert!((p[a] - [1.0, -2.0, 0.5][a]).abs() < 1e-15);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_curve(&mut rng, 9);
        assert_eq!(r.eval(0.0).unwrap(), r.control()[0]);
        assert_eq!(r.eval(1.0).unwrap(), r.control()[8]);
    }

    #[test]
    fn matches_de_boor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = random_curve(&mut rng, 9);
            for i in 0..50 {
                let s = i as f64 / 49.0;
                let (a, b) = (c.eval(s).unwrap(), de_boor_oracle(&c, s));
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_weight_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_curve(&mut rng, 13);
        let scaled = NurbsCurve::new(c.control().to_vec(), c.weights().iter().map(|w| w * 7.3).collect(), 3).unwrap();
        for i in 0..=200 {
            let s = i as f64 / 200.0;
            assert!((c.basis(s).unwrap().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let (a, b) = (c.eval(s).unwrap(), scaled.eval(s).unwrap());
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(NurbsCurve::new(vec![[0.0; 3]; 3], vec![1.0; 3], 3), Err(NurbsError::TooFewControlPoints { .. })));
        assert!(matches!(NurbsCurve::new(vec![[0.0; 3]; 4], vec![1.0, 0.0, 1.0, 1.0], 3), Err(NurbsError::NonPositiveWeight { .. })));
        let c = NurbsCurve::new(vec![[0.0; 3]; 4], vec![1.0; 4], 3).unwrap();
        assert_eq!(c.eval(1.5), Err(NurbsError::ParameterOutOfRange(1.5)));
        assert!(matches!(project_to_nurbs(&[0.0; 30], 10, 1, 2, 3, |_, _| 1.0), Err(NurbsError::TooFewControlPoints { .. })));
    }

    #[test]
    fn contact_weight_pulls_curve_toward_its_control_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_curve(&mut rng, 13);
        let uniform = NurbsCurve::new(base.control().to_vec(), vec![1.0; 13], 3).unwrap();
        let mut w = vec![1.0; 13];
        w[6] = 5.0;
        let heavy = NurbsCurve::new(base.control().to_vec(), w, 3).unwrap();
        let s = 0.5; // Greville abscissa of control 6 on this knot vector
        let dist = |p: Vec3| crate::linalg::norm(crate::linalg::sub(p, base.control()[6]));
        assert!(dist(heavy.eval(s).unwrap()) < dist(uniform.eval(s).unwrap()));
    }

    #[test]
    fn full_resolution_projection_stays_close() {
        // K = T−1 puts one control on every frame. The fitted curve at each
        // sample parameter stays inside the coordinate range of the controls
        // active on that knot span, so its error is bounded by their spread.
        let t = 24;
        let dense: Vec<f64> = (0..t)
            .flat_map(|f| {
                let x = f as f64 / (t - 1) as f64;
                [(2.0 * std::f64::consts::PI * x).sin(), x * x, 0.3]
            })
            .collect();
        let curve = &project_to_nurbs(&dense, t, 1, t - 1, 3, |_, _| 1.0).unwrap()[0];
        let knots = curve.knots();
        for (f, p) in curve.sample(t).iter().enumerate() {
            let s = f as f64 / (t - 1) as f64;
            let span = if f == t - 1 { t - 1 } else { (3..t).rev().find(|&i| knots[i] <= s).unwrap() };
            for a in 0..3 {
                let active: Vec<f64> = (span - 3..=span).map(|k| curve.control()[k][a]).collect();
                let lo = active.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = active.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(p[a] >= lo - 1e-12 && p[a] <= hi + 1e-12);
                let bound = active.iter().map(|c| (c - dense[f * 3 + a]).abs()).fold(0.0, f64::max);
                assert!((p[a] - dense[f * 3 + a]).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn greville_matches_knot_means() {
        let c = NurbsCurve::new(vec![[0.0; 3]; 13], vec![1.0; 13], 3).unwrap();
        let u = c.knots();
        for k in 0..13 {
            let mean = (u[k + 1] + u[k + 2] + u[k + 3]) / 3.0;
            assert!((greville(k, 12, 3) - mean).abs() < 1e-15, "{k}");
        }
        assert_eq!(control_frame(0, 12, 3, 48), 0);
        assert_eq!(control_frame(12, 12, 3, 48), 47);
    }
}
