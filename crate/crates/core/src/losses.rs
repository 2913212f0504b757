//! Physics-inspired regularizers and the offset penalty, each a scalar on the
//! tape.
//!
//! Conventions: rotations are `[T,J,3]`, root translations `[T,3]`, vertices
//! `[T,V,3]`, y is up, and the horizontal plane is x/z.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Result, Tensor, TensorError};
use crate::motion_init::{morphology, BodyPlan, UP};
use crate::skeleton::{JointCategory, Skeleton};

/// Per-category rotation magnitude limits in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RomLimits {
    pub spine: f64,
    pub hinge_limb: f64,
    pub ball_limb: f64,
    pub foot: f64,
    pub head: f64,
    pub tail: f64,
    pub other: f64,
}

impl Default for RomLimits {
    fn default() -> Self {
        Self { spine: 0.4, hinge_limb: 1.5, ball_limb: 1.2, foot: 1.0, head: 0.6, tail: 2.0, other: 1.0 }
    }
}

impl RomLimits {
    pub fn get(&self, c: JointCategory) -> f64 {
        match c {
            JointCategory::Spine => self.spine,
            JointCategory::HingeLimb => self.hinge_limb,
            JointCategory::BallLimb => self.ball_limb,
            JointCategory::Foot => self.foot,
            JointCategory::Head => self.head,
            JointCategory::Tail => self.tail,
            JointCategory::Other => self.other,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for c in JointCategory::ALL {
            let v = self.get(c);
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("ROM limit for {} must be positive, got {v}", c.as_str()));
            }
        }
        Ok(())
    }

    pub fn per_joint(&self, skel: &Skeleton) -> Vec<f64> {
        (0..skel.len()).map(|j| self.get(skel.category(j))).collect()
    }
}

/// Scalar weight ramp over the run, in fractions of the iteration count.
/// `end <= start` is a step at `start`; the default `{0, 0}` is constant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
}

impl Ramp {
    pub const CONSTANT: Ramp = Ramp { start: 0.0, end: 0.0 };

    /// Factor in `[0, 1]` at iteration `u` of `m` (1-based).
    pub fn factor(&self, u: usize, m: usize) -> f64 {
        let progress = u as f64 / m.max(1) as f64;
        if self.end <= self.start {
            return if progress >= self.start { 1.0 } else { 0.0 };
        }
        ((progress - self.start) / (self.end - self.start)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSchedule {
    pub mosds: Ramp,
    pub physics: Ramp,
    pub contact: Ramp,
    pub offset: Ramp,
}

impl Default for LossSchedule {
    fn default() -> Self {
        Self {
            mosds: Ramp { start: 0.0, end: 0.1 },
            physics: Ramp::CONSTANT,
            contact: Ramp { start: 0.2, end: 0.3 },
            offset: Ramp::CONSTANT,
        }
    }
}

impl LossSchedule {
    pub fn constant() -> Self {
        Self { mosds: Ramp::CONSTANT, physics: Ramp::CONSTANT, contact: Ramp::CONSTANT, offset: Ramp::CONSTANT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_vel: f64,
    pub lambda_accel: f64,
    pub lambda_smooth: f64,
    pub lambda_rom: f64,
    pub lambda_sym: f64,
    pub lambda_cyclic: f64,
    pub lambda_ground: f64,
    pub lambda_contact: f64,
    pub lambda_offset: f64,
    pub lambda_delta: f64,
    pub lambda_mosds: f64,
    pub lambda_appear: f64,
    pub lambda_motion: f64,
    pub lambda_phy: f64,
    pub lambda_env: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_vel: 1.0,
            lambda_accel: 1.0,
            lambda_smooth: 1.0,
            lambda_rom: 1.0,
            lambda_sym: 0.5,
            lambda_cyclic: 1.0,
            lambda_ground: 10.0,
            lambda_contact: 1.0,
            lambda_offset: 1.0,
            lambda_delta: 1.0,
            lambda_mosds: 1.0,
            lambda_appear: 0.1,
            lambda_motion: 1.0,
            lambda_phy: 1.0,
            lambda_env: 1.0,
        }
    }
}

impl LossWeights {
    fn values(&self) -> [(&'static str, f64); 15] {
        [
            ("lambda_vel", self.lambda_vel),
            ("lambda_accel", self.lambda_accel),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_rom", self.lambda_rom),
            ("lambda_sym", self.lambda_sym),
            ("lambda_cyclic", self.lambda_cyclic),
            ("lambda_ground", self.lambda_ground),
            ("lambda_contact", self.lambda_contact),
            ("lambda_offset", self.lambda_offset),
            ("lambda_delta", self.lambda_delta),
            ("lambda_mosds", self.lambda_mosds),
            ("lambda_appear", self.lambda_appear),
            ("lambda_motion", self.lambda_motion),
            ("lambda_phy", self.lambda_phy),
            ("lambda_env", self.lambda_env),
        ]
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in self.values() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Weights in effect at iteration `u` of `m`.
    pub fn at(&self, schedule: &LossSchedule, u: usize, m: usize) -> LossWeights {
        let mut w = *self;
        w.lambda_mosds *= schedule.mosds.factor(u, m);
        w.lambda_phy *= schedule.physics.factor(u, m);
        w.lambda_contact *= schedule.contact.factor(u, m);
        w.lambda_offset *= schedule.offset.factor(u, m);
        w
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, msg: msg.into() }
}

fn frames_of(t: &Tensor) -> usize {
    t.shape().first().copied().unwrap_or(0)
}

/// Rotations and root flattened per frame, `[T, 3J+3]`.
pub fn pose_vector(rotations: &Tensor, root: &Tensor) -> Result<Tensor> {
    let t = frames_of(rotations);
    let d = rotations.numel() / t.max(1);
    Tensor::concat(&[&rotations.reshape(&[t, d])?, root], 1)
}

/// `Φ[1:] − Φ[:-1]` along the leading axis.
fn diff(x: &Tensor) -> Result<Tensor> {
    let t = frames_of(x);
    x.slice(0, 1, t)?.sub(&x.slice(0, 0, t - 1)?)
}

/// `λ_vel · mean_t ‖ΔΦ_t‖² + λ_accel · mean_t ‖Δ²Φ_t‖²` over a `[T,D]` pose
/// sequence.
pub fn smoothness_loss(pose: &Tensor, lambda_vel: f64, lambda_accel: f64) -> Result<Tensor> {
    let t = frames_of(pose);
    if t < 3 {
        return Err(invalid("smoothness_loss", format!("needs at least 3 frames, got {t}")));
    }
    let vel = diff(pose)?;
    let acc = diff(&vel)?;
    vel.sq_norm()?.scale(lambda_vel / (t - 1) as f64)?.add(&acc.sq_norm()?.scale(lambda_accel / (t - 2) as f64)?)
}

/// `mean_{t,j} max(0, ‖R_tj‖ − θ_j)²`.
pub fn rom_loss(rotations: &Tensor, limits: &[f64]) -> Result<Tensor> {
    let norms = rotations.norm_last()?; // [T,J]
    let j = *norms.shape().last().unwrap_or(&0);
    if limits.len() != j {
        return Err(invalid("rom_loss", format!("{} limits for {j} joints", limits.len())));
    }
    let neg: Vec<f64> = (0..norms.numel()).map(|i| -limits[i % j]).collect();
    norms.add_const(&neg)?.relu()?.square()?.mean()
}

/// `mean_{t,pairs} (‖R_left‖ − ‖R_right‖)²`; zero without pairs.
pub fn symmetry_loss(rotations: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
    if pairs.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let by_joint = rotations.norm_last()?.permute(&[1, 0])?; // [J,T]
    let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    by_joint.index_select(&left)?.sub(&by_joint.index_select(&right)?)?.square()?.mean()
}

/// `‖Φ_1 − Φ_T‖² + ‖ΔΦ_1 − ΔΦ_T‖²` on a `[T,D]` pose sequence.
pub fn cyclic_loss(pose: &Tensor) -> Result<Tensor> {
    let t = frames_of(pose);
    if t < 3 {
        return Err(invalid("cyclic_loss", format!("needs at least 3 frames, got {t}")));
    }
    let first = pose.slice(0, 0, 1)?;
    let last = pose.slice(0, t - 1, t)?;
    let v_first = pose.slice(0, 1, 2)?.sub(&first)?;
    let v_last = last.sub(&pose.slice(0, t - 2, t - 1)?)?;
    first.sub(&last)?.sq_norm()?.add(&v_first.sub(&v_last)?.sq_norm()?)
}

/// `mean_{t,i} max(0, −(v_y − h))²`.
pub fn ground_loss(vertices: &Tensor, ground_height: f64) -> Result<Tensor> {
    let rank = vertices.shape().len();
    let height = vertices.slice(rank - 1, UP, UP + 1)?;
    height.add_scalar(-ground_height)?.neg()?.relu()?.square()?.mean()
}

/// Contact gate `h_ft = 1[y_ft < τ]` from the current positions (no gradient
/// through the gate), then per foot `Σ_t h‖v_xz‖² / (Σ_t h + ε)`, averaged
/// over feet. Velocities start at the second frame. `feet` is `[T,F,3]`.
pub fn contact_loss(feet: &Tensor, tau: f64) -> Result<Tensor> {
    const EPS: f64 = 1e-8;
    let shape = feet.shape().to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(invalid("contact_loss", format!("expected [T,F,3], got {shape:?}")));
    }
    let (t, f) = (shape[0], shape[1]);
    if t < 2 || f == 0 {
        return Ok(Tensor::scalar(0.0));
    }
    let y = |tt: usize, ff: usize| feet.data()[(tt * f + ff) * 3 + UP];
    let mut gate = vec![0.0; (t - 1) * f];
    for ff in 0..f {
        let hits: Vec<bool> = (1..t).map(|tt| y(tt, ff) < tau).collect();
        let denom = hits.iter().filter(|h| **h).count() as f64 + EPS;
        for (k, h) in hits.iter().enumerate() {
            if *h {
                gate[k * f + ff] = 1.0 / (denom * f as f64);
            }
        }
    }
    let mut horizontal = Vec::with_capacity((t - 1) * f * 3);
    for _ in 0..(t - 1) * f {
        horizontal.extend_from_slice(&[1.0, 0.0, 1.0]);
    }
    diff(feet)?.mul_const(&horizontal)?.square()?.sum_axis(2)?.mul_const(&gate)?.sum()
}

/// `mean_t ‖δ_t‖² + λ_δ · mean_{t≥1} ‖δ_t − δ_{t−1}‖²`.
pub fn offset_loss(offsets: &Tensor, lambda_delta: f64) -> Result<Tensor> {
    let t = frames_of(offsets);
    if t < 2 {
        return Err(invalid("offset_loss", format!("needs at least 2 frames, got {t}")));
    }
    offsets.sq_norm()?.scale(1.0 / t as f64)?.add(&diff(offsets)?.sq_norm()?.scale(lambda_delta / (t - 1) as f64)?)
}

/// Skeleton-derived constants every physics term needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsContext {
    pub rom_limits: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub feet: Vec<usize>,
    pub contact_threshold: f64,
    pub ground_height: f64,
}

impl PhysicsContext {
    /// τ_contact is 2.5% of `height` above the ground.
    pub fn new(skel: &Skeleton, limits: &RomLimits, height: f64, ground_height: f64) -> Self {
        Self {
            rom_limits: limits.per_joint(skel),
            pairs: BodyPlan::analyze(skel).joint_pairs(),
            feet: morphology::foot_joints(skel),
            contact_threshold: ground_height + 0.025 * height,
            ground_height,
        }
    }
}

/// Every unweighted term for one iteration.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub proxy: Tensor,
    pub smooth: Tensor,
    pub rom: Tensor,
    pub sym: Tensor,
    pub cyclic: Tensor,
    pub ground: Tensor,
    pub contact: Tensor,
    pub offset: Tensor,
}

/// Plain values of each term plus the weighted parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub proxy: f64,
    pub smooth: f64,
    pub rom: f64,
    pub sym: f64,
    pub cyclic: f64,
    pub ground: f64,
    pub contact: f64,
    pub offset: f64,
    pub physics: f64,
    pub env: f64,
}

impl LossTerms {
    /// `λ_MoSDS·L_proxy + λ_phy·L_phy + λ_env·L_env + λ_offset·L_offset`,
    /// where `L_smooth` already carries `λ_vel`/`λ_accel`.
    pub fn total(&self, w: &LossWeights) -> Result<(Tensor, LossBreakdown)> {
        let physics = self
            .smooth
            .scale(w.lambda_smooth)?
            .add(&self.rom.scale(w.lambda_rom)?)?
            .add(&self.sym.scale(w.lambda_sym)?)?
            .add(&self.cyclic.scale(w.lambda_cyclic)?)?;
        let env = self.ground.scale(w.lambda_ground)?.add(&self.contact.scale(w.lambda_contact)?)?;
        let total = self
            .proxy
            .scale(w.lambda_mosds)?
            .add(&physics.scale(w.lambda_phy)?)?
            .add(&env.scale(w.lambda_env)?)?
            .add(&self.offset.scale(w.lambda_offset)?)?;
        let breakdown = LossBreakdown {
            total: total.item(),
            proxy: self.proxy.item(),
            smooth: self.smooth.item(),
            rom: self.rom.item(),
            sym: self.sym.item(),
            cyclic: self.cyclic.item(),
            ground: self.ground.item(),
            contact: self.contact.item(),
            offset: self.offset.item(),
            physics: physics.item(),
            env: env.item(),
        };
        Ok((total, breakdown))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{central_difference, compare};
    use crate::autodiff::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn smoothness_examples() {
        let constant = t(&[4, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(smoothness_loss(&constant, 1.0, 1.0).unwrap().item(), 0.0);
        let linear = t(&[4, 1], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(smoothness_loss(&linear, 0.0, 1.0).unwrap().item(), 0.0);
        assert!(smoothness_loss(&linear, 1.0, 0.0).unwrap().item() > 0.0);
        let s = smoothness_loss(&t(&[4, 1], vec![0.0, 1.0, 3.0, 6.0]), 1.0, 1.0).unwrap().item();
        assert!((s - (14.0 / 3.0 + 1.0)).abs() < 1e-12);
        assert!(smoothness_loss(&t(&[2, 1], vec![0.0, 1.0]), 1.0, 1.0).is_err());
    }

    #[test]
    fn rom_examples() {
        let within = t(&[1, 2, 3], vec![0.1, 0.0, 0.0, 0.0, 0.5, 0.0]);
        assert_eq!(rom_loss(&within, &[0.4, 1.5]).unwrap().item(), 0.0);
        let spine = t(&[1, 1, 3], vec![0.0, 0.9, 0.0]);
        assert!((rom_loss(&spine, &[0.4]).unwrap().item() - 0.25).abs() < 1e-15);
        let hinge = t(&[1, 1, 3], vec![1.5, 0.0, 0.0]);
        assert_eq!(rom_loss(&hinge, &[1.5]).unwrap().item(), 0.0);
    }

    #[test]
    fn symmetry_examples() {
        let mirrored = t(&[2, 2, 3], vec![0.3, 0.0, 0.0, -0.3, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.2]);
        assert_eq!(symmetry_loss(&mirrored, &[(0, 1)]).unwrap().item(), 0.0);
        let lopsided = t(&[1, 2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(symmetry_loss(&lopsided, &[(0, 1)]).unwrap().item(), 1.0);
        assert_eq!(symmetry_loss(&lopsided, &[]).unwrap().item(), 0.0);
    }

    #[test]
    fn cyclic_examples() {
        assert_eq!(cyclic_loss(&t(&[4, 1], vec![0.0, 1.0, 0.0, 2.0])).unwrap().item(), 5.0);
        assert_eq!(cyclic_loss(&t(&[3, 1], vec![2.0, 2.0, 2.0])).unwrap().item(), 0.0);
        // velocity (1) at both ends and matching end poses
        assert_eq!(cyclic_loss(&t(&[5, 1], vec![0.0, 1.0, 0.0, -1.0, 0.0])).unwrap().item(), 0.0);
    }

    #[test]
    fn ground_examples() {
        let mut v = vec![0.0; 30];
        assert_eq!(ground_loss(&t(&[2, 5, 3], v.clone()), 0.0).unwrap().item(), 0.0);
        v[UP] = -0.1;
        assert!((ground_loss(&t(&[2, 5, 3], v), 0.0).unwrap().item() - 0.001).abs() < 1e-15);
    }

    #[test]
    fn ground_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..4 * 25 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = ground_loss(&t(&[4, 25, 3], data.clone()), 0.2).unwrap().item();
        let mut acc = 0.0;
        for ti in 0..4 {
            for i in 0..25 {
                let y = data[(ti * 25 + i) * 3 + 1];
                if y < 0.2 {
                    acc += (0.2 - y) * (0.2 - y);
                }
            }
        }
        assert!((got - acc / 100.0).abs() <= 1e-12);
    }

    #[test]
    fn contact_examples() {
        // foot above τ → exactly zero
        let high = t(&[3, 1, 3], vec![0.0, 1.0, 0.0, 0.5, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(contact_loss(&high, 0.1).unwrap().item(), 0.0);
        // planted
        let planted = t(&[3, 1, 3], vec![0.2, 0.0, 0.1, 0.2, 0.0, 0.1, 0.2, 0.0, 0.1]);
        assert_eq!(contact_loss(&planted, 0.1).unwrap().item(), 0.0);
        // h = [1,1], v_xz = (0.1,0), (0,0.2)
        let sliding = t(&[3, 1, 3], vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 0.0, 0.2]);
        assert!((contact_loss(&sliding, 0.1).unwrap().item() - 0.025).abs() < 1e-9);
    }

    #[test]
    fn offset_examples_and_naive_loop() {
        assert_eq!(offset_loss(&Tensor::zeros(&[3, 2, 3]), 1.0).unwrap().item(), 0.0);
        let c = t(&[3, 1, 3], vec![1.0, 2.0, 2.0, 1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
        assert_eq!(offset_loss(&c, 5.0).unwrap().item(), 9.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (tt, j) = (5, 3);
        let d: Vec<f64> = (0..tt * j * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = offset_loss(&t(&[tt, j, 3], d.clone()), 0.7).unwrap().item();
        let (mut mag, mut vel) = (0.0, 0.0);
        for f in 0..tt {
            for k in 0..j * 3 {
                mag += d[f * j * 3 + k].powi(2);
                if f > 0 {
                    vel += (d[f * j * 3 + k] - d[(f - 1) * j * 3 + k]).powi(2);
                }
            }
        }
        assert!((got - (mag / tt as f64 + 0.7 * vel / (tt - 1) as f64)).abs() < 1e-12);
    }

    fn terms(vals: [f64; 8]) -> LossTerms {
        let s = |v: f64| Tensor::scalar(v);
        LossTerms {
            proxy: s(vals[0]),
            smooth: s(vals[1]),
            rom: s(vals[2]),
            sym: s(vals[3]),
            cyclic: s(vals[4]),
            ground: s(vals[5]),
            contact: s(vals[6]),
            offset: s(vals[7]),
        }
    }

    fn zero_weights() -> LossWeights {
        LossWeights {
            lambda_vel: 0.0,
            lambda_accel: 0.0,
            lambda_smooth: 0.0,
            lambda_rom: 0.0,
            lambda_sym: 0.0,
            lambda_cyclic: 0.0,
            lambda_ground: 0.0,
            lambda_contact: 0.0,
            lambda_offset: 0.0,
            lambda_delta: 0.0,
            lambda_mosds: 0.0,
            lambda_appear: 0.0,
            lambda_motion: 0.0,
            lambda_phy: 0.0,
            lambda_env: 0.0,
        }
    }

    #[test]
    fn total_loss_combinations() {
        let lt = terms([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(lt.total(&zero_weights()).unwrap().0.item(), 0.0);
        let mut single = zero_weights();
        single.lambda_offset = 0.5;
        assert_eq!(lt.total(&single).unwrap().0.item(), 4.0);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut w = zero_weights();
        w.lambda_smooth = rng.gen_range(0.0..2.0);
        w.lambda_rom = rng.gen_range(0.0..2.0);
        w.lambda_sym = rng.gen_range(0.0..2.0);
        w.lambda_cyclic = rng.gen_range(0.0..2.0);
        w.lambda_ground = rng.gen_range(0.0..2.0);
        w.lambda_contact = rng.gen_range(0.0..2.0);
        w.lambda_offset = rng.gen_range(0.0..2.0);
        w.lambda_mosds = rng.gen_range(0.0..2.0);
        w.lambda_phy = rng.gen_range(0.0..2.0);
        w.lambda_env = rng.gen_range(0.0..2.0);
        let expect = w.lambda_mosds * 1.0
            + w.lambda_phy * (w.lambda_smooth * 2.0 + w.lambda_rom * 3.0 + w.lambda_sym * 4.0 + w.lambda_cyclic * 5.0)
            + w.lambda_env * (w.lambda_ground * 6.0 + w.lambda_contact * 7.0)
            + w.lambda_offset * 8.0;
        assert!((lt.total(&w).unwrap().0.item() - expect).abs() < 1e-12);
    }

    #[test]
    fn schedule_ramps() {
        let s = LossSchedule::default();
        let w = LossWeights::default();
        assert!((w.at(&s, 1, 100).lambda_mosds - 0.1).abs() < 1e-12);
        assert_eq!(w.at(&s, 10, 100).lambda_mosds, 1.0);
        assert_eq!(w.at(&s, 20, 100).lambda_contact, 0.0);
        assert!((w.at(&s, 25, 100).lambda_contact - 0.5).abs() < 1e-12);
        assert_eq!(w.at(&s, 100, 100).lambda_contact, 1.0);
        assert_eq!(w.at(&s, 1, 100).lambda_phy, 1.0);
        assert!(Ramp { start: 0.5, end: 0.5 }.factor(49, 100) == 0.0 && Ramp { start: 0.5, end: 0.5 }.factor(50, 100) == 1.0);
    }

    /// Checks d(term)/d(input) against central differences.
    fn gradcheck(shape: &[usize], seed: u64, away_from_kinks: impl Fn(&[f64]) -> bool, f: impl Fn(&Tensor) -> Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let x0 = loop {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if away_from_kinks(&x) {
                break x;
            }
        };
        let tape = Tape::new();
        let leaf = tape.leaf(&t(shape, x0.clone()));
        let g = tape.backward(&f(&leaf)).unwrap().wrt(&leaf).to_vec();
        let fd = central_difference(|v| f(&t(shape, v.to_vec())).item(), &x0, 1e-6);
        let cmp = compare(&g, &fd, 1e-3);
        assert!(cmp.within(1e-4, 1e-6), "seed {seed}: {cmp:?}");
    }

    fn norms_clear(x: &[f64], limits: &[f64]) -> bool {
        x.chunks(3).enumerate().all(|(i, r)| {
            let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            (n - limits[i % limits.len()]).abs() > 1e-3
        })
    }

    #[test]
    fn loss_gradients_match_fd() {
        let limits = [0.4, 1.5, 1.2];
        for seed in 0..20 {
            gradcheck(&[5, 4], seed, |_| true, |x| smoothness_loss(x, 0.7, 1.3).unwrap());
            gradcheck(&[5, 4], seed, |_| true, |x| cyclic_loss(x).unwrap());
            gradcheck(&[4, 3, 3], seed, |x| norms_clear(x, &limits), |x| rom_loss(x, &limits).unwrap());
            gradcheck(&[4, 3, 3], seed, |_| true, |x| symmetry_loss(x, &[(0, 1), (2, 1)]).unwrap());
            gradcheck(&[3, 4, 3], seed, |x| x.chunks(3).all(|r| (r[1] - 0.1).abs() > 1e-3), |x| ground_loss(x, 0.1).unwrap());
            gradcheck(&[4, 2, 3], seed, |x| x.chunks(3).all(|r| (r[1] - 0.3).abs() > 1e-3), |x| contact_loss(x, 0.3).unwrap());
            gradcheck(&[4, 2, 3], seed, |_| true, |x| offset_loss(x, 0.5).unwrap());
        }
    }

    #[test]
    fn losses_ignore_joint_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (tt, j) = (5, 4);
        let data: Vec<f64> = (0..tt * j * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let perm = [2, 0, 3, 1]; // new joint k is old joint perm[k]
        let mut permuted = vec![0.0; data.len()];
        for f in 0..tt {
            for k in 0..j {
                for a in 0..3 {
                    permuted[(f * j + k) * 3 + a] = data[(f * j + perm[k]) * 3 + a];
                }
            }
        }
        let inv = |old: usize| perm.iter().position(|&p| p == old).unwrap();
        let limits = [0.4, 1.5, 1.2, 0.6];
        let plimits: Vec<f64> = perm.iter().map(|&p| limits[p]).collect();
        let pairs = [(0, 1), (2, 3)];
        let ppairs: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (inv(a), inv(b))).collect();
        let a = t(&[tt, j, 3], data);
        let b = t(&[tt, j, 3], permuted);
        let close = |x: f64, y: f64| assert!((x - y).abs() < 1e-12);
        close(rom_loss(&a, &limits).unwrap().item(), rom_loss(&b, &plimits).unwrap().item());
        close(symmetry_loss(&a, &pairs).unwrap().item(), symmetry_loss(&b, &ppairs).unwrap().item());
        close(offset_loss(&a, 0.3).unwrap().item(), offset_loss(&b, 0.3).unwrap().item());
        let root = Tensor::zeros(&[tt, 3]);
        close(
            smoothness_loss(&pose_vector(&a, &root).unwrap(), 1.0, 1.0).unwrap().item(),
            smoothness_loss(&pose_vector(&b, &root).unwrap(), 1.0, 1.0).unwrap().item(),
        );
        close(cyclic_loss(&pose_vector(&a, &root).unwrap()).unwrap().item(), cyclic_loss(&pose_vector(&b, &root).unwrap()).unwrap().item());
    }
}
