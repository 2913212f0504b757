//! Structured motion prior: morphology, action, dense gait curves and their
//! rational B-spline projection.

pub mod action;
pub mod gait;
pub mod morphology;
pub mod nurbs;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use action::{parse_action, Action, Lexicon};
pub use gait::{GaitDictionary, GaitPart, GaitTemplate, PartMotion};
pub use morphology::{classify_morphology, foot_joints, BodyPlan, Morphology, MorphologyClass, UP};
pub use nurbs::{project_to_nurbs, NurbsCurve, NurbsError};

use crate::autodiff::{Tensor, TensorError};
use crate::kinematics::forward_kinematics_params;
use crate::skeleton::{MotionParams, Skeleton};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InitError {
    #[error("need at least 8 frames, got {0}")]
    TooFewFrames(usize),
    #[error("no gait template for action '{0}' and no idle fallback")]
    NoTemplate(Action),
    #[error(transparent)]
    Nurbs(#[from] NurbsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Control intervals per curve; curves carry `control_points + 1` controls.
    pub control_points: usize,
    pub degree: usize,
    pub contact_weight: f64,
    pub torso_weight: f64,
    /// Fraction of a foot's height range counted as ground contact.
    pub contact_fraction: f64,
    pub character_height: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { control_points: 12, degree: 3, contact_weight: 5.0, torso_weight: 2.0, contact_fraction: 0.3, character_height: 1.0 }
    }
}

/// Dense per-frame prior before projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub frames: usize,
    pub joints: usize,
    /// `[T,J,3]` axis-angle.
    pub rotations: Vec<f64>,
    /// `[T,3]`.
    pub root: Vec<f64>,
}

impl DenseTrajectory {
    pub fn to_params(&self) -> MotionParams {
        MotionParams {
            frames: self.frames,
            joints: self.joints,
            rotations: self.rotations.clone(),
            root_translation: self.root.clone(),
            local_offsets: vec![0.0; self.rotations.len()],
        }
    }
}

/// Body-frame vector `(lateral, up, forward)` in world axes.
fn to_world(v: [f64; 3], plan: &BodyPlan) -> [f64; 3] {
    let mut out = [0.0; 3];
    out[plan.lateral_axis] = v[0];
    out[UP] = v[1];
    out[plan.forward_axis()] = v[2];
    out
}

/// Piecewise cubic Hermite through `(x, value, slope)` knots.
pub fn hermite(knots: &[(f64, f64, f64)], x: f64) -> f64 {
    let i = knots.windows(2).position(|w| x <= w[1].0).unwrap_or(knots.len() - 2);
    let ((x0, y0, m0), (x1, y1, m1)) = (knots[i], knots[i + 1]);
    let h = x1 - x0;
    let s = ((x - x0) / h).clamp(0.0, 1.0);
    let (s2, s3) = (s * s, s * s * s);
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * m1
}

/// Crouch → take-off → ballistic flight → landing → recovery. Flight spans
/// `[0.35, 0.75]` and peaks at `jump_height`.
pub fn jump_root_height(x: f64, jump_height: f64, crouch_depth: f64) -> f64 {
    let v0 = 10.0 * jump_height;
    let knots =
        [(0.0, 0.0, 0.0), (0.25, -crouch_depth, 0.0), (0.35, 0.0, v0), (0.75, 0.0, -v0), (0.85, -crouch_depth, 0.0), (1.0, 0.0, 0.0)];
    hermite(&knots, x)
}

/// Pose blend factor for the jump: 1 at full crouch, a partial tuck at the apex.
pub fn jump_crouch(x: f64) -> f64 {
    let knots =
        [(0.0, 0.0, 0.0), (0.25, 1.0, 0.0), (0.35, 0.0, 0.0), (0.55, 0.6, 0.0), (0.75, 0.0, 0.0), (0.85, 1.0, 0.0), (1.0, 0.0, 0.0)];
    hermite(&knots, x)
}

pub fn generate_dense_trajectory(
    skel: &Skeleton,
    template: &GaitTemplate,
    frames: usize,
    height: f64,
) -> Result<DenseTrajectory, InitError> {
    if frames < 8 {
        return Err(InitError::TooFewFrames(frames));
    }
    let plan = BodyPlan::analyze(skel);
    let morph = morphology::classify_with_plan(skel, &plan);
    let parts = gait::gait_parts(skel, &plan);
    let offsets = gait::phase_offsets(skel, &plan, template, morph.class);
    let j_count = skel.len();
    let mut rotations = vec![0.0; frames * j_count * 3];
    let mut root = vec![0.0; frames * 3];
    for t in 0..frames {
        // t̂ spans [0, 1] so the last frame closes a whole number of cycles
        let x = t as f64 / (frames - 1) as f64;
        let theta = 2.0 * PI * template.omega * x;
        for j in 0..j_count {
            let m = template.part(parts[j]);
            let mut body = [0.0; 3];
            for a in 0..3 {
                body[a] = if template.action == Action::Jump {
                    m.bias[a] + m.amplitude[a] * jump_crouch(x)
                } else {
                    m.amplitude[a] * (theta + m.phase[a] + offsets[j]).sin() + m.bias[a]
                };
            }
            let world = to_world(body, &plan);
            rotations[(t * j_count + j) * 3..(t * j_count + j) * 3 + 3].copy_from_slice(&world);
        }
        root[t * 3 + UP] = if template.action == Action::Jump {
            jump_root_height(x, template.root_bob * height, 0.08 * height)
        } else {
            template.root_bob * height * (template.root_bob_harmonic * theta + template.root_bob_phase).sin()
        };
    }
    Ok(DenseTrajectory { frames, joints: j_count, rotations, root })
}

/// Per foot: frames whose height sits in the lowest `fraction` of its range.
pub fn detect_contacts(skel: &Skeleton, dense: &DenseTrajectory, fraction: f64) -> Result<Vec<(usize, Vec<bool>)>, InitError> {
    let g = forward_kinematics_params(skel, &dense.to_params())?;
    foot_joints(skel)
        .into_iter()
        .map(|f| {
            let pos = g.position(f)?;
            let h: Vec<f64> = (0..dense.frames).map(|t| pos.data()[t * 3 + UP]).collect();
            let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let cut = lo + fraction * (hi - lo);
            Ok((f, h.iter().map(|&v| v <= cut).collect()))
        })
        .collect()
}

/// Rational curves for every joint rotation plus the root translation, with
/// cached sampling matrices for re-sampling on the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionCurves {
    frames: usize,
    joint_curves: Vec<NurbsCurve>,
    root_curve: NurbsCurve,
    joint_basis: Vec<f64>,
    root_basis: Vec<f64>,
}

impl MotionCurves {
    pub fn new(frames: usize, joint_curves: Vec<NurbsCurve>, root_curve: NurbsCurve) -> Self {
        let joint_basis = joint_curves.iter().flat_map(|c| c.sample_matrix(frames)).collect();
        let root_basis = root_curve.sample_matrix(frames);
        Self { frames, joint_curves, root_curve, joint_basis, root_basis }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joint_curves(&self) -> &[NurbsCurve] {
        &self.joint_curves
    }

    pub fn root_curve(&self) -> &NurbsCurve {
        &self.root_curve
    }

    pub fn controls_per_curve(&self) -> usize {
        self.root_curve.len()
    }

    /// `[J, K+1, 3]`.
    pub fn rotation_controls(&self) -> Vec<f64> {
        self.joint_curves.iter().flat_map(|c| c.control().iter().flatten().copied()).collect()
    }

    /// `[K+1, 3]`.
    pub fn root_controls(&self) -> Vec<f64> {
        self.root_curve.control().iter().flatten().copied().collect()
    }

    /// Curves sampled at every frame, with zero offsets.
    pub fn sample(&self) -> MotionParams {
        let j_count = self.joint_curves.len();
        let mut p = MotionParams::zeros(self.frames, j_count);
        for (j, c) in self.joint_curves.iter().enumerate() {
            for (t, v) in c.sample(self.frames).into_iter().enumerate() {
                p.set_rotation(t, j, v);
            }
        }
        for (t, v) in self.root_curve.sample(self.frames).into_iter().enumerate() {
            p.set_root(t, v);
        }
        p
    }

    /// Differentiable sampling of control tensors `[J,K+1,3]` and `[K+1,3]`
    /// into `[T,J,3]` rotations and `[T,3]` root positions.
    pub fn sample_tensors(&self, rot_controls: &Tensor, root_controls: &Tensor) -> crate::autodiff::Result<(Tensor, Tensor)> {
        let (j, n, t) = (self.joint_curves.len(), self.controls_per_curve(), self.frames);
        let basis = Tensor::new(vec![j, t, n], self.joint_basis.clone())?;
        let rot = basis.matmul(rot_controls)?.permute(&[1, 0, 2])?;
        let root = Tensor::new(vec![t, n], self.root_basis.clone())?.matmul(root_controls)?;
        Ok((rot, root))
    }

    /// Same weights and knots, new control points.
    pub fn with_controls(&self, rot_controls: &[f64], root_controls: &[f64]) -> Result<MotionCurves, NurbsError> {
        let n = self.controls_per_curve();
        let chunk = |data: &[f64]| data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
        let joint_curves = self
            .joint_curves
            .iter()
            .enumerate()
            .map(|(j, c)| c.with_control(chunk(&rot_controls[j * n * 3..(j + 1) * n * 3])))
            .collect::<Result<Vec<_>, _>>()?;
        let root_curve = self.root_curve.with_control(chunk(root_controls))?;
        Ok(MotionCurves { joint_curves, root_curve, ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub action: Action,
    pub morphology: Morphology,
    pub template: GaitTemplate,
    pub dense: DenseTrajectory,
    pub contacts: Vec<(usize, Vec<bool>)>,
    pub curves: MotionCurves,
    pub params: MotionParams,
}

/// Full prior: parse the action, pick a template, build the dense curves,
/// detect contacts, project with contact/torso weights and sample at
/// `s = t/(T−1)`. Offsets start at zero.
pub fn initialize_motion(
    skel: &Skeleton,
    prompt: &str,
    frames: usize,
    cfg: &InitConfig,
    lexicon: &Lexicon,
    gaits: &GaitDictionary,
) -> Result<Initialization, InitError> {
    let action = lexicon.parse(prompt);
    let plan = BodyPlan::analyze(skel);
    let morphology = morphology::classify_with_plan(skel, &plan);
    let template = gaits.lookup(morphology.class, action).ok_or(InitError::NoTemplate(action))?.clone();
    let dense = generate_dense_trajectory(skel, &template, frames, cfg.character_height)?;
    let contacts = detect_contacts(skel, &dense, cfg.contact_fraction)?;

    // joints on a ground chain inherit that chain's foot contacts
    let j_count = skel.len();
    let mut contact_of: Vec<Option<&Vec<bool>>> = vec![None; j_count];
    for (foot, flags) in &contacts {
        let chain = plan
            .pairs
            .iter()
            .flat_map(|p| [&p.left, &p.right])
            .find(|c| c.joints.contains(foot))
            .map(|c| c.joints.clone())
            .unwrap_or_else(|| vec![*foot]);
        for j in chain {
            contact_of[j] = Some(flags);
        }
    }
    let weight = |j: usize, frame: usize| match contact_of[j] {
        Some(flags) if flags[frame] => cfg.contact_weight,
        _ if morphology::is_torso(skel.category(j)) => cfg.torso_weight,
        _ => 1.0,
    };
    let joint_curves = project_to_nurbs(&dense.rotations, frames, j_count, cfg.control_points, cfg.degree, weight)?;
    let root_curve = project_to_nurbs(&dense.root, frames, 1, cfg.control_points, cfg.degree, |_, _| cfg.torso_weight)?.remove(0);
    let curves = MotionCurves::new(frames, joint_curves, root_curve);
    let params = curves.sample();
    Ok(Initialization { action, morphology, template, dense, contacts, curves, params })
}

/// [`initialize_motion`] with bundled lexicon, gait dictionary and defaults.
pub fn initialize_default(skel: &Skeleton, prompt: &str, frames: usize) -> Result<Initialization, InitError> {
    initialize_motion(skel, prompt, frames, &InitConfig::default(), &Lexicon::default(), &GaitDictionary::default())
}
