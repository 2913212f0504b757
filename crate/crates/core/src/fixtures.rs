//! Procedural test rigs: each bone becomes a small tube skinned to its two
//! joints, and leaf joints get an end cap.
//!
//! All rigs are y-up, face +z, and come out normalized (one unit tall, lowest
//! vertex on y = 0). The bundled files under `assets/rigs/` were written from
//! these builders.

use crate::kinematics::{SkinWeights, SkinnedMesh};
use crate::linalg::{self, Vec3};
use crate::rig::{normalize, Rig};
use crate::skeleton::{Joint, JointCategory, Skeleton};

const SIDES: usize = 6;
const RINGS: usize = 4;

struct Bone {
    from: Vec3,
    to: Vec3,
    radius: f64,
    /// `(joint, weight)` at the start ring and at the end ring.
    start: usize,
    end: usize,
    blend: bool,
}

fn frame(dir: Vec3) -> (Vec3, Vec3) {
    let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let u = linalg::cross(dir, helper);
    let u = linalg::scale(u, 1.0 / linalg::norm(u));
    let v = linalg::cross(dir, u);
    (u, v)
}

fn build_mesh(bones: &[Bone], joints: usize) -> (Vec<Vec3>, Vec<[usize; 3]>, Vec<Vec<(usize, f64)>>) {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut weights = Vec::new();
    for b in bones {
        let axis = linalg::sub(b.to, b.from);
        let len = linalg::norm(axis);
        let dir = linalg::scale(axis, 1.0 / len);
        let (u, v) = frame(dir);
        let base = verts.len();
        for r in 0..RINGS {
            let f = r as f64 / (RINGS - 1) as f64;
            let center = linalg::add(b.from, linalg::scale(axis, f));
            // the last third of a bone blends halfway into the child joint
            let w_end = if b.blend { (0.5 * (f - 0.6) / 0.4).max(0.0) } else { 1.0 };
            for s in 0..SIDES {
                let ang = 2.0 * std::f64::consts::PI * s as f64 / SIDES as f64;
                let off = linalg::add(linalg::scale(u, b.radius * ang.cos()), linalg::scale(v, b.radius * ang.sin()));
                verts.push(linalg::add(center, off));
                let row = if b.start == b.end || w_end >= 1.0 {
                    vec![(b.end, 1.0)]
                } else if w_end <= 0.0 {
                    vec![(b.start, 1.0)]
                } else {
                    vec![(b.start, 1.0 - w_end), (b.end, w_end)]
                };
                weights.push(row);
            }
        }
        for r in 0..RINGS - 1 {
            for s in 0..SIDES {
                let a = base + r * SIDES + s;
                let b2 = base + r * SIDES + (s + 1) % SIDES;
                let c = a + SIDES;
                let d = b2 + SIDES;
                faces.push([a, b2, d]);
                faces.push([a, d, c]);
            }
        }
    }
    debug_assert!(weights.iter().flatten().all(|(j, _)| *j < joints));
    (verts, faces, weights)
}

/// Tubes along every bone plus end caps on leaves. `cap_dir` chooses the cap
/// direction for a leaf joint (defaults to the incoming bone direction).
fn tube_rig(name: &str, mut joints: Vec<Joint>, radius: impl Fn(usize) -> f64, cap_dir: impl Fn(usize, Vec3) -> Vec3) -> Rig {
    let count = joints.len();
    let mut has_child = vec![false; count];
    for j in &joints {
        if let Some(p) = j.parent {
            has_child[p] = true;
        }
    }
    let mut bones = Vec::new();
    for (j, joint) in joints.iter().enumerate() {
        let Some(p) = joint.parent else { continue };
        let from = joints[p].rest_position;
        let to = joint.rest_position;
        bones.push(Bone { from, to, radius: radius(j), start: p, end: j, blend: true });
        if !has_child[j] {
            let dir = linalg::sub(to, from);
            let dir = cap_dir(j, linalg::scale(dir, 1.0 / linalg::norm(dir)));
            let cap_len = 0.35 * linalg::norm(linalg::sub(to, from));
            bones.push(Bone {
                from: to,
                to: linalg::add(to, linalg::scale(dir, cap_len)),
                radius: radius(j),
                start: j,
                end: j,
                blend: false,
            });
        }
    }
    let (mut verts, faces, rows) = build_mesh(&bones, count);
    normalize(&mut joints, &mut verts);
    let skeleton = Skeleton::build(joints).expect("fixture skeleton is valid");
    let weights = SkinWeights::new(rows, count).expect("fixture weights are normalized");
    let mesh = SkinnedMesh::new(verts, faces, weights, None).expect("fixture mesh is valid");
    Rig { name: name.into(), skeleton, mesh }
}

/// Two joints: a base and a swinging tip, used for the convergence benchmark.
pub fn toy2() -> Rig {
    let joints = vec![
        Joint::new("base", None, [0.0, 0.3, 0.0]).with_category(JointCategory::Spine),
        Joint::new("tip", Some(0), [0.0, 0.8, 0.0]).with_category(JointCategory::Tail),
    ];
    tube_rig("toy2", joints, |_| 0.05, |_, d| d)
}

/// Humanoid: spine chain with head, two legs, two arms (17 joints).
pub fn biped() -> Rig {
    let mut j = vec![
        Joint::new("pelvis", None, [0.0, 0.55, 0.0]),
        Joint::new("spine", Some(0), [0.0, 0.7, 0.0]),
        Joint::new("chest", Some(1), [0.0, 0.85, 0.0]),
        Joint::new("neck", Some(2), [0.0, 0.95, 0.0]),
        Joint::new("head", Some(3), [0.0, 1.05, 0.0]),
    ];
    for (side, x) in [("l", 1.0), ("r", -1.0)] {
        let base = j.len();
        j.push(Joint::new(format!("hip_{side}"), Some(0), [0.1 * x, 0.5, 0.0]));
        j.push(Joint::new(format!("knee_{side}"), Some(base), [0.1 * x, 0.28, 0.0]));
        j.push(Joint::new(format!("foot_{side}"), Some(base + 1), [0.1 * x, 0.05, 0.0]));
    }
    for (side, x) in [("l", 1.0), ("r", -1.0)] {
        let base = j.len();
        j.push(Joint::new(format!("shoulder_{side}"), Some(2), [0.18 * x, 0.88, 0.0]));
        j.push(Joint::new(format!("elbow_{side}"), Some(base), [0.38 * x, 0.88, 0.0]));
        j.push(Joint::new(format!("hand_{side}"), Some(base + 1), [0.56 * x, 0.88, 0.0]));
    }
    let trunk = |i: usize| if i <= 4 { 0.045 } else { 0.025 };
    tube_rig("biped", j, trunk, |i, d| if i == 7 || i == 10 { [0.0, 0.0, 1.0] } else { d })
}

/// Four legs, a neck/head and a tail (12 joints).
pub fn quadruped() -> Rig {
    let mut j = vec![
        Joint::new("hips", None, [0.0, 0.6, -0.35]),
        Joint::new("chest", Some(0), [0.0, 0.62, 0.35]),
        Joint::new("head", Some(1), [0.0, 0.85, 0.6]),
        Joint::new("tail", Some(0), [0.0, 0.68, -0.8]),
    ];
    for (parent, z, tag) in [(0usize, -0.35, "hind"), (1, 0.35, "front")] {
        for (side, x) in [("l", 1.0), ("r", -1.0)] {
            let base = j.len();
            j.push(Joint::new(format!("{tag}_upper_{side}"), Some(parent), [0.15 * x, 0.45, z]));
            j.push(Joint::new(format!("{tag}_foot_{side}"), Some(base), [0.15 * x, 0.05, z]));
        }
    }
    let radius = |i: usize| if i <= 1 { 0.07 } else { 0.03 };
    let feet = [5, 7, 9, 11];
    tube_rig("quadruped", j, radius, move |i, d| if feet.contains(&i) { [0.0, 0.0, 1.0] } else { d })
}

/// Desk lamp: one articulated chain, no limbs.
pub fn lamp() -> Rig {
    let j = vec![
        Joint::new("base", None, [0.0, 0.02, 0.0]),
        Joint::new("post", Some(0), [0.0, 0.1, 0.0]),
        Joint::new("lower_arm", Some(1), [0.12, 0.5, 0.0]),
        Joint::new("upper_arm", Some(2), [0.35, 0.8, 0.0]),
        Joint::new("shade", Some(3), [0.5, 0.72, 0.0]),
    ];
    tube_rig("lamp", j, |_| 0.03, |_, d| d)
}

/// Fixture by name.
pub fn by_name(name: &str) -> Option<Rig> {
    match name {
        "toy2" => Some(toy2()),
        "biped" => Some(biped()),
        "quadruped" => Some(quadruped()),
        "lamp" => Some(lamp()),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["toy2", "biped", "quadruped", "lamp"];
