//! Kinematic skeleton: hierarchy, rest pose, offsets and bind matrices.

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Tensor, Unary};
use crate::linalg::{self, Mat4, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointCategory {
    Spine,
    HingeLimb,
    BallLimb,
    Foot,
    Head,
    #[serde(alias = "appendage")]
    Tail,
    Other,
}

impl JointCategory {
    pub const ALL: [JointCategory; 7] = [
        JointCategory::Spine,
        JointCategory::HingeLimb,
        JointCategory::BallLimb,
        JointCategory::Foot,
        JointCategory::Head,
        JointCategory::Tail,
        JointCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JointCategory::Spine => "spine",
            JointCategory::HingeLimb => "hinge-limb",
            JointCategory::BallLimb => "ball-limb",
            JointCategory::Foot => "foot",
            JointCategory::Head => "head",
            JointCategory::Tail => "tail",
            JointCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub rest_position: Vec3,
    /// Missing categories are inferred from the skeleton's shape at build time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<JointCategory>,
}

impl Joint {
    pub fn new(name: impl Into<String>, parent: Option<usize>, rest_position: Vec3) -> Self {
        Self { name: name.into(), parent, rest_position, category: None }
    }

    pub fn with_category(mut self, category: JointCategory) -> Self {
        self.category = Some(category);
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkeletonError {
    #[error("skeleton has no joints")]
    Empty,
    #[error("skeleton has no root joint")]
    NoRoot,
    #[error("skeleton has multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("joint '{joint}' references parent index {parent}, but only {count} joints exist")]
    DanglingParent { joint: String, parent: usize, count: usize },
    #[error("cycle detected through joint '{0}'")]
    Cycle(String),
    #[error("joint '{0}' has a non-finite rest position")]
    NonFinite(String),
}

/// Immutable skeleton with precomputed traversal data.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    categories: Vec<JointCategory>,
    children: Vec<Vec<usize>>,
    root: usize,
    topo_order: Vec<usize>,
    rest_offsets: Vec<Vec3>,
    inverse_bind: Vec<Mat4>,
}

impl Skeleton {
    /// Validates the hierarchy and precomputes DFS order, offsets and bind
    /// matrices. Children are visited in input order.
    pub fn build(joints: Vec<Joint>) -> Result<Self, SkeletonError> {
        if joints.is_empty() {
            return Err(SkeletonError::Empty);
        }
        let count = joints.len();
        let mut children = vec![Vec::new(); count];
        let mut roots = Vec::new();
        for (j, joint) in joints.iter().enumerate() {
            if joint.rest_position.iter().any(|v| !v.is_finite()) {
                return Err(SkeletonError::NonFinite(joint.name.clone()));
            }
            match joint.parent {
                None => roots.push(j),
                Some(p) if p >= count => return Err(SkeletonError::DanglingParent { joint: joint.name.clone(), parent: p, count }),
                Some(p) if p == j => return Err(SkeletonError::Cycle(joint.name.clone())),
                Some(p) => children[p].push(j),
            }
        }
        let root = match roots.as_slice() {
            [] => {
                // every joint has a parent, so following any chain must loop
                return Err(SkeletonError::Cycle(joints[0].name.clone()));
            }
            [r] => *r,
            many => return Err(SkeletonError::MultipleRoots(many.iter().map(|&r| joints[r].name.clone()).collect())),
        };

        let mut topo_order = Vec::with_capacity(count);
        let mut stack = vec![root];
        while let Some(j) = stack.pop() {
            topo_order.push(j);
            stack.extend(children[j].iter().rev());
        }
        if topo_order.len() != count {
            let mut reached = vec![false; count];
            topo_order.iter().for_each(|&j| reached[j] = true);
            let stray = (0..count).find(|&j| !reached[j]).expect("unreached joint");
            return Err(SkeletonError::Cycle(joints[stray].name.clone()));
        }

        let rest_offsets: Vec<Vec3> = joints
            .iter()
            .map(|j| match j.parent {
                Some(p) => linalg::sub(j.rest_position, joints[p].rest_position),
                None => j.rest_position,
            })
            .collect();

        // compose rest-pose locals down the tree, then invert
        let mut rest_global = vec![linalg::IDENTITY4; count];
        for &j in &topo_order {
            let local = linalg::translation(rest_offsets[j]);
            rest_global[j] = match joints[j].parent {
                Some(p) => linalg::mat4_mul(&rest_global[p], &local),
                None => local,
            };
        }
        let inverse_bind = rest_global.iter().map(linalg::rigid_inverse).collect();

        let mut skel =
            Skeleton { categories: vec![JointCategory::Other; count], joints, children, root, topo_order, rest_offsets, inverse_bind };
        let inferred = crate::motion_init::morphology::infer_categories(&skel);
        skel.categories = skel.joints.iter().zip(inferred).map(|(j, guess)| j.category.unwrap_or(guess)).collect();
        Ok(skel)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, j: usize) -> &Joint {
        &self.joints[j]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn rest_offsets(&self) -> &[Vec3] {
        &self.rest_offsets
    }

    pub fn inverse_bind(&self) -> &[Mat4] {
        &self.inverse_bind
    }

    pub fn category(&self, j: usize) -> JointCategory {
        self.categories[j]
    }

    pub fn categories(&self) -> &[JointCategory] {
        &self.categories
    }

    pub fn rest_position(&self, j: usize) -> Vec3 {
        self.joints[j].rest_position
    }

    pub fn is_leaf(&self, j: usize) -> bool {
        self.children[j].is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Joint indices from the root down to `j`, inclusive.
    pub fn path_from_root(&self, j: usize) -> Vec<usize> {
        let mut path = vec![j];
        let mut cur = j;
        while let Some(p) = self.joints[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Longest root-to-leaf joint count.
    pub fn depth(&self) -> usize {
        (0..self.len()).filter(|&j| self.is_leaf(j)).map(|j| self.path_from_root(j).len()).max().unwrap_or(0)
    }

    /// Axis-aligned bounds of the rest joint positions.
    pub fn rest_bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for j in &self.joints {
            for a in 0..3 {
                lo[a] = lo[a].min(j.rest_position[a]);
                hi[a] = hi[a].max(j.rest_position[a]);
            }
        }
        (lo, hi)
    }

    /// Same skeleton with every joint position mapped through `f`.
    pub fn map_positions(&self, f: impl Fn(Vec3) -> Vec3) -> Result<Skeleton, SkeletonError> {
        let joints = self
            .joints
            .iter()
            .zip(&self.categories)
            .map(|(j, c)| Joint { rest_position: f(j.rest_position), category: Some(*c), ..j.clone() })
            .collect();
        Skeleton::build(joints)
    }
}

/// Learnable motion state, stored row-major as `[T,J,3]`, `[T,3]`, `[T,J,3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub frames: usize,
    pub joints: usize,
    pub rotations: Vec<f64>,
    pub root_translation: Vec<f64>,
    pub local_offsets: Vec<f64>,
}

impl MotionParams {
    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            rotations: vec![0.0; frames * joints * 3],
            root_translation: vec![0.0; frames * 3],
            local_offsets: vec![0.0; frames * joints * 3],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (t, j) = (self.frames, self.joints);
        if self.rotations.len() != t * j * 3 {
            return Err(format!("rotations hold {} values, expected {}", self.rotations.len(), t * j * 3));
        }
        if self.root_translation.len() != t * 3 {
            return Err(format!("root_translation holds {} values, expected {}", self.root_translation.len(), t * 3));
        }
        if self.local_offsets.len() != t * j * 3 {
            return Err(format!("local_offsets hold {} values, expected {}", self.local_offsets.len(), t * j * 3));
        }
        let all = self.rotations.iter().chain(&self.root_translation).chain(&self.local_offsets);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err("motion parameters contain non-finite values".into());
        }
        Ok(())
    }

    pub fn rotation(&self, t: usize, j: usize) -> Vec3 {
        let i = (t * self.joints + j) * 3;
        [self.rotations[i], self.rotations[i + 1], self.rotations[i + 2]]
    }

    pub fn set_rotation(&mut self, t: usize, j: usize, r: Vec3) {
        let i = (t * self.joints + j) * 3;
        self.rotations[i..i + 3].copy_from_slice(&r);
    }

    pub fn root(&self, t: usize) -> Vec3 {
        [self.root_translation[t * 3], self.root_translation[t * 3 + 1], self.root_translation[t * 3 + 2]]
    }

    pub fn set_root(&mut self, t: usize, p: Vec3) {
        self.root_translation[t * 3..t * 3 + 3].copy_from_slice(&p);
    }

    pub fn offset(&self, t: usize, j: usize) -> Vec3 {
        let i = (t * self.joints + j) * 3;
        [self.local_offsets[i], self.local_offsets[i + 1], self.local_offsets[i + 2]]
    }

    pub fn set_offset(&mut self, t: usize, j: usize, d: Vec3) {
        let i = (t * self.joints + j) * 3;
        self.local_offsets[i..i + 3].copy_from_slice(&d);
    }

    pub fn rotations_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.joints, 3], self.rotations.clone()).expect("validated motion params")
    }

    pub fn root_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, 3], self.root_translation.clone()).expect("validated motion params")
    }

    pub fn offsets_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.joints, 3], self.local_offsets.clone()).expect("validated motion params")
    }

    /// Largest absolute elementwise difference across all three arrays.
    pub fn max_abs_diff(&self, other: &MotionParams) -> f64 {
        let pairs = self
            .rotations
            .iter()
            .zip(&other.rotations)
            .chain(self.root_translation.iter().zip(&other.root_translation))
            .chain(self.local_offsets.iter().zip(&other.local_offsets));
        pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Rodrigues conversion of a batch of axis-angle vectors `[N,3] → [N,3,3]`.
///
/// The coefficients are evaluated as functions of `θ²`, switching to a
/// Taylor expansion for `θ < 1e-6` so gradients stay finite at the rest pose.
pub fn axis_angle_to_matrix(r: &Tensor) -> autodiff::Result<Tensor> {
    let shape = r.shape();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(autodiff::TensorError::ShapeMismatch { op: "axis_angle_to_matrix", lhs: shape.to_vec(), rhs: vec![0, 3] });
    }
    let n = shape[0];
    let theta_sq = r.square()?.sum_axis(1)?;
    let a = theta_sq.unary(Unary::SincOfSquared)?;
    let b = theta_sq.unary(Unary::VersineOfSquared)?;
    let c = theta_sq.unary(Unary::CosOfSquared)?;
    let x = r.slice(1, 0, 1)?.reshape(&[n])?;
    let y = r.slice(1, 1, 2)?.reshape(&[n])?;
    let z = r.slice(1, 2, 3)?.reshape(&[n])?;
    let bx = b.mul(&x)?;
    let by = b.mul(&y)?;
    let bxy = bx.mul(&y)?;
    let bxz = bx.mul(&z)?;
    let byz = by.mul(&z)?;
    let ax = a.mul(&x)?;
    let ay = a.mul(&y)?;
    let az = a.mul(&z)?;
    // M = c·I + a·[r]× + b·r rᵀ
    let entries = [
        c.add(&bx.mul(&x)?)?,
        bxy.sub(&az)?,
        bxz.add(&ay)?,
        bxy.add(&az)?,
        c.add(&by.mul(&y)?)?,
        byz.sub(&ax)?,
        bxz.sub(&ay)?,
        byz.add(&ax)?,
        c.add(&b.mul(&z)?.mul(&z)?)?,
    ];
    let cols: Vec<Tensor> = entries.iter().map(|e| e.reshape(&[n, 1])).collect::<autodiff::Result<_>>()?;
    let refs: Vec<&Tensor> = cols.iter().collect();
    Tensor::concat(&refs, 1)?.reshape(&[n, 3, 3])
}

/// Untracked single-vector convenience wrapper.
pub fn rotation_matrix(r: Vec3) -> linalg::Mat3 {
    let m = axis_angle_to_matrix(&Tensor::new(vec![1, 3], r.to_vec()).expect("finite axis-angle")).expect("rotation of a finite vector");
    let d = m.data();
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{central_difference, compare};
    use crate::autodiff::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> Vec<Joint> {
        vec![
            Joint::new("root", None, [0.0, 0.0, 0.0]),
            Joint::new("a", Some(0), [1.0, 0.0, 0.0]),
            Joint::new("b", Some(1), [2.0, 0.0, 0.0]),
        ]
    }

    #[test]
    fn chain_offsets() {
        let s = Skeleton::build(chain()).unwrap();
        assert_eq!(s.rest_offsets(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(s.topo_order(), &[0, 1, 2]);
    }

    #[test]
    fn star_is_root_first_in_input_order() {
        let mut joints = vec![Joint::new("root", None, [0.0; 3])];
        for i in 0..4 {
            joints.push(Joint::new(format!("c{i}"), Some(0), [i as f64, 1.0, 0.0]));
        }
        let s = Skeleton::build(joints).unwrap();
        assert_eq!(s.topo_order(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn dfs_descends_before_siblings() {
        let joints = vec![
            Joint::new("root", None, [0.0; 3]),
            Joint::new("a", Some(0), [1.0, 0.0, 0.0]),
            Joint::new("b", Some(0), [-1.0, 0.0, 0.0]),
            Joint::new("a1", Some(1), [2.0, 0.0, 0.0]),
        ];
        let s = Skeleton::build(joints).unwrap();
        assert_eq!(s.topo_order(), &[0, 1, 3, 2]);
        for (pos, &j) in s.topo_order().iter().enumerate() {
            if let Some(p) = s.parent(j) {
                assert!(s.topo_order()[..pos].contains(&p));
            }
        }
    }

    #[test]
    fn invalid_hierarchies_are_rejected() {
        let mut two_roots = chain();
        two_roots[2].parent = None;
        assert!(matches!(Skeleton::build(two_roots), Err(SkeletonError::MultipleRoots(_))));

        let mut dangling = chain();
        dangling[2].parent = Some(9);
        assert_eq!(Skeleton::build(dangling), Err(SkeletonError::DanglingParent { joint: "b".into(), parent: 9, count: 3 }));

        let cyclic =
            vec![Joint::new("root", None, [0.0; 3]), Joint::new("a", Some(2), [1.0, 0.0, 0.0]), Joint::new("b", Some(1), [2.0, 0.0, 0.0])];
        assert!(matches!(Skeleton::build(cyclic), Err(SkeletonError::Cycle(_))));
        assert_eq!(Skeleton::build(vec![]), Err(SkeletonError::Empty));
    }

    #[test]
    fn explicit_category_wins_over_heuristic() {
        let mut joints = chain();
        joints[2].category = Some(JointCategory::Tail);
        let s = Skeleton::build(joints).unwrap();
        assert_eq!(s.category(2), JointCategory::Tail);
    }

    /// Quaternion route: q = (cos θ/2, sin θ/2 · n̂), then the standard
    /// quaternion-to-matrix formula.
    fn quaternion_oracle(r: Vec3) -> linalg::Mat3 {
        let theta = linalg::norm(r);
        let (w, v) = if theta == 0.0 { (1.0, [0.0; 3]) } else { ((theta / 2.0).cos(), linalg::scale(r, (theta / 2.0).sin() / theta)) };
        let [x, y, z] = v;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    #[test]
    fn rodrigues_special_cases() {
        let m = rotation_matrix([0.0; 3]);
        assert_eq!(m, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let q = rotation_matrix([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let v = linalg::mat3_mul_vec(&q, [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }

    #[test]
    fn rodrigues_matches_quaternions_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let dir = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = linalg::norm(dir).max(1e-12);
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let r = linalg::scale(dir, angle / n);
            let m = rotation_matrix(r);
            let q = quaternion_oracle(r);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((m[i][j] - q[i][j]).abs() < 1e-10);
                    let mtm: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((mtm - expect).abs() < 1e-9);
                }
            }
            let det = linalg::dot(m[0], linalg::cross(m[1], m[2]));
            assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rodrigues_gradient_matches_fd_including_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cases: Vec<Vec3> = vec![[0.0; 3], [1e-8, -2e-8, 5e-9], [3e-4, 1e-4, -2e-4]];
        for _ in 0..20 {
            cases.push([rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        }
        for r in cases {
            let w: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tape = Tape::new();
            let x = tape.leaf(&Tensor::new(vec![1, 3], r.to_vec()).unwrap());
            let loss = axis_angle_to_matrix(&x).unwrap().mul_const(&w).unwrap().sum().unwrap();
            let g = tape.backward(&loss).unwrap().wrt(&x).to_vec();
            let fd = central_difference(
                |v| {
                    let m = axis_angle_to_matrix(&Tensor::new(vec![1, 3], v.to_vec()).unwrap()).unwrap();
                    m.data().iter().zip(&w).map(|(a, b)| a * b).sum()
                },
                &r,
                1e-6,
            );
            let cmp = compare(&g, &fd, 1e-3);
            assert!(cmp.within(1e-4, 1e-6), "{r:?}: {cmp:?}");
        }
    }
}
