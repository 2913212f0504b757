//! Differentiable forward kinematics and linear blend skinning.

use crate::autodiff::{Result, Tensor, TensorError};
use crate::linalg::{Mat4, Vec3};
use crate::skeleton::{axis_angle_to_matrix, MotionParams, Skeleton};

/// Most influences a vertex may carry.
pub const MAX_INFLUENCES: usize = 8;

/// Above this many weight entries the sparse gather path is used.
const DENSE_LIMIT: usize = 1_000_000;

/// Global joint transforms, one `[T,4,4]` tensor per joint.
#[derive(Debug, Clone)]
pub struct GlobalTransforms {
    frames: usize,
    per_joint: Vec<Tensor>,
}

impl GlobalTransforms {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joint(&self, j: usize) -> &Tensor {
        &self.per_joint[j]
    }

    pub fn len(&self) -> usize {
        self.per_joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_joint.is_empty()
    }

    /// World positions of joint `j`, shape `[T,3]`.
    pub fn position(&self, j: usize) -> Result<Tensor> {
        let g = &self.per_joint[j];
        g.slice(1, 0, 3)?.slice(2, 3, 4)?.reshape(&[self.frames, 3])
    }

    /// World positions of every joint, shape `[T,J,3]`.
    pub fn positions(&self) -> Result<Tensor> {
        let cols = (0..self.len()).map(|j| self.position(j)?.reshape(&[self.frames, 1, 3])).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = cols.iter().collect();
        Tensor::concat(&refs, 1)
    }

    /// Plain-value matrix for frame `t`, joint `j`.
    pub fn matrix(&self, t: usize, j: usize) -> Mat4 {
        let d = &self.per_joint[j].data()[t * 16..(t + 1) * 16];
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().enumerate() {
            row.copy_from_slice(&d[r * 4..r * 4 + 4]);
        }
        m
    }
}

fn shape_error(lhs: &[usize], rhs: Vec<usize>) -> TensorError {
    TensorError::ShapeMismatch { op: "forward_kinematics", lhs: lhs.to_vec(), rhs }
}

/// Composes `L_j = [R_j | o_j + δ_j]` down the hierarchy; the root's
/// translation additionally carries `t_root`.
///
/// `rotations` and `offsets` are `[T,J,3]`, `root` is `[T,3]`.
pub fn forward_kinematics(skel: &Skeleton, rotations: &Tensor, root: &Tensor, offsets: &Tensor) -> Result<GlobalTransforms> {
    let j_count = skel.len();
    let t = *rotations.shape().first().ok_or_else(|| shape_error(rotations.shape(), vec![0, j_count, 3]))?;
    if rotations.shape() != [t, j_count, 3] {
        return Err(shape_error(rotations.shape(), vec![t, j_count, 3]));
    }
    if offsets.shape() != [t, j_count, 3] {
        return Err(shape_error(offsets.shape(), vec![t, j_count, 3]));
    }
    if root.shape() != [t, 3] {
        return Err(shape_error(root.shape(), vec![t, 3]));
    }

    let mats = axis_angle_to_matrix(&rotations.reshape(&[t * j_count, 3])?)?.reshape(&[t, j_count, 3, 3])?;
    let rest: Vec<f64> = (0..t).flat_map(|_| skel.rest_offsets().iter().flatten().copied()).collect();
    let translations = offsets.add_const(&rest)?;
    let mut bottom = Vec::with_capacity(t * 4);
    for _ in 0..t {
        bottom.extend_from_slice(&[0.0, 0.0, 0.0, 1.0]);
    }
    let bottom = Tensor::new(vec![t, 1, 4], bottom)?;

    let mut per_joint: Vec<Option<Tensor>> = vec![None; j_count];
    for &j in skel.topo_order() {
        let mut trans = translations.select_index(1, j)?;
        if skel.parent(j).is_none() {
            trans = trans.add(root)?;
        }
        let top = Tensor::concat(&[&mats.select_index(1, j)?, &trans.reshape(&[t, 3, 1])?], 2)?;
        let local = Tensor::concat(&[&top, &bottom], 1)?;
        let global = match skel.parent(j) {
            Some(p) => per_joint[p].as_ref().expect("parent precedes child in topo order").matmul(&local)?,
            None => local,
        };
        per_joint[j] = Some(global);
    }
    Ok(GlobalTransforms { frames: t, per_joint: per_joint.into_iter().map(|g| g.expect("every joint visited")).collect() })
}

/// FK on untracked copies of `params`.
pub fn forward_kinematics_params(skel: &Skeleton, params: &MotionParams) -> Result<GlobalTransforms> {
    forward_kinematics(skel, &params.rotations_tensor(), &params.root_tensor(), &params.offsets_tensor())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("vertex {vertex}: joint index {joint} out of range ({joints} joints)")]
    JointOutOfRange { vertex: usize, joint: usize, joints: usize },
    #[error("vertex {vertex}: weight {weight} is negative or non-finite")]
    BadWeight { vertex: usize, weight: f64 },
    #[error("vertex {vertex}: weights sum to {sum}, expected 1")]
    NotNormalized { vertex: usize, sum: f64 },
    #[error("vertex {vertex}: {count} influences exceed the limit of {MAX_INFLUENCES}")]
    TooManyInfluences { vertex: usize, count: usize },
    #[error("face {face} references vertex {vertex}, but the mesh has {count} vertices")]
    FaceOutOfRange { face: usize, vertex: usize, count: usize },
    #[error("{what}: expected {expected} entries, found {found}")]
    CountMismatch { what: &'static str, expected: usize, found: usize },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
}

/// Sparse, row-stochastic skinning weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    rows: Vec<Vec<(usize, f64)>>,
    joints: usize,
}

impl SkinWeights {
    /// Zero entries are dropped; every row must sum to 1 within 1e-6.
    pub fn new(rows: Vec<Vec<(usize, f64)>>, joints: usize) -> std::result::Result<Self, MeshError> {
        let mut cleaned = Vec::with_capacity(rows.len());
        for (vertex, row) in rows.into_iter().enumerate() {
            let mut kept: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (joint, weight) in row {
                if joint >= joints {
                    return Err(MeshError::JointOutOfRange { vertex, joint, joints });
                }
                if !weight.is_finite() || weight < 0.0 {
                    return Err(MeshError::BadWeight { vertex, weight });
                }
                if weight > 0.0 {
                    match kept.iter_mut().find(|(j, _)| *j == joint) {
                        Some(entry) => entry.1 += weight,
                        None => kept.push((joint, weight)),
                    }
                }
            }
            if kept.len() > MAX_INFLUENCES {
                return Err(MeshError::TooManyInfluences { vertex, count: kept.len() });
            }
            let sum: f64 = kept.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(MeshError::NotNormalized { vertex, sum });
            }
            kept.sort_by_key(|(j, _)| *j);
            cleaned.push(kept);
        }
        Ok(Self { rows: cleaned, joints })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn row(&self, v: usize) -> &[(usize, f64)] {
        &self.rows[v]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn weight(&self, v: usize, j: usize) -> f64 {
        self.rows[v].iter().find(|(k, _)| *k == j).map_or(0.0, |(_, w)| *w)
    }

    /// Row-major `[V,J]` matrix.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len() * self.joints];
        for (v, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[v * self.joints + j] = w;
            }
        }
        out
    }

    /// Joint carrying the largest weight (lowest index on ties).
    pub fn dominant(&self, v: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for &(j, w) in &self.rows[v] {
            if w > best.1 {
                best = (j, w);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinnedMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub weights: SkinWeights,
    pub colors: Option<Vec<Vec3>>,
}

pub fn face_edges(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

pub fn face_neighbors(vertex_count: usize, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); vertex_count];
    for (a, b) in face_edges(faces) {
        out[a].push(b);
        out[b].push(a);
    }
    out
}

impl SkinnedMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        weights: SkinWeights,
        colors: Option<Vec<Vec3>>,
    ) -> std::result::Result<Self, MeshError> {
        let count = vertices.len();
        if let Some(v) = vertices.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::NonFinite(v));
        }
        if weights.len() != count {
            return Err(MeshError::CountMismatch { what: "skin weight rows", expected: count, found: weights.len() });
        }
        if let Some(c) = &colors {
            if c.len() != count {
                return Err(MeshError::CountMismatch { what: "vertex colors", expected: count, found: c.len() });
            }
        }
        for (face, tri) in faces.iter().enumerate() {
            if let Some(&vertex) = tri.iter().find(|&&i| i >= count) {
                return Err(MeshError::FaceOutOfRange { face, vertex, count });
            }
        }
        Ok(Self { vertices, faces, weights, colors })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        face_edges(&self.faces)
    }

    /// Symmetric 1-ring neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        face_neighbors(self.vertices.len(), &self.faces)
    }

    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flatten().copied().collect()
    }
}

/// Which blend implementation [`skin_with`] should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkinPath {
    Auto,
    Dense,
    Sparse,
}

/// Linear blend skinning, `[T,V,3]`.
pub fn skin(skel: &Skeleton, mesh: &SkinnedMesh, g: &GlobalTransforms) -> Result<Tensor> {
    skin_with(skel, mesh, g, SkinPath::Auto)
}

pub fn skin_with(skel: &Skeleton, mesh: &SkinnedMesh, g: &GlobalTransforms, path: SkinPath) -> Result<Tensor> {
    let (t, j_count, v_count) = (g.frames(), skel.len(), mesh.vertex_count());
    if mesh.weights.joints() != j_count || g.len() != j_count {
        return Err(TensorError::ShapeMismatch { op: "skin", lhs: vec![v_count, mesh.weights.joints()], rhs: vec![g.len(), j_count] });
    }
    // A_j = G_j · B_j, top three rows flattened to 12 values per frame
    let skinning = (0..j_count)
        .map(|j| {
            let bind: Vec<f64> = skel.inverse_bind()[j].iter().flatten().copied().collect();
            g.joint(j).matmul(&Tensor::new(vec![4, 4], bind)?)?.slice(1, 0, 3)?.reshape(&[t, 12])
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = skinning.iter().collect();
    let stacked = Tensor::stack(&refs)?; // [J,T,12]

    let dense = match path {
        SkinPath::Dense => true,
        SkinPath::Sparse => false,
        SkinPath::Auto => v_count * j_count <= DENSE_LIMIT,
    };
    let blended = if dense {
        let w = Tensor::new(vec![v_count, j_count], mesh.weights.dense())?;
        w.matmul(&stacked.permute(&[1, 0, 2])?)? // [T,V,12]
    } else {
        let flat = stacked.reshape(&[j_count, t * 12])?;
        let slots = mesh.weights.rows().iter().map(Vec::len).max().unwrap_or(0);
        let mut acc: Option<Tensor> = None;
        for s in 0..slots {
            let mut idx = Vec::with_capacity(v_count);
            let mut wt = Vec::with_capacity(v_count * t * 12);
            for row in mesh.weights.rows() {
                let (j, w) = row.get(s).copied().unwrap_or((0, 0.0));
                idx.push(j);
                wt.extend(std::iter::repeat_n(w, t * 12));
            }
            let term = flat.index_select(&idx)?.mul_const(&wt)?;
            acc = Some(match acc {
                Some(a) => a.add(&term)?,
                None => term,
            });
        }
        let acc = acc.unwrap_or_else(|| Tensor::zeros(&[v_count, t * 12]));
        acc.reshape(&[v_count, t, 12])?.permute(&[1, 0, 2])?
    };

    let mut homo = Vec::with_capacity(t * v_count * 12);
    for _ in 0..t {
        for p in &mesh.vertices {
            for _ in 0..3 {
                homo.extend_from_slice(&[p[0], p[1], p[2], 1.0]);
            }
        }
    }
    blended.reshape(&[t, v_count, 3, 4])?.mul_const(&homo)?.sum_axis(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{central_difference, compare};
    use crate::autodiff::Tape;
    use crate::linalg;
    use crate::skeleton::{rotation_matrix, Joint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn arm() -> Skeleton {
        Skeleton::build(vec![
            Joint::new("shoulder", None, [0.0, 0.0, 0.0]),
            Joint::new("elbow", Some(0), [1.0, 0.0, 0.0]),
            Joint::new("hand", Some(1), [2.0, 0.0, 0.0]),
        ])
        .unwrap()
    }

    fn two_bone_mesh(skel: &Skeleton, rng: &mut ChaCha8Rng, count: usize) -> SkinnedMesh {
        let vertices: Vec<Vec3> =
            (0..count).map(|_| [rng.gen_range(-0.5..2.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]).collect();
        let rows = (0..count)
            .map(|_| {
                let a: f64 = rng.gen_range(0.0..1.0);
                vec![(0, a * 0.5), (1, a * 0.5), (2, 1.0 - a)]
            })
            .collect();
        let faces = (0..count.saturating_sub(2)).map(|i| [i, i + 1, i + 2]).collect();
        SkinnedMesh::new(vertices, faces, SkinWeights::new(rows, skel.len()).unwrap(), None).unwrap()
    }

    #[test]
    fn rest_pose_reproduces_rest_positions() {
        let skel = arm();
        let g = forward_kinematics_params(&skel, &MotionParams::zeros(2, 3)).unwrap();
        let pos = g.positions().unwrap();
        for t in 0..2 {
            for j in 0..3 {
                for a in 0..3 {
                    assert_eq!(pos.data()[(t * 3 + j) * 3 + a], skel.rest_position(j)[a]);
                }
            }
        }
    }

    #[test]
    fn two_link_arm_quarter_turns() {
        let skel = arm();
        let mut p = MotionParams::zeros(1, 3);
        p.set_rotation(0, 0, [0.0, 0.0, FRAC_PI_2]);
        p.set_rotation(0, 1, [0.0, 0.0, FRAC_PI_2]);
        let g = forward_kinematics_params(&skel, &p).unwrap();
        let hand = g.position(2).unwrap();
        // oracle: explicit product of homogeneous matrices
        let local = |r: Vec3, o: Vec3| {
            let m = rotation_matrix(r);
            let mut l = linalg::translation(o);
            for i in 0..3 {
                for k in 0..3 {
                    l[i][k] = m[i][k];
                }
            }
            l
        };
        let chain = linalg::mat4_mul(
            &linalg::mat4_mul(&local([0.0, 0.0, FRAC_PI_2], [0.0; 3]), &local([0.0, 0.0, FRAC_PI_2], [1.0, 0.0, 0.0])),
            &local([0.0; 3], [1.0, 0.0, 0.0]),
        );
        let expect = [-1.0, 1.0, 0.0];
        for a in 0..3 {
            assert!((hand.data()[a] - expect[a]).abs() < 1e-12);
            assert!((chain[a][3] - expect[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn root_translation_shifts_every_joint() {
        let skel = arm();
        let mut p = MotionParams::zeros(1, 3);
        p.set_root(0, [0.0, 0.0, 5.0]);
        let pos = forward_kinematics_params(&skel, &p).unwrap().positions().unwrap();
        for j in 0..3 {
            let rest = skel.rest_position(j);
            assert_eq!(&pos.data()[j * 3..j * 3 + 3], &[rest[0], rest[1], rest[2] + 5.0]);
        }
    }

    #[test]
    fn bottom_rows_and_orthonormal_blocks() {
        let skel = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = MotionParams::zeros(3, 3);
        p.rotations.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
        p.local_offsets.iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
        let g = forward_kinematics_params(&skel, &p).unwrap();
        for t in 0..3 {
            for j in 0..3 {
                let m = g.matrix(t, j);
                assert_eq!(m[3], [0.0, 0.0, 0.0, 1.0]);
                for a in 0..3 {
                    for b in 0..3 {
                        let d: f64 = (0..3).map(|k| m[k][a] * m[k][b]).sum();
                        assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn offsets_propagate_to_children() {
        let skel = arm();
        let mut p = MotionParams::zeros(1, 3);
        p.local_offsets[3..6].copy_from_slice(&[0.0, 0.5, 0.0]);
        let pos = forward_kinematics_params(&skel, &p).unwrap().positions().unwrap();
        assert_eq!(&pos.data()[6..9], &[2.0, 0.5, 0.0]);
    }

    #[test]
    fn bind_pose_skinning_is_identity_on_both_paths() {
        let skel = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mesh = two_bone_mesh(&skel, &mut rng, 30);
        let g = forward_kinematics_params(&skel, &MotionParams::zeros(2, 3)).unwrap();
        for path in [SkinPath::Dense, SkinPath::Sparse] {
            let out = skin_with(&skel, &mesh, &g, path).unwrap();
            for t in 0..2 {
                for (v, p) in mesh.vertices.iter().enumerate() {
                    for a in 0..3 {
                        assert!((out.data()[(t * 30 + v) * 3 + a] - p[a]).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn blend_matches_dense_oracle_and_paths_agree() {
        let skel = Skeleton::build(vec![Joint::new("a", None, [0.0; 3]), Joint::new("b", Some(0), [0.0, 1.0, 0.0])]).unwrap();
        let vertex = [0.3, 0.8, -0.2];
        let rows = vec![vec![(0, 0.3), (1, 0.7)]];
        let mesh = SkinnedMesh::new(vec![vertex], vec![], SkinWeights::new(rows, 2).unwrap(), None).unwrap();
        let mut p = MotionParams::zeros(1, 2);
        p.set_rotation(0, 0, [0.2, -0.4, 0.7]);
        p.set_rotation(0, 1, [-0.5, 0.1, 0.3]);
        p.set_root(0, [0.1, 0.2, 0.3]);
        let g = forward_kinematics_params(&skel, &p).unwrap();
        let rigid = |j: usize| {
            let a = linalg::mat4_mul(&g.matrix(0, j), &skel.inverse_bind()[j]);
            linalg::transform_point(&a, vertex)
        };
        let expect = linalg::add(linalg::scale(rigid(0), 0.3), linalg::scale(rigid(1), 0.7));
        let dense = skin_with(&skel, &mesh, &g, SkinPath::Dense).unwrap();
        let sparse = skin_with(&skel, &mesh, &g, SkinPath::Sparse).unwrap();
        for a in 0..3 {
            assert!((dense.data()[a] - expect[a]).abs() < 1e-12);
            assert!((sparse.data()[a] - expect[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_influence_follows_joint_rigidly() {
        let skel = arm();
        let vertex = [1.5, 0.2, 0.0];
        let mesh = SkinnedMesh::new(vec![vertex], vec![], SkinWeights::new(vec![vec![(1, 1.0)]], 3).unwrap(), None).unwrap();
        let mut p = MotionParams::zeros(1, 3);
        p.set_rotation(0, 1, [0.0, 0.0, 1.0]);
        let g = forward_kinematics_params(&skel, &p).unwrap();
        let out = skin(&skel, &mesh, &g).unwrap();
        let expect = linalg::transform_point(&linalg::mat4_mul(&g.matrix(0, 1), &skel.inverse_bind()[1]), vertex);
        for a in 0..3 {
            assert_eq!(out.data()[a], expect[a]);
        }
    }

    #[test]
    fn weight_validation() {
        assert_eq!(SkinWeights::new(vec![vec![(0, 0.5)]], 1), Err(MeshError::NotNormalized { vertex: 0, sum: 0.5 }));
        assert_eq!(SkinWeights::new(vec![vec![(3, 1.0)]], 2), Err(MeshError::JointOutOfRange { vertex: 0, joint: 3, joints: 2 }));
        let many: Vec<(usize, f64)> = (0..9).map(|j| (j, 1.0 / 9.0)).collect();
        assert!(matches!(SkinWeights::new(vec![many], 9), Err(MeshError::TooManyInfluences { .. })));
        let w = SkinWeights::new(vec![vec![(0, 1.0)]], 1).unwrap();
        assert!(matches!(SkinnedMesh::new(vec![[0.0; 3]], vec![[0, 0, 4]], w, None), Err(MeshError::FaceOutOfRange { .. })));
    }

    #[test]
    fn skinned_vertex_gradients_match_fd() {
        let skel = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mesh = two_bone_mesh(&skel, &mut rng, 6);
        let (t, j) = (2, 3);
        let n = t * j * 3 * 2 + t * 3;
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..t * 6 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eval = |x: &[Tensor; 3]| {
            let g = forward_kinematics(&skel, &x[0], &x[1], &x[2]).unwrap();
            skin(&skel, &mesh, &g).unwrap().mul_const(&w).unwrap().sum().unwrap()
        };
        let split = |v: &[f64]| {
            [
                Tensor::new(vec![t, j, 3], v[..18].to_vec()).unwrap(),
                Tensor::new(vec![t, 3], v[18..24].to_vec()).unwrap(),
                Tensor::new(vec![t, j, 3], v[24..].to_vec()).unwrap(),
            ]
        };
        let tape = Tape::new();
        let leaves = split(&x0).map(|x| tape.leaf(&x));
        let grads = tape.backward(&eval(&leaves)).unwrap();
        let analytic: Vec<f64> = leaves.iter().flat_map(|l| grads.wrt(l).to_vec()).collect();
        let fd = central_difference(|v| eval(&split(v)).item(), &x0, 1e-6);
        let cmp = compare(&analytic, &fd, 1e-3);
        assert!(cmp.within(1e-4, 1e-6), "{cmp:?}");
    }

    #[test]
    fn global_rigid_motion_is_equivariant() {
        let skel = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mesh = two_bone_mesh(&skel, &mut rng, 20);
        let mut p = MotionParams::zeros(1, 3);
        for j in 1..3 {
            p.set_rotation(0, j, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
        p.set_root(0, [0.3, -0.1, 0.2]);
        let base = skin(&skel, &mesh, &forward_kinematics_params(&skel, &p).unwrap()).unwrap();

        let rg = [0.4, -0.7, 0.25];
        let tg = [1.0, 2.0, -0.5];
        let m = rotation_matrix(rg);
        let pivot = linalg::add(p.root(0), skel.rest_offsets()[0]);
        let moved_root = linalg::sub(linalg::add(linalg::mat3_mul_vec(&m, pivot), tg), skel.rest_offsets()[0]);
        let mut q = p.clone();
        q.set_rotation(0, 0, rg);
        q.set_root(0, moved_root);
        let moved = skin(&skel, &mesh, &forward_kinematics_params(&skel, &q).unwrap()).unwrap();
        for v in 0..20 {
            let b = [base.data()[v * 3], base.data()[v * 3 + 1], base.data()[v * 3 + 2]];
            let expect = linalg::add(linalg::mat3_mul_vec(&m, b), tg);
            for a in 0..3 {
                assert!((moved.data()[v * 3 + a] - expect[a]).abs() <= 1e-8);
            }
        }
    }
}
