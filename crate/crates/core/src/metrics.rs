//! Mesh Laplacian Distortion: how far each vertex drifts from the mean of
//! its one-ring, relative to the rest pose.

use serde::{Deserialize, Serialize};

use crate::kinematics::face_neighbors;
use crate::linalg::Vec3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("frame {frame} has {found} vertices, rest mesh has {expected}")]
    Topology { frame: usize, found: usize, expected: usize },
    #[error("face {face} references vertex {vertex}, mesh has {count}")]
    BadFace { face: usize, vertex: usize, count: usize },
}

/// Uniform one-ring Laplacian. Vertices without neighbours are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    neighbors: Vec<Vec<usize>>,
    isolated: Vec<usize>,
}

impl Laplacian {
    pub fn new(vertex_count: usize, faces: &[[usize; 3]]) -> Result<Self, MetricError> {
        for (f, face) in faces.iter().enumerate() {
            if let Some(&v) = face.iter().find(|&&v| v >= vertex_count) {
                return Err(MetricError::BadFace { face: f, vertex: v, count: vertex_count });
            }
        }
        let neighbors = face_neighbors(vertex_count, faces);
        let isolated: Vec<usize> = (0..vertex_count).filter(|&v| neighbors[v].is_empty()).collect();
        if !isolated.is_empty() {
            log::warn!("{} isolated vertices left out of the Laplacian (first: {})", isolated.len(), isolated[0]);
        }
        Ok(Self { neighbors, isolated })
    }

    pub fn isolated(&self) -> &[usize] {
        &self.isolated
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    /// `ρ_i = v_i − mean(v_k for k in n(i))`; zero for isolated vertices.
    pub fn coordinates(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, ring)| {
                if ring.is_empty() {
                    return [0.0; 3];
                }
                let mut mean = [0.0; 3];
                for &k in ring {
                    for a in 0..3 {
                        mean[a] += vertices[k][a];
                    }
                }
                let n = ring.len() as f64;
                std::array::from_fn(|a| vertices[i][a] - mean[a] / n)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MldReport {
    pub per_frame: Vec<f64>,
    pub mean: f64,
    pub vertices: usize,
    pub isolated: usize,
}

/// Per-frame `Σ_i ‖ρ_i − ρ̄_i‖²` against the rest mesh, and the mean over
/// frames. `frames` is a list of vertex arrays.
pub fn mld(rest: &[Vec3], faces: &[[usize; 3]], frames: &[Vec<Vec3>]) -> Result<MldReport, MetricError> {
    let lap = Laplacian::new(rest.len(), faces)?;
    let rho_rest = lap.coordinates(rest);
    let mut per_frame = Vec::with_capacity(frames.len());
    for (t, verts) in frames.iter().enumerate() {
        if verts.len() != rest.len() {
            return Err(MetricError::Topology { frame: t, found: verts.len(), expected: rest.len() });
        }
        let rho = lap.coordinates(verts);
        let e: f64 = rho.iter().zip(&rho_rest).map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()).sum();
        per_frame.push(e);
    }
    let mean = if per_frame.is_empty() { 0.0 } else { per_frame.iter().sum::<f64>() / per_frame.len() as f64 };
    Ok(MldReport { per_frame, mean, vertices: rest.len(), isolated: lap.isolated().len() })
}

/// Splits a flat `[T,V,3]` buffer into frames.
pub fn frames_from_flat(data: &[f64], vertices: usize) -> Vec<Vec<Vec3>> {
    data.chunks(vertices * 3).map(|f| f.chunks(3).map(|p| [p[0], p[1], p[2]]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Neighbour sets rebuilt from scratch with a dense adjacency matrix.
    fn naive(rest: &[Vec3], faces: &[[usize; 3]], frame: &[Vec3]) -> f64 {
        let n = rest.len();
        let mut adj = vec![vec![false; n]; n];
        for f in faces {
            for a in 0..3 {
                for b in 0..3 {
                    if f[a] != f[b] {
                        adj[f[a]][f[b]] = true;
                    }
                }
            }
        }
        let mut e = 0.0;
        for i in 0..n {
            let ring: Vec<usize> = (0..n).filter(|&k| adj[i][k]).collect();
            if ring.is_empty() {
                continue;
            }
            for a in 0..3 {
                let mut m_def = 0.0;
                let mut m_rest = 0.0;
                for &k in &ring {
                    m_def += frame[k][a];
                    m_rest += rest[k][a];
                }
                let d = (frame[i][a] - m_def / ring.len() as f64) - (rest[i][a] - m_rest / ring.len() as f64);
                e += d * d;
            }
        }
        e
    }

    #[test]
    fn identity_is_zero() {
        let rig = fixtures::biped();
        let frames = vec![rig.mesh.vertices.clone(); 3];
        let r = mld(&rig.mesh.vertices, &rig.mesh.faces, &frames).unwrap();
        assert_eq!(r.per_frame, vec![0.0; 3]);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn translation_invariant_not_rotation_invariant() {
        let rig = fixtures::quadruped();
        let rest = &rig.mesh.vertices;
        let shifted: Vec<Vec3> = rest.iter().map(|v| [v[0] + 3.5, v[1] - 0.25, v[2] + 1e3]).collect();
        let r = mld(rest, &rig.mesh.faces, &[shifted]).unwrap();
        assert!(r.mean < 1e-18, "{}", r.mean);
        let rotated: Vec<Vec3> = rest.iter().map(|v| [v[2], v[1], -v[0]]).collect();
        assert!(mld(rest, &rig.mesh.faces, &[rotated]).unwrap().mean > 1e-6);
    }

    #[test]
    fn matches_naive_oracle() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rig = fixtures::by_name(fixtures::NAMES[seed as usize % fixtures::NAMES.len()]).unwrap();
            let rest = &rig.mesh.vertices;
            let frames: Vec<Vec<Vec3>> =
                (0..3).map(|_| rest.iter().map(|v| std::array::from_fn(|a| v[a] + rng.gen_range(-0.1..0.1))).collect()).collect();
            let r = mld(rest, &rig.mesh.faces, &frames).unwrap();
            for (t, f) in frames.iter().enumerate() {
                let o = naive(rest, &rig.mesh.faces, f);
                assert!((r.per_frame[t] - o).abs() <= 1e-10 * o.max(1.0), "seed {seed}: {} vs {o}", r.per_frame[t]);
            }
        }
    }

    #[test]
    fn isolated_vertices_are_skipped() {
        let rest = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]];
        let faces = [[0, 1, 2]];
        let mut moved = rest.clone();
        moved[3] = [9.0, 9.0, 9.0];
        let r = mld(&rest, &faces, &[moved]).unwrap();
        assert_eq!(r.isolated, 1);
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn topology_mismatch_is_an_error() {
        let rest = vec![[0.0; 3]; 3];
        assert!(matches!(mld(&rest, &[[0, 1, 2]], &[vec![[0.0; 3]; 2]]), Err(MetricError::Topology { frame: 0, .. })));
        assert!(matches!(mld(&rest, &[[0, 1, 7]], &[]), Err(MetricError::BadFace { face: 0, vertex: 7, .. })));
    }
}
