//! A skeleton paired with its skinned mesh.

use crate::kinematics::SkinnedMesh;
use crate::linalg::Vec3;
use crate::motion_init::UP;
use crate::skeleton::{Joint, Skeleton};

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub name: String,
    pub skeleton: Skeleton,
    pub mesh: SkinnedMesh,
}

impl Rig {
    /// Vertical extent of the mesh.
    pub fn height(&self) -> f64 {
        let ys = self.mesh.vertices.iter().map(|v| v[UP]);
        let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    /// Diagonal of the mesh bounding box.
    pub fn extent(&self) -> f64 {
        bounds_diagonal(&self.mesh.vertices)
    }
}

pub fn bounds_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    crate::linalg::norm(crate::linalg::sub(hi, lo))
}

/// Scale and vertical shift applied by [`normalize`]: `p' = p·scale`, then
/// `p'.y −= floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub scale: f64,
    pub floor: f64,
}

/// Rescales so the mesh is one unit tall and puts its lowest vertex at y = 0.
/// Joints move with the mesh. A flat mesh keeps scale 1.
pub fn normalize(joints: &mut [Joint], vertices: &mut [Vec3]) -> Normalization {
    let (lo, hi) = vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[UP]), hi.max(v[UP])));
    if !lo.is_finite() {
        return Normalization { scale: 1.0, floor: 0.0 };
    }
    let height = hi - lo;
    let scale = if height > 1e-12 { 1.0 / height } else { 1.0 };
    let floor = lo * scale;
    let apply = |p: &mut Vec3| {
        for c in p.iter_mut() {
            *c *= scale;
        }
        p[UP] -= floor;
    };
    vertices.iter_mut().for_each(apply);
    joints.iter_mut().for_each(|j| apply(&mut j.rest_position));
    Normalization { scale, floor }
}
