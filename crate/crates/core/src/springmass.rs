//! Spring-mass secondary motion around the skinned target.
//!
//! Dynamic vertices are pulled toward their LBS position by a position spring,
//! held together by clamped structural springs along mesh edges, damped, and
//! pulled down by gravity. Integration is semi-implicit Euler with a velocity
//! clamp and a displacement clamp. Every step is recorded on the tape, so
//! gradients flow from output frames back to the LBS targets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, TensorError};
use crate::kinematics::SkinnedMesh;
use crate::linalg::Vec3;
use crate::motion_init::UP;
use crate::rig::bounds_diagonal;
use crate::skeleton::{JointCategory, Skeleton};

/// Structural springs stop pulling beyond this fraction of the rest length.
pub const STRETCH_LIMIT: f64 = 0.3;
/// Edges shorter than this exert no structural force.
pub const COINCIDENT_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SpringError {
    #[error("invalid spring parameter: {0}")]
    Params(String),
    #[error("mask covers {mask} vertices but the mesh has {mesh}")]
    MaskSize { mask: usize, mesh: usize },
    #[error("blend weight {weight} of vertex {vertex} is outside [0, 1]")]
    BadBlend { vertex: usize, weight: f64 },
    #[error("region {region} lists vertex {vertex}, which is not dynamic")]
    RegionVertex { region: String, vertex: usize },
    #[error("edge ({0}, {1}) has zero rest length")]
    DegenerateEdge(usize, usize),
    #[error("simulation state became non-finite at frame {frame}, substep {substep}")]
    NonFinite { frame: usize, substep: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, SpringError>;

/// Per-region parameter overrides; unset fields fall back to the globals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionOverride {
    pub k_pos: Option<f64>,
    pub k_struct: Option<f64>,
    pub damping: Option<f64>,
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpringParams {
    pub k_pos: f64,
    pub k_struct: f64,
    pub damping: f64,
    /// Scene units / s².
    pub gravity: f64,
    /// Seconds.
    pub dt: f64,
    /// Steps per animation frame.
    pub substeps: usize,
    pub vel_max: f64,
    /// Displacement cap as a fraction of the dynamic region's bounding-box
    /// diagonal.
    pub d_max_fraction: f64,
    pub mass: f64,
    pub regions: BTreeMap<String, RegionOverride>,
}

impl Default for SpringParams {
    fn default() -> Self {
        Self {
            k_pos: 80.0,
            k_struct: 120.0,
            damping: 4.0,
            gravity: 9.8,
            dt: 1.0 / 240.0,
            substeps: 5,
            vel_max: 10.0,
            d_max_fraction: 0.15,
            mass: 1.0,
            regions: BTreeMap::new(),
        }
    }
}

impl SpringParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| SpringError::Params(format!("{what} = {v}"));
        let positive = [("dt", self.dt), ("vel_max", self.vel_max), ("d_max_fraction", self.d_max_fraction), ("mass", self.mass)];
        for (what, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(what, v));
            }
        }
        let non_negative = [("k_pos", self.k_pos), ("k_struct", self.k_struct), ("damping", self.damping), ("gravity", self.gravity)];
        for (what, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(what, v));
            }
        }
        if self.substeps == 0 {
            return Err(SpringError::Params("substeps must be at least 1".into()));
        }
        for (name, o) in &self.regions {
            if let Some(m) = o.mass {
                if !(m.is_finite() && m > 0.0) {
                    return Err(SpringError::Params(format!("region {name}: mass = {m}")));
                }
            }
            for v in [o.k_pos, o.k_struct, o.damping].into_iter().flatten() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(SpringError::Params(format!("region {name}: negative or non-finite coefficient {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub vertices: Vec<usize>,
}

/// Which vertices simulate, and how much of the simulated offset each one
/// shows. Anchors have blend 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicRegionMask {
    pub dynamic: Vec<bool>,
    pub blend: Vec<f64>,
    pub regions: Vec<Region>,
}

/// Categories whose joints swing passively.
pub fn is_dynamic_category(c: JointCategory) -> bool {
    c == JointCategory::Tail
}

impl DynamicRegionMask {
    /// Everything anchored.
    pub fn anchored(vertices: usize) -> Self {
        Self { dynamic: vec![false; vertices], blend: vec![0.0; vertices], regions: Vec::new() }
    }

    /// Blend weights per vertex; a vertex is dynamic iff its weight is > 0.
    pub fn from_blend(blend: Vec<f64>, regions: Vec<Region>) -> Result<Self> {
        for (v, &w) in blend.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(SpringError::BadBlend { vertex: v, weight: w });
            }
        }
        let dynamic: Vec<bool> = blend.iter().map(|&w| w > 0.0).collect();
        for r in &regions {
            if let Some(&v) = r.vertices.iter().find(|&&v| !dynamic.get(v).copied().unwrap_or(false)) {
                return Err(SpringError::RegionVertex { region: r.name.clone(), vertex: v });
            }
        }
        Ok(Self { dynamic, blend, regions })
    }

    pub fn len(&self) -> usize {
        self.dynamic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dynamic.is_empty()
    }

    pub fn dynamic_count(&self) -> usize {
        self.dynamic.iter().filter(|d| **d).count()
    }

    pub fn region_of(&self, v: usize) -> Option<&str> {
        self.regions.iter().find(|r| r.vertices.contains(&v)).map(|r| r.name.as_str())
    }
}

/// Derives the mask from skinning weights. `w_i` is the total weight on
/// dynamic-category joints; vertices where that share reaches one half are
/// dynamic, the rest are anchors. Regions are named after the topmost dynamic
/// joint above each vertex's heaviest dynamic influence.
pub fn build_mask(skel: &Skeleton, mesh: &SkinnedMesh) -> DynamicRegionMask {
    let n = mesh.vertex_count();
    let mut blend = vec![0.0; n];
    let mut dynamic = vec![false; n];
    let mut regions: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let region_root = |j: usize| {
        let mut top = j;
        while let Some(p) = skel.parent(top) {
            if !is_dynamic_category(skel.category(p)) {
                break;
            }
            top = p;
        }
        top
    };
    for v in 0..n {
        let row = mesh.weights.row(v);
        let share: f64 = row.iter().filter(|(j, _)| is_dynamic_category(skel.category(*j))).map(|(_, w)| w).sum();
        if share >= 0.5 {
            dynamic[v] = true;
            blend[v] = share.clamp(0.0, 1.0);
            let heaviest = row
                .iter()
                .filter(|(j, _)| is_dynamic_category(skel.category(*j)))
                .fold((usize::MAX, f64::NEG_INFINITY), |best, &(j, w)| if w > best.1 { (j, w) } else { best })
                .0;
            regions.entry(region_root(heaviest)).or_default().push(v);
        }
    }
    let regions = regions.into_iter().map(|(j, vertices)| Region { name: skel.joint(j).name.clone(), vertices }).collect();
    DynamicRegionMask { dynamic, blend, regions }
}

/// Positions and velocities of the dynamic vertices, `[D,3]` each.
#[derive(Debug, Clone)]
pub struct SimState {
    pub q: Tensor,
    pub vel: Tensor,
}

/// Compiled simulator: index maps, rest lengths and per-vertex coefficients.
#[derive(Debug, Clone)]
pub struct SpringSystem {
    vertices: usize,
    dyn_idx: Vec<usize>,
    /// 1 on anchor rows of a `[V,3]` array, 0 on dynamic rows.
    anchor_mask: Vec<f64>,
    edge_src_local: Vec<usize>,
    edge_src: Vec<usize>,
    edge_dst: Vec<usize>,
    rest_len: Vec<f64>,
    stretch_lo: Vec<f64>,
    stretch_hi: Vec<f64>,
    k_struct: Vec<f64>,
    neg_k_pos: Vec<f64>,
    neg_damping: Vec<f64>,
    inv_mass: Vec<f64>,
    gravity_acc: Vec<f64>,
    blend: Vec<f64>,
    dt: f64,
    substeps: usize,
    vel_max: f64,
    d_max: f64,
}

impl SpringSystem {
    /// `rest` gives rest lengths and the region size for `d_max`.
    pub fn new(rest: &[Vec3], edges: &[(usize, usize)], mask: &DynamicRegionMask, params: &SpringParams) -> Result<Self> {
        params.validate()?;
        if mask.len() != rest.len() {
            return Err(SpringError::MaskSize { mask: mask.len(), mesh: rest.len() });
        }
        let n = rest.len();
        let dyn_idx: Vec<usize> = (0..n).filter(|&v| mask.dynamic[v]).collect();
        let mut local = vec![usize::MAX; n];
        for (k, &v) in dyn_idx.iter().enumerate() {
            local[v] = k;
        }
        let lookup = |v: usize| -> RegionOverride { mask.region_of(v).and_then(|r| params.regions.get(r)).copied().unwrap_or_default() };

        let (mut edge_src_local, mut edge_src, mut edge_dst, mut rest_len, mut k_struct) = (vec![], vec![], vec![], vec![], vec![]);
        for &(a, b) in edges {
            for (i, j) in [(a, b), (b, a)] {
                if !mask.dynamic[i] {
                    continue;
                }
                let l0 = crate::linalg::norm(crate::linalg::sub(rest[j], rest[i]));
                if l0 < COINCIDENT_EPS {
                    return Err(SpringError::DegenerateEdge(a, b));
                }
                edge_src_local.push(local[i]);
                edge_src.push(i);
                edge_dst.push(j);
                rest_len.push(l0);
                let k = lookup(i).k_struct.unwrap_or(params.k_struct);
                k_struct.extend_from_slice(&[k; 3]);
            }
        }
        let stretch_lo = rest_len.iter().map(|l| -STRETCH_LIMIT * l).collect();
        let stretch_hi = rest_len.iter().map(|l| STRETCH_LIMIT * l).collect();

        let (mut neg_k_pos, mut neg_damping, mut inv_mass, mut gravity_acc, mut blend) = (vec![], vec![], vec![], vec![], vec![]);
        for &v in &dyn_idx {
            let o = lookup(v);
            neg_k_pos.extend_from_slice(&[-o.k_pos.unwrap_or(params.k_pos); 3]);
            neg_damping.extend_from_slice(&[-o.damping.unwrap_or(params.damping); 3]);
            inv_mass.extend_from_slice(&[1.0 / o.mass.unwrap_or(params.mass); 3]);
            let mut g = [0.0; 3];
            // (0, −g·m, 0) / m
            g[UP] = -params.gravity;
            gravity_acc.extend_from_slice(&g);
            blend.extend_from_slice(&[mask.blend[v]; 3]);
        }
        let mut anchor_mask = vec![1.0; n * 3];
        for &v in &dyn_idx {
            anchor_mask[v * 3..v * 3 + 3].fill(0.0);
        }
        let region_pts: Vec<Vec3> = dyn_idx.iter().map(|&v| rest[v]).collect();
        let diag = bounds_diagonal(&region_pts);
        let d_max = if diag > 0.0 { params.d_max_fraction * diag } else { params.d_max_fraction };
        Ok(Self {
            vertices: n,
            dyn_idx,
            anchor_mask,
            edge_src_local,
            edge_src,
            edge_dst,
            rest_len,
            stretch_lo,
            stretch_hi,
            k_struct,
            neg_k_pos,
            neg_damping,
            inv_mass,
            gravity_acc,
            blend,
            dt: params.dt,
            substeps: params.substeps,
            vel_max: params.vel_max,
            d_max,
        })
    }

    /// System over a rig's rest mesh with its edges.
    pub fn for_mesh(mesh: &SkinnedMesh, mask: &DynamicRegionMask, params: &SpringParams) -> Result<Self> {
        Self::new(&mesh.vertices, &mesh.edges(), mask, params)
    }

    pub fn dynamic_vertices(&self) -> &[usize] {
        &self.dyn_idx
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn vel_max(&self) -> f64 {
        self.vel_max
    }

    pub fn rest_lengths(&self) -> &[f64] {
        &self.rest_len
    }

    /// Rest state at the given full-mesh target `[V,3]`.
    pub fn initial_state(&self, target: &Tensor) -> Result<SimState> {
        let q = target.index_select(&self.dyn_idx)?;
        Ok(SimState { vel: Tensor::zeros(q.shape()), q })
    }

    /// Full `[V,3]` positions: dynamic rows from the state, anchors from the
    /// target.
    fn assemble(&self, q: &Tensor, target: &Tensor) -> Result<Tensor> {
        Ok(target.mul_const(&self.anchor_mask)?.add(&q.index_add(&self.dyn_idx, self.vertices)?)?)
    }

    /// Clamped length change per directed edge, `[E]`.
    pub fn edge_stretch(&self, q: &Tensor, target: &Tensor) -> Result<Tensor> {
        let full = self.assemble(q, target)?;
        let d = full.index_select(&self.edge_dst)?.sub(&full.index_select(&self.edge_src)?)?;
        let neg_rest: Vec<f64> = self.rest_len.iter().map(|l| -l).collect();
        Ok(d.norm_last()?.add_const(&neg_rest)?.clamp_each(&self.stretch_lo, &self.stretch_hi)?)
    }

    /// Sum of structural forces on the dynamic vertices, `[D,3]`.
    fn structural_force(&self, q: &Tensor, target: &Tensor) -> Result<Tensor> {
        let e = self.edge_src.len();
        if e == 0 {
            return Ok(Tensor::zeros(q.shape()));
        }
        let full = self.assemble(q, target)?;
        let d = full.index_select(&self.edge_dst)?.sub(&full.index_select(&self.edge_src)?)?;
        let neg_rest: Vec<f64> = self.rest_len.iter().map(|l| -l).collect();
        let stretch = d.norm_last()?.add_const(&neg_rest)?.clamp_each(&self.stretch_lo, &self.stretch_hi)?;
        let unit = d.normalize_last(COINCIDENT_EPS)?;
        let per_edge = stretch.reshape(&[e, 1])?.broadcast_to(&[e, 3])?.mul(&unit)?.mul_const(&self.k_struct)?;
        Ok(per_edge.index_add(&self.edge_src_local, self.dyn_idx.len())?)
    }

    /// One semi-implicit Euler step toward `target` (`[V,3]`).
    pub fn step(&self, state: &SimState, target: &Tensor) -> Result<SimState> {
        if self.dyn_idx.is_empty() {
            return Ok(state.clone());
        }
        let q_hat = target.index_select(&self.dyn_idx)?;
        let force = state
            .q
            .sub(&q_hat)?
            .mul_const(&self.neg_k_pos)?
            .add(&self.structural_force(&state.q, target)?)?
            .add(&state.vel.mul_const(&self.neg_damping)?)?;
        let acc = force.mul_const(&self.inv_mass)?.add_const(&self.gravity_acc)?;
        let vel = state.vel.add(&acc.scale(self.dt)?)?.clamp_norm(self.vel_max)?;
        let moved = state.q.add(&vel.scale(self.dt)?)?;
        let q = q_hat.add(&moved.sub(&q_hat)?.clamp_norm(self.d_max)?)?;
        Ok(SimState { q, vel })
    }

    /// `q̂ + w ⊙ (q − q̂)` over the full mesh; anchors pass `q̂` through.
    pub fn blend_output(&self, state: &SimState, target: &Tensor) -> Result<Tensor> {
        if self.dyn_idx.is_empty() {
            return Ok(target.clone());
        }
        let q_hat = target.index_select(&self.dyn_idx)?;
        let offset = state.q.sub(&q_hat)?.mul_const(&self.blend)?;
        Ok(target.add(&offset.index_add(&self.dyn_idx, self.vertices)?)?)
    }

    /// Runs `substeps` steps per frame over `[T,V,3]` LBS frames, starting at
    /// rest on the first frame, and returns the blended `[T,V,3]` output.
    pub fn simulate_sequence(&self, frames: &Tensor) -> Result<Tensor> {
        self.simulate_from(frames, None).map(|(out, _)| out)
    }

    /// As [`simulate_sequence`](Self::simulate_sequence), optionally resuming
    /// from `state`, and returning the final state.
    pub fn simulate_from(&self, frames: &Tensor, state: Option<SimState>) -> Result<(Tensor, SimState)> {
        let t = frames.shape()[0];
        let first = frames.select_index(0, 0)?;
        let mut state = match state {
            Some(s) => s,
            None => self.initial_state(&first)?,
        };
        if self.dyn_idx.is_empty() {
            return Ok((frames.clone(), state));
        }
        let mut out = Vec::with_capacity(t);
        for f in 0..t {
            let target = if f == 0 { first.clone() } else { frames.select_index(0, f)? };
            for s in 0..self.substeps {
                state = self.step(&state, &target)?;
                if !state.q.data().iter().chain(state.vel.data()).all(|v| v.is_finite()) {
                    return Err(SpringError::NonFinite { frame: f, substep: s });
                }
            }
            out.push(self.blend_output(&state, &target)?);
        }
        let refs: Vec<&Tensor> = out.iter().collect();
        Ok((Tensor::stack(&refs)?, state))
    }
}
