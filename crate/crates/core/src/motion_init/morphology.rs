//! Skeleton shape analysis: trunk, mirrored limb chains, feet, categories.

use serde::{Deserialize, Serialize};

use crate::linalg::Vec3;
use crate::skeleton::{JointCategory, Skeleton};

/// Vertical axis index (y-up).
pub const UP: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MorphologyClass {
    Biped,
    Quadruped,
    NonLiving,
    FlyingAquatic,
}

impl MorphologyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            MorphologyClass::Biped => "biped",
            MorphologyClass::Quadruped => "quadruped",
            MorphologyClass::NonLiving => "non-living",
            MorphologyClass::FlyingAquatic => "flying-aquatic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoneLengthSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub depth: usize,
    pub max_branching: usize,
    pub mean_branching: f64,
    pub limb_pairs: usize,
    pub ground_chains: usize,
    pub bone_lengths: BoneLengthSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Morphology {
    pub class: MorphologyClass,
    pub diagnostics: Diagnostics,
}

/// One limb chain: its joints from the attachment point to the leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub joints: Vec<usize>,
    pub ground: bool,
}

/// Mirrored pair of chains; `left` has the larger lateral coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbPair {
    pub left: Chain,
    pub right: Chain,
}

/// Where a joint sits in the body plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Center,
    Left,
    Right,
}

/// Structural analysis shared by classification, categorization and gait
/// assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyPlan {
    pub trunk: Vec<usize>,
    pub pairs: Vec<LimbPair>,
    /// Unpaired branches hanging off the trunk (tails, antennae).
    pub appendages: Vec<Vec<usize>>,
    pub lateral_axis: usize,
    pub ground_level: f64,
    pub height: f64,
}

impl BodyPlan {
    pub fn analyze(skel: &Skeleton) -> Self {
        let (lo, hi) = skel.rest_bounds();
        let height = (hi[UP] - lo[UP]).max(f64::EPSILON);
        let ground_level = lo[UP] + 0.1 * height;
        let span = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(f64::EPSILON);
        let tol = 0.05 * span;
        let subtree = subtree_sizes(skel);

        let mut trunk = vec![skel.root()];
        let mut pairs = Vec::new();
        let mut appendages = Vec::new();
        let mut lateral_votes = [0usize; 3];
        let mut cur = skel.root();
        loop {
            let kids = skel.children(cur);
            let mut paired = vec![false; kids.len()];
            for a in 0..kids.len() {
                for b in a + 1..kids.len() {
                    if paired[a] || paired[b] {
                        continue;
                    }
                    if let Some(axis) = mirror_axis(skel, cur, kids[a], kids[b], tol) {
                        paired[a] = true;
                        paired[b] = true;
                        lateral_votes[axis] += 1;
                        let (l, r) = if skel.rest_position(kids[a])[axis] >= skel.rest_position(kids[b])[axis] {
                            (kids[a], kids[b])
                        } else {
                            (kids[b], kids[a])
                        };
                        let chain = |start| {
                            let joints = descend(skel, start, &subtree);
                            let leaf = *joints.last().expect("chain has a joint");
                            Chain { ground: skel.rest_position(leaf)[UP] <= ground_level, joints }
                        };
                        pairs.push(LimbPair { left: chain(l), right: chain(r) });
                    }
                }
            }
            let unpaired: Vec<usize> = kids.iter().zip(&paired).filter(|(_, p)| !**p).map(|(k, _)| *k).collect();
            // trunk continues through the largest unpaired subtree; ties go to the higher child
            let next = unpaired.iter().copied().max_by(|&a, &b| {
                subtree[a]
                    .cmp(&subtree[b])
                    .then(skel.rest_position(a)[UP].partial_cmp(&skel.rest_position(b)[UP]).unwrap_or(std::cmp::Ordering::Equal))
            });
            for &u in &unpaired {
                if Some(u) != next {
                    appendages.push(collect_subtree(skel, u));
                }
            }
            match next {
                Some(n) => {
                    trunk.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        let lateral_axis = if lateral_votes[2] > lateral_votes[0] { 2 } else { 0 };
        BodyPlan { trunk, pairs, appendages, lateral_axis, ground_level, height }
    }

    pub fn forward_axis(&self) -> usize {
        if self.lateral_axis == 0 {
            2
        } else {
            0
        }
    }

    pub fn side(&self, j: usize) -> Side {
        for p in &self.pairs {
            if p.left.joints.contains(&j) {
                return Side::Left;
            }
            if p.right.joints.contains(&j) {
                return Side::Right;
            }
        }
        Side::Center
    }

    /// Pair containing `j` and whether `j` lies on a ground-reaching chain.
    pub fn limb_of(&self, j: usize) -> Option<(&LimbPair, bool)> {
        self.pairs.iter().find_map(|p| {
            if p.left.joints.contains(&j) {
                Some((p, p.left.ground))
            } else if p.right.joints.contains(&j) {
                Some((p, p.right.ground))
            } else {
                None
            }
        })
    }

    /// Mirrored joint pairs `(left, right)`, matched position by position.
    pub fn joint_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().flat_map(|p| p.left.joints.iter().copied().zip(p.right.joints.iter().copied())).collect()
    }

    pub fn ground_chain_count(&self) -> usize {
        self.pairs.iter().map(|p| p.left.ground as usize + p.right.ground as usize).sum()
    }

    /// Ground-reaching pairs ordered front to back along the forward axis.
    pub fn ground_pairs_front_to_back(&self, skel: &Skeleton) -> Vec<&LimbPair> {
        let fwd = self.forward_axis();
        let mut g: Vec<&LimbPair> = self.pairs.iter().filter(|p| p.left.ground && p.right.ground).collect();
        g.sort_by(|a, b| {
            let fa = skel.rest_position(a.left.joints[0])[fwd];
            let fb = skel.rest_position(b.left.joints[0])[fwd];
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
        });
        g
    }
}

fn subtree_sizes(skel: &Skeleton) -> Vec<usize> {
    let mut size = vec![1usize; skel.len()];
    for &j in skel.topo_order().iter().rev() {
        if let Some(p) = skel.parent(j) {
            size[p] += size[j];
        }
    }
    size
}

/// Follows the largest child down to a leaf.
fn descend(skel: &Skeleton, start: usize, subtree: &[usize]) -> Vec<usize> {
    let mut out = vec![start];
    let mut cur = start;
    while let Some(&next) = skel.children(cur).iter().max_by_key(|&&c| subtree[c]) {
        out.push(next);
        cur = next;
    }
    out
}

fn collect_subtree(skel: &Skeleton, start: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![start];
    while let Some(j) = stack.pop() {
        out.push(j);
        stack.extend(skel.children(j).iter().rev());
    }
    out
}

/// Horizontal axis across which siblings `a` and `b` mirror about `parent`.
fn mirror_axis(skel: &Skeleton, parent: usize, a: usize, b: usize, tol: f64) -> Option<usize> {
    let p = skel.rest_position(parent);
    let da = crate::linalg::sub(skel.rest_position(a), p);
    let db = crate::linalg::sub(skel.rest_position(b), p);
    [0usize, 2].into_iter().find(|&axis| {
        let reflected: Vec3 = {
            let mut r = db;
            r[axis] = -r[axis];
            r
        };
        da[axis].abs() > tol && (0..3).all(|k| (da[k] - reflected[k]).abs() <= tol) && subtree_shapes_match(skel, a, b)
    })
}

fn subtree_shapes_match(skel: &Skeleton, a: usize, b: usize) -> bool {
    let (ka, kb) = (skel.children(a), skel.children(b));
    ka.len() == kb.len() && ka.iter().zip(kb).all(|(&x, &y)| subtree_shapes_match(skel, x, y))
}

pub fn classify_morphology(skel: &Skeleton) -> Morphology {
    let plan = BodyPlan::analyze(skel);
    classify_with_plan(skel, &plan)
}

pub fn classify_with_plan(skel: &Skeleton, plan: &BodyPlan) -> Morphology {
    let ground = plan.ground_chain_count();
    let non_ground_pairs = plan.pairs.iter().filter(|p| !p.left.ground && !p.right.ground).count();
    let (lo, hi) = skel.rest_bounds();
    let horizontal = (hi[0] - lo[0]).max(hi[2] - lo[2]);
    let vertical = hi[UP] - lo[UP];
    let winglike = plan.pairs.iter().any(|p| {
        let root = skel.rest_position(p.left.joints[0]);
        let tip = skel.rest_position(*p.left.joints.last().expect("chain"));
        (tip[plan.lateral_axis] - root[plan.lateral_axis]).abs() > (tip[UP] - root[UP]).abs()
    });
    let class = if ground >= 4 {
        MorphologyClass::Quadruped
    } else if ground == 2 && non_ground_pairs >= 1 {
        MorphologyClass::Biped
    } else if horizontal > 1.5 * vertical && winglike {
        MorphologyClass::FlyingAquatic
    } else {
        MorphologyClass::NonLiving
    };
    Morphology { class, diagnostics: diagnostics(skel, plan) }
}

fn diagnostics(skel: &Skeleton, plan: &BodyPlan) -> Diagnostics {
    let branching: Vec<usize> = (0..skel.len()).map(|j| skel.children(j).len()).filter(|&c| c > 0).collect();
    let lengths: Vec<f64> =
        (0..skel.len()).filter(|&j| skel.parent(j).is_some()).map(|j| crate::linalg::norm(skel.rest_offsets()[j])).collect();
    let n = lengths.len().max(1) as f64;
    let mean = lengths.iter().sum::<f64>() / n;
    let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    Diagnostics {
        depth: skel.depth(),
        max_branching: branching.iter().copied().max().unwrap_or(0),
        mean_branching: branching.iter().sum::<usize>() as f64 / branching.len().max(1) as f64,
        limb_pairs: plan.pairs.len(),
        ground_chains: plan.ground_chain_count(),
        bone_lengths: BoneLengthSummary {
            min: if lengths.is_empty() { 0.0 } else { lengths.iter().copied().fold(f64::INFINITY, f64::min) },
            max: lengths.iter().copied().fold(0.0, f64::max),
            mean,
            std_dev: var.sqrt(),
        },
    }
}

/// Geometric category guess for every joint.
///
/// Trunk joints are spine, a trunk leaf above its parent is the head, paired
/// chains get ball/hinge/foot by position in the chain, and unpaired side
/// branches are tails.
pub fn infer_categories(skel: &Skeleton) -> Vec<JointCategory> {
    let plan = BodyPlan::analyze(skel);
    let mut cats = vec![JointCategory::Other; skel.len()];
    for &j in &plan.trunk {
        cats[j] = JointCategory::Spine;
    }
    if let [.., parent, last] = plan.trunk.as_slice() {
        if skel.rest_position(*last)[UP] >= skel.rest_position(*parent)[UP] {
            cats[*last] = JointCategory::Head;
        }
    }
    for pair in &plan.pairs {
        for chain in [&pair.left, &pair.right] {
            let n = chain.joints.len();
            for (i, &j) in chain.joints.iter().enumerate() {
                cats[j] = if i == 0 && n > 1 {
                    JointCategory::BallLimb
                } else if i + 1 == n && chain.ground {
                    JointCategory::Foot
                } else if i + 1 == n {
                    JointCategory::Other
                } else {
                    JointCategory::HingeLimb
                };
            }
        }
    }
    for app in &plan.appendages {
        for &j in app {
            cats[j] = JointCategory::Tail;
        }
    }
    cats
}

/// Foot joints: category `foot`, else leaves of limb chains in the lowest
/// tenth of the skeleton's height.
pub fn foot_joints(skel: &Skeleton) -> Vec<usize> {
    let explicit: Vec<usize> = (0..skel.len()).filter(|&j| skel.category(j) == JointCategory::Foot).collect();
    if !explicit.is_empty() {
        return explicit;
    }
    let plan = BodyPlan::analyze(skel);
    plan.pairs.iter().flat_map(|p| [&p.left, &p.right]).filter(|c| c.ground).map(|c| *c.joints.last().expect("chain")).collect()
}

/// Joints whose category is spine or head.
pub fn is_torso(cat: JointCategory) -> bool {
    matches!(cat, JointCategory::Spine | JointCategory::Head)
}
