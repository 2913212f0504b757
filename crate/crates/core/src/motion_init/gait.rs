//! Gait templates and the dictionary that selects them.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::action::Action;
use super::morphology::{BodyPlan, MorphologyClass, Side};
use crate::linalg::Vec3;
use crate::skeleton::{JointCategory, Skeleton};

/// Body part a joint plays in a gait. Categories alone cannot tell a hip
/// from a shoulder, so limb joints are split by whether their chain
/// reaches the ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaitPart {
    Spine,
    Head,
    Tail,
    Hip,
    Knee,
    Foot,
    Shoulder,
    Elbow,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PartMotion {
    #[serde(default)]
    pub amplitude: Vec3,
    #[serde(default)]
    pub phase: Vec3,
    #[serde(default)]
    pub bias: Vec3,
}

fn any_morphology() -> String {
    "any".into()
}

fn default_harmonic() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitTemplate {
    #[serde(default = "any_morphology")]
    pub morphology: String,
    pub action: Action,
    /// Cycles per sequence.
    pub omega: f64,
    pub cyclic: bool,
    #[serde(default)]
    pub root_bob: f64,
    #[serde(default)]
    pub root_bob_phase: f64,
    #[serde(default = "default_harmonic")]
    pub root_bob_harmonic: f64,
    #[serde(default)]
    pub front_offset: f64,
    #[serde(default)]
    pub depth_phase: f64,
    #[serde(default)]
    pub parts: BTreeMap<GaitPart, PartMotion>,
}

impl GaitTemplate {
    pub fn part(&self, p: GaitPart) -> PartMotion {
        self.parts.get(&p).copied().unwrap_or_default()
    }

    /// Template with every amplitude zeroed.
    pub fn frozen(&self) -> GaitTemplate {
        let mut t = self.clone();
        t.parts.values_mut().for_each(|m| m.amplitude = [0.0; 3]);
        t.root_bob = 0.0;
        t
    }
}

const DEFAULT_GAITS: &str = include_str!("../../assets/gaits.toml");

#[derive(Debug, Deserialize)]
struct GaitFile {
    format_version: u32,
    template: Vec<GaitTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitDictionary {
    templates: Vec<GaitTemplate>,
}

impl Default for GaitDictionary {
    fn default() -> Self {
        GaitDictionary::from_toml(DEFAULT_GAITS).expect("bundled gait dictionary parses")
    }
}

impl GaitDictionary {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let file: GaitFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if file.format_version != 1 {
            return Err(format!("unsupported gait dictionary format_version {}", file.format_version));
        }
        for t in &file.template {
            if !(t.omega.is_finite() && t.omega > 0.0) {
                return Err(format!("template {}/{}: omega must be positive", t.morphology, t.action));
            }
        }
        Ok(GaitDictionary { templates: file.template })
    }

    pub fn templates(&self) -> &[GaitTemplate] {
        &self.templates
    }

    /// Exact morphology match, then `any`, then the idle fallbacks.
    pub fn lookup(&self, morphology: MorphologyClass, action: Action) -> Option<&GaitTemplate> {
        let find = |m: &str, a: Action| self.templates.iter().find(|t| t.morphology == m && t.action == a);
        find(morphology.as_str(), action)
            .or_else(|| find("any", action))
            .or_else(|| find(morphology.as_str(), Action::Idle))
            .or_else(|| find("any", Action::Idle))
    }
}

/// Gait part of every joint.
pub fn gait_parts(skel: &Skeleton, plan: &BodyPlan) -> Vec<GaitPart> {
    (0..skel.len())
        .map(|j| {
            let cat = skel.category(j);
            match plan.limb_of(j) {
                Some((_, ground)) => match (cat, ground) {
                    (JointCategory::BallLimb, true) => GaitPart::Hip,
                    (JointCategory::HingeLimb, true) => GaitPart::Knee,
                    (JointCategory::Foot, _) => GaitPart::Foot,
                    (JointCategory::BallLimb, false) => GaitPart::Shoulder,
                    (JointCategory::HingeLimb, false) => GaitPart::Elbow,
                    (JointCategory::Spine, _) => GaitPart::Spine,
                    (JointCategory::Head, _) => GaitPart::Head,
                    (JointCategory::Tail, _) => GaitPart::Tail,
                    (JointCategory::Other, true) => GaitPart::Foot,
                    (JointCategory::Other, false) => GaitPart::Other,
                },
                None => match cat {
                    JointCategory::Spine => GaitPart::Spine,
                    JointCategory::Head => GaitPart::Head,
                    JointCategory::Tail => GaitPart::Tail,
                    JointCategory::Foot => GaitPart::Foot,
                    JointCategory::BallLimb => GaitPart::Hip,
                    JointCategory::HingeLimb => GaitPart::Knee,
                    JointCategory::Other => GaitPart::Other,
                },
            }
        })
        .collect()
}

/// Extra phase for each joint: π on the right side, the template's front
/// offset on the foremost ground pair of a quadruped, and a travelling wave
/// along center chains.
pub fn phase_offsets(skel: &Skeleton, plan: &BodyPlan, template: &GaitTemplate, morphology: MorphologyClass) -> Vec<f64> {
    let mut out = vec![0.0; skel.len()];
    for (j, o) in out.iter_mut().enumerate() {
        if plan.side(j) == Side::Right {
            *o += PI;
        }
    }
    if morphology == MorphologyClass::Quadruped {
        if let Some(front) = plan.ground_pairs_front_to_back(skel).first() {
            for &j in front.left.joints.iter().chain(&front.right.joints) {
                out[j] += template.front_offset;
            }
        }
    }
    if template.depth_phase != 0.0 {
        for (i, &j) in plan.trunk.iter().enumerate() {
            out[j] -= template.depth_phase * i as f64;
        }
        for app in &plan.appendages {
            for &j in app {
                let depth = skel.path_from_root(j).len() as f64;
                out[j] -= template.depth_phase * depth;
            }
        }
    }
    out
}
