//! Run configuration, read from TOML. Every section and field is optional;
//! omitted values take the defaults below.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::adamw::AdamHyper;
use crate::losses::{LossSchedule, LossWeights, RomLimits};
use crate::mosds::MosdsConfig;
use crate::motion_init::InitConfig;
use crate::renderer::Camera;
use crate::springmass::SpringParams;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// Optimize NURBS control points; frames are re-sampled each iteration.
    ControlPoints,
    /// Optimize per-frame rotations and root positions directly.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    Mock,
    Bridge,
}

/// What the mock critic pulls toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockTarget {
    /// The render of the initial motion (a fixed point).
    Initialization,
    /// The render of the bundled walk, a quarter cycle out of phase with the
    /// prior.
    ReferenceWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub kind: CriticKind,
    pub mock_target: MockTarget,
    /// Text-branch pull of the mock critic.
    pub mock_kappa: f64,
    pub bridge_addr: Option<String>,
    pub timeout_secs: f64,
    pub attempts: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            kind: CriticKind::Mock,
            mock_target: MockTarget::ReferenceWalk,
            mock_kappa: 1.0,
            bridge_addr: None,
            timeout_secs: 300.0,
            attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_rotations: f64,
    pub lr_root: f64,
    pub lr_offsets: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let a = AdamHyper::default();
        Self {
            lr_rotations: 1.5e-2,
            lr_root: 2.0e-2,
            lr_offsets: 5.0e-3,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            grad_clip: 10.0,
        }
    }
}

impl OptimConfig {
    pub fn hyper(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub png_frames: bool,
    pub raw_frames: bool,
    pub obj_sequence: bool,
    /// Write a checkpoint every N iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    /// Sequence length T.
    pub frames: usize,
    /// Iteration count M.
    pub iterations: usize,
    pub seed: u64,
    pub fps: f64,
    pub mode: ParamMode,
    /// Spring-mass layer on or off.
    pub secondary_motion: bool,
    pub gait_dictionary: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub init: InitConfig,
    pub weights: LossWeights,
    pub schedule: LossSchedule,
    pub rom: RomLimits,
    pub optim: OptimConfig,
    pub mosds: MosdsConfig,
    pub critic: CriticConfig,
    pub camera: Camera,
    pub spring: SpringParams,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            frames: 48,
            iterations: 600,
            seed: 0,
            fps: 24.0,
            mode: ParamMode::ControlPoints,
            secondary_motion: true,
            gait_dictionary: None,
            lexicon: None,
            init: InitConfig::default(),
            weights: LossWeights::default(),
            schedule: LossSchedule::default(),
            rom: RomLimits::default(),
            optim: OptimConfig::default(),
            mosds: MosdsConfig::default(),
            critic: CriticConfig::default(),
            camera: Camera::default(),
            spring: SpringParams::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported config format_version {0} (expected {CONFIG_FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.format_version != CONFIG_FORMAT_VERSION {
            return Err(ConfigError::Version(cfg.format_version));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.frames < 8 {
            return bad(format!("frames must be at least 8, got {}", self.frames));
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.init.degree < 1 || self.init.control_points < self.init.degree {
            return bad(format!("need control_points >= degree >= 1, got {} and {}", self.init.control_points, self.init.degree));
        }
        if self.frames <= self.init.control_points {
            return bad(format!("{} control intervals need more than {} frames", self.init.control_points, self.frames));
        }
        for (name, lr) in
            [("lr_rotations", self.optim.lr_rotations), ("lr_root", self.optim.lr_root), ("lr_offsets", self.optim.lr_offsets)]
        {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("{name} must be non-negative, got {lr}"));
            }
        }
        let a = self.optim.hyper();
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return bad("AdamW needs betas in [0,1), eps > 0 and weight_decay >= 0".into());
        }
        self.weights.validate().map_err(ConfigError::Invalid)?;
        self.rom.validate().map_err(ConfigError::Invalid)?;
        self.mosds.validate().map_err(ConfigError::Invalid)?;
        self.camera.validate().map_err(ConfigError::Invalid)?;
        self.spring.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.critic.attempts == 0 || !(self.critic.timeout_secs > 0.0) {
            return bad("critic attempts and timeout must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.iterations = 17;
        cfg.critic.kind = CriticKind::Bridge;
        cfg.critic.bridge_addr = Some("10.0.0.2:9000".into());
        cfg.spring.regions.insert("tail".into(), crate::springmass::RegionOverride { k_pos: Some(40.0), ..Default::default() });
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::from_toml("iterations = 5\n[optim]\nlr_root = 0.5\n[weights]\nlambda_sym = 0.0\n").unwrap();
        assert_eq!(cfg.iterations, 5);
        assert_eq!(cfg.optim.lr_root, 0.5);
        assert_eq!(cfg.optim.lr_rotations, 1.5e-2);
        assert_eq!(cfg.weights.lambda_sym, 0.0);
        assert_eq!(cfg.weights.lambda_ground, LossWeights::default().lambda_ground);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(RunConfig::from_toml("format_version = 2"), Err(ConfigError::Version(2))));
        assert!(RunConfig::from_toml("frames = 4").is_err());
        assert!(RunConfig::from_toml("frames = 12").is_err());
        assert!(RunConfig::from_toml("iterations = 0").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[weights]\nlambda_rom = -1.0").is_err());
        assert!(RunConfig::from_toml("[mosds]\ntau_min = 0.6").is_err());
    }
}
