//! AdamW and the full optimization loop: FK → LBS → spring-mass → render →
//! critic proxy → regularizers → scheduled total → update.

pub mod adamw;
pub mod config;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adamw::{clip_global_norm, AdamGroup, AdamHyper};
pub use config::{ConfigError, CriticConfig, CriticKind, MockTarget, OptimConfig, ParamMode, RunConfig};

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::kinematics::{forward_kinematics, skin, GlobalTransforms};
use crate::losses::{self, LossBreakdown, LossTerms, PhysicsContext};
use crate::mosds::{self, BridgeCritic, Critic, CriticError, MockCritic};
use crate::motion_init::{self, Action, GaitDictionary, Initialization, Lexicon};
use crate::renderer::{render, FrameSequence};
use crate::rig::Rig;
use crate::skeleton::{MotionParams, Skeleton};
use crate::springmass::{build_mask, DynamicRegionMask, SpringError, SpringSystem};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("could not read {path}: {source}")]
    Asset { path: PathBuf, source: std::io::Error },
    #[error("bad asset file {path}: {msg}")]
    AssetFormat { path: PathBuf, msg: String },
    #[error(transparent)]
    Init(#[from] motion_init::InitError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spring(#[from] SpringError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error("non-finite loss or gradient at iteration {iteration}; last good state is from iteration {}", last_good.iteration)]
    NonFinite { iteration: usize, last_good: Box<Checkpoint> },
    #[error("checkpoint does not fit this run: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, RunError>;

/// The learnable arrays. In control-point mode `rotations` is `[J,K+1,3]`
/// and `root` is `[K+1,3]`; in dense mode they are `[T,J,3]` and `[T,3]`.
/// Offsets are always per frame, `[T,J,3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub rotations: Vec<f64>,
    pub root: Vec<f64>,
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub rotations: AdamGroup,
    pub root: AdamGroup,
    pub offsets: AdamGroup,
}

/// Parameters plus optimizer moments after `iteration` completed updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub iteration: usize,
    pub seed: u64,
    pub mode: ParamMode,
    pub params: Parameters,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(format!("unsupported checkpoint format_version {}", c.format_version));
        }
        Ok(c)
    }
}

/// One line of the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub lambda_mosds: f64,
    pub lambda_contact: f64,
    pub grad_norm: f64,
    pub grad_norm_rotations: f64,
    pub grad_norm_root: f64,
    pub grad_norm_offsets: f64,
    pub tau: f64,
    pub appearance_norm: f64,
    pub motion_norm: f64,
    pub elapsed_ms: f64,
}

/// Everything fixed for a run: the rig, the prompt, the prior, and the
/// compiled loss and simulation context.
pub struct Problem {
    pub rig: Rig,
    pub prompt: String,
    pub init: Initialization,
    pub physics: PhysicsContext,
    pub mask: DynamicRegionMask,
    pub spring: Option<SpringSystem>,
    pub cyclic: bool,
}

fn read_asset(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| RunError::Asset { path: path.clone(), source })
}

impl Problem {
    pub fn new(rig: &Rig, prompt: &str, cfg: &RunConfig) -> Result<Self> {
        Self::with_mask(rig, prompt, cfg, None)
    }

    /// `mask` replaces the one derived from skinning weights.
    pub fn with_mask(rig: &Rig, prompt: &str, cfg: &RunConfig, mask: Option<DynamicRegionMask>) -> Result<Self> {
        cfg.validate()?;
        let lexicon = match &cfg.lexicon {
            Some(p) => Lexicon::from_toml(&read_asset(p)?).map_err(|msg| RunError::AssetFormat { path: p.clone(), msg })?,
            None => Lexicon::default(),
        };
        let gaits = match &cfg.gait_dictionary {
            Some(p) => GaitDictionary::from_toml(&read_asset(p)?).map_err(|msg| RunError::AssetFormat { path: p.clone(), msg })?,
            None => GaitDictionary::default(),
        };
        let init = motion_init::initialize_motion(&rig.skeleton, prompt, cfg.frames, &cfg.init, &lexicon, &gaits)?;
        let physics = PhysicsContext::new(&rig.skeleton, &cfg.rom, cfg.init.character_height, 0.0);
        let mask = mask.unwrap_or_else(|| build_mask(&rig.skeleton, &rig.mesh));
        let spring = if cfg.secondary_motion && mask.dynamic_count() > 0 {
            Some(SpringSystem::for_mesh(&rig.mesh, &mask, &cfg.spring)?)
        } else {
            None
        };
        let cyclic = init.template.cyclic;
        Ok(Self { rig: rig.clone(), prompt: prompt.to_string(), init, physics, mask, spring, cyclic })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.rig.skeleton
    }

    pub fn frames(&self) -> usize {
        self.init.params.frames
    }

    pub fn initial_parameters(&self, mode: ParamMode) -> Parameters {
        let p = &self.init.params;
        match mode {
            ParamMode::ControlPoints => Parameters {
                rotations: self.init.curves.rotation_controls(),
                root: self.init.curves.root_controls(),
                offsets: p.local_offsets.clone(),
            },
            ParamMode::Dense => {
                Parameters { rotations: p.rotations.clone(), root: p.root_translation.clone(), offsets: p.local_offsets.clone() }
            }
        }
    }

    fn shapes(&self, mode: ParamMode) -> [Vec<usize>; 3] {
        let (t, j) = (self.frames(), self.skeleton().len());
        let n = self.init.curves.controls_per_curve();
        match mode {
            ParamMode::ControlPoints => [vec![j, n, 3], vec![n, 3], vec![t, j, 3]],
            ParamMode::Dense => [vec![t, j, 3], vec![t, 3], vec![t, j, 3]],
        }
    }

    /// Per-frame motion for a parameter set.
    pub fn motion(&self, mode: ParamMode, params: &Parameters) -> Result<MotionParams> {
        let mut m = match mode {
            ParamMode::ControlPoints => {
                self.init.curves.with_controls(&params.rotations, &params.root).map_err(motion_init::InitError::from)?.sample()
            }
            ParamMode::Dense => {
                let mut m = MotionParams::zeros(self.frames(), self.skeleton().len());
                m.rotations = params.rotations.clone();
                m.root_translation = params.root.clone();
                m
            }
        };
        m.local_offsets = params.offsets.clone();
        Ok(m)
    }

    /// FK, skinning and (if enabled) the spring layer for `[T,J,3]`
    /// rotations, `[T,3]` root and `[T,J,3]` offsets.
    pub fn deform(&self, rotations: &Tensor, root: &Tensor, offsets: &Tensor) -> Result<(GlobalTransforms, Tensor)> {
        let g = forward_kinematics(self.skeleton(), rotations, root, offsets)?;
        let lbs = skin(self.skeleton(), &self.rig.mesh, &g)?;
        let verts = match &self.spring {
            Some(sys) => sys.simulate_sequence(&lbs)?,
            None => lbs,
        };
        Ok((g, verts))
    }

    /// Rendered frames and final vertices of a per-frame motion.
    pub fn render_motion(&self, motion: &MotionParams, cfg: &RunConfig) -> Result<(FrameSequence, Tensor)> {
        let (_, verts) = self.deform(&motion.rotations_tensor(), &motion.root_tensor(), &motion.offsets_tensor())?;
        let frames = render(&verts, self.colors().as_deref(), self.channels(), &cfg.camera)?;
        Ok((frames, verts))
    }

    fn colors(&self) -> Option<Vec<f64>> {
        self.rig.mesh.colors.as_ref().map(|c| c.iter().flatten().copied().collect())
    }

    pub fn channels(&self) -> usize {
        if self.rig.mesh.colors.is_some() {
            3
        } else {
            1
        }
    }
}

/// The bundled walk for this rig, shifted a quarter cycle against the prior.
pub fn reference_walk(skel: &Skeleton, frames: usize, height: f64) -> Result<MotionParams> {
    let plan = motion_init::BodyPlan::analyze(skel);
    let class = motion_init::morphology::classify_with_plan(skel, &plan).class;
    let mut template =
        GaitDictionary::default().lookup(class, Action::Walk).ok_or(motion_init::InitError::NoTemplate(Action::Walk))?.clone();
    let shift = std::f64::consts::FRAC_PI_2;
    for m in template.parts.values_mut() {
        m.phase.iter_mut().for_each(|p| *p += shift);
    }
    template.root_bob_phase += template.root_bob_harmonic * shift;
    Ok(motion_init::generate_dense_trajectory(skel, &template, frames, height)?.to_params())
}

/// Critic named by the config. The mock critic's target is rendered here.
pub fn build_critic(problem: &Problem, cfg: &RunConfig) -> Result<Box<dyn Critic>> {
    match cfg.critic.kind {
        CriticKind::Mock => {
            let motion = match cfg.critic.mock_target {
                MockTarget::Initialization => problem.motion(cfg.mode, &problem.initial_parameters(cfg.mode))?,
                MockTarget::ReferenceWalk => reference_walk(problem.skeleton(), problem.frames(), cfg.init.character_height)?,
            };
            let (frames, _) = problem.render_motion(&motion, cfg)?;
            let mut critic = MockCritic::new(&frames.pixels);
            critic.kappa = cfg.critic.mock_kappa;
            Ok(Box::new(critic))
        }
        CriticKind::Bridge => Ok(Box::new(
            BridgeCritic::new(cfg.critic.bridge_addr.as_deref())
                .with_timeout(std::time::Duration::from_secs_f64(cfg.critic.timeout_secs))
                .with_attempts(cfg.critic.attempts),
        )),
    }
}

/// Mutable run state: one owner of the parameters and the moments.
pub struct Optimizer<'a> {
    problem: &'a Problem,
    cfg: &'a RunConfig,
    params: Parameters,
    state: OptimizerState,
    iteration: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl<'a> Optimizer<'a> {
    pub fn new(problem: &'a Problem, cfg: &'a RunConfig) -> Self {
        let params = problem.initial_parameters(cfg.mode);
        let o = &cfg.optim;
        let state = OptimizerState {
            rotations: AdamGroup::new(o.lr_rotations, params.rotations.len()),
            root: AdamGroup::new(o.lr_root, params.root.len()),
            offsets: AdamGroup::new(o.lr_offsets, params.offsets.len()),
        };
        Self { problem, cfg, params, state, iteration: 0 }
    }

    pub fn resume(problem: &'a Problem, cfg: &'a RunConfig, ckpt: Checkpoint) -> Result<Self> {
        let fresh = Self::new(problem, cfg);
        let lens = |p: &Parameters| [p.rotations.len(), p.root.len(), p.offsets.len()];
        if ckpt.mode != cfg.mode || lens(&ckpt.params) != lens(&fresh.params) {
            return Err(RunError::Checkpoint(format!(
                "checkpoint holds {:?} parameters of sizes {:?}; this run needs {:?} with sizes {:?}",
                ckpt.mode,
                lens(&ckpt.params),
                cfg.mode,
                lens(&fresh.params)
            )));
        }
        let m = |g: &AdamGroup| g.m.len();
        if [m(&ckpt.optimizer.rotations), m(&ckpt.optimizer.root), m(&ckpt.optimizer.offsets)] != lens(&ckpt.params) {
            return Err(RunError::Checkpoint("optimizer moments do not match parameter sizes".into()));
        }
        Ok(Self { params: ckpt.params, state: ckpt.optimizer, iteration: ckpt.iteration, ..fresh })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            iteration: self.iteration,
            seed: self.cfg.seed,
            mode: self.cfg.mode,
            params: self.params.clone(),
            optimizer: self.state.clone(),
        }
    }

    pub fn motion(&self) -> Result<MotionParams> {
        self.problem.motion(self.cfg.mode, &self.params)
    }

    /// One iteration: forward pass on a fresh tape, scheduled total loss,
    /// backward, clipping, AdamW.
    pub fn step(&mut self, critic: &mut dyn Critic) -> Result<IterationRecord> {
        let started = Instant::now();
        let u = self.iteration + 1;
        let (p, cfg) = (self.problem, self.cfg);
        let [rot_shape, root_shape, off_shape] = p.shapes(cfg.mode);
        let tape = Tape::new();
        let rot_leaf = tape.leaf(&Tensor::new(rot_shape, self.params.rotations.clone())?);
        let root_leaf = tape.leaf(&Tensor::new(root_shape, self.params.root.clone())?);
        let off_leaf = tape.leaf(&Tensor::new(off_shape, self.params.offsets.clone())?);
        let (rotations, root) = match cfg.mode {
            ParamMode::ControlPoints => p.init.curves.sample_tensors(&rot_leaf, &root_leaf)?,
            ParamMode::Dense => (rot_leaf.clone(), root_leaf.clone()),
        };
        let (g, verts) = p.deform(&rotations, &root, &off_leaf)?;
        let frames = render(&verts, p.colors().as_deref(), p.channels(), &cfg.camera)?;

        let w = cfg.weights.at(&cfg.schedule, u, cfg.iterations);
        let mut rng = mosds::iteration_rng(cfg.seed, u);
        let tau = mosds::sample_timestep(&mut rng, cfg.mosds.tau_min, cfg.mosds.tau_max);
        let noise_seed: u64 = rand::Rng::gen(&mut rng);
        let (proxy, appearance_norm, motion_norm) = if w.lambda_mosds > 0.0 {
            let s = mosds::mosds_step(critic, &frames.pixels, &p.prompt, tau, noise_seed, &cfg.mosds, w.lambda_appear, w.lambda_motion)?;
            let a = mosds::MosdsGradient::norm(&s.gradient.appearance);
            let m = mosds::MosdsGradient::norm(&s.gradient.motion);
            (s.loss, a, m)
        } else {
            (Tensor::scalar(0.0), 0.0, 0.0)
        };

        let pose = losses::pose_vector(&rotations, &root)?;
        let ctx = &p.physics;
        let contact = if ctx.feet.is_empty() {
            Tensor::scalar(0.0)
        } else {
            let feet = g.positions()?.permute(&[1, 0, 2])?.index_select(&ctx.feet)?.permute(&[1, 0, 2])?;
            losses::contact_loss(&feet, ctx.contact_threshold)?
        };
        let terms = LossTerms {
            proxy,
            smooth: losses::smoothness_loss(&pose, w.lambda_vel, w.lambda_accel)?,
            rom: losses::rom_loss(&rotations, &ctx.rom_limits)?,
            sym: losses::symmetry_loss(&rotations, &ctx.pairs)?,
            cyclic: if p.cyclic { losses::cyclic_loss(&pose)? } else { Tensor::scalar(0.0) },
            ground: losses::ground_loss(&verts, ctx.ground_height)?,
            contact,
            offset: losses::offset_loss(&off_leaf, w.lambda_delta)?,
        };
        let (total, breakdown) = terms.total(&w)?;
        let grads = tape.backward(&total)?;
        let mut g_rot = grads.wrt(&rot_leaf).to_vec();
        let mut g_root = grads.wrt(&root_leaf).to_vec();
        let mut g_off = grads.wrt(&off_leaf).to_vec();
        let (n_rot, n_root, n_off) = (norm(&g_rot), norm(&g_root), norm(&g_off));
        let finite = breakdown.total.is_finite() && [n_rot, n_root, n_off].iter().all(|n| n.is_finite());
        if !finite {
            return Err(RunError::NonFinite { iteration: u, last_good: Box::new(self.checkpoint()) });
        }
        let grad_norm = clip_global_norm(&mut [&mut g_rot, &mut g_root, &mut g_off], cfg.optim.grad_clip);
        let hyper = cfg.optim.hyper();
        let shape_err = |e: adamw::AdamShapeError| RunError::Checkpoint(e.to_string());
        self.state.rotations.step(&hyper, &mut self.params.rotations, &g_rot).map_err(shape_err)?;
        self.state.root.step(&hyper, &mut self.params.root, &g_root).map_err(shape_err)?;
        self.state.offsets.step(&hyper, &mut self.params.offsets, &g_off).map_err(shape_err)?;
        self.iteration = u;
        Ok(IterationRecord {
            iteration: u,
            loss: breakdown,
            lambda_mosds: w.lambda_mosds,
            lambda_contact: w.lambda_contact,
            grad_norm,
            grad_norm_rotations: n_rot,
            grad_norm_root: n_root,
            grad_norm_offsets: n_off,
            tau,
            appearance_norm,
            motion_norm,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Iterates until `cfg.iterations`, handing each record to `observe`.
    pub fn run(&mut self, critic: &mut dyn Critic, mut observe: impl FnMut(&IterationRecord, &Self)) -> Result<Vec<IterationRecord>> {
        let mut history = Vec::with_capacity(self.cfg.iterations.saturating_sub(self.iteration));
        while self.iteration < self.cfg.iterations {
            let rec = self.step(critic)?;
            if self.iteration % 50 == 0 || self.iteration == 1 {
                log::info!(
                    "iter {:>4}  total {:.5}  proxy {:.5}  physics {:.5}  env {:.5}  |g| {:.3e}",
                    rec.iteration,
                    rec.loss.total,
                    rec.loss.proxy,
                    rec.loss.physics,
                    rec.loss.env,
                    rec.grad_norm
                );
            }
            observe(&rec, self);
            history.push(rec);
        }
        Ok(history)
    }
}

/// Mean squared difference of two equally shaped frame sequences.
pub fn frame_mse(a: &FrameSequence, b: &FrameSequence) -> f64 {
    let (x, y) = (a.pixels.data(), b.pixels.data());
    x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len().max(1) as f64
}

/// Means of consecutive non-overlapping windows.
pub fn block_means(values: &[f64], window: usize) -> Vec<f64> {
    values.chunks(window.max(1)).filter(|c| c.len() == window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::losses::LossSchedule;

    fn quick_cfg() -> RunConfig {
        RunConfig { frames: 16, iterations: 6, ..RunConfig::default() }
    }

    #[test]
    fn checkpoint_resume_is_bitwise() {
        let rig = fixtures::toy2();
        let cfg = quick_cfg();
        let problem = Problem::new(&rig, "a toy walking", &cfg).unwrap();
        let mut critic = build_critic(&problem, &cfg).unwrap();

        let mut straight = Optimizer::new(&problem, &cfg);
        straight.run(critic.as_mut(), |_, _| {}).unwrap();

        let mut first = Optimizer::new(&problem, &cfg);
        for _ in 0..3 {
            first.step(critic.as_mut()).unwrap();
        }
        let text = first.checkpoint().to_json();
        let mut resumed = Optimizer::resume(&problem, &cfg, Checkpoint::from_json(&text).unwrap()).unwrap();
        resumed.run(critic.as_mut(), |_, _| {}).unwrap();
        assert_eq!(resumed.params(), straight.params());
        assert_eq!(resumed.checkpoint().optimizer, straight.checkpoint().optimizer);
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let rig = fixtures::biped();
        let mut cfg = quick_cfg();
        cfg.optim.lr_rotations = 0.0;
        cfg.optim.lr_root = 0.0;
        cfg.optim.lr_offsets = 0.0;
        let problem = Problem::new(&rig, "a person walking", &cfg).unwrap();
        let mut critic = build_critic(&problem, &cfg).unwrap();
        let mut opt = Optimizer::new(&problem, &cfg);
        opt.run(critic.as_mut(), |_, _| {}).unwrap();
        assert_eq!(opt.motion().unwrap(), problem.init.params);
    }

    #[test]
    fn records_follow_the_schedule() {
        let rig = fixtures::toy2();
        let mut cfg = quick_cfg();
        cfg.iterations = 20;
        let problem = Problem::new(&rig, "walk", &cfg).unwrap();
        let mut critic = build_critic(&problem, &cfg).unwrap();
        let mut opt = Optimizer::new(&problem, &cfg);
        let hist = opt.run(critic.as_mut(), |_, _| {}).unwrap();
        assert_eq!(hist.len(), 20);
        // progress u/M = 0.05 is halfway up the 0..0.1 ramp
        assert!((hist[0].lambda_mosds - 0.5).abs() < 1e-12);
        assert_eq!(hist[1].lambda_mosds, 1.0);
        assert_eq!(hist[3].lambda_contact, 0.0);
        assert!((hist[4].lambda_contact - 0.5).abs() < 1e-12);
        assert_eq!(hist[19].lambda_contact, 1.0);
        assert!(hist.iter().all(|r| (mosds::TAU_MIN..=mosds::TAU_MAX).contains(&r.tau)));
        let constant = RunConfig { schedule: LossSchedule::constant(), ..cfg.clone() };
        let mut opt = Optimizer::new(&problem, &constant);
        let rec = opt.step(critic.as_mut()).unwrap();
        assert_eq!(rec.lambda_mosds, 1.0);
    }

    #[test]
    fn resume_rejects_foreign_checkpoints() {
        let rig = fixtures::toy2();
        let cfg = quick_cfg();
        let problem = Problem::new(&rig, "walk", &cfg).unwrap();
        let mut ckpt = Optimizer::new(&problem, &cfg).checkpoint();
        ckpt.params.offsets.pop();
        assert!(Optimizer::resume(&problem, &cfg, ckpt).is_err());
        assert!(Checkpoint::from_json(r#"{"format_version":9}"#).is_err());
    }

    #[test]
    fn block_means_drop_partial_tail() {
        assert_eq!(block_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    }
}
