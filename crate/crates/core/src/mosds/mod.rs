//! Motion-aware score distillation.
//!
//! A critic returns three noise estimates for the rendered frames. The
//! guided residual `Δε` splits into its temporal mean (appearance) and the
//! per-frame deviation (motion); the reweighted sum becomes a latent-space
//! gradient, which a detached-target MSE injects into the tape.

pub mod bridge;
pub mod wire;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, CustomOp, Tensor};

pub use bridge::{BridgeCritic, EchoServer};

pub const TAU_MIN: f64 = 0.02;
pub const TAU_MAX: f64 = 0.50;
pub const CFG_SCALE: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum CriticError {
    #[error("frames {frames:?} do not match the critic target {target:?}")]
    ShapeMismatch { frames: Vec<usize>, target: Vec<usize> },
    #[error("malformed critic response: {0}")]
    BadResponse(String),
    #[error("critic reported an error: {0}")]
    Remote(String),
    #[error("transport failure after {attempts} attempt(s): {source}")]
    Transport { attempts: usize, source: std::io::Error },
    #[error("decomposition needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error(transparent)]
    Tensor(#[from] autodiff::TensorError),
}

pub type Result<T> = std::result::Result<T, CriticError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MosdsConfig {
    pub cfg_scale: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Step size of the proxy target.
    pub eta: f64,
}

impl Default for MosdsConfig {
    fn default() -> Self {
        Self { cfg_scale: CFG_SCALE, tau_min: TAU_MIN, tau_max: TAU_MAX, eta: 1.0 }
    }
}

impl MosdsConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0 <= self.tau_min && self.tau_min <= self.tau_max && self.tau_max <= 1.0) {
            return Err(format!("timestep range [{}, {}] must lie within [0, 1]", self.tau_min, self.tau_max));
        }
        if !(self.cfg_scale.is_finite() && self.eta.is_finite() && self.eta >= 0.0) {
            return Err("cfg_scale and eta must be finite, eta non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticRequest {
    /// `[T,C,H,W]` values in `[−1, 1]`.
    pub frames: Vec<f64>,
    pub frame_shape: Vec<usize>,
    pub prompt: String,
    pub tau: f64,
    pub cfg_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticResponse {
    /// Latent sequence shape; the leading axis is time.
    pub latent_shape: Vec<usize>,
    pub eps_uncond: Vec<f64>,
    pub eps_text: Vec<f64>,
    pub eps_injected: Vec<f64>,
    /// `w̄(τ)`.
    pub schedule_weight: f64,
}

impl CriticResponse {
    pub fn validate(&self) -> Result<()> {
        let n: usize = self.latent_shape.iter().product();
        if self.latent_shape.len() < 2 {
            return Err(CriticError::BadResponse(format!("latent shape {:?} has no time axis", self.latent_shape)));
        }
        for (name, a) in [("eps_uncond", &self.eps_uncond), ("eps_text", &self.eps_text), ("eps_injected", &self.eps_injected)] {
            if a.len() != n {
                return Err(CriticError::BadResponse(format!("{name} has {} values, latent shape needs {n}", a.len())));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(CriticError::BadResponse(format!("{name} is not finite")));
            }
        }
        if !self.schedule_weight.is_finite() {
            return Err(CriticError::BadResponse("schedule weight is not finite".into()));
        }
        Ok(())
    }
}

/// Source of noise predictions for rendered frames.
pub trait Critic {
    fn name(&self) -> &str;

    fn evaluate(&mut self, req: &CriticRequest) -> Result<CriticResponse>;

    /// Pulls a latent-space cotangent back to frame space. Only called when
    /// the latent shape differs from the frame shape.
    fn frames_vjp(&mut self, req: &CriticRequest, latent_shape: &[usize], cotangent: &[f64]) -> Result<Vec<f64>> {
        let _ = (req, cotangent);
        Err(CriticError::BadResponse(format!(
            "critic {} returned latents {latent_shape:?} but cannot map gradients back to frames",
            self.name()
        )))
    }
}

/// Uniform τ in `[lo, hi]`.
pub fn sample_timestep<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Stream `u` of a run seeded with `seed`; gives every iteration its own
/// reproducible draws.
pub fn iteration_rng(seed: u64, u: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u as u64);
    rng
}

/// `ε̂_uncond + w·(ε̂_text − ε̂_uncond)`.
pub fn cfg_combine(resp: &CriticResponse, w: f64) -> Vec<f64> {
    resp.eps_uncond.iter().zip(&resp.eps_text).map(|(u, t)| u + w * (t - u)).collect()
}

/// Temporal mean (broadcast back over frames) and the per-frame deviation.
/// `delta` is laid out with time as the leading axis.
pub fn decompose(delta: &[f64], frames: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if frames < 2 {
        return Err(CriticError::TooFewFrames(frames));
    }
    let n = delta.len() / frames;
    let mut mean = vec![0.0; n];
    for t in 0..frames {
        for (m, d) in mean.iter_mut().zip(&delta[t * n..(t + 1) * n]) {
            *m += d;
        }
    }
    mean.iter_mut().for_each(|m| *m /= frames as f64);
    let appearance: Vec<f64> = (0..frames).flat_map(|_| mean.iter().copied()).collect();
    let motion = delta.iter().zip(&appearance).map(|(d, a)| d - a).collect();
    Ok((appearance, motion))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosdsGradient {
    pub latent_shape: Vec<usize>,
    pub delta: Vec<f64>,
    pub appearance: Vec<f64>,
    pub motion: Vec<f64>,
    /// `∇_z = w̄(τ)·(λ_a·appearance + λ_m·motion)`.
    pub grad: Vec<f64>,
    pub tau: f64,
    pub schedule_weight: f64,
}

impl MosdsGradient {
    pub fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn mosds_gradient(resp: &CriticResponse, cfg_scale: f64, lambda_appear: f64, lambda_motion: f64, tau: f64) -> Result<MosdsGradient> {
    resp.validate()?;
    let delta: Vec<f64> = cfg_combine(resp, cfg_scale).iter().zip(&resp.eps_injected).map(|(e, n)| e - n).collect();
    let (appearance, motion) = decompose(&delta, resp.latent_shape[0])?;
    let w = resp.schedule_weight;
    let grad = appearance.iter().zip(&motion).map(|(a, m)| w * (lambda_appear * a + lambda_motion * m)).collect();
    Ok(MosdsGradient { latent_shape: resp.latent_shape.clone(), delta, appearance, motion, grad, tau, schedule_weight: w })
}

/// `MSE(z, detach(z) − η·∇_z)`; its gradient is `(2/N)·η·∇_z`.
pub fn proxy_loss(z: &Tensor, grad: &[f64], eta: f64) -> autodiff::Result<Tensor> {
    let step: Vec<f64> = grad.iter().map(|g| -eta * g).collect();
    let target = z.detach().add_const(&step)?;
    z.sub(&target)?.square()?.mean()
}

/// Scalar with a fixed value and a fixed gradient, for critics whose latents
/// are not the frames themselves.
struct Surrogate(Vec<f64>);

impl CustomOp for Surrogate {
    fn backward(&self, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![self.0.iter().map(|g| g * grad_out[0]).collect()]
    }
}

/// One critic round trip turned into a scalar on the tape.
pub struct MosdsStep {
    pub loss: Tensor,
    pub gradient: MosdsGradient,
}

#[allow(clippy::too_many_arguments)]
pub fn mosds_step(
    critic: &mut dyn Critic,
    frames: &Tensor,
    prompt: &str,
    tau: f64,
    seed: u64,
    cfg: &MosdsConfig,
    lambda_appear: f64,
    lambda_motion: f64,
) -> Result<MosdsStep> {
    let req = CriticRequest {
        frames: frames.to_vec(),
        frame_shape: frames.shape().to_vec(),
        prompt: prompt.to_string(),
        tau,
        cfg_scale: cfg.cfg_scale,
        seed,
    };
    let resp = critic.evaluate(&req)?;
    let gradient = mosds_gradient(&resp, cfg.cfg_scale, lambda_appear, lambda_motion, tau)?;
    let loss = if gradient.latent_shape == req.frame_shape {
        proxy_loss(frames, &gradient.grad, cfg.eta)?
    } else {
        let n = gradient.grad.len() as f64;
        let cotangent: Vec<f64> = gradient.grad.iter().map(|g| 2.0 / n * cfg.eta * g).collect();
        let back = critic.frames_vjp(&req, &gradient.latent_shape, &cotangent)?;
        if back.len() != frames.numel() {
            return Err(CriticError::BadResponse(format!("frame gradient has {} values for {} pixels", back.len(), frames.numel())));
        }
        let value = cfg.eta * cfg.eta * gradient.grad.iter().map(|g| g * g).sum::<f64>() / n;
        Tensor::custom(&[frames], vec![], vec![value], Box::new(Surrogate(back)))?
    };
    Ok(MosdsStep { loss, gradient })
}

/// Deterministic stand-in critic: latents are the frames, and the text
/// prediction leans toward a target sequence.
#[derive(Debug, Clone)]
pub struct MockCritic {
    pub target: Vec<f64>,
    pub shape: Vec<usize>,
    /// Pull strength of the text branch.
    pub kappa: f64,
}

impl MockCritic {
    pub fn new(target: &Tensor) -> Self {
        Self { target: target.to_vec(), shape: target.shape().to_vec(), kappa: 1.0 }
    }
}

impl Critic for MockCritic {
    fn name(&self) -> &str {
        "mock"
    }

    fn evaluate(&mut self, req: &CriticRequest) -> Result<CriticResponse> {
        if req.frame_shape != self.shape {
            return Err(CriticError::ShapeMismatch { frames: req.frame_shape.clone(), target: self.shape.clone() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let eps_injected: Vec<f64> = (0..self.target.len()).map(|_| rng.sample(StandardNormal)).collect();
        let eps_text = eps_injected.iter().zip(req.frames.iter().zip(&self.target)).map(|(e, (f, t))| e + self.kappa * (f - t)).collect();
        Ok(CriticResponse {
            latent_shape: self.shape.clone(),
            eps_uncond: eps_injected.clone(),
            eps_text,
            eps_injected,
            schedule_weight: 1.0 - req.tau,
        })
    }
}
