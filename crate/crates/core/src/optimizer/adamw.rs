use serde::{Deserialize, Serialize};

/// Moments and step count for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamGroup {
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parameter group has {params} values but {grads} gradients / {moments} moments")]
pub struct AdamShapeError {
    pub params: usize,
    pub grads: usize,
    pub moments: usize,
}

impl AdamGroup {
    pub fn new(lr: f64, len: usize) -> Self {
        Self { lr, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// Decoupled weight decay `p ← p·(1 − lr·wd)`, then the bias-corrected
    /// Adam update.
    pub fn step(&mut self, hyper: &AdamHyper, params: &mut [f64], grads: &[f64]) -> Result<(), AdamShapeError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(AdamShapeError { params: params.len(), grads: grads.len(), moments: self.m.len() });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        let decay = 1.0 - self.lr * hyper.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = hyper.beta1 * self.m[i] + (1.0 - hyper.beta1) * g;
            self.v[i] = hyper.beta2 * self.v[i] + (1.0 - hyper.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] * decay - self.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
        Ok(())
    }
}

/// Scales every group so the joint L2 norm is at most `max`; returns the
/// norm before clipping.
pub fn clip_global_norm(groups: &mut [&mut [f64]], max: f64) -> f64 {
    let norm = groups.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if max > 0.0 && norm > max {
        let f = max / norm;
        groups.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= f));
    }
    norm
}
