//! Rectified Adam over flat parameter slices.
//!
//! The step counter is shared by all parameters: moments of Gaussians born
//! mid-training start at zero but are bias-corrected with the global step,
//! as in the reference splatting trainers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RadamConfig {
    fn default() -> Self {
        RadamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

/// Per-iteration scalars of the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadamStep {
    pub t: u64,
    bias1: f64,
    /// `rect × sqrt(1 − β2ᵗ)` when the variance is tractable.
    adaptive: Option<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl RadamConfig {
    /// Scalars for step `t` (1-based).
    pub fn step(&self, t: u64) -> RadamStep {
        let t = t.max(1);
        let b1t = self.beta1.powf(t as f64);
        let b2t = self.beta2.powf(t as f64);
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        let adaptive = (rho_t > 5.0).then(|| {
            let rect = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();
            rect * (1.0 - b2t).sqrt()
        });
        RadamStep { t, bias1: 1.0 - b1t, adaptive, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

impl RadamStep {
    /// Whether this step uses the adaptive (rectified) branch.
    pub fn is_rectified(&self) -> bool {
        self.adaptive.is_some()
    }

    /// Updates `params` in place. Moments always advance, even for `lr = 0`.
    pub fn apply(&self, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64) {
        debug_assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / self.bias1;
            let delta = match self.adaptive {
                Some(a) => m_hat * a / (v[i].sqrt() + self.eps),
                None => m_hat,
            };
            params[i] -= lr * delta;
        }
    }
}

/// Log-linear interpolation from `init` to `fin` over `max_steps`.
pub fn exp_decay(init: f64, fin: f64, step: usize, max_steps: usize) -> f64 {
    if max_steps == 0 || init <= 0.0 || fin <= 0.0 {
        return init;
    }
    let t = (step as f64 / max_steps as f64).clamp(0.0, 1.0);
    (init.ln() * (1.0 - t) + fin.ln() * t).exp()
}
