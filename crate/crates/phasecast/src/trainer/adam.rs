//! Adam with bias correction, plus global-norm gradient clipping.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment per parameter tensor, in canonical parameter
/// order. The learning rate is passed per step so a scheduler can move it
/// without touching optimizer state.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[&Tensor], cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            t: 0,
        }
    }

    /// One update over all parameters. A non-finite gradient anywhere
    /// aborts before any parameter moves, leaving the model at its last
    /// consistent state.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} parameters, {} gradients, optimizer tracks {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (g, p) in grads.iter().zip(params.iter()) {
            if !p.same_shape(g) {
                return Err(Error::shape(
                    "adam",
                    format!("gradient {} for parameter {}", g.shape_string(), p.shape_string()),
                ));
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::numerics(
                    "non-finite gradient; training diverged".to_string(),
                ));
            }
        }

        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                pd[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_l2(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
