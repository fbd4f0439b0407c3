//! Reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

/// An observation improves on the best seen so far when it undercuts it by
/// a relative margin: `val < best - rel_threshold * |best|`.
pub const REL_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    /// Consecutive non-improving epochs tolerated before a reduction.
    pub patience: usize,
    /// Multiplier applied on reduction.
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 20,
            factor: 0.3,
            min_lr: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plateau {
    cfg: PlateauConfig,
    lr: f64,
    best: f64,
    stall: usize,
}

impl Plateau {
    pub fn new(initial_lr: f64, cfg: PlateauConfig) -> Plateau {
        Plateau {
            cfg,
            lr: initial_lr,
            best: f64::INFINITY,
            stall: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one validation value; returns the learning rate to use next.
    pub fn observe(&mut self, val: f64) -> f64 {
        if improves(val, self.best) {
            self.best = val;
            self.stall = 0;
        } else {
            self.stall += 1;
            if self.stall > self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.stall = 0;
            }
        }
        self.lr
    }
}

/// Shared improvement rule for the scheduler and early stopping.
pub fn improves(val: f64, best: f64) -> bool {
    if !val.is_finite() {
        return false;
    }
    if !best.is_finite() {
        return true;
    }
    val < best - REL_THRESHOLD * best.abs()
}
