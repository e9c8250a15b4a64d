//! Closed-form loss trajectories: a device's loss decays exponentially in the
//! number of local iterations it has run, towards a per-device floor.

use serde::{Deserialize, Serialize};

use super::LossReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfile {
    /// loss floor
    pub floor: f64,
    /// initial excess over the floor
    pub scale: f64,
    /// decay per local iteration
    pub decay: f64,
    /// local sample count |B_i|
    pub samples: usize,
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            return Err(format!("floor must be >= 0, got {}", self.floor));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(format!("scale must be > 0, got {}", self.scale));
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return Err(format!("decay must be > 0, got {}", self.decay));
        }
        if self.samples == 0 {
            return Err("samples must be >= 1".into());
        }
        Ok(())
    }

    pub fn mean_loss(&self, cumulative_iterations: u64) -> f64 {
        self.floor + self.scale * (-self.decay * cumulative_iterations as f64).exp()
    }

    /// Share of the reducible loss already removed, in `[0, 1)`.
    pub fn progress(&self, cumulative_iterations: u64) -> f64 {
        1.0 - (-self.decay * cumulative_iterations as f64).exp()
    }
}

pub fn synthetic_loss(profile: &SyntheticProfile, cumulative_iterations: u64) -> LossReport {
    let mean = profile.mean_loss(cumulative_iterations);
    LossReport { per_sample_losses: vec![mean; profile.samples], mean_loss: mean }
}
