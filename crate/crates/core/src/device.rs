//! Device hardware, battery and uplink models, and the per-round cost
//! arithmetic: computing cost scales linearly with local iterations, upload
//! cost follows from model size, link rate and a fixed transmit power.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DeviceError {
    #[error("invalid link: rate {rate} bit/s is not positive")]
    InvalidLink { rate: f64 },
    #[error("device {id}: participation would leave {residual} J, below reserve {reserve} J")]
    ReserveViolated { id: DeviceId, residual: f64, reserve: f64 },
    #[error("device {id}: {reason}")]
    InvalidProfile { id: DeviceId, reason: String },
}

/// Uplink model. The per-round rate is `mean_rate * (1 + d)` with `d` uniform
/// in `[-jitter_fraction, +jitter_fraction]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    /// bits/second
    pub mean_rate: f64,
    #[serde(default)]
    pub jitter_fraction: f64,
    #[serde(default)]
    pub seed_offset: u64,
}

impl LinkModel {
    pub fn fixed(mean_rate: f64) -> Self {
        LinkModel { mean_rate, jitter_fraction: 0.0, seed_offset: 0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mean_rate.is_finite() && self.mean_rate > 0.0) {
            return Err(format!("mean_rate must be positive, got {}", self.mean_rate));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(format!("jitter_fraction must be in [0, 1), got {}", self.jitter_fraction));
        }
        Ok(())
    }
}

/// Static hardware and battery parameters of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: DeviceId,
    /// seconds per local SGD iteration
    pub per_iter_latency: f64,
    /// joules per local SGD iteration
    pub per_iter_energy: f64,
    /// watts while uploading
    pub tx_power: f64,
    /// joules at round 0
    pub initial_energy: f64,
    /// joules the device must keep for non-FL use
    pub reserve_energy: f64,
    pub link: LinkModel,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |reason: String| DeviceError::InvalidProfile { id: self.id, reason };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.per_iter_latency) {
            return Err(bad(format!("per_iter_latency must be positive, got {}", self.per_iter_latency)));
        }
        if !positive(self.per_iter_energy) {
            return Err(bad(format!("per_iter_energy must be positive, got {}", self.per_iter_energy)));
        }
        if !(self.tx_power.is_finite() && self.tx_power >= 0.0) {
            return Err(bad(format!("tx_power must be non-negative, got {}", self.tx_power)));
        }
        if !(self.reserve_energy.is_finite() && self.reserve_energy >= 0.0) {
            return Err(bad(format!("reserve_energy must be non-negative, got {}", self.reserve_energy)));
        }
        if !(self.initial_energy.is_finite() && self.initial_energy >= self.reserve_energy) {
            return Err(bad(format!(
                "initial_energy {} must be at least reserve_energy {}",
                self.initial_energy, self.reserve_energy
            )));
        }
        self.link.validate().map_err(bad)
    }
}

/// Mutable per-device state carried across rounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceState {
    pub id: DeviceId,
    /// joules
    pub residual_energy: f64,
    /// Committed local iteration count, always `ceil(h_accumulator)`.
    pub h: u32,
    /// Real-valued running sum `H(i,0) + sum of psi * delta_h` over
    /// participations. Kept unrounded so repeated ceilings do not drift.
    pub h_accumulator: f64,
    /// Rounds since last participation.
    pub staleness: u32,
    pub frozen: bool,
    pub dropped: bool,
    /// Mean training loss on local data right after the last local training.
    pub last_local_loss: Option<f64>,
    pub last_participation_round: Option<u32>,
    /// Computing energy spent at the last participation.
    pub last_ecp: f64,
    /// Sum of committed h over all participations.
    pub cumulative_iterations: u64,
}

impl DeviceState {
    pub fn new(profile: &DeviceProfile, h0: u32) -> Self {
        DeviceState {
            id: profile.id,
            residual_energy: profile.initial_energy,
            h: h0,
            h_accumulator: f64::from(h0),
            staleness: 0,
            frozen: false,
            dropped: false,
            last_local_loss: None,
            last_participation_round: None,
            last_ecp: 0.0,
            cumulative_iterations: 0,
        }
    }

    /// Energy above the reserve; negative once a baseline has overdrawn.
    pub fn available_energy(&self, profile: &DeviceProfile) -> f64 {
        self.residual_energy - profile.reserve_energy
    }
}

/// Whether a participation may push the battery below the reserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawMode {
    /// Falling below the reserve is a hard fault.
    Strict,
    /// The draw is applied and the device is marked dropped.
    AllowOverdraw,
}

pub fn sample_rate(link: &LinkModel, round: u32, seed: u64) -> f64 {
    if link.jitter_fraction == 0.0 {
        return link.mean_rate;
    }
    let mut rng = rng::stream(seed, link.seed_offset, u64::from(round), Purpose::LinkRate);
    let j = link.jitter_fraction;
    let delta: f64 = rng.random_range(-j..=j);
    link.mean_rate * (1.0 + delta)
}

/// `(t_cp, e_cp)` for `h` local iterations.
pub fn compute_cost(profile: &DeviceProfile, h: u32) -> (f64, f64) {
    let h = f64::from(h);
    (h * profile.per_iter_latency, h * profile.per_iter_energy)
}

/// `(t_comm, e_comm)` for uploading `model_size_bits` at `rate`.
pub fn comm_cost(model_size_bits: f64, rate: f64, tx_power: f64) -> Result<(f64, f64), DeviceError> {
    if rate.is_nan() || rate <= 0.0 {
        return Err(DeviceError::InvalidLink { rate });
    }
    let t = model_size_bits / rate;
    Ok((t, tx_power * t))
}

/// Debits `total_energy` for a participation in `round`.
pub fn apply_participation(
    state: &DeviceState,
    profile: &DeviceProfile,
    total_energy: f64,
    round: u32,
    mode: DrawMode,
) -> Result<DeviceState, DeviceError> {
    let residual = state.residual_energy - total_energy;
    let below = residual < profile.reserve_energy;
    if below && mode == DrawMode::Strict {
        return Err(DeviceError::ReserveViolated { id: state.id, residual, reserve: profile.reserve_energy });
    }
    Ok(DeviceState {
        residual_energy: residual,
        staleness: 0,
        last_participation_round: Some(round),
        dropped: state.dropped || below,
        ..state.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> DeviceProfile {
        DeviceProfile {
            id: DeviceId(0),
            per_iter_latency: 0.1,
            per_iter_energy: 2.0,
            tx_power: 1.0,
            initial_energy: 100.0,
            reserve_energy: 5.0,
            link: LinkModel::fixed(2e6),
        }
    }

    #[test]
    fn zero_jitter_returns_mean() {
        let link = LinkModel::fixed(2e6);
        for r in [0, 1, 17, 900] {
            assert_eq!(sample_rate(&link, r, 99), 2e6);
        }
    }

    #[test]
    fn rate_is_deterministic() {
        let link = LinkModel { mean_rate: 1e6, jitter_fraction: 0.3, seed_offset: 4 };
        assert_eq!(sample_rate(&link, 12, 5), sample_rate(&link, 12, 5));
        assert_ne!(sample_rate(&link, 12, 5), sample_rate(&link, 13, 5));
    }

    #[test]
    fn jittered_rate_stays_in_band() {
        let link = LinkModel { mean_rate: 1e6, jitter_fraction: 0.5, seed_offset: 0 };
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for r in 0..10_000 {
            let s = sample_rate(&link, r, 3);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        assert!(lo >= 5e5 && hi <= 1.5e6, "{lo} {hi}");
        // the band is actually explored
        assert!(lo < 5.1e5 && hi > 1.49e6, "{lo} {hi}");
    }

    #[test]
    fn compute_cost_examples() {
        let p = profile();
        assert_eq!(compute_cost(&p, 10).0, 1.0);
        assert_eq!(compute_cost(&p, 7).1, 14.0);
        assert_eq!(compute_cost(&p, 0), (0.0, 0.0));
    }

    #[test]
    fn comm_cost_examples() {
        assert_eq!(comm_cost(8e6, 2e6, 1.0).unwrap(), (4.0, 4.0));
        assert_eq!(comm_cost(0.0, 2e6, 1.0).unwrap(), (0.0, 0.0));
        assert_eq!(comm_cost(8e6, 2e6, 0.0).unwrap().1, 0.0);
        assert!(matches!(comm_cost(8e6, 0.0, 1.0), Err(DeviceError::InvalidLink { .. })));
        assert!(matches!(comm_cost(8e6, -1.0, 1.0), Err(DeviceError::InvalidLink { .. })));
    }

    #[test]
    fn participation_debits_energy() {
        let p = profile();
        let mut s = DeviceState::new(&p, 5);
        s.staleness = 4;
        let next = apply_participation(&s, &p, 30.0, 3, DrawMode::Strict).unwrap();
        assert_eq!(next.residual_energy, 70.0);
        assert_eq!(next.staleness, 0);
        assert_eq!(next.last_participation_round, Some(3));

        let zero = apply_participation(&s, &p, 0.0, 3, DrawMode::Strict).unwrap();
        assert_eq!(zero.residual_energy, s.residual_energy);
        assert_eq!(zero.h, s.h);
        assert_eq!(zero.staleness, 0);
    }

    #[test]
    fn overdraw_drops_in_baseline_mode_and_faults_in_strict_mode() {
        let p = DeviceProfile { initial_energy: 10.0, reserve_energy: 5.0, ..profile() };
        let s = DeviceState::new(&p, 5);
        let next = apply_participation(&s, &p, 12.0, 1, DrawMode::AllowOverdraw).unwrap();
        assert_eq!(next.residual_energy, -2.0);
        assert!(next.dropped);
        assert!(matches!(
            apply_participation(&s, &p, 12.0, 1, DrawMode::Strict),
            Err(DeviceError::ReserveViolated { .. })
        ));
    }

    #[test]
    fn profile_validation() {
        assert!(profile().validate().is_ok());
        let p = DeviceProfile { per_iter_latency: 0.0, ..profile() };
        assert!(p.validate().is_err());
        let p = DeviceProfile { reserve_energy: 200.0, ..profile() };
        assert!(p.validate().is_err());
        let p = DeviceProfile { link: LinkModel { jitter_fraction: 1.0, ..LinkModel::fixed(1.0) }, ..profile() };
        assert!(p.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn compute_cost_is_linear(h in 0u32..10_000, lat in 1e-4f64..10.0, en in 1e-4f64..10.0) {
                let p = DeviceProfile { per_iter_latency: lat, per_iter_energy: en, ..profile() };
                let (t1, e1) = compute_cost(&p, h);
                let (t2, e2) = compute_cost(&p, 2 * h);
                prop_assert!((t2 - 2.0 * t1).abs() <= 1e-12 * t2.abs().max(1.0));
                prop_assert!((e2 - 2.0 * e1).abs() <= 1e-12 * e2.abs().max(1.0));
            }

            #[test]
            fn doubling_rate_halves_comm_cost(bits in 0.0f64..1e9, rate in 1.0f64..1e9, pw in 0.0f64..5.0) {
                let (t1, e1) = comm_cost(bits, rate, pw).unwrap();
                let (t2, e2) = comm_cost(bits, 2.0 * rate, pw).unwrap();
                prop_assert!((t1 - 2.0 * t2).abs() <= 1e-12 * t1.max(1e-300));
                prop_assert!((e1 - 2.0 * e2).abs() <= 1e-12 * e1.max(1e-300));
            }

            #[test]
            fn sampled_rate_is_positive(mean in 1.0f64..1e9, j in 0.0f64..0.999, round in 0u32..1000, seed: u64) {
                let link = LinkModel { mean_rate: mean, jitter_fraction: j, seed_offset: 1 };
                prop_assert!(sample_rate(&link, round, seed) > 0.0);
            }
        }
    }
}
