//! Wireless-aware local iteration schedule and the energy-aware freeze rule.
//!
//! A selected device grows its iteration count by `psi(rate) * delta_h`,
//! where `psi` shrinks as the uplink gets faster:
//!
//! ```text
//! psi(s) = min(psi_max, psi_ref * rate_ref / s)
//! H      = ceil(h0 + sum over past participations of psi(s_l) * delta_h)
//! ```
//!
//! Growth stops for good once
//!
//! ```text
//! |loss_local_last - loss_global| * (E_last - E_reserve) / e_cp_last < epsilon_threshold
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{self, DeviceError, DeviceProfile, DeviceState, DrawMode};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid rate {0} bit/s")]
    InvalidRate(f64),
    #[error("no training history: last computing energy {0} J is not positive")]
    InvalidHistory(f64),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HSchedule {
    pub h0: u32,
    pub delta_h: f64,
    pub psi_ref: f64,
    /// bits/second at which `psi == psi_ref`
    pub rate_ref: f64,
    pub psi_max: f64,
    pub epsilon_threshold: f64,
}

impl HSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.h0 == 0 {
            return Err("h0 must be >= 1".into());
        }
        for (name, v) in [
            ("delta_h", self.delta_h),
            ("psi_ref", self.psi_ref),
            ("rate_ref", self.rate_ref),
            ("psi_max", self.psi_max),
            ("epsilon_threshold", self.epsilon_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// How selected devices pick their iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalPolicy {
    /// Grow with `psi(rate)` and stop on the freeze rule.
    WirelessAware,
    /// Keep `h0` forever.
    Fixed,
}

pub fn psi(rate: f64, sched: &HSchedule) -> Result<f64, PolicyError> {
    if rate.is_nan() || rate <= 0.0 {
        return Err(PolicyError::InvalidRate(rate));
    }
    Ok(sched.psi_max.min(sched.psi_ref * sched.rate_ref / rate))
}

/// Iteration count a device would commit to if selected this round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tentative {
    pub h: u32,
    pub accumulator: f64,
}

pub fn tentative_h(state: &DeviceState, rate: f64, sched: &HSchedule) -> Result<Tentative, PolicyError> {
    let step = psi(rate, sched)?;
    if state.frozen {
        return Ok(Tentative { h: state.h, accumulator: state.h_accumulator });
    }
    let accumulator = state.h_accumulator + step * sched.delta_h;
    Ok(Tentative { h: accumulator.ceil() as u32, accumulator })
}

pub fn freeze_metric(
    loss_last_local: f64,
    loss_global_prev: f64,
    residual_at_last: f64,
    reserve: f64,
    ecp_at_last: f64,
) -> Result<f64, PolicyError> {
    if ecp_at_last.is_nan() || ecp_at_last <= 0.0 {
        return Err(PolicyError::InvalidHistory(ecp_at_last));
    }
    Ok((loss_last_local - loss_global_prev).abs() * (residual_at_last - reserve).max(0.0) / ecp_at_last)
}

/// What happened to a device this round.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Idle,
    Selected(Participation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participation {
    pub round: u32,
    pub committed: Tentative,
    /// `e_cp + e_comm`
    pub total_energy: f64,
    pub computing_energy: f64,
    /// Mean loss on local data after local training.
    pub local_loss: f64,
    /// Mean loss of the received global model on local data.
    pub global_loss: f64,
    pub mode: DrawMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: DeviceState,
    /// Freeze metric evaluated this round, if the device had a history.
    pub freeze_metric: Option<f64>,
    pub froze: bool,
}

pub fn update_on_decision(
    state: &DeviceState,
    profile: &DeviceProfile,
    decision: &Decision,
    sched: &HSchedule,
) -> Result<Transition, PolicyError> {
    let p = match decision {
        Decision::Idle => {
            let next = DeviceState { staleness: state.staleness + 1, ..state.clone() };
            return Ok(Transition { state: next, freeze_metric: None, froze: false });
        }
        Decision::Selected(p) => p,
    };

    let metric = match state.last_local_loss {
        Some(last) if state.last_ecp > 0.0 => {
            Some(freeze_metric(last, p.global_loss, state.residual_energy, profile.reserve_energy, state.last_ecp)?)
        }
        _ => None,
    };

    let mut next = device::apply_participation(state, profile, p.total_energy, p.round, p.mode)?;
    if !state.frozen {
        next.h = p.committed.h;
        next.h_accumulator = p.committed.accumulator;
    }
    next.last_local_loss = Some(p.local_loss);
    next.last_ecp = p.computing_energy;
    next.cumulative_iterations += u64::from(p.committed.h);
    let froze = !state.frozen && metric.is_some_and(|m| m < sched.epsilon_threshold);
    next.frozen = state.frozen || froze;
    Ok(Transition { state: next, freeze_metric: metric, froze })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceId, LinkModel};

    fn sched() -> HSchedule {
        HSchedule { h0: 5, delta_h: 2.0, psi_ref: 0.4, rate_ref: 1e6, psi_max: 3.0, epsilon_threshold: 0.5 }
    }

    fn profile() -> DeviceProfile {
        DeviceProfile {
            id: DeviceId(1),
            per_iter_latency: 0.1,
            per_iter_energy: 1.0,
            tx_power: 1.0,
            initial_energy: 1000.0,
            reserve_energy: 10.0,
            link: LinkModel::fixed(1e6),
        }
    }

    fn participation(round: u32, committed: Tentative, local: f64, global: f64) -> Decision {
        Decision::Selected(Participation {
            round,
            committed,
            total_energy: 20.0,
            computing_energy: f64::from(committed.h),
            local_loss: local,
            global_loss: global,
            mode: DrawMode::Strict,
        })
    }

    #[test]
    fn psi_examples() {
        let s = sched();
        assert_eq!(psi(1e6, &s).unwrap(), 0.4);
        assert!((psi(2e6, &s).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(psi(1.0, &s).unwrap(), 3.0);
        assert_eq!(psi(0.0, &s), Err(PolicyError::InvalidRate(0.0)));
    }

    #[test]
    fn tentative_examples() {
        let s = sched();
        let state = DeviceState::new(&profile(), 5);
        // psi = 0.4 at the reference rate, delta_h = 2: ceil(5.8)
        assert_eq!(tentative_h(&state, 1e6, &s).unwrap().h, 6);
        // psi ~ 0: rate so fast the increment vanishes
        let tiny = HSchedule { psi_ref: 1e-300, ..s };
        assert_eq!(tentative_h(&state, 1e6, &tiny).unwrap().h, 5);
        let frozen = DeviceState { frozen: true, ..state };
        assert_eq!(tentative_h(&frozen, 1.0, &s).unwrap().h, 5);
    }

    #[test]
    fn freeze_metric_examples() {
        assert_eq!(freeze_metric(0.7, 0.7, 50.0, 10.0, 2.0).unwrap(), 0.0);
        assert_eq!(freeze_metric(1.0, 0.5, 20.0, 10.0, 2.0).unwrap(), 2.5);
        assert_eq!(freeze_metric(3.0, 0.5, 10.0, 10.0, 2.0).unwrap(), 0.0);
        assert_eq!(freeze_metric(3.0, 0.5, 5.0, 10.0, 2.0).unwrap(), 0.0);
        assert_eq!(freeze_metric(1.0, 0.5, 20.0, 10.0, 0.0), Err(PolicyError::InvalidHistory(0.0)));
    }

    #[test]
    fn idle_round_only_bumps_staleness() {
        let state = DeviceState::new(&profile(), 5);
        let t = update_on_decision(&state, &profile(), &Decision::Idle, &sched()).unwrap();
        assert_eq!(t.state, DeviceState { staleness: 1, ..state });
    }

    #[test]
    fn two_consecutive_selections_give_six_then_seven() {
        let (p, s) = (profile(), sched());
        let mut state = DeviceState::new(&p, 5);
        let mut seq = Vec::new();
        for round in 1..=2 {
            let c = tentative_h(&state, 1e6, &s).unwrap();
            // large loss gap keeps the device unfrozen
            state = update_on_decision(&state, &p, &participation(round, c, 0.1, 5.0), &s).unwrap().state;
            seq.push(state.h);
        }
        assert_eq!(seq, vec![6, 7]);
        assert_eq!(state.residual_energy, 960.0);
        assert_eq!(state.cumulative_iterations, 13);
    }

    #[test]
    fn zero_gap_freezes_permanently() {
        let (p, s) = (profile(), sched());
        let mut state = DeviceState::new(&p, 5);
        let c = tentative_h(&state, 1e6, &s).unwrap();
        let first = update_on_decision(&state, &p, &participation(1, c, 0.3, 0.9), &s).unwrap();
        // no history on first participation: no freeze check
        assert_eq!(first.freeze_metric, None);
        assert!(!first.state.frozen);
        state = first.state;

        let c = tentative_h(&state, 1e6, &s).unwrap();
        let second = update_on_decision(&state, &p, &participation(2, c, 0.3, 0.3), &s).unwrap();
        assert_eq!(second.freeze_metric, Some(0.0));
        assert!(second.froze && second.state.frozen);
        let h_frozen = second.state.h;
        state = second.state;

        for round in 3..10 {
            let c = tentative_h(&state, 1.0, &s).unwrap();
            assert_eq!(c.h, h_frozen);
            let t = update_on_decision(&state, &p, &participation(round, c, 0.1, 9.0), &s).unwrap();
            assert!(t.state.frozen && !t.froze);
            assert_eq!(t.state.h, h_frozen);
            state = t.state;
        }
    }

    #[test]
    fn strict_mode_refuses_overdraw() {
        let (p, s) = (profile(), sched());
        let state = DeviceState { residual_energy: 25.0, ..DeviceState::new(&p, 5) };
        let c = tentative_h(&state, 1e6, &s).unwrap();
        let err = update_on_decision(&state, &p, &participation(1, c, 0.0, 1.0), &s).unwrap_err();
        assert!(matches!(err, PolicyError::Device(DeviceError::ReserveViolated { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn psi_in_range_and_non_increasing(r in 1.0f64..1e9, dr in 0.0f64..1e9) {
                let s = sched();
                let a = psi(r, &s).unwrap();
                let b = psi(r + dr, &s).unwrap();
                prop_assert!((0.0..=s.psi_max).contains(&a));
                prop_assert!(b <= a);
            }

            #[test]
            fn faster_link_gets_smaller_increment(h in 1u32..100, r in 1e3f64..1e8, dr in 0.0f64..1e8) {
                let s = sched();
                let state = DeviceState { h, h_accumulator: f64::from(h), ..DeviceState::new(&profile(), h) };
                let slow = tentative_h(&state, r, &s).unwrap().h;
                let fast = tentative_h(&state, r + dr, &s).unwrap().h;
                prop_assert!(fast <= slow);
            }
        }
    }
}
