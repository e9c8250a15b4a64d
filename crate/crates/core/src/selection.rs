//! Participant-selection scoring and ranking.
//!
//! The energy-aware utility multiplies three factors:
//!
//! ```text
//! util = |B| * sqrt(mean(loss^2))          statistical
//!      * (T / t)^alpha   if t > T else 1    round latency
//!      * (avail / e)^beta if e < avail else 0   energy, avail = residual - reserve
//! ```
//!
//! The latency-only utility drops the energy factor and optionally adds a
//! staleness bonus for devices that have not been picked for a while. The
//! remaining baselines pick uniformly at random or by lowest estimated
//! energy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceId;
use crate::rng::{self, Purpose};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("statistical utility needs at least one loss value")]
    NoData,
    #[error("energy estimate {0} J must be positive")]
    InvalidEstimate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Rewafl,
    Oort,
    Random,
    EnergyGreedy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::Rewafl, PolicyKind::Oort, PolicyKind::Random, PolicyKind::EnergyGreedy];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rewafl => "rewafl",
            PolicyKind::Oort => "oort",
            PolicyKind::Random => "random",
            PolicyKind::EnergyGreedy => "energy-greedy",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected rewafl, oort, random or energy-greedy)"))
    }
}

/// Factors of one device's score for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UtilityBreakdown {
    pub statistical: f64,
    pub latency_factor: f64,
    pub energy_factor: f64,
    /// Additive staleness term; zero for the energy-aware utility.
    pub staleness_bonus: f64,
    pub total: f64,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionDecision {
    pub round: u32,
    /// Selected devices in rank order.
    pub selected: Vec<DeviceId>,
    pub per_device: BTreeMap<DeviceId, UtilityBreakdown>,
}

pub fn statistical_utility(losses: &[f64]) -> Result<f64, SelectionError> {
    if losses.is_empty() {
        return Err(SelectionError::NoData);
    }
    let n = losses.len() as f64;
    let mean_sq = losses.iter().map(|l| l * l).sum::<f64>() / n;
    Ok(n * mean_sq.sqrt())
}

/// `1` when `t <= deadline`, else `(deadline / t)^alpha`.
pub fn latency_utility(deadline: f64, t: f64, alpha: f64) -> f64 {
    if t > deadline {
        (deadline / t).powf(alpha)
    } else {
        1.0
    }
}

/// `(avail / e)^beta` when `e < avail`, else exactly `0`.
pub fn energy_utility(residual: f64, reserve: f64, e: f64, beta: f64) -> Result<f64, SelectionError> {
    if !(e.is_finite() && e > 0.0) {
        return Err(SelectionError::InvalidEstimate(e));
    }
    let avail = residual - reserve;
    if e < avail {
        Ok((avail / e).powf(beta))
    } else {
        Ok(0.0)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn rewafl_utility(
    losses: &[f64],
    deadline: f64,
    t: f64,
    alpha: f64,
    residual: f64,
    reserve: f64,
    e: f64,
    beta: f64,
) -> Result<UtilityBreakdown, SelectionError> {
    let statistical = statistical_utility(losses)?;
    let latency_factor = latency_utility(deadline, t, alpha);
    let energy_factor = energy_utility(residual, reserve, e, beta)?;
    Ok(UtilityBreakdown {
        statistical,
        latency_factor,
        energy_factor,
        staleness_bonus: 0.0,
        total: statistical * latency_factor * energy_factor,
        eligible: energy_factor > 0.0,
    })
}

pub fn oort_utility(losses: &[f64], deadline: f64, t: f64, alpha: f64) -> Result<f64, SelectionError> {
    Ok(statistical_utility(losses)? * latency_utility(deadline, t, alpha))
}

/// `base + weight * sqrt(gap)` where `gap` counts rounds since the last
/// participation (or since the start for devices never picked).
pub fn oort_staleness_bonus(base: f64, current_round: u32, last_round: Option<u32>, weight: f64) -> f64 {
    let gap = current_round.saturating_sub(last_round.unwrap_or(0));
    base + weight * f64::from(gap).sqrt()
}

/// Latency-only utility plus staleness bonus, in breakdown form. The energy
/// factor is fixed at 1 so every device is eligible.
pub fn oort_breakdown(
    losses: &[f64],
    deadline: f64,
    t: f64,
    alpha: f64,
    current_round: u32,
    last_round: Option<u32>,
    weight: f64,
) -> Result<UtilityBreakdown, SelectionError> {
    let statistical = statistical_utility(losses)?;
    let latency_factor = latency_utility(deadline, t, alpha);
    let base = statistical * latency_factor;
    let total = oort_staleness_bonus(base, current_round, last_round, weight);
    Ok(UtilityBreakdown {
        statistical,
        latency_factor,
        energy_factor: 1.0,
        staleness_bonus: total - base,
        total,
        eligible: true,
    })
}

/// Highest total first, ties by ascending id; ineligible devices never selected.
pub fn select_top_k(per_device: &BTreeMap<DeviceId, UtilityBreakdown>, k: usize, round: u32) -> SelectionDecision {
    let mut ranked: Vec<(DeviceId, f64)> =
        per_device.iter().filter(|(_, u)| u.eligible).map(|(id, u)| (*id, u.total)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    SelectionDecision {
        round,
        selected: ranked.into_iter().map(|(id, _)| id).collect(),
        per_device: per_device.clone(),
    }
}

/// The `k` non-dropped devices with the smallest estimated round energy, ties
/// by ascending id.
pub fn energy_greedy_select(
    estimates: &BTreeMap<DeviceId, f64>,
    dropped: &BTreeSet<DeviceId>,
    k: usize,
    round: u32,
) -> SelectionDecision {
    let mut ranked: Vec<(DeviceId, f64)> =
        estimates.iter().filter(|(id, _)| !dropped.contains(id)).map(|(id, e)| (*id, *e)).collect();
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    SelectionDecision { round, selected: ranked.into_iter().map(|(id, _)| id).collect(), per_device: BTreeMap::new() }
}

/// Uniform `k`-subset of `candidates`, returned in ascending id order.
pub fn random_select(candidates: &[DeviceId], k: usize, seed: u64, round: u32) -> SelectionDecision {
    let mut rng = rng::stream(seed, 0, u64::from(round), Purpose::RandomSelect);
    let amount = k.min(candidates.len());
    let mut selected: Vec<DeviceId> =
        index::sample(&mut rng, candidates.len(), amount).into_iter().map(|i| candidates[i]).collect();
    selected.sort_unstable();
    SelectionDecision { round, selected, per_device: BTreeMap::new() }
}
