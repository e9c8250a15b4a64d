//! Built-in scenarios.
//!
//! The five device archetypes loosely follow a mixed phone/tablet/laptop
//! fleet: two fast 5G phones, one low-end phone on a poor 5G link, and two
//! Wi-Fi devices. Per-iteration latency and energy, transmit power, battery
//! budgets and synthetic loss profiles are calibration constants chosen for
//! the simulator, not measurements of any real hardware.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{
    BackendConfig, ConfigError, DataSource, PolicyConfig, SimConfig, SyntheticBackend, TrainerBackend, SCHEMA_VERSION,
};
use crate::device::{DeviceId, DeviceProfile, LinkModel};
use crate::learning::{Architecture, SyntheticProfile};
use crate::local_policy::HSchedule;
use crate::rng::{self, Purpose};
use crate::selection::PolicyKind;

pub const PRESET_NAMES: [&str; 4] = ["paper-fleet", "paper-fleet-tight", "two-device-staleness", "trainer-small"];

/// Fraction of each device's above-reserve budget kept by the tight variant.
pub const TIGHT_BUDGET_FACTOR: f64 = 0.1;

pub struct Archetype {
    pub name: &'static str,
    pub per_iter_latency: f64,
    pub per_iter_energy: f64,
    pub tx_power: f64,
    /// Battery energy in joules available to the app at full charge.
    pub budget: f64,
    pub mean_rate: f64,
}

pub const ARCHETYPES: [Archetype; 5] = [
    Archetype {
        name: "flagship-phone-5g",
        per_iter_latency: 0.25,
        per_iter_energy: 2.0,
        tx_power: 1.0,
        budget: 30_000.0,
        mean_rate: 79.60e6,
    },
    Archetype {
        name: "midrange-phone-5g",
        per_iter_latency: 0.4,
        per_iter_energy: 3.0,
        tx_power: 1.0,
        budget: 33_000.0,
        mean_rate: 45.0e6,
    },
    Archetype {
        name: "budget-phone-5g",
        per_iter_latency: 0.7,
        per_iter_energy: 4.0,
        tx_power: 1.2,
        budget: 33_000.0,
        mean_rate: 0.64e6,
    },
    Archetype {
        name: "tablet-wifi",
        per_iter_latency: 0.8,
        per_iter_energy: 5.0,
        tx_power: 0.8,
        budget: 46_000.0,
        mean_rate: 20.0e6,
    },
    Archetype {
        name: "laptop-wifi",
        per_iter_latency: 0.2,
        per_iter_energy: 8.0,
        tx_power: 1.5,
        budget: 100_000.0,
        mean_rate: 50.0e6,
    },
];

pub const DEVICES_PER_ARCHETYPE: usize = 20;

/// Upload size: a ~1.6M-parameter model at 32 bits per parameter.
pub const PAPER_FLEET_MODEL_BITS: f64 = 1.6e6 * 32.0;

fn schedule() -> HSchedule {
    HSchedule { h0: 10, delta_h: 4.0, psi_ref: 0.5, rate_ref: 10.0e6, psi_max: 2.0, epsilon_threshold: 0.05 }
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("valid normal parameters");
    loop {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

/// 5 archetypes x 20 devices, K = 20, synthetic loss backend.
pub fn paper_fleet(seed: u64) -> SimConfig {
    let mut rng = rng::stream(seed, 0, 0, Purpose::Fleet);
    let mut fleet = Vec::with_capacity(ARCHETYPES.len() * DEVICES_PER_ARCHETYPE);
    let mut profiles = Vec::with_capacity(fleet.capacity());
    for arch in &ARCHETYPES {
        for _ in 0..DEVICES_PER_ARCHETYPE {
            let id = fleet.len() as u32;
            let reserve = 0.1 * arch.budget;
            let initial =
                truncated_normal(&mut rng, 0.5 * arch.budget, 0.2 * arch.budget, 0.3 * arch.budget, arch.budget);
            fleet.push(DeviceProfile {
                id: DeviceId(id),
                per_iter_latency: arch.per_iter_latency,
                per_iter_energy: arch.per_iter_energy,
                tx_power: arch.tx_power,
                initial_energy: initial,
                reserve_energy: reserve,
                link: LinkModel { mean_rate: arch.mean_rate, jitter_fraction: 0.2, seed_offset: u64::from(id) },
            });
            profiles.push(SyntheticProfile {
                floor: rng.random_range(0.2..0.3),
                scale: rng.random_range(1.5..2.5),
                decay: rng.random_range(0.002..0.01),
                samples: rng.random_range(50..=150),
            });
        }
    }
    SimConfig {
        schema_version: SCHEMA_VERSION,
        seed,
        rounds: 300,
        target_accuracy: None,
        policy: PolicyConfig {
            name: PolicyKind::Rewafl,
            k: 20,
            alpha: 1.0,
            beta: 1.0,
            deadline: 60.0,
            staleness_weight: 0.0,
            local: None,
        },
        schedule: schedule(),
        backend: BackendConfig::Synthetic(SyntheticBackend {
            model_bits: PAPER_FLEET_MODEL_BITS,
            profile: profiles[0],
            per_device: profiles,
        }),
        fleet,
    }
}

/// Keeps only `factor` of every device's above-reserve energy.
pub fn tighten(mut config: SimConfig, factor: f64) -> SimConfig {
    for d in &mut config.fleet {
        d.initial_energy = d.reserve_energy + factor * (d.initial_energy - d.reserve_energy);
    }
    config
}

/// Two devices identical except for the uplink: device 0 is fast, device 1
/// slow. One participant per round.
pub fn two_device_staleness(seed: u64) -> SimConfig {
    let device = |id: u32, rate: f64| DeviceProfile {
        id: DeviceId(id),
        per_iter_latency: 0.25,
        per_iter_energy: 2.0,
        tx_power: 1.0,
        initial_energy: 20_000.0,
        reserve_energy: 2_000.0,
        link: LinkModel { mean_rate: rate, jitter_fraction: 0.0, seed_offset: u64::from(id) },
    };
    let profile = SyntheticProfile { floor: 0.2, scale: 2.0, decay: 0.01, samples: 100 };
    SimConfig {
        schema_version: SCHEMA_VERSION,
        seed,
        rounds: 100,
        target_accuracy: None,
        policy: PolicyConfig {
            name: PolicyKind::Rewafl,
            k: 1,
            alpha: 1.0,
            beta: 1.0,
            deadline: 30.0,
            staleness_weight: 0.0,
            local: None,
        },
        schedule: schedule(),
        backend: BackendConfig::Synthetic(SyntheticBackend {
            model_bits: PAPER_FLEET_MODEL_BITS,
            profile,
            per_device: Vec::new(),
        }),
        fleet: vec![device(0, 50.0e6), device(1, 5.0e6)],
    }
}

/// 20 devices training logistic regression on a 3-class Gaussian set with
/// label skew 0.8, five participants per round.
pub fn trainer_small(seed: u64) -> SimConfig {
    let mut rng = rng::stream(seed, 0, 0, Purpose::Fleet);
    let fleet = (0..20u32)
        .map(|id| {
            let arch = &ARCHETYPES[id as usize % ARCHETYPES.len()];
            DeviceProfile {
                id: DeviceId(id),
                per_iter_latency: arch.per_iter_latency,
                per_iter_energy: arch.per_iter_energy,
                tx_power: arch.tx_power,
                initial_energy: rng.random_range(0.3..1.0) * arch.budget,
                reserve_energy: 0.1 * arch.budget,
                link: LinkModel { mean_rate: arch.mean_rate, jitter_fraction: 0.2, seed_offset: u64::from(id) },
            }
        })
        .collect();
    SimConfig {
        schema_version: SCHEMA_VERSION,
        seed,
        rounds: 100,
        target_accuracy: Some(0.95),
        policy: PolicyConfig {
            name: PolicyKind::Rewafl,
            k: 5,
            alpha: 1.0,
            beta: 1.0,
            deadline: 30.0,
            staleness_weight: 0.0,
            local: None,
        },
        schedule: HSchedule { epsilon_threshold: 1e-3, ..schedule() },
        backend: BackendConfig::Trainer(TrainerBackend {
            data: DataSource::Synthetic { classes: 3, dims: 2, n: 3000, cluster_spread: 0.1, test_n: 600 },
            lambda: 0.8,
            samples_per_device: 100,
            architecture: Architecture::Logistic,
            batch_size: 10,
            lr: 0.1,
            model_bits: None,
        }),
        fleet,
    }
}

pub fn preset_with_seed(name: &str, seed: u64) -> Result<SimConfig, ConfigError> {
    match name {
        "paper-fleet" => Ok(paper_fleet(seed)),
        "paper-fleet-tight" => Ok(SimConfig { rounds: 200, ..tighten(paper_fleet(seed), TIGHT_BUDGET_FACTOR) }),
        "two-device-staleness" => Ok(two_device_staleness(seed)),
        "trainer-small" => Ok(trainer_small(seed)),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

pub fn preset(name: &str) -> Result<SimConfig, ConfigError> {
    preset_with_seed(name, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn paper_fleet_shape() {
        let c = preset("paper-fleet").unwrap();
        assert_eq!(c.fleet.len(), 100);
        assert_eq!(c.policy.k, 20);
        let rates: Vec<f64> = ARCHETYPES.iter().map(|a| a.mean_rate).collect();
        assert!(rates.contains(&0.64e6) && rates.contains(&79.60e6));
        for arch in &ARCHETYPES {
            let n = c.fleet.iter().filter(|d| d.link.mean_rate == arch.mean_rate).count();
            assert_eq!(n, DEVICES_PER_ARCHETYPE, "{}", arch.name);
        }
        for (d, arch) in c.fleet.iter().zip(ARCHETYPES.iter().flat_map(|a| std::iter::repeat_n(a, 20))) {
            assert!(d.initial_energy <= arch.budget && d.initial_energy >= 0.3 * arch.budget);
        }
    }

    #[test]
    fn two_device_pair_differs_only_in_rate() {
        let c = preset("two-device-staleness").unwrap();
        let (i, j) = (&c.fleet[0], &c.fleet[1]);
        assert!(i.link.mean_rate > j.link.mean_rate);
        let strip = |d: &DeviceProfile| DeviceProfile { id: DeviceId(0), link: LinkModel::fixed(1.0), ..d.clone() };
        assert_eq!(strip(i), strip(j));
    }

    #[test]
    fn presets_are_seed_deterministic() {
        assert_eq!(paper_fleet(3), paper_fleet(3));
        assert_ne!(paper_fleet(3).fleet, paper_fleet(4).fleet);
    }

    #[test]
    fn tight_variant_shrinks_budgets() {
        let normal = preset("paper-fleet").unwrap();
        let tight = preset("paper-fleet-tight").unwrap();
        for (a, b) in normal.fleet.iter().zip(&tight.fleet) {
            assert!(b.initial_energy < a.initial_energy);
            assert!(b.initial_energy > b.reserve_energy);
        }
    }
}
