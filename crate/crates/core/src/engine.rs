//! Synchronous round loop.
//!
//! Each round: every live device draws its uplink rate, settles on a
//! tentative iteration count and estimates its round latency and energy;
//! the server scores and picks participants; participants train and upload;
//! the server averages their models; every device then advances its state.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{BackendConfig, ConfigError, DataSource, SimConfig};
use crate::device::{self, DeviceError, DeviceId, DeviceProfile, DeviceState, DrawMode};
use crate::learning::{
    self, aggregate, evaluate, load_idx, partition_label_skew, synthetic_loss, Dataset, IdxError, LearningError,
    LossReport, ModelParams, ModelShape, Partition, SyntheticProfile,
};
use crate::local_policy::{self, Decision, LocalPolicy, Participation, PolicyError, Tentative};
use crate::rng::{self, Purpose};
use crate::selection::{self, PolicyKind, SelectionError, UtilityBreakdown};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// One device's pre-selection estimate for a round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceEstimate {
    pub id: DeviceId,
    pub rate: f64,
    pub h: u32,
    #[serde(skip)]
    pub accumulator: f64,
    /// t(i,r), seconds
    pub latency: f64,
    /// e(i,r), joules
    pub energy: f64,
    pub computing_energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSnapshot {
    pub id: DeviceId,
    pub residual_energy: f64,
    pub h: u32,
    pub staleness: u32,
    pub frozen: bool,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Selection {
        round: u32,
        selected: Vec<DeviceId>,
        #[serde(skip_serializing_if = "BTreeMap::is_empty")]
        utilities: BTreeMap<DeviceId, UtilityBreakdown>,
    },
    Stalled {
        round: u32,
    },
    HChange {
        round: u32,
        device: DeviceId,
        from: u32,
        to: u32,
    },
    Freeze {
        round: u32,
        device: DeviceId,
        metric: f64,
        h: u32,
    },
    Drop {
        round: u32,
        device: DeviceId,
        residual_energy: f64,
        reserve_energy: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u32,
    pub selected: Vec<DeviceId>,
    pub estimates: Vec<DeviceEstimate>,
    /// max latency over the selected devices
    pub round_wallclock: f64,
    /// summed energy over the selected devices
    pub round_energy: f64,
    pub global_accuracy: f64,
    pub global_loss: f64,
    pub dropped_so_far: Vec<DeviceId>,
    pub stalled: bool,
    /// Device states after the round.
    pub devices: Vec<DeviceSnapshot>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub policy: PolicyKind,
    pub rounds_executed: u32,
    pub dropout_ratio: f64,
    pub overall_latency: f64,
    pub overall_energy: f64,
    pub rounds_to_target: Option<u32>,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub stalled_rounds: u32,
}

enum Backend {
    Synthetic { profiles: Vec<SyntheticProfile> },
    Trainer { train: Dataset, test: Dataset, partition: Partition, global: ModelParams, batch_size: usize, lr: f64 },
}

struct TrainOutcome {
    index: usize,
    update: Option<ModelParams>,
    report: LossReport,
    global_loss: f64,
}

/// Simulator state between rounds.
pub struct Simulation {
    config: SimConfig,
    local_policy: LocalPolicy,
    states: Vec<DeviceState>,
    /// Most recent per-sample losses each device reports for scoring.
    reports: Vec<LossReport>,
    backend: Backend,
    model_bits: f64,
}

impl Simulation {
    /// Validates the config, builds data and models, and evaluates the initial
    /// model on every device's local data (at no cost) so every device has
    /// losses to report in round 1.
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.fleet.len();
        let states: Vec<DeviceState> = config.fleet.iter().map(|p| DeviceState::new(p, config.schedule.h0)).collect();

        let (backend, model_bits, reports) = match &config.backend {
            BackendConfig::Synthetic(s) => {
                let profiles = s.profiles(n);
                let reports = profiles.iter().map(|p| synthetic_loss(p, 0)).collect();
                (Backend::Synthetic { profiles }, s.model_bits, reports)
            }
            BackendConfig::Trainer(t) => {
                let (train, test) = match &t.data {
                    DataSource::Synthetic { classes, dims, n: samples, cluster_spread, test_n } => {
                        let all = learning::generate_synthetic(
                            *classes,
                            *dims,
                            samples + test_n,
                            *cluster_spread,
                            config.seed,
                        )?;
                        all.split_holdout(*test_n, config.seed)?
                    }
                    DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                        (load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?)
                    }
                };
                let partition = partition_label_skew(&train, n, t.samples_per_device, t.lambda, config.seed)?;
                let shape = ModelShape {
                    dims: train.dims(),
                    classes: train.classes().max(test.classes()),
                    architecture: t.architecture,
                };
                let global = ModelParams::init(shape, config.seed);
                let bits = t.model_bits.unwrap_or(shape.param_count() as f64 * 32.0);
                let reports = (0..n)
                    .into_par_iter()
                    .map(|i| global.loss_report(&train, partition.device(i)))
                    .collect::<Result<Vec<_>, _>>()?;
                let backend = Backend::Trainer { train, test, partition, global, batch_size: t.batch_size, lr: t.lr };
                (backend, bits, reports)
            }
        };

        Ok(Simulation { local_policy: config.policy.local_policy(), config, states, reports, backend, model_bits })
    }

    pub fn states(&self) -> &[DeviceState] {
        &self.states
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn global_model(&self) -> Option<&ModelParams> {
        match &self.backend {
            Backend::Trainer { global, .. } => Some(global),
            Backend::Synthetic { .. } => None,
        }
    }

    fn draw_mode(&self) -> DrawMode {
        match self.config.policy.name {
            PolicyKind::Rewafl => DrawMode::Strict,
            _ => DrawMode::AllowOverdraw,
        }
    }

    fn estimate(&self, index: usize, round: u32) -> Result<DeviceEstimate, SimError> {
        let profile = &self.config.fleet[index];
        let state = &self.states[index];
        let rate = device::sample_rate(&profile.link, round, self.config.seed);
        let tentative = match self.local_policy {
            LocalPolicy::WirelessAware => local_policy::tentative_h(state, rate, &self.config.schedule)?,
            LocalPolicy::Fixed => Tentative { h: state.h, accumulator: state.h_accumulator },
        };
        let (t_cp, e_cp) = device::compute_cost(profile, tentative.h);
        let (t_comm, e_comm) = device::comm_cost(self.model_bits, rate, profile.tx_power)?;
        Ok(DeviceEstimate {
            id: profile.id,
            rate,
            h: tentative.h,
            accumulator: tentative.accumulator,
            latency: t_cp + t_comm,
            energy: e_cp + e_comm,
            computing_energy: e_cp,
            utility: None,
        })
    }

    /// Returns selected fleet indices in rank order.
    fn select(&self, round: u32, estimates: &mut [Option<DeviceEstimate>]) -> Result<Vec<usize>, SimError> {
        let policy = &self.config.policy;
        let index_of: BTreeMap<DeviceId, usize> =
            self.config.fleet.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        let live = || estimates.iter().enumerate().filter_map(|(i, e)| e.as_ref().map(|e| (i, e)));

        let decision = match policy.name {
            PolicyKind::Rewafl | PolicyKind::Oort => {
                let mut scores = BTreeMap::new();
                for (i, est) in live() {
                    let profile = &self.config.fleet[i];
                    let state = &self.states[i];
                    let losses = &self.reports[i].per_sample_losses;
                    let u = if policy.name == PolicyKind::Rewafl {
                        selection::rewafl_utility(
                            losses,
                            policy.deadline,
                            est.latency,
                            policy.alpha,
                            state.residual_energy,
                            profile.reserve_energy,
                            est.energy,
                            policy.beta,
                        )?
                    } else {
                        selection::oort_breakdown(
                            losses,
                            policy.deadline,
                            est.latency,
                            policy.alpha,
                            round,
                            state.last_participation_round,
                            policy.staleness_weight,
                        )?
                    };
                    scores.insert(est.id, u);
                }
                for (id, u) in &scores {
                    if let Some(e) = estimates[index_of[id]].as_mut() {
                        e.utility = Some(*u);
                    }
                }
                selection::select_top_k(&scores, policy.k, round)
            }
            PolicyKind::Random => {
                let candidates: Vec<DeviceId> = live().map(|(_, e)| e.id).collect();
                selection::random_select(&candidates, policy.k, self.config.seed, round)
            }
            PolicyKind::EnergyGreedy => {
                let energies: BTreeMap<DeviceId, f64> = live().map(|(_, e)| (e.id, e.energy)).collect();
                selection::energy_greedy_select(&energies, &BTreeSet::new(), policy.k, round)
            }
        };
        Ok(decision.selected.iter().map(|id| index_of[id]).collect())
    }

    fn train(&self, index: usize, h: u32, round: u32) -> Result<TrainOutcome, SimError> {
        match &self.backend {
            Backend::Synthetic { profiles } => {
                let p = &profiles[index];
                let state = &self.states[index];
                let before = state.cumulative_iterations;
                // The averaged model trails the device's own progress by its
                // last local round, so the local/global gap is the loss drop
                // those last iterations bought.
                let global_progress = match state.last_participation_round {
                    Some(_) => before.saturating_sub(u64::from(state.h)),
                    None => before,
                };
                Ok(TrainOutcome {
                    index,
                    update: None,
                    report: synthetic_loss(p, before + u64::from(h)),
                    global_loss: p.mean_loss(global_progress),
                })
            }
            Backend::Trainer { train, partition, global, batch_size, lr, .. } => {
                let local = partition.device(index);
                let global_loss = global.loss_report(train, local)?.mean_loss;
                let mut stream = rng::stream(self.config.seed, index as u64, u64::from(round), Purpose::LocalTrain);
                let (model, report) =
                    learning::local_train_with_rng(global, train, local, h, *batch_size, *lr, &mut stream)?;
                Ok(TrainOutcome { index, update: Some(model), report, global_loss })
            }
        }
    }

    fn global_metrics(&self) -> Result<(f64, f64), SimError> {
        match &self.backend {
            Backend::Trainer { test, global, .. } => Ok(evaluate(global, test)?),
            Backend::Synthetic { profiles } => {
                // Accuracy proxy: sample-weighted share of reducible loss removed.
                let total: f64 = profiles.iter().map(|p| p.samples as f64).sum();
                let (mut acc, mut loss) = (0.0, 0.0);
                for (p, s) in profiles.iter().zip(&self.states) {
                    let w = p.samples as f64 / total;
                    acc += w * p.progress(s.cumulative_iterations);
                    loss += w * p.mean_loss(s.cumulative_iterations);
                }
                Ok((acc, loss))
            }
        }
    }

    /// Executes one round and advances all device states.
    pub fn run_round(&mut self, round: u32) -> Result<RoundRecord, SimError> {
        let n = self.config.fleet.len();
        let mut estimates: Vec<Option<DeviceEstimate>> = (0..n)
            .into_par_iter()
            .map(|i| if self.states[i].dropped { Ok(None) } else { self.estimate(i, round).map(Some) })
            .collect::<Result<_, SimError>>()?;

        let chosen = self.select(round, &mut estimates)?;
        let selected_ids: Vec<DeviceId> = chosen.iter().map(|&i| self.config.fleet[i].id).collect();
        let mut events = vec![if chosen.is_empty() {
            Event::Stalled { round }
        } else {
            Event::Selection {
                round,
                selected: selected_ids.clone(),
                utilities: estimates.iter().flatten().filter_map(|e| e.utility.map(|u| (e.id, u))).collect(),
            }
        }];

        let mut by_index = chosen.clone();
        by_index.sort_unstable();
        let outcomes: Vec<TrainOutcome> = by_index
            .par_iter()
            .map(|&i| {
                let h = estimates[i].as_ref().expect("selected devices have estimates").h;
                self.train(i, h, round)
            })
            .collect::<Result<_, SimError>>()?;

        if let Backend::Trainer { global, partition, .. } = &mut self.backend {
            let updates: Vec<(&ModelParams, f64)> = outcomes
                .iter()
                .filter_map(|o| o.update.as_ref().map(|m| (m, partition.device(o.index).len() as f64)))
                .collect();
            if !updates.is_empty() {
                *global = aggregate(&updates)?;
            }
        }

        let mode = self.draw_mode();
        let mut participation: BTreeMap<usize, &TrainOutcome> = BTreeMap::new();
        for o in &outcomes {
            participation.insert(o.index, o);
        }
        let (mut wallclock, mut energy) = (0.0_f64, 0.0);
        for &i in &chosen {
            let est = estimates[i].as_ref().expect("selected devices have estimates");
            wallclock = wallclock.max(est.latency);
        }
        for &i in &by_index {
            energy += estimates[i].as_ref().expect("selected devices have estimates").energy;
        }

        for i in 0..n {
            let profile: &DeviceProfile = &self.config.fleet[i];
            let state = &self.states[i];
            let decision = match (participation.get(&i), &estimates[i]) {
                (Some(o), Some(est)) => Decision::Selected(Participation {
                    round,
                    committed: Tentative { h: est.h, accumulator: est.accumulator },
                    total_energy: est.energy,
                    computing_energy: est.computing_energy,
                    local_loss: o.report.mean_loss,
                    global_loss: o.global_loss,
                    mode,
                }),
                _ => Decision::Idle,
            };
            let transition = local_policy::update_on_decision(state, profile, &decision, &self.config.schedule)?;
            let next = transition.state;
            if next.h != state.h {
                events.push(Event::HChange { round, device: profile.id, from: state.h, to: next.h });
            }
            if transition.froze {
                events.push(Event::Freeze {
                    round,
                    device: profile.id,
                    metric: transition.freeze_metric.unwrap_or_default(),
                    h: next.h,
                });
            }
            if next.dropped && !state.dropped {
                events.push(Event::Drop {
                    round,
                    device: profile.id,
                    residual_energy: next.residual_energy,
                    reserve_energy: profile.reserve_energy,
                });
            }
            self.states[i] = next;
        }
        for o in outcomes {
            self.reports[o.index] = o.report;
        }

        let (global_accuracy, global_loss) = self.global_metrics()?;
        Ok(RoundRecord {
            round,
            selected: selected_ids,
            estimates: estimates.into_iter().flatten().collect(),
            round_wallclock: wallclock,
            round_energy: energy,
            global_accuracy,
            global_loss,
            dropped_so_far: self
                .states
                .iter()
                .zip(&self.config.fleet)
                .filter(|(s, p)| is_dropped(s, p))
                .map(|(s, _)| s.id)
                .collect(),
            stalled: chosen.is_empty(),
            devices: self
                .states
                .iter()
                .map(|s| DeviceSnapshot {
                    id: s.id,
                    residual_energy: s.residual_energy,
                    h: s.h,
                    staleness: s.staleness,
                    frozen: s.frozen,
                    dropped: s.dropped,
                })
                .collect(),
            events,
        })
    }
}

fn is_dropped(state: &DeviceState, profile: &DeviceProfile) -> bool {
    state.dropped || state.residual_energy < profile.reserve_energy
}

/// Share of the fleet that is dropped or below its reserve.
pub fn dropout_ratio(states: &[DeviceState], fleet: &[DeviceProfile]) -> f64 {
    if fleet.is_empty() {
        return 0.0;
    }
    let dropped = states.iter().zip(fleet).filter(|(s, p)| is_dropped(s, p)).count();
    dropped as f64 / fleet.len() as f64
}

/// Longest run of consecutive rounds each device went unselected.
pub fn staleness_gap(records: &[RoundRecord], ids: &[DeviceId]) -> BTreeMap<DeviceId, u32> {
    ids.iter()
        .map(|&id| {
            let (mut run, mut best) = (0u32, 0u32);
            for r in records {
                if r.selected.contains(&id) {
                    run = 0;
                } else {
                    run += 1;
                    best = best.max(run);
                }
            }
            (id, best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationOutput {
    pub records: Vec<RoundRecord>,
    pub summary: MetricsSummary,
}

/// Runs up to `config.rounds` rounds, stopping early once the global accuracy
/// reaches `target_accuracy`.
pub fn run_simulation(config: &SimConfig) -> Result<SimulationOutput, SimError> {
    let mut sim = Simulation::new(config.clone())?;
    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut rounds_to_target = None;
    for round in 1..=config.rounds {
        let record = sim.run_round(round)?;
        let reached = config.target_accuracy.is_some_and(|t| record.global_accuracy >= t);
        records.push(record);
        if reached {
            rounds_to_target = Some(round);
            break;
        }
    }
    let last = records.last().expect("at least one round runs");
    let summary = MetricsSummary {
        policy: config.policy.name,
        rounds_executed: records.len() as u32,
        dropout_ratio: dropout_ratio(sim.states(), &config.fleet),
        overall_latency: records.iter().map(|r| r.round_wallclock).sum(),
        overall_energy: records.iter().map(|r| r.round_energy).sum(),
        rounds_to_target,
        final_accuracy: last.global_accuracy,
        final_loss: last.global_loss,
        stalled_rounds: records.iter().filter(|r| r.stalled).count() as u32,
    };
    Ok(SimulationOutput { records, summary })
}
