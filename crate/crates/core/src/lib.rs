//! Deterministic simulator for participant selection in federated learning
//! over battery-powered devices with heterogeneous uplinks.
//!
//! The energy-aware policy scores each device by statistical utility, a
//! round-deadline penalty and a residual-energy factor that hits zero when a
//! round would push the battery into its reserve; selected devices grow their
//! local iteration count more slowly on fast links and stop growing once the
//! extra iterations stop paying for their energy. Random, latency-utility and
//! energy-greedy baselines run on the same seeded scenarios.

pub mod config;
pub mod device;
pub mod engine;
pub mod learning;
pub mod local_policy;
pub mod output;
pub mod preset;
pub mod rng;
pub mod selection;

pub use config::{parse_config, parse_config_str, ConfigError, SimConfig};
pub use engine::{run_simulation, MetricsSummary, RoundRecord, SimError, Simulation, SimulationOutput};
pub use output::write_outputs;
pub use preset::preset;
pub use selection::PolicyKind;
