use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rewafl::config::PolicyConfig;
use rewafl::output::write_comparison;
use rewafl::preset::{preset_with_seed, PRESET_NAMES};
use rewafl::{parse_config, run_simulation, write_outputs, MetricsSummary, PolicyKind, SimConfig};

#[derive(Parser)]
#[command(name = "rewafl", version, about = "Energy- and wireless-aware participant selection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write rounds.csv, events.jsonl and summary.json.
    Simulate {
        #[command(flatten)]
        scenario: Scenario,
        /// Overrides the policy named in the config.
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long, default_value = "rewafl-out")]
        out: PathBuf,
    },
    /// Write a built-in scenario as a config file.
    Preset {
        /// One of: paper-fleet, paper-fleet-tight, two-device-staleness, trainer-small.
        #[arg(long)]
        name: String,
        /// Destination file; prints to stdout when omitted.
        #[arg(long)]
        emit: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the same seeded scenario under several policies.
    Compare {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, value_delimiter = ',', default_value = "rewafl,oort,random,energy-greedy")]
        policies: Vec<PolicyKind>,
        #[arg(long, default_value = "rewafl-compare")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Scenario {
    /// JSON config file.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario to use instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
}

impl Scenario {
    fn load(&self) -> Result<SimConfig> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => parse_config(path)?,
            (None, Some(name)) => preset_with_seed(name, self.seed.unwrap_or(1))?,
            (None, None) => bail!("either --config or --preset is required"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(rounds) = self.rounds {
            config.rounds = rounds;
        }
        config.validate()?;
        Ok(config)
    }
}

fn simulate(config: &SimConfig, out: &Path) -> Result<MetricsSummary> {
    let output = run_simulation(config).with_context(|| format!("simulating {}", config.policy.name))?;
    write_outputs(&output, out)?;
    Ok(output.summary)
}

fn fmt_target(s: &MetricsSummary) -> String {
    s.rounds_to_target.map_or_else(|| "-".to_string(), |r| r.to_string())
}

fn print_table(summaries: &[MetricsSummary]) {
    println!(
        "{:<14} {:>7} {:>8} {:>14} {:>14} {:>9} {:>9}",
        "policy", "rounds", "dropout", "latency_s", "energy_j", "to_target", "accuracy"
    );
    for s in summaries {
        println!(
            "{:<14} {:>7} {:>8.3} {:>14.1} {:>14.1} {:>9} {:>9.4}",
            s.policy.name(),
            s.rounds_executed,
            s.dropout_ratio,
            s.overall_latency,
            s.overall_energy,
            fmt_target(s),
            s.final_accuracy
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, policy, out } => {
            let mut config = scenario.load()?;
            if let Some(p) = policy {
                config.policy.name = p;
            }
            let summary = simulate(&config, &out)?;
            print_table(std::slice::from_ref(&summary));
            eprintln!("wrote {}", out.display());
        }
        Command::Preset { name, emit, seed } => {
            if !PRESET_NAMES.contains(&name.as_str()) {
                bail!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", "));
            }
            let json = preset_with_seed(&name, seed)?.to_json();
            match emit {
                Some(path) => {
                    std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?
                }
                None => println!("{json}"),
            }
        }
        Command::Compare { scenario, policies, out } => {
            if policies.is_empty() {
                bail!("--policies needs at least one policy");
            }
            let base = scenario.load()?;
            let mut summaries = Vec::with_capacity(policies.len());
            for policy in policies {
                let config = SimConfig { policy: PolicyConfig { name: policy, ..base.policy.clone() }, ..base.clone() };
                summaries.push(simulate(&config, &out.join(policy.name()))?);
            }
            write_comparison(&summaries, &out)?;
            print_table(&summaries);
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
