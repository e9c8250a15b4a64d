//! Run artifacts.
//!
//! * `rounds.csv`: a `# rewafl-rounds schema_version=N` comment line, a header
//!   row, then one row per executed round with columns `round`,
//!   `wallclock_s` (max selected latency), `energy_j` (summed selected
//!   energy), `accuracy`, `loss`, `selected` (participant count) and
//!   `dropped` (devices dropped so far).
//! * `events.jsonl`: a header object `{"event":"header",...}` followed by one
//!   object per event, tagged by `event`: `selection` (participants in rank
//!   order plus per-device utility breakdowns for scored policies),
//!   `stalled`, `h_change`, `freeze` and `drop`.
//! * `summary.json`: `schema_version` plus the run's metrics summary.
//!
//! All files are staged as temporaries in the output directory and renamed
//! into place only once every file has been written.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::config::SCHEMA_VERSION;
use crate::engine::{MetricsSummary, SimulationOutput};
use crate::selection::PolicyKind;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Serialize)]
struct RoundRow {
    round: u32,
    wallclock_s: f64,
    energy_j: f64,
    accuracy: f64,
    loss: f64,
    selected: usize,
    dropped: usize,
}

#[derive(Serialize)]
struct Header {
    event: &'static str,
    schema_version: u32,
    policy: PolicyKind,
    rounds: usize,
}

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    inner: &'a T,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

pub fn rounds_csv(output: &SimulationOutput) -> Result<Vec<u8>, csv::Error> {
    let mut buf = format!("# rewafl-rounds schema_version={SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in &output.records {
            w.serialize(RoundRow {
                round: r.round,
                wallclock_s: r.round_wallclock,
                energy_j: r.round_energy,
                accuracy: r.global_accuracy,
                loss: r.global_loss,
                selected: r.selected.len(),
                dropped: r.dropped_so_far.len(),
            })?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn events_jsonl(output: &SimulationOutput) -> Vec<u8> {
    let header = Header {
        event: "header",
        schema_version: SCHEMA_VERSION,
        policy: output.summary.policy,
        rounds: output.records.len(),
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    for event in output.records.iter().flat_map(|r| &r.events) {
        serde_json::to_writer(&mut buf, event).expect("events serialize");
        buf.push(b'\n');
    }
    buf
}

pub fn summary_json(summary: &MetricsSummary) -> Vec<u8> {
    let mut buf = serde_json::to_vec_pretty(&Versioned { schema_version: SCHEMA_VERSION, inner: summary })
        .expect("summary serializes");
    buf.push(b'\n');
    buf
}

/// Stages every `(name, bytes)` pair in `dir`, then renames them into place.
fn write_all_atomic(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), OutputError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| OutputError::Io { path: target.clone(), source: e.error })?;
    }
    Ok(())
}

pub fn write_outputs(output: &SimulationOutput, out_dir: &Path) -> Result<(), OutputError> {
    let csv = rounds_csv(output).map_err(|source| OutputError::Csv { path: out_dir.join(ROUNDS_FILE), source })?;
    write_all_atomic(
        out_dir,
        &[(ROUNDS_FILE, csv), (EVENTS_FILE, events_jsonl(output)), (SUMMARY_FILE, summary_json(&output.summary))],
    )
}

#[derive(Serialize)]
struct ComparisonRow {
    policy: PolicyKind,
    rounds: u32,
    dropout_ratio: f64,
    overall_latency_s: f64,
    overall_energy_j: f64,
    rounds_to_target: Option<u32>,
    final_accuracy: f64,
}

/// One row per policy, in the order given.
pub fn comparison_csv(summaries: &[MetricsSummary]) -> Result<Vec<u8>, csv::Error> {
    let mut buf = format!("# rewafl-comparison schema_version={SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for s in summaries {
            w.serialize(ComparisonRow {
                policy: s.policy,
                rounds: s.rounds_executed,
                dropout_ratio: s.dropout_ratio,
                overall_latency_s: s.overall_latency,
                overall_energy_j: s.overall_energy,
                rounds_to_target: s.rounds_to_target,
                final_accuracy: s.final_accuracy,
            })?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn write_comparison(summaries: &[MetricsSummary], out_dir: &Path) -> Result<(), OutputError> {
    let csv =
        comparison_csv(summaries).map_err(|source| OutputError::Csv { path: out_dir.join(COMPARISON_FILE), source })?;
    write_all_atomic(out_dir, &[(COMPARISON_FILE, csv)])
}
