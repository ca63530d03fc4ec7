//! Sweep runner: executes every (mode, conflict rate, seed) run, checks it
//! and writes the report files.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, ExperimentConfig};
use crate::harness::{run_all, RunOptions, Violation};
use crate::metrics::{export, ExportPaths, RunSummary};
use crate::netsim::write_trace;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitStatus {
    Ok = 0,
    Config = 2,
    Invariant = 3,
    Oracle = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct RunFailure {
    /// `mode=.. conflict_rate=.. seed=..`
    pub run: String,
    pub violations: Vec<Violation>,
    pub oracle_mismatches: Vec<String>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub summaries: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
    pub files: Option<ExportPaths>,
    pub extra_files: Vec<PathBuf>,
    pub status: ExitStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{run}: {message}")]
    Run { run: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ExperimentError {
    pub fn status(&self) -> ExitStatus {
        match self {
            ExperimentError::Config(_) => ExitStatus::Config,
            ExperimentError::Run { .. } => ExitStatus::Invariant,
            ExperimentError::Io(_) => ExitStatus::Invariant,
        }
    }
}

fn run_stem(label: &str) -> String {
    label.replace(' ', "_").replace('=', "-")
}

/// Runs the sweep. Report files go to `out` when given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let opts = RunOptions { warmup_fraction: cfg.warmup_fraction, oracle: cfg.oracle };
    let outcomes = run_all(cfg.runs(), &opts);

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    let mut extra_files = Vec::new();
    let mut status = ExitStatus::Ok;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    for (outcome, sim) in outcomes.into_iter().zip(cfg.runs()) {
        let outcome = outcome.map_err(|message| ExperimentError::Run {
            run: format!("mode={} conflict_rate={} seed={}", sim.mode, sim.workload.conflict_rate, sim.seed),
            message,
        })?;
        let label = outcome.label();
        if let Ok(s) = &outcome.summary {
            summaries.push(s.clone());
        }
        let mismatches = outcome.oracle.clone().unwrap_or_default();
        if !mismatches.is_empty() {
            status = status.max(ExitStatus::Oracle);
        }
        if !outcome.violations.is_empty() {
            status = status.max(ExitStatus::Invariant);
        }
        if let Some(dir) = out {
            let stem = run_stem(&label);
            if cfg.trace {
                let path = dir.join(format!("trace_{stem}.jsonl"));
                write_trace(&outcome.result.trace, BufWriter::new(File::create(&path)?))?;
                extra_files.push(path);
            }
            if cfg.dump_ledger {
                let path = dir.join(format!("ledger_{stem}.jsonl"));
                outcome.result.reference_peer().ledger.dump_jsonl(BufWriter::new(File::create(&path)?))?;
                extra_files.push(path);
            }
        }
        if !mismatches.is_empty() || !outcome.violations.is_empty() {
            failures.push(RunFailure { run: label, violations: outcome.violations, oracle_mismatches: mismatches });
        }
    }
    let files = match out {
        Some(dir) => Some(export(&summaries, &cfg.echo(), cfg.warmup_fraction, dir)?),
        None => None,
    };
    Ok(ExperimentReport { summaries, failures, files, extra_files, status })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::from_text("tx_per_client = 20\nseeds = 1, 2\nconflict_rates = 0.5").unwrap();
        c.oracle = true;
        c
    }

    #[test]
    fn sweep_emits_one_summary_per_run() {
        let r = run_experiment(&small(), None).unwrap();
        assert_eq!(r.summaries.len(), 6);
        assert_eq!(r.status, ExitStatus::Ok, "{:?}", r.failures);
    }

    #[test]
    fn config_error_maps_to_exit_2() {
        let mut c = small();
        c.conflict_rates = vec![1.3];
        let e = run_experiment(&c, None).unwrap_err();
        assert_eq!(e.status().code(), 2);
    }

    #[test]
    fn injected_mvcc_bug_maps_to_exit_4() {
        let mut c = small();
        c.modes = vec![crate::Mode::Og];
        c.conflict_rates = vec![0.8];
        c.skip_peer_mvcc = true;
        let r = run_experiment(&c, None).unwrap();
        assert_eq!(r.status, ExitStatus::Oracle);
    }

    #[test]
    fn files_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.trace = true;
        c.dump_ledger = true;
        let r = run_experiment(&c, Some(dir.path())).unwrap();
        assert!(r.files.unwrap().csv.exists());
        assert_eq!(r.extra_files.len(), 12);
        assert!(r.extra_files.iter().all(|p| p.exists()));
    }
}
