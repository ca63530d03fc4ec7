use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eovsim_core::config::ExperimentConfig;
use eovsim_core::experiment::{run_experiment, ExitStatus};
use eovsim_core::ledger::{read_dump, verify_dump, DumpRecord};
use eovsim_core::oracle::referee_dump;

/// Discrete-event simulator for execute-order-validate transaction flows.
#[derive(Parser)]
#[command(name = "eovsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep over modes, conflict rates and seeds.
    Run(RunArgs),
    /// Re-referee a ledger dump against the serial MVCC oracle.
    Oracle {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
    },
    /// Check hash links and version monotonicity of a ledger dump.
    Verify {
        #[arg(required = true)]
        dumps: Vec<PathBuf>,
    },
    /// List every configuration key.
    Keys,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (`key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set conflict_rates=0.5`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// og, oemvcc, ea, all, or a comma list.
    #[arg(long)]
    mode: Option<String>,
    /// Diff every run against the serial oracle.
    #[arg(long)]
    oracle: bool,
    /// Write per-run event traces.
    #[arg(long)]
    trace: bool,
    /// Resubmit aborted transactions.
    #[arg(long)]
    retry: bool,
    /// Treat write-set keys as read-modify-write at the orderer cache.
    #[arg(long)]
    bump_write_set: bool,
    /// Write the reference peer's ledger for every run.
    #[arg(long)]
    dump_ledger: bool,
    /// Output directory.
    #[arg(short, long, default_value = "results")]
    out: PathBuf,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, eovsim_core::config::ConfigError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_seed_env(std::env::var("SIM_SEED").ok().as_deref())?;
    if let Some(m) = &args.mode {
        cfg.set("mode", m)?;
    }
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    cfg.oracle |= args.oracle;
    cfg.trace |= args.trace;
    cfg.retry |= args.retry;
    cfg.bump_write_set |= args.bump_write_set;
    cfg.dump_ledger |= args.dump_ledger;
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> ExitStatus {
    let cfg = match load_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitStatus::Config;
        }
    };
    log::info!("{} runs", cfg.runs().len());
    let report = match run_experiment(&cfg, Some(&args.out)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return e.status();
        }
    };
    for f in &report.failures {
        for v in &f.violations {
            eprintln!("{}: invariant {}: {}", f.run, v.check, v.detail);
        }
        for m in &f.oracle_mismatches {
            eprintln!("{}: oracle mismatch: {m}", f.run);
        }
    }
    for s in &report.summaries {
        println!(
            "{:<6} p={:.2} seed={:<3} latency={:>9.3}ms invalid={:>9.3}ms tput={:>8.2}/s",
            s.mode.as_str(),
            s.conflict_rate,
            s.seed,
            s.latency_ms.all.as_ref().map_or(f64::NAN, |x| x.mean),
            s.latency_ms.invalid.as_ref().map_or(f64::NAN, |x| x.mean),
            s.throughput.all.per_sec,
        );
    }
    if let Some(files) = &report.files {
        println!("wrote {}", files.csv.display());
    }
    report.status
}

fn load_dump(path: &Path) -> anyhow::Result<Vec<DumpRecord>> {
    let f = File::open(path).map_err(|e| anyhow::anyhow!("cannot open {}: {e}", path.display()))?;
    Ok(read_dump(BufReader::new(f))?)
}

fn check_dump(path: &Path, check: fn(&[DumpRecord]) -> Vec<String>, fail: ExitStatus) -> ExitStatus {
    let records = match load_dump(path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitStatus::Config;
        }
    };
    let problems = check(&records);
    for p in &problems {
        eprintln!("{}: {p}", path.display());
    }
    if problems.is_empty() {
        println!("{}: {} blocks ok", path.display(), records.len());
        ExitStatus::Ok
    } else {
        fail
    }
}

fn check_dumps(paths: &[PathBuf], check: fn(&[DumpRecord]) -> Vec<String>, fail: ExitStatus) -> ExitStatus {
    paths.iter().map(|p| check_dump(p, check, fail)).max().unwrap_or(ExitStatus::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let status = match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Oracle { dumps } => check_dumps(&dumps, referee_dump, ExitStatus::Oracle),
        Command::Verify { dumps } => check_dumps(&dumps, verify_dump, ExitStatus::Invariant),
        Command::Keys => {
            for k in ExperimentConfig::KEYS {
                println!("{k}");
            }
            ExitStatus::Ok
        }
    };
    ExitCode::from(status.code() as u8)
}
