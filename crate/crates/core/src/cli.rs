//! Command-line front end.
//!
//! Every subcommand reads one scenario config, writes its CSVs plus a
//! `run_manifest.json` into `--out`, and maps errors onto exit codes:
//! 1 for configuration and I/O problems, 2 for infeasible constraints,
//! 3 for numerical failures.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::convergence::write_bound_csv;
use crate::error::{Result, SflError};
use crate::joint::{alternating_optimize, device_loads};
use crate::profiler::profile;
use crate::scenario::ScenarioConfig;
use crate::simulator::run_campaign;
use crate::split::SplitPolicy;
use crate::trainer::{train, train_centralized, train_fedavg};

#[derive(Debug, Parser)]
#[command(name = "sflsplit", version, about = "Split-point and bandwidth planning for split federated learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Scenario config (TOML). Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Suppress the summary printed to stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScheme {
    Sfl,
    Fedavg,
    Centralized,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer MACs and boundary sizes of the configured architecture.
    Profile,
    /// Joint split-point and bandwidth optimization.
    Optimize,
    /// Monte-Carlo round latencies for SFL and FedAvg.
    Simulate {
        /// Overrides `simulate.n_rounds`.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Micro-scale training on synthetic data.
    Train {
        #[arg(long, value_enum, default_value = "sfl")]
        scheme: TrainScheme,
    },
    /// Convergence bound against the iteration count.
    Bound,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Optimize => "optimize",
            Command::Simulate { .. } => "simulate",
            Command::Train { .. } => "train",
            Command::Bound => "bound",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    arguments: serde_json::Value,
    config_path: Option<String>,
    config_sha256: Option<String>,
    seed_override: Option<u64>,
    /// Config after defaults and overrides; rerunning with it replays the run.
    resolved_config: serde_json::Value,
    outputs: Vec<OutputFile>,
}

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_config(path: Option<&Path>) -> Result<(ScenarioConfig, Option<String>)> {
    match path {
        None => Ok((ScenarioConfig::default(), None)),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| SflError::io(p.display().to_string(), e))?;
            let cfg = ScenarioConfig::from_file(p)?;
            Ok((cfg, Some(sha256_hex(&bytes))))
        }
    }
}

fn apply_seed(cfg: &mut ScenarioConfig, seed: u64) {
    cfg.system.seed = seed;
    cfg.simulate.seeds = vec![seed];
    cfg.train.seed = seed;
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| SflError::io(path.display().to_string(), e))
}

/// Runs one subcommand and returns the names of the files it wrote.
fn execute(cmd: &Command, cfg: &mut ScenarioConfig, out: &Path, quiet: bool) -> Result<Vec<String>> {
    let say = |line: String| {
        if !quiet {
            println!("{line}");
        }
    };
    match cmd {
        Command::Profile => {
            let arch = cfg.load_architecture()?;
            let prof = profile(&arch);
            prof.write_csv(create(out, "profile.csv")?)?;
            say(format!(
                "{}: {} layers, {:.3e} MACs per batch of {}, {} parameters",
                arch.name,
                prof.num_layers(),
                prof.total_macs() as f64,
                arch.batch_size,
                arch.parameter_count()
            ));
            Ok(vec!["profile.csv".into()])
        }
        Command::Optimize => {
            let scenario = cfg.build()?;
            let sol = alternating_optimize(&scenario, cfg.optimizer.n_iter, cfg.optimizer.eps_tol)?;
            sol.write_csv(&scenario, create(out, "solution.csv")?)?;
            sol.write_trace_csv(create(out, "trace.csv")?)?;
            let mut w = csv::Writer::from_writer(create(out, "policies.csv")?);
            w.write_record(SplitPolicy::CSV_HEADER)?;
            for (k, p) in sol.policies.iter().enumerate() {
                p.write_csv(k, &mut w)?;
            }
            w.flush().map_err(|e| SflError::io("policies.csv", e))?;
            let loads = device_loads(&scenario, &sol.splits);
            let mut w = csv::Writer::from_writer(create(out, "allocation.csv")?);
            sol.allocation.write_csv(&loads, &mut w)?;
            w.flush().map_err(|e| SflError::io("allocation.csv", e))?;
            say(format!(
                "{} devices, layer bound {}, {} passes{}",
                scenario.num_devices(),
                scenario.layer_bound,
                sol.iterations(),
                if sol.converged { " (converged)" } else { "" }
            ));
            say(format!("splits: {:?}", sol.splits));
            say(format!("expected per-iteration latency: {:.6e} s", sol.expected_total_latency));
            Ok(["solution.csv", "trace.csv", "policies.csv", "allocation.csv"].map(String::from).to_vec())
        }
        Command::Simulate { rounds } => {
            if let Some(n) = rounds {
                cfg.simulate.n_rounds = *n;
            }
            cfg.validate()?;
            if cfg.simulate.sweep.is_none() {
                cfg.build()?;
            }
            let result = run_campaign(cfg, cfg.simulate.n_rounds, &cfg.simulate.seeds);
            result.write_summary_csv(create(out, "summary.csv")?)?;
            let mut files = vec!["summary.csv".to_string()];
            if cfg.simulate.per_round_rows {
                result.write_rounds_csv(create(out, "rounds.csv")?)?;
                files.push("rounds.csv".into());
            }
            let failed: Vec<_> = result.rows.iter().filter(|r| r.status != "ok").collect();
            for r in &failed {
                eprintln!("grid point {}={}: {}", r.parameter, r.value, r.status);
            }
            if !failed.is_empty() && failed.len() == result.rows.len() {
                return Err(SflError::Infeasible(format!(
                    "every grid point of simulate.sweep failed, first: {}",
                    failed[0].status
                )));
            }
            Ok(files)
        }
        Command::Train { scheme } => {
            let report = match scheme {
                TrainScheme::Sfl => train(&cfg.train)?,
                TrainScheme::Fedavg => train_fedavg(&cfg.train)?,
                TrainScheme::Centralized => train_centralized(&cfg.train)?,
            };
            report.write_csv(create(out, "metrics.csv")?)?;
            say(format!("final accuracy: {:.4}", report.final_accuracy()));
            Ok(vec!["metrics.csv".into()])
        }
        Command::Bound => {
            let params = cfg.bound.params;
            params.validate()?;
            write_bound_csv(&params, &cfg.bound.t_values, create(out, "bound.csv")?)?;
            if !quiet {
                write_bound_csv(&params, &cfg.bound.t_values, std::io::stdout().lock())?;
            }
            Ok(vec!["bound.csv".into()])
        }
    }
}

fn run_cli(cli: &Cli) -> Result<()> {
    let (mut cfg, config_sha256) = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        apply_seed(&mut cfg, seed);
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| SflError::io(cli.out.display().to_string(), e))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(SflError::config("--jobs", "must be >= 1"));
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| SflError::config("--jobs", e.to_string()))?;
    let files = pool.install(|| execute(&cli.command, &mut cfg, &cli.out, cli.quiet))?;

    let outputs = files
        .into_iter()
        .map(|file| {
            let path = cli.out.join(&file);
            let bytes = std::fs::read(&path).map_err(|e| SflError::io(path.display().to_string(), e))?;
            Ok(OutputFile {
                sha256: sha256_hex(&bytes),
                file,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let arguments = match &cli.command {
        Command::Simulate { rounds } => serde_json::json!({ "rounds": rounds }),
        Command::Train { scheme } => serde_json::json!({ "scheme": scheme }),
        _ => serde_json::json!({}),
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name(),
        arguments,
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        config_sha256,
        seed_override: cli.seed,
        resolved_config: serde_json::to_value(&cfg).unwrap_or(serde_json::Value::Null),
        outputs,
    };
    let path = cli.out.join("run_manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| SflError::io(path.display().to_string(), e))?;
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
