//! `ion-readout`: readout campaigns, sweeps and shelving optimization from the
//! command line. Exit status 0 on success, 2 on configuration errors, 3 on
//! runtime errors.

// Negated comparisons also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Report;
use crate::config::{ConfigMap, RunConfig};
use crate::error::CliError;
use crate::output::{render, write_atomic, Meta};

#[derive(Parser)]
#[command(name = "ion-readout", version, about = "Trapped-ion qubit readout campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo error and readout time of one classifier.
    Simulate(Opts),
    /// Classify one recorded trace.
    Classify(Opts),
    /// Error versus fixed bin time for threshold or ML.
    SweepBinTime(Opts),
    /// Error and mean readout time versus the adaptive stopping threshold.
    SweepAdaptive(Opts),
    /// Asymptotic ML error and t_1.1 versus collection efficiency.
    SweepEfficiency(Opts),
    /// Best bin length and count threshold from the count distributions.
    OptimizeThreshold(Opts),
    /// Summed-count distributions for bright and dark ions.
    Histogram(Opts),
    /// Optimized shelving transfer error versus transfer time.
    ShelveSweep(Opts),
}

impl Command {
    fn split(&self) -> (&'static str, &Opts) {
        match self {
            Command::Simulate(o) => ("simulate", o),
            Command::Classify(o) => ("classify", o),
            Command::SweepBinTime(o) => ("sweep-bin-time", o),
            Command::SweepAdaptive(o) => ("sweep-adaptive", o),
            Command::SweepEfficiency(o) => ("sweep-efficiency", o),
            Command::OptimizeThreshold(o) => ("optimize-threshold", o),
            Command::Histogram(o) => ("histogram", o),
            Command::ShelveSweep(o) => ("shelve-sweep", o),
        }
    }
}

/// Options shared by every subcommand. Each maps onto a config key; values
/// are validated together with the config file.
#[derive(Args, Debug, Default)]
struct Opts {
    /// key = value configuration file; flags override it
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Extra key=value settings, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long, value_name = "COUNTS_PER_S")]
    bright_rate: Option<String>,
    #[arg(long, value_name = "COUNTS_PER_S")]
    dark_rate: Option<String>,
    /// Shelf lifetime, s
    #[arg(long = "tau", value_name = "S")]
    shelf_lifetime: Option<String>,
    /// Sub-bin duration, s
    #[arg(long = "ts", value_name = "S")]
    sub_bin_duration: Option<String>,
    #[arg(long)]
    sub_bins: Option<String>,
    /// Empirical detector counts per sub-bin, one integer per line
    #[arg(long = "dark-counts", value_name = "FILE")]
    dark_count_file: Option<String>,
    /// exact or sub-bin
    #[arg(long)]
    decay_mode: Option<String>,

    /// threshold, ml or adaptive
    #[arg(long)]
    method: Option<String>,
    #[arg(long = "N")]
    n: Option<String>,
    #[arg(long = "nc")]
    n_c: Option<String>,
    #[arg(long, value_name = "BOOL")]
    include_decay: Option<String>,
    #[arg(long = "ec")]
    e_c: Option<String>,
    /// Adaptive cut-off time, s
    #[arg(long = "tc", value_name = "S")]
    t_c: Option<String>,
    /// Sub-bin counts to classify, one integer per line
    #[arg(long = "trace", value_name = "FILE")]
    trace_file: Option<String>,

    /// Trials per prepared state
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    threads: Option<String>,

    #[arg(long)]
    n_list: Option<String>,
    #[arg(long = "ec-list")]
    e_c_list: Option<String>,
    #[arg(long)]
    eta_list: Option<String>,
    #[arg(long)]
    eta0: Option<String>,
    #[arg(long)]
    detector_dark_rate: Option<String>,
    #[arg(long, value_name = "BOOL")]
    analytic: Option<String>,
    /// Shelving transfer times, s
    #[arg(long = "tt-list")]
    t_t_list: Option<String>,
    /// continuous, pulsed or both
    #[arg(long)]
    modes: Option<String>,
    #[arg(long = "scheme", value_name = "FILE")]
    scheme_file: Option<String>,
    #[arg(long = "schedule", value_name = "FILE")]
    schedule_file: Option<String>,

    #[arg(long, short)]
    output: Option<String>,
    /// csv or json
    #[arg(long)]
    emit: Option<String>,
    /// Per-trial records (simulate)
    #[arg(long)]
    dump: Option<String>,
    /// Efficiency summary file; defaults next to --output
    #[arg(long)]
    summary_output: Option<String>,
}

impl Opts {
    fn flags(&self) -> [(&'static str, &Option<String>); 31] {
        [
            ("bright_rate", &self.bright_rate),
            ("dark_rate", &self.dark_rate),
            ("shelf_lifetime", &self.shelf_lifetime),
            ("sub_bin_duration", &self.sub_bin_duration),
            ("sub_bins", &self.sub_bins),
            ("dark_count_file", &self.dark_count_file),
            ("decay_mode", &self.decay_mode),
            ("method", &self.method),
            ("N", &self.n),
            ("n_c", &self.n_c),
            ("include_decay", &self.include_decay),
            ("e_c", &self.e_c),
            ("t_c", &self.t_c),
            ("trace_file", &self.trace_file),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("n_list", &self.n_list),
            ("e_c_list", &self.e_c_list),
            ("eta_list", &self.eta_list),
            ("eta0", &self.eta0),
            ("detector_dark_rate", &self.detector_dark_rate),
            ("analytic", &self.analytic),
            ("t_T_list", &self.t_t_list),
            ("modes", &self.modes),
            ("scheme_file", &self.scheme_file),
            ("schedule_file", &self.schedule_file),
            ("output", &self.output),
            ("emit", &self.emit),
            ("dump", &self.dump),
            ("summary_output", &self.summary_output),
        ]
    }

    fn config_map(&self) -> Result<ConfigMap, CliError> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::load(path)?,
            None => ConfigMap::default(),
        };
        for entry in &self.set {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {entry:?}")))?;
            map.set_flag(k.trim(), v.trim())?;
        }
        for (key, value) in self.flags() {
            if let Some(v) = value {
                map.set_flag(key, v)?;
            }
        }
        Ok(map)
    }
}

fn check_output_dirs(cfg: &RunConfig) -> Result<(), CliError> {
    for key in ["output", "dump", "summary_output"] {
        if let Some(path) = cfg.map.path(key) {
            let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
            if parent.is_some_and(|p| !p.is_dir()) {
                return Err(CliError::Config(format!("{key}: directory of {} does not exist", path.display())));
            }
        }
    }
    Ok(())
}

fn run(command: &str, opts: &Opts) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(command, opts.config_map()?)?;
    check_output_dirs(&cfg)?;
    let report: Report = match command {
        "simulate" => commands::simulate(&cfg)?,
        "classify" => commands::classify(&cfg)?,
        "sweep-bin-time" => commands::sweep_bin_time_cmd(&cfg)?,
        "sweep-adaptive" => commands::sweep_adaptive_cmd(&cfg)?,
        "sweep-efficiency" => commands::sweep_efficiency_cmd(&cfg)?,
        "optimize-threshold" => commands::optimize_threshold_cmd(&cfg)?,
        "histogram" => commands::histogram(&cfg)?,
        "shelve-sweep" => commands::shelve_sweep(&cfg)?,
        other => unreachable!("unhandled command {other}"),
    };
    let meta = Meta {
        command: command.to_string(),
        config_sha256: cfg.config_hash.clone(),
        seed: cfg.seed,
    };
    let mut to_stdout = false;
    let stdout = std::io::stdout();
    for out in &report.outputs {
        let bytes = render(&out.table, &meta, cfg.emit)?;
        match &out.path {
            Some(path) => write_atomic(path, &bytes)?,
            None => {
                to_stdout = true;
                stdout
                    .lock()
                    .write_all(&bytes)
                    .map_err(|e| CliError::Runtime(format!("stdout: {e}")))?;
            }
        }
    }
    // Keep stdout parseable when it carries a table.
    if to_stdout {
        eprintln!("{}", report.summary);
    } else {
        println!("{}", report.summary);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, opts) = cli.command.split();
    match run(command, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ion-readout {command}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
