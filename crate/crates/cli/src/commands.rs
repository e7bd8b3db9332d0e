//! Subcommand bodies. Each validates its inputs, runs, and returns the tables
//! to write plus a one-line summary.

use std::path::PathBuf;

use ion_readout::classifiers::ClassifierSpec;
use ion_readout::distributions::convolve_power;
use ion_readout::shelving::{
    default_scheme, shelving_error, sweep_shelving, LevelScheme, OptimizeOptions, PulseSchedule,
};
use ion_readout::sweeps::{
    error_stats, optimize_threshold, sweep_adaptive, sweep_bin_time, sweep_efficiency,
    threshold_error_curve, BinTimeMethod, EfficiencyConfig, ErrorStats, SweepRecord,
};
use ion_readout::tracesim::{run_trials_recorded, TrialRecord};
use ion_readout::{
    bright_sum_pmf, dark_sum_pmf_with_decay, run_trials, sub_bin_models, CountTrace,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{sweep_table, Cell, Table};

/// A table and where it goes; `None` means standard output.
pub struct Output {
    pub path: Option<PathBuf>,
    pub table: Table,
}

pub struct Report {
    pub summary: String,
    pub outputs: Vec<Output>,
}

impl Report {
    fn single(cfg: &RunConfig, table: Table, summary: String) -> Self {
        Report {
            summary,
            outputs: vec![Output {
                path: cfg.output.clone(),
                table,
            }],
        }
    }
}

fn describe(stats: &ErrorStats) -> String {
    format!(
        "eps = {:.4e} [{:.4e}, {:.4e}] (95%), mean t_a = {:.4e} s",
        stats.eps, stats.eps_95.lo, stats.eps_95.hi, stats.mean_ta
    )
}

fn best_of(records: &[SweepRecord]) -> String {
    match records.iter().min_by(|a, b| a.stats.eps.total_cmp(&b.stats.eps)) {
        Some(r) => format!(
            "{} points; best {} at {} = {:.4e}: {}",
            records.len(),
            r.method,
            r.x_name,
            r.x_value,
            describe(&r.stats)
        ),
        None => "no points".to_string(),
    }
}

fn method_label(spec: &ClassifierSpec) -> &'static str {
    match spec {
        ClassifierSpec::Ml { include_decay: false, .. } => "ml-nodecay",
        other => other.name(),
    }
}

fn spec_x(spec: &ClassifierSpec) -> (&'static str, f64) {
    match *spec {
        ClassifierSpec::Threshold { sub_bins, .. } | ClassifierSpec::Ml { sub_bins, .. } => ("N", sub_bins as f64),
        ClassifierSpec::Adaptive { e_c, .. } => ("e_c", e_c),
    }
}

fn record_table(records: &[TrialRecord]) -> Table {
    let mut t = Table::new(&[
        "label",
        "stream_id",
        "n_subbins_used",
        "sum_counts",
        "verdict",
        "log_pB",
        "log_pD",
        "posterior_error",
    ]);
    for r in records {
        t.push(vec![
            r.label.as_str().into(),
            Cell::Int(r.stream_id),
            Cell::Int(r.n_subbins_used as u64),
            Cell::Int(r.sum_counts),
            r.verdict.as_str().into(),
            r.log_pb.into(),
            r.log_pd.into(),
            r.posterior_error.into(),
        ]);
    }
    t
}

pub fn simulate(cfg: &RunConfig) -> Result<Report, CliError> {
    let spec = cfg.classifier_spec()?;
    let classifier = spec.build(&cfg.params).map_err(CliError::config)?;
    let dump = cfg.map.path("dump");
    let (tally, records) = if dump.is_some() {
        let (t, r) = run_trials_recorded(&cfg.params, cfg.trials, classifier.as_ref(), cfg.seed, cfg.options)?;
        (t, Some(r))
    } else {
        (run_trials(&cfg.params, cfg.trials, classifier.as_ref(), cfg.seed, cfg.options)?, None)
    };
    let stats = error_stats(&tally)?;
    let (x_name, x_value) = spec_x(&spec);
    let record = SweepRecord {
        x_name: x_name.to_string(),
        x_value,
        method: method_label(&spec).to_string(),
        stats,
        eps_inf: None,
        t_1_1: None,
    };
    let summary = format!("simulate {}: {}", record.method, describe(&record.stats));
    let mut report = Report::single(cfg, sweep_table(&[record]), summary);
    if let (Some(path), Some(records)) = (dump, records) {
        report.outputs.push(Output {
            path: Some(path),
            table: record_table(&records),
        });
    }
    Ok(report)
}

pub fn classify(cfg: &RunConfig) -> Result<Report, CliError> {
    let path = cfg
        .map
        .path("trace_file")
        .ok_or_else(|| CliError::Config("missing trace_file (--trace)".into()))?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("trace_file {}: {e}", path.display())))?;
    let trace = CountTrace::parse(&text, cfg.params.sub_bin_duration)
        .map_err(|e| CliError::Config(format!("trace_file {}: {e}", path.display())))?;
    let spec = cfg.classifier_spec()?;
    let verdict = spec.build(&cfg.params).map_err(CliError::config)?.classify(&trace)?;
    let mut t = Table::new(&[
        "method",
        "verdict",
        "posterior_error",
        "n_subbins_used",
        "t_a_s",
        "log_pB",
        "log_pD",
    ]);
    t.push(vec![
        method_label(&spec).into(),
        verdict.label.as_str().into(),
        verdict.posterior_error.into(),
        Cell::Int(verdict.sub_bins_used as u64),
        verdict.readout_time.into(),
        verdict.log_pb.into(),
        verdict.log_pd.into(),
    ]);
    let posterior = verdict
        .posterior_error
        .map_or_else(|| "n/a".to_string(), |p| format!("{p:.4e}"));
    let summary = format!(
        "classify {}: {} (posterior error {posterior}), t_a = {:.4e} s",
        method_label(&spec),
        verdict.label,
        verdict.readout_time
    );
    Ok(Report::single(cfg, t, summary))
}

pub fn sweep_bin_time_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let m = &cfg.map;
    // A file default for another method falls back to threshold here.
    let chosen = m.flag("method").or_else(|| m.get("method").filter(|v| matches!(*v, "threshold" | "ml")));
    let method = match chosen.unwrap_or("threshold") {
        "threshold" => {
            m.reject("include_decay", "does not apply to method=threshold")?;
            if m.parsed_or("analytic", true)? {
                BinTimeMethod::ThresholdAnalytic
            } else {
                BinTimeMethod::ThresholdMonteCarlo
            }
        }
        "ml" => {
            m.reject("analytic", "applies only to method=threshold")?;
            BinTimeMethod::Ml {
                include_decay: m.parsed_or("include_decay", true)?,
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "method: sweep-bin-time supports threshold or ml, got {other:?}"
            )))
        }
    };
    for key in ["N", "n_c", "e_c", "t_c"] {
        m.reject(key, "does not apply to sweep-bin-time (use n_list)")?;
    }
    let n_list = cfg.n_list(100)?;
    let records = sweep_bin_time(&cfg.params, method, &n_list, cfg.trials, cfg.seed, cfg.options)?;
    let summary = format!("sweep-bin-time: {}", best_of(&records));
    Ok(Report::single(cfg, sweep_table(&records), summary))
}

pub fn sweep_adaptive_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let m = &cfg.map;
    if m.flag("method").is_some_and(|v| v != "adaptive") {
        return Err(CliError::Config("method: sweep-adaptive only runs method=adaptive".into()));
    }
    for key in ["N", "n_c", "e_c"] {
        m.reject(key, "does not apply to sweep-adaptive (use e_c_list)")?;
    }
    let e_c_list = cfg.f64_list("e_c_list", "log:1e-6:1e-1:21")?;
    let t_c: f64 = m.parsed_or("t_c", 500e-6)?;
    let include_decay: bool = m.parsed_or("include_decay", false)?;
    let records = sweep_adaptive(&cfg.params, &e_c_list, t_c, include_decay, cfg.trials, cfg.seed, cfg.options)
        .map_err(CliError::config)?;
    let summary = format!("sweep-adaptive: {}", best_of(&records));
    Ok(Report::single(cfg, sweep_table(&records), summary))
}

pub fn sweep_efficiency_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let m = &cfg.map;
    for key in ["method", "N", "n_c", "e_c", "t_c", "include_decay"] {
        m.reject(key, "does not apply to sweep-efficiency (ML with decay)")?;
    }
    let defaults = EfficiencyConfig::default();
    let config = EfficiencyConfig {
        eta0: m.parsed_or("eta0", defaults.eta0)?,
        detector_dark_rate: m.parsed_or("detector_dark_rate", defaults.detector_dark_rate)?,
        n_list: cfg.n_list(100)?,
    };
    let eta_list = cfg.f64_list("eta_list", "0.0019,0.005,0.01,0.02")?;
    if eta_list.iter().any(|&e| !(e > 0.0)) || !(config.eta0 > 0.0) {
        return Err(CliError::Config("eta_list, eta0: efficiencies must be > 0".into()));
    }
    let points = sweep_efficiency(&cfg.params, &eta_list, &config, cfg.trials, cfg.seed, cfg.options)?;

    let mut curve: Vec<SweepRecord> = Vec::new();
    let mut summary_table = Table::new(&["eta", "eps_inf", "t_1_1_s", "n_trials"]);
    for p in &points {
        for r in &p.curve {
            let mut r = r.clone();
            r.method = format!("ml-eta={:e}", p.eta);
            curve.push(r);
        }
        summary_table.push(vec![p.eta.into(), p.eps_inf.into(), p.t_1_1.into(), Cell::Int(cfg.trials)]);
    }
    let parts: Vec<String> = points
        .iter()
        .map(|p| {
            let t = p.t_1_1.map_or_else(|| "n/a".to_string(), |t| format!("{t:.3e} s"));
            format!("eta {:.3e}: eps_inf {:.3e}, t_1.1 {t}", p.eta, p.eps_inf)
        })
        .collect();
    let mut report = Report::single(cfg, sweep_table(&curve), format!("sweep-efficiency: {}", parts.join("; ")));
    let summary_path = m.path("summary_output").or_else(|| {
        cfg.output.as_ref().map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let ext = p.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
            p.with_file_name(format!("{stem}_summary{ext}"))
        })
    });
    report.outputs.push(Output {
        path: summary_path,
        table: summary_table,
    });
    Ok(report)
}

fn reject_all(cfg: &RunConfig, keys: &[&str], command: &str) -> Result<(), CliError> {
    for key in keys {
        cfg.map.reject(key, &format!("does not apply to {command}"))?;
    }
    Ok(())
}

pub fn optimize_threshold_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    reject_all(cfg, &["method", "N", "n_c", "e_c", "t_c", "include_decay"], "optimize-threshold")?;
    let n_list = cfg.n_list(100)?;
    let curve = threshold_error_curve(&cfg.params, &n_list)?;
    let best = optimize_threshold(&cfg.params, &n_list)?;
    let t_s = cfg.params.sub_bin_duration;
    let mut t = Table::new(&["N", "t_b_s", "n_c", "eps_B", "eps_D", "eps", "optimal"]);
    for p in &curve {
        t.push(vec![
            Cell::Int(p.sub_bins as u64),
            (p.sub_bins as f64 * t_s).into(),
            p.n_c.value().into(),
            p.eps_b.into(),
            p.eps_d.into(),
            p.eps.into(),
            Cell::Int(u64::from(p.sub_bins == best.sub_bins)),
        ]);
    }
    let summary = format!(
        "optimize-threshold: N = {} (t_b = {:.4e} s), n_c = {}, eps = {:.4e} (eps_B {:.3e}, eps_D {:.3e})",
        best.sub_bins,
        best.sub_bins as f64 * t_s,
        best.n_c,
        best.eps,
        best.eps_b,
        best.eps_d
    );
    Ok(Report::single(cfg, t, summary))
}

pub fn histogram(cfg: &RunConfig) -> Result<Report, CliError> {
    reject_all(cfg, &["method", "n_c", "e_c", "t_c", "include_decay"], "histogram")?;
    let n: usize = cfg.map.parsed_or("N", 42)?;
    if n == 0 || n > cfg.params.sub_bins {
        return Err(CliError::Config(format!("N: must be in 1..={}, got {n}", cfg.params.sub_bins)));
    }
    let bright = bright_sum_pmf(&cfg.params, n)?;
    let dark = dark_sum_pmf_with_decay(&cfg.params, n)?;
    let (_, dark_sub) = sub_bin_models(&cfg.params)?;
    let dark_plain = convolve_power(&dark_sub, n);
    let n_max = bright.n_max().max(dark.n_max()).max(dark_plain.n_max());
    let mut t = Table::new(&["n", "bright", "dark_decay", "dark_no_decay"]);
    for k in 0..=n_max {
        t.push(vec![
            Cell::Int(k as u64),
            bright.prob(k).into(),
            dark.prob(k).into(),
            dark_plain.prob(k).into(),
        ]);
    }
    let summary = format!(
        "histogram N = {n}: bright mean {:.3}, dark mean {:.4} with decay, {:.4} without",
        bright.mean(),
        dark.mean(),
        dark_plain.mean()
    );
    Ok(Report::single(cfg, t, summary))
}

fn load_scheme(cfg: &RunConfig) -> Result<LevelScheme, CliError> {
    match cfg.map.path("scheme_file") {
        Some(path) => LevelScheme::load(&path)
            .map_err(|e| CliError::Config(format!("scheme_file {}: {e}", path.display()))),
        None => Ok(default_scheme()),
    }
}

pub fn shelve_sweep(cfg: &RunConfig) -> Result<Report, CliError> {
    let m = &cfg.map;
    for key in ["method", "N", "n_c", "e_c", "t_c", "include_decay"] {
        m.reject(key, "does not apply to shelve-sweep")?;
    }
    let scheme = load_scheme(cfg)?;
    if let Some(path) = m.path("schedule_file") {
        for key in ["t_T_list", "modes"] {
            m.reject(key, "conflicts with schedule_file (the schedule fixes the transfer)")?;
        }
        let schedule = PulseSchedule::load(&path)
            .map_err(|e| CliError::Config(format!("schedule_file {}: {e}", path.display())))?;
        let error = shelving_error(&scheme, &schedule)?;
        let t_t = schedule.total_duration();
        let record = SweepRecord {
            x_name: "t_T".to_string(),
            x_value: t_t,
            method: "schedule".to_string(),
            stats: ErrorStats::analytic(error.eps_up, error.eps_down, t_t),
            eps_inf: None,
            t_1_1: None,
        };
        let summary = format!(
            "shelve-sweep schedule: eps_T = {:.4e} (down {:.3e}, up {:.3e}) over {:.4e} s",
            error.eps_t, error.eps_down, error.eps_up, t_t
        );
        return Ok(Report::single(cfg, sweep_table(&[record]), summary));
    }
    let t_list = cfg.f64_list("t_T_list", "log:2e-6:5e-3:12")?;
    if t_list.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(CliError::Config("t_T_list: transfer times must be finite and > 0".into()));
    }
    let modes = cfg.modes()?;
    let optima = sweep_shelving(&scheme, &t_list, &modes, &OptimizeOptions::default())?;
    let unconverged = optima.iter().filter(|o| !o.converged).count();
    if unconverged > 0 {
        log::warn!("{unconverged} shelving optimizations hit their evaluation cap");
    }
    let records: Vec<SweepRecord> = optima.iter().map(|o| o.to_record()).collect();
    let summary = format!("shelve-sweep: {}", best_of(&records));
    Ok(Report::single(cfg, sweep_table(&records), summary))
}
