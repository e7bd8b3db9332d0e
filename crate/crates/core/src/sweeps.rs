//! Error statistics, threshold optimization and the error-versus-time sweeps.
//!
//! Monte Carlo sweeps evaluate every grid point on the same traces: one
//! trace per trial is generated to the longest bin in the grid and each
//! shorter bin reads its prefix, and an adaptive sweep runs every cut-off
//! `e_c` along a single pass over each trace.

use serde::{Deserialize, Serialize};

use crate::classifiers::{bayes_error, stop_gap, cutoff_sub_bins, LikelihoodModels, LikelihoodState, Threshold};
use crate::distributions::{bright_sum_pmf, dark_sum_pmf_with_decay, ReadoutParams};
use crate::error::{ReadoutError, Result};
use crate::tracesim::{
    par_blocks, stream_id, with_workers, CampaignOptions, Label, LabelTally, TraceSimulator,
    TrialOutcomeTally,
};

/// Two-sided normal quantile for 68% coverage.
pub const Z68: f64 = 0.994_457_883_209_753;
/// Two-sided normal quantile for 95% coverage.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }
}

/// Wilson score interval for `errors` out of `trials` at normal quantile `z`.
pub fn wilson(errors: u64, trials: u64, z: f64) -> Interval {
    if trials == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Interval {
        lo: (center - half).max(0.0).min(p),
        hi: (center + half).min(1.0).max(p),
    }
}

/// Point estimates and intervals for one campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub trials_bright: u64,
    pub trials_dark: u64,
    pub errors_bright: u64,
    pub errors_dark: u64,
    pub eps_b: f64,
    pub eps_d: f64,
    pub eps: f64,
    pub eps_b_68: Interval,
    pub eps_b_95: Interval,
    pub eps_d_68: Interval,
    pub eps_d_95: Interval,
    pub eps_68: Interval,
    pub eps_95: Interval,
    pub mean_ta_bright: f64,
    pub mean_ta_dark: f64,
    pub mean_ta: f64,
    pub sd_ta_bright: f64,
    pub sd_ta_dark: f64,
    pub sd_ta: f64,
}

impl ErrorStats {
    /// Exact error rates from the analytic path; intervals collapse to the point.
    pub fn analytic(eps_b: f64, eps_d: f64, readout_time: f64) -> Self {
        let eps = 0.5 * (eps_b + eps_d);
        ErrorStats {
            trials_bright: 0,
            trials_dark: 0,
            errors_bright: 0,
            errors_dark: 0,
            eps_b,
            eps_d,
            eps,
            eps_b_68: Interval::point(eps_b),
            eps_b_95: Interval::point(eps_b),
            eps_d_68: Interval::point(eps_d),
            eps_d_95: Interval::point(eps_d),
            eps_68: Interval::point(eps),
            eps_95: Interval::point(eps),
            mean_ta_bright: readout_time,
            mean_ta_dark: readout_time,
            mean_ta: readout_time,
            sd_ta_bright: 0.0,
            sd_ta_dark: 0.0,
            sd_ta: 0.0,
        }
    }
}

fn mean_sd(sum: f64, sum_sq: f64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, var.sqrt())
}

/// The interval for the average of two rates. With equal trial counts
/// `eps` is a pooled proportion and gets its own Wilson interval; otherwise
/// the per-label bounds are averaged.
fn average_interval(b: &LabelTally, d: &LabelTally, z: f64) -> Interval {
    if b.trials == d.trials {
        wilson(b.misclassified + d.misclassified, b.trials + d.trials, z)
    } else {
        let (ib, id) = (wilson(b.misclassified, b.trials, z), wilson(d.misclassified, d.trials, z));
        Interval {
            lo: 0.5 * (ib.lo + id.lo),
            hi: 0.5 * (ib.hi + id.hi),
        }
    }
}

/// Error rates with Wilson 68% and 95% intervals, and readout-time moments.
pub fn error_stats(tally: &TrialOutcomeTally) -> Result<ErrorStats> {
    let (b, d) = (&tally.bright, &tally.dark);
    if b.trials == 0 || d.trials == 0 {
        return Err(ReadoutError::invalid("tally", "needs at least one trial per label"));
    }
    let eps_b = b.error_rate();
    let eps_d = d.error_rate();
    let (mean_b, sd_b) = mean_sd(
        tally.sum_readout_time(Label::Bright),
        tally.sum_sq_readout_time(Label::Bright),
        b.trials,
    );
    let (mean_d, sd_d) = mean_sd(
        tally.sum_readout_time(Label::Dark),
        tally.sum_sq_readout_time(Label::Dark),
        d.trials,
    );
    let (mean, sd) = mean_sd(
        tally.sum_readout_time(Label::Bright) + tally.sum_readout_time(Label::Dark),
        tally.sum_sq_readout_time(Label::Bright) + tally.sum_sq_readout_time(Label::Dark),
        b.trials + d.trials,
    );
    Ok(ErrorStats {
        trials_bright: b.trials,
        trials_dark: d.trials,
        errors_bright: b.misclassified,
        errors_dark: d.misclassified,
        eps_b,
        eps_d,
        eps: 0.5 * (eps_b + eps_d),
        eps_b_68: wilson(b.misclassified, b.trials, Z68),
        eps_b_95: wilson(b.misclassified, b.trials, Z95),
        eps_d_68: wilson(d.misclassified, d.trials, Z68),
        eps_d_95: wilson(d.misclassified, d.trials, Z95),
        eps_68: average_interval(b, d, Z68),
        eps_95: average_interval(b, d, Z95),
        mean_ta_bright: mean_b,
        mean_ta_dark: mean_d,
        mean_ta: mean,
        sd_ta_bright: sd_b,
        sd_ta_dark: sd_d,
        sd_ta: sd,
    })
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub x_name: String,
    pub x_value: f64,
    pub method: String,
    pub stats: ErrorStats,
    pub eps_inf: Option<f64>,
    pub t_1_1: Option<f64>,
}

/// Column header of the sweep CSV.
pub const SWEEP_CSV_HEADER: &str =
    "x_name,x_value,method,eps,eps_lo95,eps_hi95,eps_B,eps_D,mean_ta_s,mean_ta_bright_s,mean_ta_dark_s,n_trials";

impl SweepRecord {
    fn new(x_name: &str, x_value: f64, method: &str, stats: ErrorStats) -> Self {
        SweepRecord {
            x_name: x_name.to_string(),
            x_value,
            method: method.to_string(),
            stats,
            eps_inf: None,
            t_1_1: None,
        }
    }

    /// One CSV row matching [`SWEEP_CSV_HEADER`]; `n_trials` is per label.
    pub fn csv_row(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.x_name,
            self.x_value,
            self.method,
            s.eps,
            s.eps_95.lo,
            s.eps_95.hi,
            s.eps_b,
            s.eps_d,
            s.mean_ta,
            s.mean_ta_bright,
            s.mean_ta_dark,
            s.trials_bright.max(s.trials_dark)
        )
    }
}

/// Threshold error at one bin length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub sub_bins: usize,
    pub n_c: Threshold,
    pub eps_b: f64,
    pub eps_d: f64,
    pub eps: f64,
}

/// For each `N`, the half-integer threshold minimizing the analytic error.
///
/// `eps_B` is the bright-sum mass at or below `n_c`, `eps_D` the
/// decay-aware dark-sum mass above it. Thresholds run from 0.5 up to the
/// `1 - 1e-12` quantile of the bright sum; ties keep the smaller `n_c`.
pub fn threshold_error_curve(params: &ReadoutParams, n_list: &[usize]) -> Result<Vec<ThresholdPoint>> {
    n_list
        .iter()
        .map(|&n| {
            let bright = bright_sum_pmf(params, n)?;
            let dark = dark_sum_pmf_with_decay(params, n)?;
            let top = bright.quantile(1.0 - 1e-12).max(1);
            let mut best: Option<ThresholdPoint> = None;
            for k in 0..top {
                let eps_b = bright.cdf(k);
                let eps_d = dark.survival(k);
                let eps = 0.5 * (eps_b + eps_d);
                if best.is_none_or(|b| eps < b.eps) {
                    best = Some(ThresholdPoint {
                        sub_bins: n,
                        n_c: Threshold::above(k as u32),
                        eps_b,
                        eps_d,
                        eps,
                    });
                }
            }
            best.ok_or_else(|| ReadoutError::invalid("n_c", "no threshold candidates"))
        })
        .collect()
}

/// Global analytic optimum over `n_list`; ties go to smaller `N`, then smaller `n_c`.
pub fn optimize_threshold(params: &ReadoutParams, n_list: &[usize]) -> Result<ThresholdPoint> {
    if n_list.is_empty() {
        return Err(ReadoutError::invalid("N_range", "empty"));
    }
    let mut sorted = n_list.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let curve = threshold_error_curve(params, &sorted)?;
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.eps < best.eps {
            best = *p;
        }
    }
    Ok(best)
}

/// Per-bin-length tallies from one pass over shared traces.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixTallies {
    pub n_list: Vec<usize>,
    pub ml: Vec<TrialOutcomeTally>,
    pub threshold: Option<Vec<TrialOutcomeTally>>,
}

fn sorted_unique(n_list: &[usize], params: &ReadoutParams) -> Result<Vec<usize>> {
    let mut sorted = n_list.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    match (sorted.first(), sorted.last()) {
        (Some(&lo), Some(&hi)) if lo >= 1 && hi <= params.sub_bins => Ok(sorted),
        (None, _) => Err(ReadoutError::invalid("N_list", "empty")),
        _ => Err(ReadoutError::invalid(
            "N_list",
            format!("values must lie in 1..={}", params.sub_bins),
        )),
    }
}

/// Fixed-bin ML (and optionally threshold) outcomes at every `N` in
/// `n_list`, evaluated on prefixes of the same traces.
///
/// `thresholds`, when given, holds one `n_c` per entry of the sorted list.
pub fn bin_time_campaign(
    params: &ReadoutParams,
    n_list: &[usize],
    thresholds: Option<&[Threshold]>,
    include_decay: bool,
    n_trials_per_label: u64,
    master_seed: u64,
    options: CampaignOptions,
) -> Result<PrefixTallies> {
    let n_list = sorted_unique(n_list, params)?;
    if let Some(t) = thresholds {
        if t.len() != n_list.len() {
            return Err(ReadoutError::invalid("thresholds", "need one per bin length"));
        }
    }
    if n_trials_per_label == 0 {
        return Err(ReadoutError::invalid("n_trials", "must be >= 1"));
    }
    let sim = TraceSimulator::new(params, options.decay_mode)?;
    let models = LikelihoodModels::from_params(params)?;
    let t_s = params.sub_bin_duration;
    let len = *n_list.last().unwrap_or(&1);
    let k = n_list.len();
    let with_thr = thresholds.is_some();
    let empty = (vec![TrialOutcomeTally::new(t_s); k], vec![TrialOutcomeTally::new(t_s); if with_thr { k } else { 0 }]);

    let run = || -> Result<(Vec<TrialOutcomeTally>, Vec<TrialOutcomeTally>)> {
        let mut acc = empty.clone();
        for label in [Label::Bright, Label::Dark] {
            let part = par_blocks(
                n_trials_per_label,
                empty.clone(),
                |range| {
                    let (mut ml, mut thr) = empty.clone();
                    for index in range {
                        let mut state = LikelihoodState::new(&models);
                        let mut total = 0u64;
                        let mut next = 0;
                        for n in sim.stream(label, stream_id(label, index), master_seed, len) {
                            state.push(n);
                            total += n as u64;
                            if state.sub_bins() == n_list[next] {
                                let bright = if include_decay {
                                    state.favors_bright_with_decay()
                                } else {
                                    state.log_pb() >= state.log_pd(false)
                                };
                                let verdict = if bright { Label::Bright } else { Label::Dark };
                                ml[next].label_mut(label).record(verdict == label, n_list[next]);
                                if let Some(t) = thresholds {
                                    let verdict = if total > t[next].floor() as u64 {
                                        Label::Bright
                                    } else {
                                        Label::Dark
                                    };
                                    thr[next].label_mut(label).record(verdict == label, n_list[next]);
                                }
                                next += 1;
                            }
                        }
                    }
                    Ok((ml, thr))
                },
                merge_tallies,
            )?;
            merge_tallies(&mut acc, part);
        }
        Ok(acc)
    };
    let (ml, thr) = with_workers(options.workers, run)??;
    Ok(PrefixTallies {
        n_list,
        ml,
        threshold: with_thr.then_some(thr),
    })
}

fn merge_tallies(
    acc: &mut (Vec<TrialOutcomeTally>, Vec<TrialOutcomeTally>),
    part: (Vec<TrialOutcomeTally>, Vec<TrialOutcomeTally>),
) {
    for (a, p) in acc.0.iter_mut().zip(&part.0) {
        a.merge(p);
    }
    for (a, p) in acc.1.iter_mut().zip(&part.1) {
        a.merge(p);
    }
}

/// Analysis method for a bin-time sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinTimeMethod {
    /// Threshold optimized per `N`, error computed from the summed-count PMFs.
    ThresholdAnalytic,
    /// Threshold optimized per `N` analytically, error measured by Monte Carlo.
    ThresholdMonteCarlo,
    /// Fixed-bin maximum likelihood.
    Ml { include_decay: bool },
}

impl BinTimeMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BinTimeMethod::ThresholdAnalytic => "threshold-analytic",
            BinTimeMethod::ThresholdMonteCarlo => "threshold",
            BinTimeMethod::Ml { include_decay: true } => "ml",
            BinTimeMethod::Ml { include_decay: false } => "ml-nodecay",
        }
    }
}

/// Error versus fixed bin time `t_b = N t_s`.
pub fn sweep_bin_time(
    params: &ReadoutParams,
    method: BinTimeMethod,
    n_list: &[usize],
    n_trials_per_label: u64,
    master_seed: u64,
    options: CampaignOptions,
) -> Result<Vec<SweepRecord>> {
    let n_sorted = sorted_unique(n_list, params)?;
    let t_s = params.sub_bin_duration;
    let records = match method {
        BinTimeMethod::ThresholdAnalytic => threshold_error_curve(params, &n_sorted)?
            .into_iter()
            .map(|p| {
                let t_b = p.sub_bins as f64 * t_s;
                SweepRecord::new("t_b", t_b, method.name(), ErrorStats::analytic(p.eps_b, p.eps_d, t_b))
            })
            .collect(),
        BinTimeMethod::ThresholdMonteCarlo => {
            let thresholds: Vec<Threshold> = threshold_error_curve(params, &n_sorted)?
                .iter()
                .map(|p| p.n_c)
                .collect();
            let tallies = bin_time_campaign(
                params,
                &n_sorted,
                Some(&thresholds),
                false,
                n_trials_per_label,
                master_seed,
                options,
            )?;
            records_from(&tallies.n_list, tallies.threshold.as_deref().unwrap_or(&[]), t_s, method.name())?
        }
        BinTimeMethod::Ml { include_decay } => {
            let tallies = bin_time_campaign(
                params,
                &n_sorted,
                None,
                include_decay,
                n_trials_per_label,
                master_seed,
                options,
            )?;
            records_from(&tallies.n_list, &tallies.ml, t_s, method.name())?
        }
    };
    Ok(records)
}

fn records_from(
    n_list: &[usize],
    tallies: &[TrialOutcomeTally],
    t_s: f64,
    method: &str,
) -> Result<Vec<SweepRecord>> {
    n_list
        .iter()
        .zip(tallies)
        .map(|(&n, t)| Ok(SweepRecord::new("t_b", n as f64 * t_s, method, error_stats(t)?)))
        .collect()
}

/// Adaptive-readout outcomes at every `e_c`, from one pass per trace.
///
/// Returns one tally per entry of `e_c_list`, in the given order.
pub fn adaptive_campaign(
    params: &ReadoutParams,
    e_c_list: &[f64],
    t_c: f64,
    include_decay: bool,
    n_trials_per_label: u64,
    master_seed: u64,
    options: CampaignOptions,
) -> Result<Vec<TrialOutcomeTally>> {
    if e_c_list.is_empty() {
        return Err(ReadoutError::invalid("e_c_list", "empty"));
    }
    if let Some(bad) = e_c_list.iter().find(|e| !(**e >= 0.0 && **e < 0.5)) {
        return Err(ReadoutError::invalid("e_c", format!("must be in [0, 0.5), got {bad}")));
    }
    if n_trials_per_label == 0 {
        return Err(ReadoutError::invalid("n_trials", "must be >= 1"));
    }
    let t_s = params.sub_bin_duration;
    let cutoff = cutoff_sub_bins(t_c, t_s)?;
    if cutoff > params.sub_bins {
        return Err(ReadoutError::invalid("t_c", "exceeds the recorded trace length"));
    }
    let sim = TraceSimulator::new(params, options.decay_mode)?;
    let models = LikelihoodModels::from_params(params)?;

    // Largest cut-off first: it stops earliest.
    let mut order: Vec<usize> = (0..e_c_list.len()).collect();
    order.sort_by(|&a, &b| e_c_list[b].total_cmp(&e_c_list[a]));
    let gaps: Vec<f64> = order.iter().map(|&i| stop_gap(e_c_list[i])).collect();
    let k = e_c_list.len();
    let empty = vec![TrialOutcomeTally::new(t_s); k];

    let run = || -> Result<Vec<TrialOutcomeTally>> {
        let mut acc = empty.clone();
        for label in [Label::Bright, Label::Dark] {
            let part = par_blocks(
                n_trials_per_label,
                empty.clone(),
                |range| {
                    let mut out = empty.clone();
                    for index in range {
                        let mut state = LikelihoodState::new(&models);
                        let mut next = 0;
                        let mut stream = sim.stream(label, stream_id(label, index), master_seed, cutoff);
                        while next < k {
                            let Some(n) = stream.next() else { break };
                            state.push(n);
                            let (log_pb, log_pd) = (state.log_pb(), state.log_pd(include_decay));
                            let gap = (log_pb - log_pd).abs();
                            let at_cutoff = state.sub_bins() == cutoff;
                            while next < k
                                && (at_cutoff
                                    || (gap > gaps[next]
                                        && bayes_error(log_pb, log_pd) < e_c_list[order[next]]))
                            {
                                let verdict = if log_pb >= log_pd { Label::Bright } else { Label::Dark };
                                out[order[next]]
                                    .label_mut(label)
                                    .record(verdict == label, state.sub_bins());
                                next += 1;
                            }
                        }
                    }
                    Ok(out)
                },
                |acc, part| {
                    for (a, p) in acc.iter_mut().zip(&part) {
                        a.merge(p);
                    }
                },
            )?;
            for (a, p) in acc.iter_mut().zip(&part) {
                a.merge(p);
            }
        }
        Ok(acc)
    };
    with_workers(options.workers, run)?
}

/// Error and mean readout time versus the adaptive cut-off `e_c`.
pub fn sweep_adaptive(
    params: &ReadoutParams,
    e_c_list: &[f64],
    t_c: f64,
    include_decay: bool,
    n_trials_per_label: u64,
    master_seed: u64,
    options: CampaignOptions,
) -> Result<Vec<SweepRecord>> {
    if let Some(bad) = e_c_list.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
        return Err(ReadoutError::invalid("e_c", format!("must be in (0, 0.5), got {bad}")));
    }
    let tallies = adaptive_campaign(
        params,
        e_c_list,
        t_c,
        include_decay,
        n_trials_per_label,
        master_seed,
        options,
    )?;
    let mut records = e_c_list
        .iter()
        .zip(&tallies)
        .map(|(&e_c, t)| Ok(SweepRecord::new("e_c", e_c, "adaptive", error_stats(t)?)))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.x_value.total_cmp(&b.x_value));
    records.dedup_by(|a, b| a.x_value == b.x_value);
    Ok(records)
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Settings for [`sweep_efficiency`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyConfig {
    /// Collection efficiency of the base parameters.
    pub eta0: f64,
    /// Detector dark-count rate included in `dark_rate`, held fixed, counts/s.
    pub detector_dark_rate: f64,
    /// Bin lengths of the ML sweep at each efficiency.
    pub n_list: Vec<usize>,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        EfficiencyConfig {
            eta0: 0.19e-2,
            detector_dark_rate: 8.2,
            n_list: (1..=100).collect(),
        }
    }
}

/// ML bin-time curve at one efficiency with its asymptote and `t_1.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub eta: f64,
    pub eps_inf: f64,
    /// First bin time with `eps <= 1.1 eps_inf`.
    pub t_1_1: Option<f64>,
    pub curve: Vec<SweepRecord>,
}

/// Base parameters rescaled to collection efficiency `eta`: fluorescence and
/// scattered background scale with `eta / eta0`, detector dark counts do not.
pub fn scale_efficiency(base: &ReadoutParams, eta: f64, config: &EfficiencyConfig) -> Result<ReadoutParams> {
    if !(eta > 0.0) || !(config.eta0 > 0.0) {
        return Err(ReadoutError::invalid("eta", "efficiencies must be > 0"));
    }
    let scale = eta / config.eta0;
    let scatter = (base.dark_rate - config.detector_dark_rate).max(0.0);
    let fixed = base.dark_rate - scatter;
    Ok(ReadoutParams {
        bright_rate: base.bright_rate * scale,
        dark_rate: fixed + scatter * scale,
        ..base.clone()
    })
}

/// Mean of `eps` over the final 20% of the grid, and the first bin time
/// reaching `1.1` times that value.
pub fn asymptote(curve: &[SweepRecord]) -> (f64, Option<f64>) {
    let tail = curve.len().div_ceil(5).max(1);
    let eps_inf = curve[curve.len() - tail..].iter().map(|r| r.stats.eps).sum::<f64>() / tail as f64;
    let t_1_1 = curve
        .iter()
        .find(|r| r.stats.eps <= 1.1 * eps_inf)
        .map(|r| r.x_value);
    (eps_inf, t_1_1)
}

/// Asymptotic ML error and `t_1.1` versus collection efficiency.
pub fn sweep_efficiency(
    base: &ReadoutParams,
    eta_list: &[f64],
    config: &EfficiencyConfig,
    n_trials_per_label: u64,
    master_seed: u64,
    options: CampaignOptions,
) -> Result<Vec<EfficiencyPoint>> {
    if eta_list.is_empty() {
        return Err(ReadoutError::invalid("eta_list", "empty"));
    }
    let mut etas = eta_list.to_vec();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    etas.iter()
        .map(|&eta| {
            let params = scale_efficiency(base, eta, config)?;
            let mut curve = sweep_bin_time(
                &params,
                BinTimeMethod::Ml { include_decay: true },
                &config.n_list,
                n_trials_per_label,
                master_seed,
                options,
            )?;
            let (eps_inf, t_1_1) = asymptote(&curve);
            for r in &mut curve {
                r.eps_inf = Some(eps_inf);
                r.t_1_1 = t_1_1;
            }
            Ok(EfficiencyPoint {
                eta,
                eps_inf,
                t_1_1,
                curve,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tally(trials: u64, err_b: u64, err_d: u64) -> TrialOutcomeTally {
        let mut t = TrialOutcomeTally::new(10e-6);
        t.bright = LabelTally {
            trials,
            misclassified: err_b,
            sum_sub_bins: trials * 5,
            sum_sq_sub_bins: trials as u128 * 25,
        };
        t.dark = LabelTally {
            trials,
            misclassified: err_d,
            sum_sub_bins: trials * 20,
            sum_sq_sub_bins: trials as u128 * 400,
        };
        t
    }

    #[test]
    fn wilson_upper_bound_at_zero_errors() {
        let i = wilson(0, 1_000_000, Z95);
        assert_eq!(i.lo, 0.0);
        let expected = Z95 * Z95 / (1e6 + Z95 * Z95);
        assert!((i.hi - expected).abs() < 1e-12);
        assert!((i.hi - 3.84e-6).abs() < 0.01e-6);
    }

    #[test]
    fn stats_of_symmetric_tally() {
        let s = error_stats(&tally(1000, 7, 7)).unwrap();
        assert_eq!(s.eps, s.eps_b);
        assert_eq!(s.eps, s.eps_d);
        assert!((s.mean_ta_bright - 50e-6).abs() < 1e-15);
        assert!((s.mean_ta - 125e-6).abs() < 1e-15);
        assert!(s.sd_ta_bright < 1e-12);
    }

    #[test]
    fn stats_small_sample() {
        let s = error_stats(&tally(2, 1, 1)).unwrap();
        assert_eq!(s.eps, 0.5);
        for i in [s.eps_68, s.eps_95, s.eps_b_95, s.eps_d_68] {
            assert!(i.lo >= 0.0 && i.hi <= 1.0 && i.contains(0.5));
        }
    }

    #[test]
    fn stats_need_both_labels() {
        let mut t = tally(3, 0, 0);
        t.dark = LabelTally::default();
        assert!(error_stats(&t).is_err());
    }

    #[test]
    fn wilson_half_width_scales_as_inverse_root_n() {
        let small = wilson(100, 10_000, Z95).half_width();
        let large = wilson(10_000, 1_000_000, Z95).half_width();
        assert!((small / large - 10.0).abs() < 0.05);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-6, 1e-1, 6);
        assert_eq!(g.len(), 6);
        assert!((g[0] - 1e-6).abs() < 1e-18);
        assert!((g[5] - 1e-1).abs() < 1e-14);
        assert!((g[1] - 1e-5).abs() < 1e-17);
    }

    #[test]
    fn efficiency_scaling_keeps_detector_counts() {
        let base = ReadoutParams::calcium();
        let cfg = EfficiencyConfig::default();
        let same = scale_efficiency(&base, cfg.eta0, &cfg).unwrap();
        assert_eq!(same, base);
        let ten = scale_efficiency(&base, 10.0 * cfg.eta0, &cfg).unwrap();
        assert!((ten.bright_rate - 558_000.0).abs() < 1e-6);
        assert!((ten.dark_rate - (8.2 + 433.8 * 10.0)).abs() < 1e-9);
    }

    #[test]
    fn short_bin_threshold_overlaps() {
        let p = threshold_error_curve(&ReadoutParams::calcium(), &[1]).unwrap()[0];
        assert_eq!(p.n_c, Threshold::above(0));
        assert!(p.eps >= 0.1);
        assert!((p.eps_b - (-0.558f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn optimize_threshold_rejects_empty_range() {
        assert!(optimize_threshold(&ReadoutParams::calcium(), &[]).is_err());
    }

    #[test]
    fn no_background_no_decay_threshold() {
        let params = ReadoutParams {
            dark_rate: 0.0,
            shelf_lifetime: f64::INFINITY,
            ..ReadoutParams::calcium()
        };
        let curve = threshold_error_curve(&params, &(1..=40).collect::<Vec<_>>()).unwrap();
        assert!(curve.iter().all(|p| p.n_c == Threshold::above(0)));
        assert!(curve.windows(2).all(|w| w[1].eps < w[0].eps));
        let best = optimize_threshold(&params, &(1..=40).collect::<Vec<_>>()).unwrap();
        assert_eq!(best.sub_bins, 40);
    }
    fn small_params() -> ReadoutParams {
        ReadoutParams {
            bright_rate: 3.0e5,
            dark_rate: 5.0e3,
            shelf_lifetime: 2e-3,
            sub_bin_duration: 10e-6,
            sub_bins: 6,
            dark_count_pmf: None,
        }
    }

    // Enumerate every count pattern of a 3-sub-bin trace with independent
    // per-sub-bin probabilities and integrate the decay time directly.
    #[test]
    fn optimize_threshold_matches_enumeration() {
        let params = small_params();
        let best = optimize_threshold(&params, &[1, 2, 3]).unwrap();
        let (rb, rd, tau, ts) = (3.0e5, 5.0e3, 2e-3, 10e-6);
        let pois = |m: f64, k: u32| (-m).exp() * m.powi(k as i32) / (1..=k).map(f64::from).product::<f64>();
        let mut brute_best = (f64::INFINITY, 0usize, 0u32);
        for n in 1..=3usize {
            let t_b = n as f64 * ts;
            for k in 0..40u32 {
                let eps_b: f64 = (0..=k).map(|j| pois(rb * t_b, j)).sum();
                // Dark survival: no decay, or decay at t with the bright rate after.
                let surv = |m: f64| 1.0 - (0..=k).map(|j| pois(m, j)).sum::<f64>();
                let steps = 20_000;
                let h = t_b / steps as f64;
                let decay: f64 = (0..steps)
                    .map(|i| {
                        let t = (i as f64 + 0.5) * h;
                        (h / tau) * surv(rd * t + rb * (t_b - t))
                    })
                    .sum();
                let eps_d = (1.0 - t_b / tau) * surv(rd * t_b) + decay;
                let eps = 0.5 * (eps_b + eps_d);
                if eps < brute_best.0 * (1.0 - 1e-9) {
                    brute_best = (eps, n, k);
                }
            }
        }
        assert_eq!(best.sub_bins, brute_best.1);
        assert_eq!(best.n_c, Threshold::above(brute_best.2));
        assert!((best.eps - brute_best.0).abs() < 1e-5 * brute_best.0, "{} vs {}", best.eps, brute_best.0);
    }

    #[test]
    fn adaptive_campaign_matches_single_classifier() {
        let params = ReadoutParams::calcium();
        let e_c = [1e-2, 1e-4, 1e-3, 1e-6];
        let t_c = 1.5e-3;
        let tallies =
            adaptive_campaign(&params, &e_c, t_c, true, 300, 11, CampaignOptions::default()).unwrap();
        let sim = TraceSimulator::new(&params, Default::default()).unwrap();
        let models = LikelihoodModels::from_params(&params).unwrap();
        for (i, &e) in e_c.iter().enumerate() {
            let mut expect = TrialOutcomeTally::new(params.sub_bin_duration);
            for label in [Label::Bright, Label::Dark] {
                for index in 0..300 {
                    let stream = sim.stream(label, stream_id(label, index), 11, 150);
                    let v = crate::classifiers::adaptive_classify(stream, &models, e, t_c, true).unwrap();
                    expect.label_mut(label).record(v.label == label, v.sub_bins_used);
                }
            }
            assert_eq!(tallies[i], expect, "e_c = {e}");
        }
    }

    #[test]
    fn prefix_campaign_matches_single_classifier() {
        let params = ReadoutParams::calcium();
        let n_list = [30, 5, 12];
        let thr = [Threshold::above(1), Threshold::above(2), Threshold::above(4)];
        let t = bin_time_campaign(&params, &n_list, Some(&thr), true, 200, 5, CampaignOptions::default())
            .unwrap();
        assert_eq!(t.n_list, vec![5, 12, 30]);
        let sim = TraceSimulator::new(&params, Default::default()).unwrap();
        let models = LikelihoodModels::from_params(&params).unwrap();
        for (i, &n) in t.n_list.iter().enumerate() {
            let mut ml = TrialOutcomeTally::new(params.sub_bin_duration);
            let mut th = TrialOutcomeTally::new(params.sub_bin_duration);
            for label in [Label::Bright, Label::Dark] {
                for index in 0..200 {
                    let trace = sim.trace_len(label, stream_id(label, index), 5, n);
                    let v = crate::classifiers::ml_classify(&trace, &models, true);
                    ml.label_mut(label).record(v.label == label, n);
                    let v = crate::classifiers::threshold_classify(&trace, n, thr[i]).unwrap();
                    th.label_mut(label).record(v.label == label, n);
                }
            }
            assert_eq!(t.ml[i], ml);
            assert_eq!(t.threshold.as_ref().unwrap()[i], th);
        }
    }
}
