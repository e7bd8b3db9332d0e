//! Photon-count trace simulation and deterministic Monte Carlo campaigns.
//!
//! Every trial owns an independent random stream keyed by
//! `(master_seed, stream_id)` with `stream_id = 2 * index + label`, so a
//! campaign's tallies do not depend on how trials are spread over workers.
//! Within a trace the decay time is drawn first and the sub-bins are then
//! drawn in time order, so a shorter trace is always a prefix of a longer one
//! from the same stream.

use rand::RngCore;
use rand_distr::{Distribution, Poisson};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{Classifier, Verdict};
use crate::distributions::{CountPmf, ReadoutParams};
use crate::error::{ReadoutError, Result};

/// Name of the per-trial generator, recorded in output metadata.
pub const RNG_NAME: &str = "pcg64 (xsl-rr 128/64), per-trial stream from splitmix64(master_seed, stream_id)";

/// Trials handled by one unit of parallel work.
const BLOCK: u64 = 4096;

/// Prepared qubit state, or classifier verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bright,
    Dark,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bright => "bright",
            Label::Dark => "dark",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground truth carried by simulated traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub label: Label,
    /// Shelf decay time measured from the start of the trace, if it decayed.
    pub decay_time: Option<f64>,
}

/// Counts per sub-bin for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTrace {
    pub counts: Vec<u32>,
    pub t_s: f64,
    pub truth: Option<Truth>,
}

impl CountTrace {
    pub fn new(counts: Vec<u32>, t_s: f64) -> Self {
        CountTrace {
            counts,
            t_s,
            truth: None,
        }
    }

    /// The first `n` sub-bins.
    pub fn prefix(&self, n: usize) -> Result<&[u32]> {
        self.counts.get(..n).ok_or(ReadoutError::TraceTooShort {
            requested: n,
            available: self.counts.len(),
        })
    }

    /// Parses one non-negative count per line (`#` comments and blank lines skipped).
    pub fn parse(text: &str, t_s: f64) -> Result<Self> {
        let mut counts = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            counts.push(line.parse::<u32>().map_err(|_| ReadoutError::Parse {
                line: idx + 1,
                message: format!("expected a non-negative integer count, got {line:?}"),
            })?);
        }
        if counts.is_empty() {
            return Err(ReadoutError::EmptySource);
        }
        Ok(CountTrace::new(counts, t_s))
    }
}

/// How the emission rate changes in the sub-bin where the shelf decays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// Bright rate from the start of the sub-bin containing the decay.
    SubBinSwitch,
    /// Rate switches at the decay instant inside the sub-bin.
    #[default]
    ExactTime,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for one trial.
pub fn trial_rng(master_seed: u64, stream_id: u64) -> Pcg64 {
    let hi = splitmix64(master_seed ^ splitmix64(stream_id));
    let lo = splitmix64(hi ^ stream_id.rotate_left(17) ^ 0xD6E8_FEB8_6659_FD93);
    Pcg64::new(((hi as u128) << 64) | lo as u128, stream_id as u128)
}

/// Stream identifier for trial `index` of `label`; injective over both.
pub fn stream_id(label: Label, index: u64) -> u64 {
    2 * index + matches!(label, Label::Dark) as u64
}

#[inline]
fn uniform(rng: &mut Pcg64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Means below this are sampled by CDF inversion.
const INVERSION_LIMIT: f64 = 10.0;

/// Poisson sampler with a precomputed inversion table for small means.
#[derive(Debug, Clone)]
struct PoissonSampler {
    mean: f64,
    cdf: Vec<f64>,
    large: Option<Poisson<f64>>,
}

impl PoissonSampler {
    fn new(mean: f64) -> Self {
        if mean >= INVERSION_LIMIT {
            return PoissonSampler {
                mean,
                cdf: Vec::new(),
                large: Poisson::new(mean).ok(),
            };
        }
        let mut cdf = Vec::new();
        let mut p = (-mean).exp();
        let mut acc = 0.0;
        let mut k = 0u32;
        loop {
            acc += p;
            cdf.push(acc);
            k += 1;
            p *= mean / k as f64;
            if acc >= 1.0 || p < 1e-300 || k > 200 {
                break;
            }
        }
        PoissonSampler {
            mean,
            cdf,
            large: None,
        }
    }

    #[inline]
    fn sample(&self, rng: &mut Pcg64) -> u32 {
        if let Some(large) = &self.large {
            return large.sample(rng) as u32;
        }
        if self.mean == 0.0 {
            return 0;
        }
        let u = uniform(rng);
        match self.cdf.iter().position(|&c| u < c) {
            Some(k) => k as u32,
            None => self.cdf.len() as u32,
        }
    }
}

fn sample_poisson(mean: f64, rng: &mut Pcg64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    if mean >= INVERSION_LIMIT {
        return Poisson::new(mean).map_or(0, |d| d.sample(rng) as u32);
    }
    let u = uniform(rng);
    let mut p = (-mean).exp();
    let mut acc = p;
    let mut k = 0u32;
    while u >= acc && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        acc += p;
    }
    k
}

/// Inversion sampler over an arbitrary count PMF.
#[derive(Debug, Clone)]
struct PmfSampler {
    cdf: Vec<f64>,
}

impl PmfSampler {
    fn new(pmf: &CountPmf) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        while cdf.len() > 1 && cdf[cdf.len() - 2] >= acc {
            cdf.pop();
        }
        PmfSampler { cdf }
    }

    #[inline]
    fn sample(&self, rng: &mut Pcg64) -> u32 {
        let u = uniform(rng) * self.cdf[self.cdf.len() - 1];
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1) as u32
    }
}

/// Reusable trace generator for one parameter set.
#[derive(Debug, Clone)]
pub struct TraceSimulator {
    params: ReadoutParams,
    decay_mode: DecayMode,
    bright: PoissonSampler,
    dark: PoissonSampler,
    detector: Option<PmfSampler>,
}

impl TraceSimulator {
    pub fn new(params: &ReadoutParams, decay_mode: DecayMode) -> Result<Self> {
        params.validate()?;
        Ok(TraceSimulator {
            bright: PoissonSampler::new(params.bright_mean()),
            dark: PoissonSampler::new(params.dark_mean()),
            detector: params.dark_count_pmf.as_ref().map(PmfSampler::new),
            params: params.clone(),
            decay_mode,
        })
    }

    pub fn params(&self) -> &ReadoutParams {
        &self.params
    }

    /// Lazily generated trace of `len` sub-bins.
    pub fn stream(&self, label: Label, stream_id: u64, master_seed: u64, len: usize) -> TraceStream<'_> {
        let mut rng = trial_rng(master_seed, stream_id);
        let t_s = self.params.sub_bin_duration;
        let decay_time = match label {
            Label::Bright => None,
            Label::Dark => {
                let u = uniform(&mut rng);
                let t = -self.params.shelf_lifetime * (1.0 - u).ln();
                (t.is_finite() && t < len as f64 * t_s).then_some(t)
            }
        };
        // First bright sub-bin, and the mean of the sub-bin holding the decay.
        let (switch_bin, partial_mean) = match (label, decay_time) {
            (Label::Bright, _) => (0, None),
            (Label::Dark, None) => (len, None),
            (Label::Dark, Some(t)) => {
                let j = ((t / t_s) as usize).min(len - 1);
                let partial = match self.decay_mode {
                    DecayMode::SubBinSwitch => None,
                    DecayMode::ExactTime => {
                        let start = j as f64 * t_s;
                        Some(
                            self.params.poisson_dark_rate() * (t - start)
                                + self.params.bright_rate * (start + t_s - t),
                        )
                    }
                };
                (j, partial)
            }
        };
        TraceStream {
            sim: self,
            rng,
            next: 0,
            len,
            switch_bin,
            partial_mean,
            decay_time,
        }
    }

    /// Fills `counts` (cleared first) with `len` sub-bins and returns the decay time, if any.
    pub fn fill(
        &self,
        label: Label,
        stream_id: u64,
        master_seed: u64,
        len: usize,
        counts: &mut Vec<u32>,
    ) -> Option<f64> {
        counts.clear();
        let stream = self.stream(label, stream_id, master_seed, len);
        let decay_time = stream.decay_time();
        counts.extend(stream);
        decay_time
    }

    /// Full-length trace with ground truth attached.
    pub fn trace(&self, label: Label, stream_id: u64, master_seed: u64) -> CountTrace {
        self.trace_len(label, stream_id, master_seed, self.params.sub_bins)
    }

    /// Trace of `len` sub-bins; always a prefix of longer traces from the same stream.
    pub fn trace_len(&self, label: Label, stream_id: u64, master_seed: u64, len: usize) -> CountTrace {
        let mut counts = Vec::with_capacity(len);
        let decay_time = self.fill(label, stream_id, master_seed, len, &mut counts);
        CountTrace {
            counts,
            t_s: self.params.sub_bin_duration,
            truth: Some(Truth { label, decay_time }),
        }
    }
}

/// Sub-bin counts of one trial, drawn on demand.
pub struct TraceStream<'a> {
    sim: &'a TraceSimulator,
    rng: Pcg64,
    next: usize,
    len: usize,
    switch_bin: usize,
    partial_mean: Option<f64>,
    decay_time: Option<f64>,
}

impl TraceStream<'_> {
    /// Shelf decay time within the trace, if any.
    pub fn decay_time(&self) -> Option<f64> {
        self.decay_time
    }
}

impl Iterator for TraceStream<'_> {
    type Item = u32;

    #[inline]
    fn next(&mut self) -> Option<u32> {
        if self.next >= self.len {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let sim = self.sim;
        let mut n = if i < self.switch_bin {
            sim.dark.sample(&mut self.rng)
        } else if let (true, Some(mean)) = (i == self.switch_bin, self.partial_mean) {
            sample_poisson(mean, &mut self.rng)
        } else {
            sim.bright.sample(&mut self.rng)
        };
        if let Some(detector) = &sim.detector {
            n += detector.sample(&mut self.rng);
        }
        Some(n)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.len - self.next;
        (left, Some(left))
    }
}

/// One trace of `params.sub_bins` sub-bins; a pure function of its arguments.
pub fn simulate_trace(
    params: &ReadoutParams,
    label: Label,
    stream_id: u64,
    seed: u64,
    decay_mode: DecayMode,
) -> Result<CountTrace> {
    Ok(TraceSimulator::new(params, decay_mode)?.trace(label, stream_id, seed))
}

/// Outcome counts for one prepared label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelTally {
    pub trials: u64,
    pub misclassified: u64,
    /// Sum of sub-bins used, i.e. sum of `t_a / t_s`.
    pub sum_sub_bins: u64,
    pub sum_sq_sub_bins: u128,
}

impl LabelTally {
    #[inline]
    pub fn record(&mut self, correct: bool, sub_bins: usize) {
        self.trials += 1;
        self.misclassified += (!correct) as u64;
        self.sum_sub_bins += sub_bins as u64;
        self.sum_sq_sub_bins += (sub_bins as u128) * (sub_bins as u128);
    }

    pub fn merge(&mut self, other: &LabelTally) {
        self.trials += other.trials;
        self.misclassified += other.misclassified;
        self.sum_sub_bins += other.sum_sub_bins;
        self.sum_sq_sub_bins += other.sum_sq_sub_bins;
    }

    pub fn error_rate(&self) -> f64 {
        self.misclassified as f64 / self.trials as f64
    }
}

/// Per-label outcome tallies of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcomeTally {
    pub t_s: f64,
    pub bright: LabelTally,
    pub dark: LabelTally,
}

impl TrialOutcomeTally {
    pub fn new(t_s: f64) -> Self {
        TrialOutcomeTally {
            t_s,
            bright: LabelTally::default(),
            dark: LabelTally::default(),
        }
    }

    pub fn label(&self, label: Label) -> &LabelTally {
        match label {
            Label::Bright => &self.bright,
            Label::Dark => &self.dark,
        }
    }

    pub fn label_mut(&mut self, label: Label) -> &mut LabelTally {
        match label {
            Label::Bright => &mut self.bright,
            Label::Dark => &mut self.dark,
        }
    }

    pub fn merge(&mut self, other: &TrialOutcomeTally) {
        self.bright.merge(&other.bright);
        self.dark.merge(&other.dark);
    }

    /// Sum of readout durations for `label`, s.
    pub fn sum_readout_time(&self, label: Label) -> f64 {
        self.label(label).sum_sub_bins as f64 * self.t_s
    }

    /// Sum of squared readout durations for `label`, s^2.
    pub fn sum_sq_readout_time(&self, label: Label) -> f64 {
        self.label(label).sum_sq_sub_bins as f64 * self.t_s * self.t_s
    }
}

/// Execution options shared by every campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CampaignOptions {
    /// Worker threads; `None` uses rayon's global pool.
    pub workers: Option<usize>,
    pub decay_mode: DecayMode,
}

/// Runs `op` on a pool with the requested number of workers.
pub fn with_workers<T: Send>(workers: Option<usize>, op: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(op()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ReadoutError::invalid("workers", e.to_string()))?;
            Ok(pool.install(op))
        }
    }
}

/// Splits `0..n` into fixed blocks, maps each in parallel and folds the results in block order.
pub fn par_blocks<T, F, M>(n: u64, init: T, map: F, merge: M) -> Result<T>
where
    T: Send + Clone + Sync,
    F: Fn(std::ops::Range<u64>) -> Result<T> + Sync + Send,
    M: Fn(&mut T, T) + Sync + Send,
{
    let blocks: Vec<std::ops::Range<u64>> = (0..n.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(n))
        .collect();
    let parts: Vec<Result<T>> = blocks.into_par_iter().map(map).collect();
    let mut acc = init;
    for part in parts {
        merge(&mut acc, part?);
    }
    Ok(acc)
}

/// One line of the optional per-trial dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub label: Label,
    pub stream_id: u64,
    pub n_subbins_used: usize,
    pub sum_counts: u64,
    pub verdict: Label,
    #[serde(rename = "log_pB")]
    pub log_pb: Option<f64>,
    #[serde(rename = "log_pD")]
    pub log_pd: Option<f64>,
    pub posterior_error: Option<f64>,
}

impl TrialRecord {
    fn new(label: Label, stream_id: u64, counts: &[u32], verdict: &Verdict) -> Self {
        TrialRecord {
            label,
            stream_id,
            n_subbins_used: verdict.sub_bins_used,
            sum_counts: counts[..verdict.sub_bins_used].iter().map(|&c| c as u64).sum(),
            verdict: verdict.label,
            log_pb: verdict.log_pb,
            log_pd: verdict.log_pd,
            posterior_error: verdict.posterior_error,
        }
    }
}

fn campaign(
    params: &ReadoutParams,
    n_trials_per_label: u64,
    classifier: &dyn Classifier,
    master_seed: u64,
    options: CampaignOptions,
    keep_records: bool,
) -> Result<(TrialOutcomeTally, Vec<TrialRecord>)> {
    if n_trials_per_label == 0 {
        return Err(ReadoutError::invalid("n_trials_per_label", "must be >= 1"));
    }
    let sim = TraceSimulator::new(params, options.decay_mode)?;
    let len = classifier.sub_bins_needed();
    if len > params.sub_bins {
        return Err(ReadoutError::invalid(
            "classifier",
            format!("needs {len} sub-bins but traces have {}", params.sub_bins),
        ));
    }
    let t_s = params.sub_bin_duration;
    let run = || {
        let mut out = Vec::new();
        for label in [Label::Bright, Label::Dark] {
            let part = par_blocks(
                n_trials_per_label,
                (TrialOutcomeTally::new(t_s), Vec::new()),
                |range| {
                    let mut tally = TrialOutcomeTally::new(t_s);
                    let mut records = Vec::new();
                    let mut trace = CountTrace::new(Vec::with_capacity(len), t_s);
                    for index in range {
                        let id = stream_id(label, index);
                        sim.fill(label, id, master_seed, len, &mut trace.counts);
                        let verdict = classifier.classify(&trace).map_err(|e| {
                            ReadoutError::Campaign {
                                stream_id: id,
                                message: e.to_string(),
                            }
                        })?;
                        tally
                            .label_mut(label)
                            .record(verdict.label == label, verdict.sub_bins_used);
                        if keep_records {
                            records.push(TrialRecord::new(label, id, &trace.counts, &verdict));
                        }
                    }
                    Ok((tally, records))
                },
                |acc, (tally, mut records)| {
                    acc.0.merge(&tally);
                    acc.1.append(&mut records);
                },
            )?;
            out.push(part);
        }
        let mut tally = TrialOutcomeTally::new(t_s);
        let mut records = Vec::new();
        for (t, mut r) in out {
            tally.merge(&t);
            records.append(&mut r);
        }
        Ok((tally, records))
    };
    with_workers(options.workers, run)?
}

/// Runs `n_trials_per_label` bright and dark trials through `classifier`.
pub fn run_trials(
    params: &ReadoutParams,
    n_trials_per_label: u64,
    classifier: &dyn Classifier,
    master_seed: u64,
    options: CampaignOptions,
) -> Result<TrialOutcomeTally> {
    campaign(params, n_trials_per_label, classifier, master_seed, options, false).map(|(t, _)| t)
}

/// [`run_trials`] that also returns one record per trial, bright trials first.
pub fn run_trials_recorded(
    params: &ReadoutParams,
    n_trials_per_label: u64,
    classifier: &dyn Classifier,
    master_seed: u64,
    options: CampaignOptions,
) -> Result<(TrialOutcomeTally, Vec<TrialRecord>)> {
    campaign(params, n_trials_per_label, classifier, master_seed, options, true)
}
