//! Bright/dark discrimination of photon-count traces.
//!
//! Three methods share one [`Verdict`] type:
//!
//! * photon-count thresholding on the summed counts of the first `N` sub-bins,
//! * maximum likelihood over a fixed bin, optionally marginalizing over a
//!   decay of the shelved state during the bin,
//! * adaptive Bayesian stopping, which ends the readout as soon as the
//!   posterior error drops below a cut-off.
//!
//! The decay-marginalized dark likelihood is evaluated with the O(N)
//! recursion
//!
//! ```text
//! M_0 = 1,  M_k = M_{k-1} D(n_k)
//! S_0 = 0,  S_k = (S_{k-1} + M_{k-1}) B(n_k)
//! p_D = (1 - t_b/tau) M_N + (t_s/tau) S_N
//! ```
//!
//! carried in linear space with a shared, tracked scale so that neither
//! sequence underflows on long traces.

use serde::{Deserialize, Serialize};

use crate::distributions::{sub_bin_models, CountPmf, ReadoutParams};
use crate::error::{ReadoutError, Result};
use crate::tracesim::{CountTrace, Label};

/// Half-integer photon-count threshold `n_c = k + 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Threshold(u32);

impl Threshold {
    /// Threshold `below + 1/2`.
    pub fn above(below: u32) -> Self {
        Threshold(below)
    }

    /// Parses a half-integer value such as `5.5`.
    pub fn from_value(value: f64) -> Result<Self> {
        let below = value - 0.5;
        if !(below >= 0.0) || below.fract() != 0.0 || below > u32::MAX as f64 {
            return Err(ReadoutError::invalid(
                "n_c",
                format!("threshold must be k + 0.5 for integer k >= 0, got {value}"),
            ));
        }
        Ok(Threshold(below as u32))
    }

    /// Largest count still classified dark.
    pub fn floor(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 + 0.5
    }
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.5", self.0)
    }
}

/// Classifier output for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub log_pb: Option<f64>,
    pub log_pd: Option<f64>,
    /// Posterior probability that `label` is wrong, in `[0, 0.5]`.
    pub posterior_error: Option<f64>,
    pub sub_bins_used: usize,
    /// `t_a = sub_bins_used * t_s`, s.
    pub readout_time: f64,
}

impl Verdict {
    fn from_likelihoods(log_pb: f64, log_pd: f64, sub_bins_used: usize, t_s: f64) -> Self {
        Verdict {
            label: if log_pb >= log_pd { Label::Bright } else { Label::Dark },
            log_pb: Some(log_pb),
            log_pd: Some(log_pd),
            posterior_error: Some(bayes_error(log_pb, log_pd)),
            sub_bins_used,
            readout_time: sub_bins_used as f64 * t_s,
        }
    }
}

/// Posterior error `min(p_B, p_D) / (p_B + p_D)` from log-likelihoods.
///
/// Underflows to 0 rather than overflowing for very large separations.
pub fn bayes_error(log_pb: f64, log_pd: f64) -> f64 {
    let gap = (log_pb - log_pd).abs();
    1.0 / (1.0 + gap.exp())
}

/// Summed-count threshold readout over the first `n` sub-bins.
pub fn threshold_classify(trace: &CountTrace, n: usize, threshold: Threshold) -> Result<Verdict> {
    let counts = trace.prefix(n)?;
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    Ok(Verdict {
        label: if total > threshold.floor() as u64 { Label::Bright } else { Label::Dark },
        log_pb: None,
        log_pd: None,
        posterior_error: None,
        sub_bins_used: n,
        readout_time: n as f64 * trace.t_s,
    })
}

/// Per-sub-bin likelihood tables for the bright and dark models.
#[derive(Debug, Clone)]
pub struct LikelihoodModels {
    bright: CountPmf,
    dark: CountPmf,
    t_s: f64,
    tau: f64,
    ln_b: Vec<f64>,
    ln_d: Vec<f64>,
    // Per count: max(ln B, ln D) and both probabilities divided by its exponential.
    offset: Vec<f64>,
    rel_b: Vec<f64>,
    rel_d: Vec<f64>,
}

impl LikelihoodModels {
    pub fn new(bright: CountPmf, dark: CountPmf, t_s: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(ReadoutError::invalid("shelf_lifetime", "must be > 0"));
        }
        if !(t_s > 0.0) || !t_s.is_finite() {
            return Err(ReadoutError::invalid("sub_bin_duration", "must be finite and > 0"));
        }
        let len = bright.n_max().max(dark.n_max()) + 1;
        let mut models = LikelihoodModels {
            ln_b: Vec::with_capacity(len),
            ln_d: Vec::with_capacity(len),
            offset: Vec::with_capacity(len),
            rel_b: Vec::with_capacity(len),
            rel_d: Vec::with_capacity(len),
            bright,
            dark,
            t_s,
            tau,
        };
        for n in 0..len {
            let (lb, ld) = (models.bright.extended_ln_prob(n), models.dark.extended_ln_prob(n));
            let c = lb.max(ld);
            models.ln_b.push(lb);
            models.ln_d.push(ld);
            models.offset.push(c);
            models.rel_b.push((lb - c).exp());
            models.rel_d.push((ld - c).exp());
        }
        Ok(models)
    }

    /// Models built from [`sub_bin_models`].
    pub fn from_params(params: &ReadoutParams) -> Result<Self> {
        let (bright, dark) = sub_bin_models(params)?;
        Self::new(bright, dark, params.sub_bin_duration, params.shelf_lifetime)
    }

    pub fn bright(&self) -> &CountPmf {
        &self.bright
    }

    pub fn dark(&self) -> &CountPmf {
        &self.dark
    }

    pub fn sub_bin_duration(&self) -> f64 {
        self.t_s
    }

    pub fn shelf_lifetime(&self) -> f64 {
        self.tau
    }

    #[inline]
    pub fn ln_bright(&self, n: u32) -> f64 {
        match self.ln_b.get(n as usize) {
            Some(&v) => v,
            None => self.bright.extended_ln_prob(n as usize),
        }
    }

    #[inline]
    pub fn ln_dark(&self, n: u32) -> f64 {
        match self.ln_d.get(n as usize) {
            Some(&v) => v,
            None => self.dark.extended_ln_prob(n as usize),
        }
    }

    /// `(offset, B e^-offset, D e^-offset)` for one count.
    #[inline]
    fn step_factors(&self, n: u32) -> (f64, f64, f64) {
        let i = n as usize;
        if i < self.offset.len() {
            (self.offset[i], self.rel_b[i], self.rel_d[i])
        } else {
            let (lb, ld) = (self.ln_bright(n), self.ln_dark(n));
            let c = lb.max(ld);
            (c, (lb - c).exp(), (ld - c).exp())
        }
    }
}

const RESCALE_BELOW: f64 = 1.0 / 18_446_744_073_709_551_616.0; // 2^-64
const RESCALE_BY: f64 = 18_446_744_073_709_551_616.0; // 2^64
const LN_RESCALE: f64 = 64.0 * std::f64::consts::LN_2;

/// Incremental likelihood state, one sub-bin at a time.
///
/// `pb`, `m` and `s` share the scale `exp(log_scale)`; only that common
/// factor is ever renormalized, so ratios between them are exact.
#[derive(Debug, Clone)]
pub struct LikelihoodState<'a> {
    models: &'a LikelihoodModels,
    k: usize,
    sum_ln_b: f64,
    sum_ln_d: f64,
    log_scale: f64,
    pb: f64,
    m: f64,
    s: f64,
}

impl<'a> LikelihoodState<'a> {
    pub fn new(models: &'a LikelihoodModels) -> Self {
        LikelihoodState {
            models,
            k: 0,
            sum_ln_b: 0.0,
            sum_ln_d: 0.0,
            log_scale: 0.0,
            pb: 1.0,
            m: 1.0,
            s: 0.0,
        }
    }

    /// Folds in the count of the next sub-bin.
    #[inline]
    pub fn push(&mut self, n: u32) {
        let (c, rb, rd) = self.models.step_factors(n);
        self.sum_ln_b += self.models.ln_bright(n);
        self.sum_ln_d += self.models.ln_dark(n);
        self.s = (self.s + self.m) * rb;
        self.m *= rd;
        self.pb *= rb;
        self.log_scale += c;
        if self.pb.max(self.s).max(self.m) < RESCALE_BELOW {
            self.pb *= RESCALE_BY;
            self.m *= RESCALE_BY;
            self.s *= RESCALE_BY;
            self.log_scale -= LN_RESCALE;
        }
        self.k += 1;
    }

    pub fn sub_bins(&self) -> usize {
        self.k
    }

    /// `ln p_B = sum ln B(n_i)`.
    pub fn log_pb(&self) -> f64 {
        self.sum_ln_b
    }

    /// `ln p_D`, with or without the decay marginalization.
    pub fn log_pd(&self, include_decay: bool) -> f64 {
        if include_decay {
            self.log_scale + self.decay_pd().ln()
        } else {
            self.sum_ln_d
        }
    }

    /// Scaled `p_D` with decay: `(1 - k t_s/tau) M_k + (t_s/tau) S_k`.
    #[inline]
    fn decay_pd(&self) -> f64 {
        let per_bin = self.models.t_s / self.models.tau;
        (1.0 - self.k as f64 * per_bin) * self.m + per_bin * self.s
    }

    /// Decision with decay, from the scaled linear values (ties go bright).
    #[inline]
    pub fn favors_bright_with_decay(&self) -> bool {
        self.pb >= self.decay_pd()
    }

    pub fn verdict(&self, include_decay: bool) -> Verdict {
        Verdict::from_likelihoods(
            self.log_pb(),
            self.log_pd(include_decay),
            self.k,
            self.models.t_s,
        )
    }
}

/// `(ln p_B, ln p_D)` for a whole trace.
pub fn log_likelihoods(
    trace: &CountTrace,
    models: &LikelihoodModels,
    include_decay: bool,
) -> (f64, f64) {
    let mut state = LikelihoodState::new(models);
    for &n in &trace.counts {
        state.push(n);
    }
    (state.log_pb(), state.log_pd(include_decay))
}

/// Fixed-bin maximum-likelihood readout over the whole trace.
pub fn ml_classify(trace: &CountTrace, models: &LikelihoodModels, include_decay: bool) -> Verdict {
    let (log_pb, log_pd) = log_likelihoods(trace, models, include_decay);
    Verdict::from_likelihoods(log_pb, log_pd, trace.counts.len(), models.t_s)
}

/// Number of whole sub-bins in `t_c`, which must be a positive multiple of `t_s`.
pub fn cutoff_sub_bins(t_c: f64, t_s: f64) -> Result<usize> {
    let ratio = t_c / t_s;
    let k = ratio.round();
    if !(k >= 1.0) || (ratio - k).abs() > 1e-6 {
        return Err(ReadoutError::invalid(
            "t_c",
            format!("cut-off time {t_c} s must be a positive multiple of t_s = {t_s} s"),
        ));
    }
    Ok(k as usize)
}

/// Sequential readout that stops once the posterior error falls below `e_c`
/// or the cut-off `t_c` is reached.
pub fn adaptive_classify<I>(
    sub_bin_stream: I,
    models: &LikelihoodModels,
    e_c: f64,
    t_c: f64,
    include_decay: bool,
) -> Result<Verdict>
where
    I: IntoIterator<Item = u32>,
{
    if !(0.0..0.5).contains(&e_c) {
        return Err(ReadoutError::invalid("e_c", format!("must be in [0, 0.5), got {e_c}")));
    }
    let cutoff = cutoff_sub_bins(t_c, models.t_s)?;
    let stop_gap = stop_gap(e_c);
    let mut state = LikelihoodState::new(models);
    let mut stream = sub_bin_stream.into_iter();
    while state.sub_bins() < cutoff {
        let n = stream.next().ok_or(ReadoutError::TraceTooShort {
            requested: cutoff,
            available: state.sub_bins(),
        })?;
        state.push(n);
        let (log_pb, log_pd) = (state.log_pb(), state.log_pd(include_decay));
        if (log_pb - log_pd).abs() > stop_gap && bayes_error(log_pb, log_pd) < e_c {
            break;
        }
    }
    Ok(state.verdict(include_decay))
}

/// Log-likelihood gap just below which `bayes_error < e_c` can start to hold.
pub(crate) fn stop_gap(e_c: f64) -> f64 {
    if e_c <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 / e_c - 1.0).ln() - 1e-9
    }
}

/// Classifier selection as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Threshold {
        sub_bins: usize,
        n_c: Threshold,
    },
    Ml {
        sub_bins: usize,
        include_decay: bool,
    },
    Adaptive {
        e_c: f64,
        t_c: f64,
        include_decay: bool,
    },
}

impl ClassifierSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierSpec::Threshold { .. } => "threshold",
            ClassifierSpec::Ml { .. } => "ml",
            ClassifierSpec::Adaptive { .. } => "adaptive",
        }
    }

    pub fn build(&self, params: &ReadoutParams) -> Result<Box<dyn Classifier>> {
        params.validate()?;
        let check_len = |n: usize| {
            if n == 0 || n > params.sub_bins {
                Err(ReadoutError::invalid(
                    "N",
                    format!("must be in 1..={}, got {n}", params.sub_bins),
                ))
            } else {
                Ok(())
            }
        };
        Ok(match *self {
            ClassifierSpec::Threshold { sub_bins, n_c } => {
                check_len(sub_bins)?;
                Box::new(ThresholdClassifier { sub_bins, n_c })
            }
            ClassifierSpec::Ml {
                sub_bins,
                include_decay,
            } => {
                check_len(sub_bins)?;
                Box::new(MlClassifier {
                    models: LikelihoodModels::from_params(params)?,
                    sub_bins,
                    include_decay,
                })
            }
            ClassifierSpec::Adaptive {
                e_c,
                t_c,
                include_decay,
            } => {
                if !(0.0..0.5).contains(&e_c) {
                    return Err(ReadoutError::invalid("e_c", "must be in [0, 0.5)"));
                }
                let cutoff = cutoff_sub_bins(t_c, params.sub_bin_duration)?;
                check_len(cutoff)?;
                Box::new(AdaptiveClassifier {
                    models: LikelihoodModels::from_params(params)?,
                    e_c,
                    t_c,
                    cutoff,
                    include_decay,
                })
            }
        })
    }
}

/// A pure trace classifier usable from parallel campaigns.
pub trait Classifier: Send + Sync {
    fn classify(&self, trace: &CountTrace) -> Result<Verdict>;

    /// Sub-bins the trace must provide.
    fn sub_bins_needed(&self) -> usize;
}

pub struct ThresholdClassifier {
    pub sub_bins: usize,
    pub n_c: Threshold,
}

impl Classifier for ThresholdClassifier {
    fn classify(&self, trace: &CountTrace) -> Result<Verdict> {
        threshold_classify(trace, self.sub_bins, self.n_c)
    }

    fn sub_bins_needed(&self) -> usize {
        self.sub_bins
    }
}

pub struct MlClassifier {
    pub models: LikelihoodModels,
    pub sub_bins: usize,
    pub include_decay: bool,
}

impl Classifier for MlClassifier {
    fn classify(&self, trace: &CountTrace) -> Result<Verdict> {
        let prefix = CountTrace {
            counts: trace.prefix(self.sub_bins)?.to_vec(),
            t_s: trace.t_s,
            truth: None,
        };
        Ok(ml_classify(&prefix, &self.models, self.include_decay))
    }

    fn sub_bins_needed(&self) -> usize {
        self.sub_bins
    }
}

pub struct AdaptiveClassifier {
    pub models: LikelihoodModels,
    pub e_c: f64,
    pub t_c: f64,
    cutoff: usize,
    pub include_decay: bool,
}

impl Classifier for AdaptiveClassifier {
    fn classify(&self, trace: &CountTrace) -> Result<Verdict> {
        adaptive_classify(
            trace.counts.iter().copied(),
            &self.models,
            self.e_c,
            self.t_c,
            self.include_decay,
        )
    }

    fn sub_bins_needed(&self) -> usize {
        self.cutoff
    }
}
