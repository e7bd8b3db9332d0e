//! Photon-count probability mass functions.
//!
//! Everything here is stored in linear space. The likelihood code in
//! [`crate::classifiers`] takes logarithms itself.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};

/// Minimum support kept by every constructed PMF.
pub const MIN_SUPPORT: usize = 50;

/// Probability assigned to counts beyond the support of an empirical PMF.
pub const EMPIRICAL_TAIL_FLOOR: f64 = 1e-300;

/// How probabilities beyond `n_max` are assigned when a likelihood needs them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailModel {
    /// Closed-form Poisson value at the requested count.
    Poisson { mean: f64 },
    /// Fixed floor, [`EMPIRICAL_TAIL_FLOOR`].
    Floor,
}

/// Truncated probability mass function over photon counts `0..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountPmf {
    probs: Vec<f64>,
    tail: TailModel,
}

/// Default truncation: `max(50, ceil(mean + 10 sqrt(mean)))`.
pub fn default_n_max(mean: f64) -> usize {
    let rule = (mean + 10.0 * mean.sqrt()).ceil();
    MIN_SUPPORT.max(rule as usize)
}

/// `ln(k!)`, exact summation for small `k` and a Stirling series above.
pub fn ln_factorial(k: u64) -> f64 {
    if k < 20 {
        return (2..=k).map(|i| (i as f64).ln()).sum();
    }
    let n = k as f64 + 1.0;
    // ln Γ(n) with the first four Stirling correction terms.
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    (n - 0.5) * n.ln() - n
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// Natural log of the Poisson probability of `k` at `mean`.
pub fn poisson_ln_prob(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mean.ln() - mean - ln_factorial(k)
}

/// Poisson PMF with the default or an explicit truncation.
pub fn poisson_pmf(mean: f64, n_max: Option<usize>) -> Result<CountPmf> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(ReadoutError::invalid("mean", format!("must be finite and >= 0, got {mean}")));
    }
    if let Some(0) = n_max {
        return Err(ReadoutError::invalid("n_max", "must be >= 1"));
    }
    if mean == 0.0 && n_max.is_none() {
        return Ok(CountPmf {
            probs: vec![1.0],
            tail: TailModel::Poisson { mean },
        });
    }
    let n_max = n_max.unwrap_or_else(|| default_n_max(mean));
    let probs = (0..=n_max as u64)
        .map(|k| poisson_ln_prob(mean, k).exp())
        .collect();
    Ok(CountPmf {
        probs,
        tail: TailModel::Poisson { mean },
    })
}

/// Discrete convolution, keeping the full support `a.n_max + b.n_max`.
pub fn convolve(a: &CountPmf, b: &CountPmf) -> CountPmf {
    let mut out = vec![0.0; a.probs.len() + b.probs.len() - 1];
    for (i, &pa) in a.probs.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        for (j, &pb) in b.probs.iter().enumerate() {
            out[i + j] += pa * pb;
        }
    }
    let tail = match (a.tail, b.tail) {
        (TailModel::Poisson { mean: ma }, TailModel::Poisson { mean: mb }) => {
            TailModel::Poisson { mean: ma + mb }
        }
        _ => TailModel::Floor,
    };
    CountPmf { probs: out, tail }
}

/// `pmf` convolved with itself `times` times (`times = 0` gives the point mass at 0).
pub fn convolve_power(pmf: &CountPmf, times: usize) -> CountPmf {
    let mut result = CountPmf {
        probs: vec![1.0],
        tail: TailModel::Poisson { mean: 0.0 },
    };
    let mut base = pmf.clone();
    let mut k = times;
    while k > 0 {
        if k & 1 == 1 {
            result = convolve(&result, &base).trimmed();
        }
        k >>= 1;
        if k > 0 {
            base = convolve(&base, &base).trimmed();
        }
    }
    result
}

impl CountPmf {
    /// Builds a PMF from raw probabilities, checking the invariants.
    pub fn from_probs(probs: Vec<f64>, tail: TailModel) -> Result<Self> {
        if probs.is_empty() {
            return Err(ReadoutError::invalid("probs", "empty"));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(ReadoutError::invalid("probs", format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 1.0 - 1e-6 && total < 1.0 + 1e-9) {
            return Err(ReadoutError::invalid("probs", format!("sum {total} is not 1")));
        }
        Ok(CountPmf { probs, tail })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn tail_model(&self) -> TailModel {
        self.tail
    }

    /// Probability of `n`, zero outside the stored support.
    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Probability of `n` with the support-extension rule applied beyond `n_max`.
    pub fn extended_prob(&self, n: usize) -> f64 {
        self.extended_ln_prob(n).exp()
    }

    /// Natural log of [`CountPmf::extended_prob`], never `-inf` past the support.
    pub fn extended_ln_prob(&self, n: usize) -> f64 {
        if let Some(&p) = self.probs.get(n) {
            if p > 0.0 {
                return p.ln();
            }
            if let TailModel::Floor = self.tail {
                return EMPIRICAL_TAIL_FLOOR.ln();
            }
        }
        match self.tail {
            TailModel::Poisson { mean } if mean > 0.0 => poisson_ln_prob(mean, n as u64),
            _ => EMPIRICAL_TAIL_FLOOR.ln(),
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - mean).powi(2) * p)
            .sum()
    }

    /// `P(n <= k)`.
    pub fn cdf(&self, k: usize) -> f64 {
        self.probs.iter().take(k + 1).sum()
    }

    /// `P(n > k)`, summed from the top so small tails keep their precision.
    pub fn survival(&self, k: usize) -> f64 {
        self.probs.iter().skip(k + 1).rev().sum()
    }

    /// Smallest `k` with `P(n <= k) >= q`, or `n_max` if the stored mass never gets there.
    pub fn quantile(&self, q: f64) -> usize {
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if acc >= q {
                return k;
            }
        }
        self.n_max()
    }

    /// Drops trailing exact zeros beyond [`MIN_SUPPORT`].
    pub fn trimmed(mut self) -> Self {
        while self.probs.len() > MIN_SUPPORT + 1 && self.probs.last() == Some(&0.0) {
            self.probs.pop();
        }
        self
    }
}

/// Physical rates and timing for one readout configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// Fluorescence count rate `R_B`, counts/s.
    pub bright_rate: f64,
    /// Background count rate `R_D`, counts/s, including detector dark counts.
    pub dark_rate: f64,
    /// Shelf lifetime `tau`, s. `f64::INFINITY` disables decay.
    pub shelf_lifetime: f64,
    /// Sub-bin duration `t_s`, s.
    pub sub_bin_duration: f64,
    /// Number of sub-bins `N` recorded per trial.
    pub sub_bins: usize,
    /// Per-sub-bin detector count distribution, already at `t_s` granularity.
    pub dark_count_pmf: Option<CountPmf>,
}

impl ReadoutParams {
    /// The 40Ca+ optical-qubit configuration: 55800/s bright, 442/s background,
    /// 1.168 s shelf lifetime, 200 sub-bins of 10 us.
    pub fn calcium() -> Self {
        ReadoutParams {
            bright_rate: 55_800.0,
            dark_rate: 442.0,
            shelf_lifetime: 1.168,
            sub_bin_duration: 10e-6,
            sub_bins: 200,
            dark_count_pmf: None,
        }
    }

    pub fn with_sub_bins(&self, sub_bins: usize) -> Self {
        ReadoutParams {
            sub_bins,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !(self.dark_rate >= 0.0) || !self.dark_rate.is_finite() {
            return Err(ReadoutError::invalid("dark_rate", "must be finite and >= 0"));
        }
        if !(self.bright_rate > self.dark_rate) || !self.bright_rate.is_finite() {
            return Err(ReadoutError::invalid("bright_rate", "must exceed dark_rate"));
        }
        if !(self.shelf_lifetime > 0.0) {
            return Err(ReadoutError::invalid("shelf_lifetime", "must be > 0"));
        }
        if !finite_pos(self.sub_bin_duration) {
            return Err(ReadoutError::invalid("sub_bin_duration", "must be finite and > 0"));
        }
        if self.sub_bins == 0 {
            return Err(ReadoutError::invalid("sub_bins", "must be >= 1"));
        }
        let bin_time = self.bin_time();
        if bin_time >= self.shelf_lifetime {
            return Err(ReadoutError::invalid(
                "sub_bins",
                format!("bin time {bin_time} s must be shorter than the shelf lifetime"),
            ));
        }
        if bin_time > self.shelf_lifetime / 10.0 {
            log::warn!(
                "bin time {bin_time} s exceeds a tenth of the shelf lifetime; the decay likelihood is approximate"
            );
        }
        Ok(())
    }

    /// `t_b = N t_s`.
    pub fn bin_time(&self) -> f64 {
        self.sub_bins as f64 * self.sub_bin_duration
    }

    /// Mean bright counts per sub-bin from fluorescence alone, `R_B t_s`.
    pub fn bright_mean(&self) -> f64 {
        self.bright_rate * self.sub_bin_duration
    }

    /// Mean detector counts per sub-bin contributed by `dark_count_pmf`.
    pub fn detector_mean(&self) -> f64 {
        self.dark_count_pmf.as_ref().map_or(0.0, CountPmf::mean)
    }

    /// Poisson background rate excluding the detector PMF's own mean, floored at zero.
    pub fn poisson_dark_rate(&self) -> f64 {
        (self.dark_rate - self.detector_mean() / self.sub_bin_duration).max(0.0)
    }

    /// Mean Poisson background counts per sub-bin.
    pub fn dark_mean(&self) -> f64 {
        self.poisson_dark_rate() * self.sub_bin_duration
    }

    /// Decay probability per sub-bin, `t_s / tau`.
    pub fn decay_per_sub_bin(&self) -> f64 {
        self.sub_bin_duration / self.shelf_lifetime
    }
}

/// Per-sub-bin bright (`B`) and dark (`D`) count models.
pub fn sub_bin_models(params: &ReadoutParams) -> Result<(CountPmf, CountPmf)> {
    params.validate()?;
    let bright = poisson_pmf(params.bright_mean(), None)?;
    let dark = poisson_pmf(params.dark_mean(), None)?;
    Ok(match &params.dark_count_pmf {
        Some(detector) => (convolve(&bright, detector), convolve(&dark, detector)),
        None => (bright, dark),
    })
}

fn check_sum_len(params: &ReadoutParams, n: usize) -> Result<()> {
    params.validate()?;
    if n == 0 || n > params.sub_bins {
        return Err(ReadoutError::invalid(
            "N",
            format!("must be in 1..={}, got {n}", params.sub_bins),
        ));
    }
    Ok(())
}

fn with_detector(params: &ReadoutParams, pmf: CountPmf, n: usize) -> CountPmf {
    match &params.dark_count_pmf {
        Some(detector) => convolve(&pmf, &convolve_power(detector, n)).trimmed(),
        None => pmf,
    }
}

/// Distribution of the summed counts of a bright ion over `n` sub-bins.
pub fn bright_sum_pmf(params: &ReadoutParams, n: usize) -> Result<CountPmf> {
    check_sum_len(params, n)?;
    let poisson = poisson_pmf(n as f64 * params.bright_mean(), None)?;
    Ok(with_detector(params, poisson, n))
}

/// Quadrature nodes per sub-bin used by [`dark_sum_pmf_with_decay`].
pub const DECAY_NODES_PER_SUB_BIN: usize = 10;

/// Summed-count distribution over `n` sub-bins for an ion that starts shelved
/// and may decay to the bright state during the bin.
///
/// With weight `1 - t_b/tau` the ion stays dark; a decay at `t_d` (density
/// `1/tau`) gives `Poisson(R_D t_d + R_B (t_b - t_d))`. The decay-time integral
/// uses the composite midpoint rule.
pub fn dark_sum_pmf_with_decay(params: &ReadoutParams, n: usize) -> Result<CountPmf> {
    dark_sum_pmf_with_decay_nodes(params, n, DECAY_NODES_PER_SUB_BIN)
}

/// [`dark_sum_pmf_with_decay`] with an explicit node density (at least 10 per sub-bin).
pub fn dark_sum_pmf_with_decay_nodes(
    params: &ReadoutParams,
    n: usize,
    nodes_per_sub_bin: usize,
) -> Result<CountPmf> {
    check_sum_len(params, n)?;
    if nodes_per_sub_bin < DECAY_NODES_PER_SUB_BIN {
        return Err(ReadoutError::invalid("nodes_per_sub_bin", "must be >= 10"));
    }
    let bin_time = n as f64 * params.sub_bin_duration;
    let dark_rate = params.poisson_dark_rate();
    let n_max = default_n_max(n as f64 * params.bright_mean().max(params.dark_mean()));
    let stay = 1.0 - bin_time / params.shelf_lifetime;

    let mut probs = vec![0.0; n_max + 1];
    accumulate_poisson(&mut probs, dark_rate * bin_time, stay);

    if params.shelf_lifetime.is_finite() {
        let nodes = n * nodes_per_sub_bin;
        let h = bin_time / nodes as f64;
        let weight = h / params.shelf_lifetime;
        for i in 0..nodes {
            let t_decay = (i as f64 + 0.5) * h;
            let mean = dark_rate * t_decay + params.bright_rate * (bin_time - t_decay);
            accumulate_poisson(&mut probs, mean, weight);
        }
    }
    let pmf = CountPmf {
        probs,
        tail: TailModel::Floor,
    };
    Ok(with_detector(params, pmf, n))
}

fn accumulate_poisson(out: &mut [f64], mean: f64, weight: f64) {
    if mean == 0.0 {
        out[0] += weight;
        return;
    }
    for (k, slot) in out.iter_mut().enumerate() {
        *slot += weight * poisson_ln_prob(mean, k as u64).exp();
    }
}

/// Builds a normalized PMF from one count observation per record.
///
/// Blank lines are skipped and `#` starts a comment line. The support is
/// zero-padded up to the default truncation for the observed mean.
pub fn load_empirical_pmf<R: BufRead>(source: R) -> Result<CountPmf> {
    let mut histogram: Vec<u64> = Vec::new();
    let mut records = 0u64;
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let count: usize = text.parse().map_err(|_| ReadoutError::Parse {
            line: idx + 1,
            message: format!("expected a non-negative integer count, got {text:?}"),
        })?;
        if histogram.len() <= count {
            histogram.resize(count + 1, 0);
        }
        histogram[count] += 1;
        records += 1;
    }
    if records == 0 {
        return Err(ReadoutError::EmptySource);
    }
    let mut probs: Vec<f64> = histogram
        .iter()
        .map(|&c| c as f64 / records as f64)
        .collect();
    let mean: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    let min_len = default_n_max(mean) + 1;
    if probs.len() < min_len {
        probs.resize(min_len, 0.0);
    }
    Ok(CountPmf {
        probs,
        tail: TailModel::Floor,
    })
}

/// [`load_empirical_pmf`] on a file.
pub fn load_empirical_pmf_file(path: &Path) -> Result<CountPmf> {
    let file = std::fs::File::open(path)
        .map_err(|e| ReadoutError::Io(format!("{}: {e}", path.display())))?;
    load_empirical_pmf(std::io::BufReader::new(file))
}
