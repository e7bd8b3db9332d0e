//! Browser bindings for the readout library. Each operation has a plain Rust
//! form returning a serializable struct and a `wasm_bindgen` wrapper that
//! hands the same data to JavaScript as JSON.

use ion_readout::classifiers::LikelihoodState;
use ion_readout::distributions::convolve_power;
use ion_readout::sweeps::threshold_error_curve;
use ion_readout::tracesim::{stream_id, TraceSimulator};
use ion_readout::{
    adaptive_classify, bayes_error, bright_sum_pmf, dark_sum_pmf_with_decay, sub_bin_models,
    DecayMode, Label, LikelihoodModels, ReadoutParams,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Rates and timing as entered on the page.
#[derive(Debug, Clone, Copy)]
pub struct Rates {
    pub bright_rate: f64,
    pub dark_rate: f64,
    pub shelf_lifetime: f64,
    pub sub_bin_duration: f64,
}

impl Rates {
    fn params(&self, sub_bins: usize) -> Result<ReadoutParams, String> {
        let p = ReadoutParams {
            bright_rate: self.bright_rate,
            dark_rate: self.dark_rate,
            shelf_lifetime: self.shelf_lifetime,
            sub_bin_duration: self.sub_bin_duration,
            sub_bins,
            dark_count_pmf: None,
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Histograms {
    pub n: usize,
    pub bright: Vec<f64>,
    pub dark_decay: Vec<f64>,
    pub dark_no_decay: Vec<f64>,
}

/// Summed-count distributions over the first `n` sub-bins.
pub fn histograms(rates: Rates, n: usize) -> Result<Histograms, String> {
    let params = rates.params(n.max(1))?;
    let err = |e: ion_readout::ReadoutError| e.to_string();
    let bright = bright_sum_pmf(&params, n).map_err(err)?;
    let dark = dark_sum_pmf_with_decay(&params, n).map_err(err)?;
    let (_, dark_sub) = sub_bin_models(&params).map_err(err)?;
    let plain = convolve_power(&dark_sub, n);
    let top = bright.n_max().max(dark.n_max()).max(plain.n_max());
    let column = |pmf: &ion_readout::CountPmf| (0..=top).map(|k| pmf.prob(k)).collect();
    Ok(Histograms {
        n,
        bright: column(&bright),
        dark_decay: column(&dark),
        dark_no_decay: column(&plain),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdCurve {
    pub t_b: Vec<f64>,
    pub n_c: Vec<f64>,
    pub eps: Vec<f64>,
    pub eps_b: Vec<f64>,
    pub eps_d: Vec<f64>,
    /// Index of the minimum; ties go to the shorter bin.
    pub best: usize,
}

/// Optimized-threshold error for bin lengths `1..=n_max`.
pub fn threshold_curve(rates: Rates, n_max: usize) -> Result<ThresholdCurve, String> {
    if n_max == 0 {
        return Err("n_max must be >= 1".into());
    }
    let params = rates.params(n_max)?;
    let n_list: Vec<usize> = (1..=n_max).collect();
    let points = threshold_error_curve(&params, &n_list).map_err(|e| e.to_string())?;
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.eps < points[best].eps {
            best = i;
        }
    }
    Ok(ThresholdCurve {
        t_b: points.iter().map(|p| p.sub_bins as f64 * rates.sub_bin_duration).collect(),
        n_c: points.iter().map(|p| p.n_c.value()).collect(),
        eps: points.iter().map(|p| p.eps).collect(),
        eps_b: points.iter().map(|p| p.eps_b).collect(),
        eps_d: points.iter().map(|p| p.eps_d).collect(),
        best,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub counts: Vec<u32>,
    /// Posterior error after each sub-bin, up to the cut-off.
    pub posterior_error: Vec<f64>,
    /// Sub-bins read before stopping.
    pub stopped_at: usize,
    pub verdict: &'static str,
    pub readout_time: f64,
    pub decay_time: Option<f64>,
}

/// One simulated adaptive readout of a bright or dark ion, with the
/// posterior error it saw after every sub-bin.
pub fn adaptive_trajectory(
    rates: Rates,
    dark: bool,
    e_c: f64,
    t_c: f64,
    include_decay: bool,
    seed: u64,
) -> Result<Trajectory, String> {
    let err = |e: ion_readout::ReadoutError| e.to_string();
    let cutoff = ion_readout::classifiers::cutoff_sub_bins(t_c, rates.sub_bin_duration).map_err(err)?;
    let params = rates.params(cutoff)?;
    let sim = TraceSimulator::new(&params, DecayMode::ExactTime).map_err(err)?;
    let label = if dark { Label::Dark } else { Label::Bright };
    let stream = sim.stream(label, stream_id(label, 0), seed, cutoff);
    let decay_time = stream.decay_time();
    let counts: Vec<u32> = stream.collect();

    let models = LikelihoodModels::from_params(&params).map_err(err)?;
    let mut state = LikelihoodState::new(&models);
    let posterior_error = counts
        .iter()
        .map(|&n| {
            state.push(n);
            bayes_error(state.log_pb(), state.log_pd(include_decay))
        })
        .collect();
    let verdict = adaptive_classify(counts.iter().copied(), &models, e_c, t_c, include_decay).map_err(err)?;
    Ok(Trajectory {
        counts,
        posterior_error,
        stopped_at: verdict.sub_bins_used,
        verdict: verdict.label.as_str(),
        readout_time: verdict.readout_time,
        decay_time,
    })
}

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = histograms)]
pub fn histograms_js(bright_rate: f64, dark_rate: f64, tau: f64, t_s: f64, n: usize) -> Result<String, JsError> {
    let rates = Rates { bright_rate, dark_rate, shelf_lifetime: tau, sub_bin_duration: t_s };
    to_json(histograms(rates, n))
}

#[wasm_bindgen(js_name = thresholdCurve)]
pub fn threshold_curve_js(bright_rate: f64, dark_rate: f64, tau: f64, t_s: f64, n_max: usize) -> Result<String, JsError> {
    let rates = Rates { bright_rate, dark_rate, shelf_lifetime: tau, sub_bin_duration: t_s };
    to_json(threshold_curve(rates, n_max))
}

#[wasm_bindgen(js_name = adaptiveTrajectory)]
#[allow(clippy::too_many_arguments)]
pub fn adaptive_trajectory_js(
    bright_rate: f64,
    dark_rate: f64,
    tau: f64,
    t_s: f64,
    dark: bool,
    e_c: f64,
    t_c: f64,
    include_decay: bool,
    seed: u32,
) -> Result<String, JsError> {
    let rates = Rates { bright_rate, dark_rate, shelf_lifetime: tau, sub_bin_duration: t_s };
    to_json(adaptive_trajectory(rates, dark, e_c, t_c, include_decay, u64::from(seed)))
}
