//! Trapped-ion qubit readout.
//!
//! Discriminates bright and shelved (dark) ions from time-resolved photon
//! counts with three methods: summed-count thresholding, fixed-bin maximum
//! likelihood with shelf-decay marginalization, and adaptive Bayesian early
//! stopping. A seeded trace simulator evaluates them, [`sweeps`] produces
//! error-versus-time curves and [`shelving`] models the optical-pumping
//! transfer of a hyperfine qubit onto the shelf.

// Negated comparisons also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifiers;
pub mod distributions;
pub mod error;
pub mod shelving;
pub mod sweeps;
pub mod tracesim;

pub use classifiers::{
    adaptive_classify, bayes_error, log_likelihoods, ml_classify, threshold_classify,
    Classifier, ClassifierSpec, LikelihoodModels, Threshold, Verdict,
};
pub use distributions::{
    bright_sum_pmf, convolve, dark_sum_pmf_with_decay, load_empirical_pmf, poisson_pmf,
    sub_bin_models, CountPmf, ReadoutParams,
};
pub use error::{ReadoutError, Result};
pub use tracesim::{
    run_trials, simulate_trace, CampaignOptions, CountTrace, DecayMode, Label,
    TrialOutcomeTally,
};
