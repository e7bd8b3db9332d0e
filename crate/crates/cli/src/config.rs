//! Flat `key = value` configuration. Flags override file values; every key
//! is checked against [`KEYS`] so typos fail loudly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ion_readout::distributions::load_empirical_pmf_file;
use ion_readout::shelving::ShelvingMode;
use ion_readout::sweeps::log_grid;
use ion_readout::{CampaignOptions, ClassifierSpec, DecayMode, ReadoutParams, Threshold};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Recognized keys with their meaning. Times in seconds, rates in counts/s.
pub const KEYS: &[(&str, &str)] = &[
    ("bright_rate", "bright fluorescence count rate R_B, counts/s"),
    ("dark_rate", "background count rate R_D including detector dark counts, counts/s"),
    ("shelf_lifetime", "shelf lifetime tau, s ('inf' disables decay)"),
    ("sub_bin_duration", "sub-bin duration t_s, s"),
    ("sub_bins", "sub-bins per recorded trace"),
    ("dark_count_file", "empirical per-sub-bin detector counts, one integer per line"),
    ("decay_mode", "simulated decay: exact or sub-bin"),
    ("method", "classifier: threshold, ml or adaptive"),
    ("N", "sub-bins used by threshold and ml"),
    ("n_c", "half-integer count threshold"),
    ("include_decay", "marginalize shelf decay in the likelihood (true/false)"),
    ("e_c", "adaptive stopping threshold on the posterior error"),
    ("t_c", "adaptive cut-off time, s"),
    ("trials", "trials per prepared state"),
    ("seed", "master seed"),
    ("threads", "worker threads (results do not depend on it)"),
    ("output", "output file; stdout when absent"),
    ("emit", "output format: csv or json"),
    ("dump", "per-trial record file for simulate"),
    ("trace_file", "sub-bin counts to classify, one integer per line"),
    ("n_list", "bin lengths: 'a..b', 'a..b:step' or comma list"),
    ("e_c_list", "stopping thresholds: 'log:lo:hi:count' or comma list"),
    ("eta_list", "collection efficiencies, comma list"),
    ("eta0", "collection efficiency of the base rates"),
    ("detector_dark_rate", "part of dark_rate that does not scale with efficiency, counts/s"),
    ("summary_output", "efficiency summary file"),
    ("analytic", "threshold sweeps from the count distributions instead of Monte Carlo"),
    ("t_T_list", "shelving transfer times, s: comma list or 'log:lo:hi:count'"),
    ("modes", "shelving modes: continuous, pulsed or both comma separated"),
    ("scheme_file", "level scheme (TOML)"),
    ("schedule_file", "fixed pulse schedule (TOML) to evaluate instead of optimizing"),
];

/// Keys that select where results go, their encoding or the worker count, not what they are.
const UNHASHED: &[&str] = &["threads", "output", "emit", "dump", "summary_output"];

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
    // Keys given on the command line; only these can conflict.
    flags: BTreeSet<String>,
}

impl ConfigMap {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut map = ConfigMap::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{origin}:{}: expected key = value, got {line:?}", i + 1))
            })?;
            map.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("{origin}:{}: {}", i + 1, e.message())))?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_flag(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        self.set(key, value)?;
        self.flags.insert(key.to_string());
        Ok(())
    }

    /// Value of `key` when it was given as a flag.
    pub fn flag(&self, key: &str) -> Option<&str> {
        self.flags.contains(key).then(|| self.get(key)).flatten()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// SHA-256 over the command and every result-relevant key, in key order.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(b"\n");
        for (k, v) in &self.values {
            if !UNHASHED.contains(&k.as_str()) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, key: &str, why: &str) -> Result<T, CliError> {
        self.parsed(key)?
            .ok_or_else(|| CliError::Config(format!("missing {key} ({why})")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// Fails when `key` was given as a flag although it has no effect here.
    /// File values that do not apply are ignored so one file can serve
    /// every command.
    pub fn reject(&self, key: &str, reason: &str) -> Result<(), CliError> {
        if self.flags.contains(key) {
            return Err(CliError::Config(format!("conflicting settings: {key} {reason}")));
        }
        Ok(())
    }
}

/// Output encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Csv,
    Json,
}

/// Settings shared by every command, resolved before any computation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub map: ConfigMap,
    pub params: ReadoutParams,
    pub seed: u64,
    pub trials: u64,
    pub options: CampaignOptions,
    pub emit: Emit,
    pub output: Option<PathBuf>,
    pub config_hash: String,
}

impl RunConfig {
    pub fn resolve(command: &str, map: ConfigMap) -> Result<Self, CliError> {
        let base = ReadoutParams::calcium();
        let mut params = ReadoutParams {
            bright_rate: map.parsed_or("bright_rate", base.bright_rate)?,
            dark_rate: map.parsed_or("dark_rate", base.dark_rate)?,
            shelf_lifetime: map.parsed_or("shelf_lifetime", base.shelf_lifetime)?,
            sub_bin_duration: map.parsed_or("sub_bin_duration", base.sub_bin_duration)?,
            sub_bins: map.parsed_or("sub_bins", base.sub_bins)?,
            dark_count_pmf: None,
        };
        if let Some(path) = map.path("dark_count_file") {
            params.dark_count_pmf = Some(
                load_empirical_pmf_file(&path)
                    .map_err(|e| CliError::Config(format!("dark_count_file {}: {e}", path.display())))?,
            );
        }
        params.validate().map_err(CliError::config)?;

        let decay_mode = match map.get("decay_mode").unwrap_or("exact") {
            "exact" => DecayMode::ExactTime,
            "sub-bin" | "sub_bin" => DecayMode::SubBinSwitch,
            other => return Err(CliError::Config(format!("decay_mode: expected exact or sub-bin, got {other:?}"))),
        };
        let emit = match map.get("emit").unwrap_or("csv") {
            "csv" => Emit::Csv,
            "json" => Emit::Json,
            other => return Err(CliError::Config(format!("emit: expected csv or json, got {other:?}"))),
        };
        let threads: Option<usize> = map.parsed("threads")?;
        if threads == Some(0) {
            return Err(CliError::Config("threads: must be >= 1".into()));
        }
        let trials: u64 = map.parsed_or("trials", 100_000)?;
        if trials == 0 {
            return Err(CliError::Config("trials: must be >= 1".into()));
        }
        Ok(RunConfig {
            config_hash: map.hash(command),
            seed: map.parsed_or("seed", 1)?,
            trials,
            options: CampaignOptions {
                workers: threads,
                decay_mode,
            },
            emit,
            output: map.path("output"),
            params,
            map,
        })
    }

    /// Classifier from `method` and its settings; keys belonging to other
    /// methods are rejected.
    pub fn classifier_spec(&self) -> Result<ClassifierSpec, CliError> {
        let m = &self.map;
        let method = m.get("method").unwrap_or("ml");
        let sub_bins = m.parsed_or("N", self.params.sub_bins)?;
        let spec = match method {
            "threshold" => {
                for key in ["e_c", "t_c", "include_decay"] {
                    m.reject(key, "does not apply to method=threshold")?;
                }
                let value: f64 = m.required("n_c", "method=threshold needs a half-integer count threshold")?;
                ClassifierSpec::Threshold {
                    sub_bins,
                    n_c: Threshold::from_value(value).map_err(CliError::config)?,
                }
            }
            "ml" => {
                for key in ["e_c", "t_c", "n_c"] {
                    m.reject(key, "does not apply to method=ml")?;
                }
                ClassifierSpec::Ml {
                    sub_bins,
                    include_decay: m.parsed_or("include_decay", true)?,
                }
            }
            "adaptive" => {
                for key in ["N", "n_c"] {
                    m.reject(key, "does not apply to method=adaptive (use t_c)")?;
                }
                ClassifierSpec::Adaptive {
                    e_c: m.required("e_c", "method=adaptive needs a stopping threshold")?,
                    t_c: m.parsed_or("t_c", 500e-6)?,
                    include_decay: m.parsed_or("include_decay", false)?,
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "method: expected threshold, ml or adaptive, got {other:?}"
                )))
            }
        };
        spec.build(&self.params).map_err(CliError::config)?;
        Ok(spec)
    }

    /// `n_list`, defaulting to every length up to `sub_bins`.
    pub fn n_list(&self, default_max: usize) -> Result<Vec<usize>, CliError> {
        let list = match self.map.get("n_list") {
            None => (1..=default_max.min(self.params.sub_bins)).collect(),
            Some(text) => parse_int_list(text).map_err(|e| CliError::Config(format!("n_list: {e}")))?,
        };
        if list.is_empty() || list.iter().any(|&n| n == 0 || n > self.params.sub_bins) {
            return Err(CliError::Config(format!(
                "n_list: values must lie in 1..={}",
                self.params.sub_bins
            )));
        }
        Ok(list)
    }

    pub fn f64_list(&self, key: &str, default: &str) -> Result<Vec<f64>, CliError> {
        let text = self.map.get(key).unwrap_or(default);
        let list = parse_f64_list(text).map_err(|e| CliError::Config(format!("{key}: {e}")))?;
        if list.is_empty() {
            return Err(CliError::Config(format!("{key}: empty list")));
        }
        Ok(list)
    }

    pub fn modes(&self) -> Result<Vec<ShelvingMode>, CliError> {
        self.map
            .get("modes")
            .unwrap_or("continuous,pulsed")
            .split(',')
            .map(|s| s.trim().parse().map_err(CliError::config))
            .collect()
    }
}

/// `a..b` (inclusive), `a..b:step` or `a,b,c`.
pub fn parse_int_list(text: &str) -> Result<Vec<usize>, String> {
    let bad = |s: &str| format!("cannot parse {s:?}");
    if let Some((range, step)) = text.split_once(':').or(Some((text, "1"))).filter(|(r, _)| r.contains("..")) {
        let (lo, hi) = range.split_once("..").ok_or_else(|| bad(text))?;
        let lo: usize = lo.trim().parse().map_err(|_| bad(lo))?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad(hi))?;
        let step: usize = step.trim().parse().map_err(|_| bad(step))?;
        if step == 0 || lo > hi {
            return Err(format!("empty range {text:?}"));
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad(s))).collect()
}

/// `log:lo:hi:count` or `a,b,c`.
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    let bad = |s: &str| format!("cannot parse {s:?}");
    if let Some(rest) = text.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected log:lo:hi:count, got {text:?}"));
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad(parts[0]))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad(parts[1]))?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad(parts[2]))?;
        if !(lo > 0.0 && hi >= lo) || count == 0 {
            return Err(format!("need 0 < lo <= hi and count >= 1 in {text:?}"));
        }
        return Ok(log_grid(lo, hi, count));
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad(s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let m = ConfigMap::parse("# base\nbright_rate = 55800\n\nseed=7 # trailing\n", "t").unwrap();
        assert_eq!(m.get("bright_rate"), Some("55800"));
        assert_eq!(m.get("seed"), Some("7"));
    }

    #[test]
    fn unknown_key_names_line() {
        let err = ConfigMap::parse("seed = 1\nbrigt_rate = 3\n", "base.cfg").unwrap_err();
        assert!(err.to_string().contains("base.cfg:2"), "{err}");
        assert!(err.to_string().contains("brigt_rate"));
    }

    #[test]
    fn hash_ignores_threads_and_output() {
        let mut a = ConfigMap::parse("seed = 1\n", "t").unwrap();
        let h = a.hash("simulate");
        a.set("threads", "8").unwrap();
        a.set("output", "x.csv").unwrap();
        assert_eq!(a.hash("simulate"), h);
        a.set("seed", "2").unwrap();
        assert_ne!(a.hash("simulate"), h);
        assert_ne!(ConfigMap::default().hash("histogram"), ConfigMap::default().hash("simulate"));
    }

    #[test]
    fn list_syntax() {
        assert_eq!(parse_int_list("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_int_list("10..=30:10").unwrap(), vec![10, 20, 30]);
        assert_eq!(parse_int_list("3, 1,2").unwrap(), vec![3, 1, 2]);
        assert!(parse_int_list("5..1").is_err());
        let g = parse_f64_list("log:1e-6:1e-1:6").unwrap();
        assert_eq!(g.len(), 6);
        assert!((g[5] - 0.1).abs() < 1e-15);
        assert_eq!(parse_f64_list("2e-6, 1e-5").unwrap(), vec![2e-6, 1e-5]);
        assert!(parse_f64_list("log:1:2").is_err());
    }

    #[test]
    fn conflicting_flags_are_config_errors() {
        let mut m = ConfigMap::parse("method = threshold\nn_c = 5.5\ne_c = 1e-4\n", "t").unwrap();
        // File values for other methods are tolerated.
        let cfg = RunConfig::resolve("simulate", m.clone()).unwrap();
        assert!(cfg.classifier_spec().is_ok());
        m.set_flag("e_c", "1e-4").unwrap();
        let err = RunConfig::resolve("simulate", m).unwrap().classifier_spec().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("e_c"));
    }

    #[test]
    fn missing_threshold_names_field() {
        let mut m = ConfigMap::default();
        m.set("method", "threshold").unwrap();
        let err = RunConfig::resolve("simulate", m).unwrap().classifier_spec().unwrap_err();
        assert!(err.to_string().contains("n_c"), "{err}");
    }
}
