//! Derivative-free minimizers and the per-`t_T` drive optimization.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{shelving_error, LevelScheme, PulseSchedule, ShelvingError};
use crate::error::{ReadoutError, Result};
use crate::sweeps::{ErrorStats, SweepRecord};

/// Result of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Minimum {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut evaluations = 2;
    while (b - a).abs() > tol && evaluations < max_iter {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        evaluations += 1;
    }
    let (x, fx) = if fc <= fd { (c, fc) } else { (d, fd) };
    Minimum {
        x: vec![x],
        f: fx,
        evaluations,
        converged: (b - a).abs() <= tol,
    }
}

/// Nelder-Mead simplex minimization from `x0` with initial steps `step`.
///
/// Converges when both the spread of function values (relative to `f_tol`)
/// and the simplex diameter (`x_tol`) are small.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    f_tol: f64,
    x_tol: f64,
    max_evaluations: usize,
) -> Minimum {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evaluations = n + 1;
    let mut converged = false;
    while evaluations < max_evaluations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= f_tol * values[0].abs().max(1e-300) && diameter <= x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evaluations += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evaluations += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evaluations += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    values[i] = f(&simplex[i]);
                }
                evaluations += n;
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        evaluations,
        converged,
    }
}

/// Drive schedule family being optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShelvingMode {
    /// 393 nm and 850 nm on together for the whole transfer.
    Continuous,
    /// Repeated 393 nm σ⁺, 850 nm σ⁺, 850 nm π pulses.
    Pulsed,
}

impl ShelvingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ShelvingMode::Continuous => "continuous",
            ShelvingMode::Pulsed => "pulsed",
        }
    }
}

impl std::str::FromStr for ShelvingMode {
    type Err = ReadoutError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(ShelvingMode::Continuous),
            "pulsed" => Ok(ShelvingMode::Pulsed),
            other => Err(ReadoutError::invalid("mode", format!("expected continuous or pulsed, got {other:?}"))),
        }
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Randomizes the starting points; `None` uses the fixed defaults.
    pub seed: Option<u64>,
    /// log10 bracket of the 393 nm intensity scan.
    pub log_drive_range: (f64, f64),
    /// Repetition counts tried in pulsed mode.
    pub cycle_counts: Vec<u32>,
    pub max_evaluations: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            seed: None,
            log_drive_range: (-3.0, 4.0),
            cycle_counts: vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256],
            max_evaluations: 600,
        }
    }
}

/// Optimized schedule at one transfer time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShelvingOptimum {
    pub t_t: f64,
    pub mode: ShelvingMode,
    pub drive393: f64,
    pub schedule: PulseSchedule,
    pub error: ShelvingError,
    /// False when the optimizer hit its evaluation cap.
    pub converged: bool,
}

impl ShelvingOptimum {
    /// Sweep row: `eps_B` carries `ε_↑`, `eps_D` carries `ε_↓`.
    pub fn to_record(&self) -> SweepRecord {
        SweepRecord {
            x_name: "t_T".to_string(),
            x_value: self.t_t,
            method: self.mode.as_str().to_string(),
            stats: ErrorStats::analytic(self.error.eps_up, self.error.eps_down, self.t_t),
            eps_inf: None,
            t_1_1: None,
        }
    }
}

// Pulses shorter than this are not meaningful next to the 6.8 ns P lifetime.
const MIN_PULSE: f64 = 1e-9;

fn continuous_error(scheme: &LevelScheme, t_t: f64, log_drive: f64) -> f64 {
    shelving_error(scheme, &PulseSchedule::continuous(t_t, 10f64.powf(log_drive)))
        .map(|e| e.eps_t)
        .unwrap_or(1.0)
}

fn pulsed_schedule(t_t: f64, cycles: u32, x: &[f64]) -> Option<PulseSchedule> {
    let (d_sigma, d_pi) = (10f64.powf(x[1]), 10f64.powf(x[2]));
    let d393 = t_t / cycles as f64 - d_sigma - d_pi;
    (d_sigma >= MIN_PULSE && d_pi >= MIN_PULSE && d393 >= MIN_PULSE)
        .then(|| PulseSchedule::pulsed(cycles, d393, d_sigma, d_pi, 10f64.powf(x[0])))
}

fn pulsed_error(scheme: &LevelScheme, t_t: f64, cycles: u32, x: &[f64]) -> f64 {
    match pulsed_schedule(t_t, cycles, x) {
        Some(s) => shelving_error(scheme, &s).map(|e| e.eps_t).unwrap_or(1.0),
        // Infeasible split: worse than any real schedule, sloping back inside.
        None => 1.0 + x[1].max(x[2]).max(-9.0) + 9.0,
    }
}

fn optimize_continuous(scheme: &LevelScheme, t_t: f64, options: &OptimizeOptions, rng: &mut Option<Pcg64>) -> (f64, bool) {
    let (lo, hi) = options.log_drive_range;
    let points = 57;
    let step = (hi - lo) / (points - 1) as f64;
    let offset = rng.as_mut().map_or(0.0, |r| r.random_range(-0.5..0.5) * step);
    let grid: Vec<f64> = (0..points).map(|i| lo + offset + step * i as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&x| continuous_error(scheme, t_t, x)).collect();
    let best = (0..points)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(points - 1)];
    let m = golden_section(|x| continuous_error(scheme, t_t, x), a, b, 1e-7, options.max_evaluations);
    let on_edge = best == 0 || best == points - 1;
    (m.x[0], m.converged && !on_edge)
}

/// Best schedule of the given mode for total transfer time `t_t`.
///
/// Continuous mode scans the log 393 nm intensity and refines the best
/// bracket by golden section. Pulsed mode runs a simplex over the log 393 nm
/// intensity and the two 850 nm pulse lengths for each repetition count,
/// starting from the continuous optimum; when the simplex stalls it falls
/// back to a golden-section search over the intensity alone.
pub fn optimize_shelving(
    scheme: &LevelScheme,
    t_t: f64,
    mode: ShelvingMode,
    options: &OptimizeOptions,
) -> Result<ShelvingOptimum> {
    if !(t_t > 0.0) || !t_t.is_finite() {
        return Err(ReadoutError::invalid("t_T", format!("must be > 0, got {t_t}")));
    }
    scheme.validate()?;
    let mut rng = options.seed.map(Pcg64::seed_from_u64);
    let (log_drive, cont_converged) = optimize_continuous(scheme, t_t, options, &mut rng);
    if mode == ShelvingMode::Continuous {
        let schedule = PulseSchedule::continuous(t_t, 10f64.powf(log_drive));
        let error = shelving_error(scheme, &schedule)?;
        return Ok(ShelvingOptimum {
            t_t,
            mode,
            drive393: 10f64.powf(log_drive),
            schedule,
            error,
            converged: cont_converged,
        });
    }

    let mut best: Option<(f64, u32, Vec<f64>, bool)> = None;
    for &cycles in &options.cycle_counts {
        let mut x0 = vec![log_drive, -7.5, -7.5];
        if let Some(r) = rng.as_mut() {
            x0.iter_mut().for_each(|x| *x += r.random_range(-0.3..0.3));
        }
        if pulsed_schedule(t_t, cycles, &x0).is_none() {
            continue;
        }
        let f = |x: &[f64]| pulsed_error(scheme, t_t, cycles, x);
        let mut m = nelder_mead(f, &x0, &[0.2, 0.3, 0.3], 1e-7, 1e-5, options.max_evaluations);
        if !m.converged {
            let (ds, dp) = (m.x[1], m.x[2]);
            let g = golden_section(
                |x| pulsed_error(scheme, t_t, cycles, &[x, ds, dp]),
                m.x[0] - 1.0,
                m.x[0] + 1.0,
                1e-7,
                options.max_evaluations,
            );
            if g.f < m.f {
                m = Minimum {
                    x: vec![g.x[0], ds, dp],
                    f: g.f,
                    evaluations: m.evaluations + g.evaluations,
                    converged: g.converged,
                };
            }
        }
        if best.as_ref().is_none_or(|b| m.f < b.0) {
            best = Some((m.f, cycles, m.x, m.converged));
        }
    }
    let (_, cycles, x, converged) =
        best.ok_or_else(|| ReadoutError::invalid("t_T", "too short for any pulsed schedule"))?;
    let schedule = pulsed_schedule(t_t, cycles, &x)
        .ok_or_else(|| ReadoutError::invalid("t_T", "optimizer left the feasible region"))?;
    let error = shelving_error(scheme, &schedule)?;
    Ok(ShelvingOptimum {
        t_t,
        mode,
        drive393: 10f64.powf(x[0]),
        schedule,
        error,
        converged,
    })
}

/// Optimized error versus transfer time for each mode, sorted by `t_T`
/// then mode.
pub fn sweep_shelving(
    scheme: &LevelScheme,
    t_t_list: &[f64],
    modes: &[ShelvingMode],
    options: &OptimizeOptions,
) -> Result<Vec<ShelvingOptimum>> {
    if t_t_list.is_empty() || modes.is_empty() {
        return Err(ReadoutError::invalid("t_T_list", "empty grid"));
    }
    let mut grid: Vec<(f64, ShelvingMode)> = t_t_list
        .iter()
        .flat_map(|&t| modes.iter().map(move |&m| (t, m)))
        .collect();
    grid.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 as u8).cmp(&(b.1 as u8))));
    grid.dedup();
    grid.par_iter()
        .map(|&(t, m)| optimize_shelving(scheme, t, m, options))
        .collect()
}
