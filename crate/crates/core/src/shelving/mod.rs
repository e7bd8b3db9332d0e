//! Rate-equation model of the transfer from the hyperfine qubit onto the
//! optical shelf.
//!
//! A [`LevelScheme`] is plain data: labelled states and directed transitions,
//! each with a base rate and the control channel that scales it. The default
//! reduced scheme has eight states of a ⁴³Ca⁺-like ion: the two qubit
//! states, two P₃/₂ sublevels, the aggregated D₅/₂ shelf, two D₃/₂ sublevels
//! that need repumping at 850 nm and one S-manifold leak state. 393 nm σ⁺
//! light pumps `|↓>` to the shelf and excites `|↑>` off-resonantly across the
//! ground hyperfine splitting.

mod expm;
mod optimize;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};

pub use expm::{check_generator, expm_generator, Matrix};
pub use optimize::{
    golden_section, nelder_mead, optimize_shelving, sweep_shelving, Minimum, OptimizeOptions,
    ShelvingMode, ShelvingOptimum,
};

/// What a state means to the transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateRole {
    QubitUp,
    QubitDown,
    Excited,
    Shelf,
    RepumpReservoir,
    /// Ground-manifold state outside the qubit.
    Leak,
}

/// Control channel scaling a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Drive393,
    Drive850Sigma,
    Drive850Pi,
    Spontaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub label: String,
    pub role: StateRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    /// Rate at unit control intensity, s⁻¹.
    pub base_rate_per_s: f64,
    pub channel: Channel,
}

/// Laser intensities in units of the channel's reference intensity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    #[serde(default)]
    pub drive393: f64,
    #[serde(default)]
    pub drive850_sigma: f64,
    #[serde(default)]
    pub drive850_pi: f64,
}

impl Controls {
    pub fn multiplier(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Drive393 => self.drive393,
            Channel::Drive850Sigma => self.drive850_sigma,
            Channel::Drive850Pi => self.drive850_pi,
            Channel::Spontaneous => 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("drive393", self.drive393),
            ("drive850_sigma", self.drive850_sigma),
            ("drive850_pi", self.drive850_pi),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ReadoutError::invalid("controls", format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// States and transitions of a rate-equation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    pub states: Vec<State>,
    pub transitions: Vec<Transition>,
}

impl LevelScheme {
    /// Checks labels, roles and rates.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if seen.insert(s.label.as_str(), i).is_some() {
                return Err(ReadoutError::invalid("scheme", format!("duplicate state {:?}", s.label)));
            }
        }
        for role in [StateRole::QubitUp, StateRole::QubitDown, StateRole::Shelf] {
            let count = self.states.iter().filter(|s| s.role == role).count();
            if count != 1 {
                return Err(ReadoutError::invalid(
                    "scheme",
                    format!("needs exactly one {role:?} state, found {count}"),
                ));
            }
        }
        for t in &self.transitions {
            for end in [&t.from, &t.to] {
                if !seen.contains_key(end.as_str()) {
                    return Err(ReadoutError::invalid("scheme", format!("unknown state {end:?}")));
                }
            }
            if t.from == t.to {
                return Err(ReadoutError::invalid("scheme", format!("self transition on {:?}", t.from)));
            }
            if !(t.base_rate_per_s >= 0.0) || !t.base_rate_per_s.is_finite() {
                return Err(ReadoutError::invalid(
                    "scheme",
                    format!("rate {} -> {} must be finite and >= 0", t.from, t.to),
                ));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s.label == label)
    }

    pub fn index_of_role(&self, role: StateRole) -> Option<usize> {
        self.states.iter().position(|s| s.role == role)
    }

    fn required(&self, role: StateRole) -> Result<usize> {
        self.index_of_role(role)
            .ok_or_else(|| ReadoutError::invalid("scheme", format!("no {role:?} state")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let scheme: LevelScheme =
            toml::from_str(text).map_err(|e| ReadoutError::invalid("scheme", e.to_string()))?;
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ReadoutError::invalid("scheme", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Physical constants behind the default reduced scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSchemeParams {
    /// P₃/₂ decay rate, s⁻¹.
    pub gamma_p: f64,
    /// D₅/₂ lifetime, s; infinite disables shelf decay.
    pub shelf_lifetime: f64,
    /// Ground hyperfine detuning of the off-resonant 393 nm excitation, Hz.
    pub hyperfine_detuning_hz: f64,
    /// Multiplies both off-resonant couplings (393 nm on `|↑>`, 850 nm π
    /// into P(4,+4)); 0 disables them.
    pub off_resonant_scale: f64,
    /// P₃/₂ → D₅/₂ branching fraction.
    pub branch_shelf: f64,
    /// P₃/₂ → D₃/₂ branching fraction.
    pub branch_d32: f64,
    /// Decay of P(4,+4) to `|↑>` and `|↓>`; the remainder after the D
    /// branches goes to the leak state.
    pub p44_to_up: f64,
    pub p44_to_down: f64,
    /// Fraction of shelf decays landing in `|↑>`.
    pub shelf_to_up: f64,
    /// `|↓>` → shelf pumping time at unit 393 nm intensity, s.
    pub calibration_time: f64,
    /// Relative 393 nm coupling of the leak state.
    pub cg_leak: f64,
    /// Relative coupling of the unwanted 850 nm π path D₃/₂(M=+4) → P(4,+4).
    pub cg_bad_pi: f64,
    /// Detuning of that path from the 850 nm laser (P₃/₂ F'=5 to F'=4 splitting), Hz.
    pub p_hyperfine_detuning_hz: f64,
}

impl Default for ReducedSchemeParams {
    fn default() -> Self {
        ReducedSchemeParams {
            gamma_p: 1.46e8,
            shelf_lifetime: 1.168,
            hyperfine_detuning_hz: 3.1e9,
            off_resonant_scale: 1.0,
            branch_shelf: 0.053,
            branch_d32: 0.0063,
            p44_to_up: 0.55,
            p44_to_down: 0.25,
            shelf_to_up: 7.0 / 16.0,
            calibration_time: 12e-6,
            cg_leak: 0.5,
            cg_bad_pi: 0.1,
            p_hyperfine_detuning_hz: 155e6,
        }
    }
}

impl ReducedSchemeParams {
    /// Off-resonant suppression `1 / (1 + (2Δ/Γ)²)` of the 393 nm excitation
    /// of `|↑>`, in the low-saturation limit.
    pub fn off_resonant_suppression(&self) -> f64 {
        self.lorentzian(self.hyperfine_detuning_hz)
    }

    fn lorentzian(&self, detuning_hz: f64) -> f64 {
        let x = 2.0 * 2.0 * std::f64::consts::PI * detuning_hz / self.gamma_p;
        1.0 / (1.0 + x * x)
    }

    /// 393 nm excitation rate of `|↓>` at unit intensity, chosen so that the
    /// saturated two-level shelving rate `b Γ W / (Γ + 2W)` is `1/calibration_time`.
    pub fn drive393_base_rate(&self) -> Result<f64> {
        let k = 1.0 / self.calibration_time;
        let cap = self.branch_shelf * self.gamma_p / 2.0;
        if !(k < cap) {
            return Err(ReadoutError::invalid(
                "calibration_time",
                format!("faster than the saturated shelving rate {cap:.3e} s^-1"),
            ));
        }
        Ok(k * self.gamma_p / (self.branch_shelf * self.gamma_p - 2.0 * k))
    }

    pub fn build(&self) -> Result<LevelScheme> {
        let leak_branch = 1.0 - self.p44_to_up - self.p44_to_down - self.branch_shelf - self.branch_d32;
        let p55_to_down = 1.0 - self.branch_shelf - self.branch_d32;
        if leak_branch < -1e-12 || p55_to_down < 0.0 || !(0.0..=1.0).contains(&self.shelf_to_up) {
            return Err(ReadoutError::invalid("branching", "fractions must be in [0, 1] and sum to 1"));
        }
        let leak_branch = leak_branch.max(0.0);
        let g = self.gamma_p;
        let w393 = self.drive393_base_rate()?;
        let w_off = w393 * self.off_resonant_suppression() * self.off_resonant_scale;
        // 850 nm excitation per unit saturation parameter.
        let w850 = g / 2.0;
        let w850_bad =
            w850 * self.cg_bad_pi * self.lorentzian(self.p_hyperfine_detuning_hz) * self.off_resonant_scale;
        let shelf_rate = if self.shelf_lifetime.is_finite() {
            1.0 / self.shelf_lifetime
        } else {
            0.0
        };

        let states = [
            ("up", StateRole::QubitUp),
            ("down", StateRole::QubitDown),
            ("p55", StateRole::Excited),
            ("p44", StateRole::Excited),
            ("shelf", StateRole::Shelf),
            ("d32_a", StateRole::RepumpReservoir),
            ("d32_b", StateRole::RepumpReservoir),
            ("leak", StateRole::Leak),
        ]
        .into_iter()
        .map(|(label, role)| State {
            label: label.to_string(),
            role,
        })
        .collect();

        use Channel::*;
        let rows: [(&str, &str, f64, Channel); 22] = [
            ("down", "p55", w393, Drive393),
            ("p55", "down", w393, Drive393),
            ("up", "p44", w_off, Drive393),
            ("p44", "up", w_off, Drive393),
            ("leak", "p55", w393 * self.cg_leak, Drive393),
            ("p55", "down", p55_to_down * g, Spontaneous),
            ("p55", "shelf", self.branch_shelf * g, Spontaneous),
            ("p55", "d32_a", 0.5 * self.branch_d32 * g, Spontaneous),
            ("p55", "d32_b", 0.5 * self.branch_d32 * g, Spontaneous),
            ("p44", "up", self.p44_to_up * g, Spontaneous),
            ("p44", "down", self.p44_to_down * g, Spontaneous),
            ("p44", "leak", leak_branch * g, Spontaneous),
            ("p44", "shelf", self.branch_shelf * g, Spontaneous),
            ("p44", "d32_a", self.branch_d32 * g, Spontaneous),
            ("d32_a", "p55", w850, Drive850Sigma),
            ("p55", "d32_a", w850, Drive850Sigma),
            ("d32_b", "p55", w850, Drive850Pi),
            ("p55", "d32_b", w850, Drive850Pi),
            ("d32_a", "p44", w850_bad, Drive850Pi),
            ("p44", "d32_a", w850_bad, Drive850Pi),
            ("shelf", "up", self.shelf_to_up * shelf_rate, Spontaneous),
            ("shelf", "down", (1.0 - self.shelf_to_up) * shelf_rate, Spontaneous),
        ];
        let transitions = rows
            .into_iter()
            .filter(|r| r.2 > 0.0)
            .map(|(from, to, rate, channel)| Transition {
                from: from.to_string(),
                to: to.to_string(),
                base_rate_per_s: rate,
                channel,
            })
            .collect();
        let scheme = LevelScheme { states, transitions };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// The default eight-state scheme.
pub fn default_scheme() -> LevelScheme {
    ReducedSchemeParams::default()
        .build()
        .expect("default scheme parameters are valid")
}

/// Generator `G` with `dp/dt = G p` for the given controls.
pub fn build_generator(scheme: &LevelScheme, controls: &Controls) -> Result<Matrix> {
    controls.validate()?;
    scheme.validate()?;
    let n = scheme.states.len();
    let mut g = Matrix::zeros(n);
    for t in &scheme.transitions {
        let rate = t.base_rate_per_s * controls.multiplier(t.channel);
        if rate == 0.0 {
            continue;
        }
        let (from, to) = (
            scheme.index_of(&t.from).unwrap_or_default(),
            scheme.index_of(&t.to).unwrap_or_default(),
        );
        g[(to, from)] += rate;
    }
    // Diagonal from the off-diagonal column sums keeps populations conserved.
    for j in 0..n {
        let out: f64 = (0..n).filter(|&i| i != j).map(|i| g[(i, j)]).sum();
        g[(j, j)] = -out;
    }
    Ok(g)
}

/// Populations after evolving under `g` for `duration`.
pub fn propagate(populations: &[f64], g: &Matrix, duration: f64) -> Result<Vec<f64>> {
    check_populations(populations, g.dim())?;
    let m = expm_generator(g, duration)?;
    Ok(renormalize(m.mul_vec(populations)))
}

fn check_populations(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(ReadoutError::invalid("populations", format!("expected {n} entries, got {}", p.len())));
    }
    if p.iter().any(|x| !(*x >= 0.0)) {
        return Err(ReadoutError::invalid("populations", "entries must be >= 0"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ReadoutError::invalid("populations", format!("must sum to 1, got {total}")));
    }
    Ok(())
}

fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    p.iter_mut().for_each(|x| *x = x.max(0.0));
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// One interval of constant laser settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    #[serde(flatten)]
    pub controls: Controls,
}

/// Ordered segments, played `repeats` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub segments: Vec<Segment>,
    #[serde(default = "one")]
    pub repeats: u32,
}

fn one() -> u32 {
    1
}

/// 850 nm intensity of the experiment, in saturation units.
pub const REPUMP_INTENSITY: f64 = 230.0;
/// π fraction of the 850 nm light in the simultaneous scheme.
pub const REPUMP_PI_FRACTION: f64 = 0.0008;

impl PulseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() || self.repeats == 0 {
            return Err(ReadoutError::invalid("schedule", "needs at least one segment and repeat"));
        }
        for s in &self.segments {
            if !(s.duration_s > 0.0) || !s.duration_s.is_finite() {
                return Err(ReadoutError::invalid("schedule", format!("durations must be > 0, got {}", s.duration_s)));
            }
            s.controls.validate()?;
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.repeats as f64 * self.segments.iter().map(|s| s.duration_s).sum::<f64>()
    }

    /// 393 nm and 850 nm light together for `t_t`, with the 850 nm
    /// polarization mostly σ⁺ and a small π part.
    pub fn continuous(t_t: f64, drive393: f64) -> Self {
        PulseSchedule {
            segments: vec![Segment {
                duration_s: t_t,
                controls: Controls {
                    drive393,
                    drive850_sigma: (1.0 - REPUMP_PI_FRACTION) * REPUMP_INTENSITY,
                    drive850_pi: REPUMP_PI_FRACTION * REPUMP_INTENSITY,
                },
            }],
            repeats: 1,
        }
    }

    /// `cycles` repetitions of 393 nm σ⁺, 850 nm σ⁺, 850 nm π pulses.
    pub fn pulsed(cycles: u32, d393: f64, d_sigma: f64, d_pi: f64, drive393: f64) -> Self {
        let seg = |duration_s, controls| Segment { duration_s, controls };
        PulseSchedule {
            segments: vec![
                seg(d393, Controls { drive393, ..Default::default() }),
                seg(d_sigma, Controls { drive850_sigma: REPUMP_INTENSITY, ..Default::default() }),
                seg(d_pi, Controls { drive850_pi: REPUMP_INTENSITY, ..Default::default() }),
            ],
            repeats: cycles,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: PulseSchedule =
            toml::from_str(text).map_err(|e| ReadoutError::invalid("schedule", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Transfer errors of one schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShelvingError {
    /// Population left outside the shelf when starting in `|↓>`.
    pub eps_down: f64,
    /// Population moved into the shelf when starting in `|↑>`.
    pub eps_up: f64,
    pub eps_t: f64,
}

/// Evolves `|↓>` and `|↑>` through `schedule` and reports the transfer errors.
pub fn shelving_error(scheme: &LevelScheme, schedule: &PulseSchedule) -> Result<ShelvingError> {
    schedule.validate()?;
    let (up, down, shelf) = (
        scheme.required(StateRole::QubitUp)?,
        scheme.required(StateRole::QubitDown)?,
        scheme.required(StateRole::Shelf)?,
    );
    let maps = schedule
        .segments
        .iter()
        .map(|s| expm_generator(&build_generator(scheme, &s.controls)?, s.duration_s))
        .collect::<Result<Vec<_>>>()?;
    let n = scheme.states.len();
    let run = |start: usize| {
        let mut p = vec![0.0; n];
        p[start] = 1.0;
        for _ in 0..schedule.repeats {
            for m in &maps {
                p = renormalize(m.mul_vec(&p));
            }
        }
        p
    };
    let from_down = run(down);
    let from_up = run(up);
    let eps_down = (1.0 - from_down[shelf]).max(0.0);
    let eps_up = from_up[shelf];
    Ok(ShelvingError {
        eps_down,
        eps_up,
        eps_t: 0.5 * (eps_down + eps_up),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(k: f64, tau: f64) -> LevelScheme {
        LevelScheme {
            states: vec![
                State { label: "s".into(), role: StateRole::QubitDown },
                State { label: "d".into(), role: StateRole::Shelf },
                State { label: "u".into(), role: StateRole::QubitUp },
            ],
            transitions: vec![
                Transition { from: "s".into(), to: "d".into(), base_rate_per_s: k, channel: Channel::Drive393 },
                Transition { from: "d".into(), to: "s".into(), base_rate_per_s: 1.0 / tau, channel: Channel::Spontaneous },
            ],
        }
    }

    #[test]
    fn toy_generator_closed_form() {
        let (k, tau) = (8e4, 1.168);
        let g = build_generator(&toy(k, tau), &Controls { drive393: 1.0, ..Default::default() }).unwrap();
        assert_eq!(g[(0, 0)], -k);
        assert_eq!(g[(0, 1)], 1.0 / tau);
        assert_eq!(g[(1, 0)], k);
        assert_eq!(g[(1, 1)], -1.0 / tau);
        assert_eq!(g[(2, 2)], 0.0);
    }

    #[test]
    fn zero_controls_leave_only_spontaneous_terms() {
        let scheme = default_scheme();
        let g = build_generator(&scheme, &Controls::default()).unwrap();
        let up = scheme.index_of("up").unwrap();
        let down = scheme.index_of("down").unwrap();
        // Ground states are stationary without light.
        assert_eq!(g[(up, up)], 0.0);
        assert_eq!(g[(down, down)], 0.0);
        let p55 = scheme.index_of("p55").unwrap();
        assert!((g[(p55, p55)] + 1.46e8).abs() < 1e-3);
    }

    #[test]
    fn generator_columns_sum_to_zero() {
        let scheme = default_scheme();
        let c = Controls { drive393: 3.7, drive850_sigma: 229.8, drive850_pi: 0.184 };
        let g = build_generator(&scheme, &c).unwrap();
        check_generator(&g).unwrap();
        for j in 0..g.dim() {
            assert!(g.column_sum(j).abs() <= 1e-6, "column {j}");
            for i in 0..g.dim() {
                assert!(i == j || g[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn negative_control_rejected() {
        let c = Controls { drive393: -1.0, ..Default::default() };
        assert!(build_generator(&default_scheme(), &c).is_err());
    }

    #[test]
    fn calibrated_pumping_time() {
        let scheme = default_scheme();
        let t = 60e-6;
        let err = shelving_error(&scheme, &PulseSchedule::continuous(t, 1.0)).unwrap();
        let fitted = t / -err.eps_down.ln();
        assert!((fitted - 12e-6).abs() < 0.05 * 12e-6, "time constant {fitted:e}");
    }

    #[test]
    fn zero_duration_limit() {
        let scheme = default_scheme();
        let err = shelving_error(&scheme, &PulseSchedule::continuous(1e-15, 1.0)).unwrap();
        assert!((err.eps_t - 0.5).abs() < 1e-6);
        assert!(err.eps_up < 1e-9);
    }

    #[test]
    fn populations_conserved() {
        let scheme = default_scheme();
        let c = Controls { drive393: 10.0, drive850_sigma: 230.0, drive850_pi: 0.2 };
        let g = build_generator(&scheme, &c).unwrap();
        let mut p = vec![0.0; 8];
        p[0] = 0.3;
        p[1] = 0.7;
        for t in [1e-9, 1e-7, 1e-5, 1e-3, 1.0] {
            let q = propagate(&p, &g, t).unwrap();
            let m = expm_generator(&g, t).unwrap();
            let raw: f64 = m.mul_vec(&p).iter().sum();
            assert!((raw - 1.0).abs() < 1e-9);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn no_off_resonant_no_decay_converges_to_zero() {
        let scheme = ReducedSchemeParams {
            off_resonant_scale: 0.0,
            shelf_lifetime: f64::INFINITY,
            ..Default::default()
        }
        .build()
        .unwrap();
        let err = shelving_error(&scheme, &PulseSchedule::continuous(2e-3, 1.0)).unwrap();
        assert!(err.eps_t < 1e-12, "{err:?}");
    }

    #[test]
    fn scheme_roundtrips_through_toml() {
        let scheme = default_scheme();
        let text = scheme.to_toml().unwrap();
        assert_eq!(LevelScheme::from_toml(&text).unwrap(), scheme);
    }

    #[test]
    fn scheme_validation() {
        let mut s = toy(1.0, 1.0);
        s.transitions[0].to = "nowhere".into();
        assert!(s.validate().is_err());
        let mut s = toy(1.0, 1.0);
        s.transitions[0].base_rate_per_s = -1.0;
        assert!(s.validate().is_err());
        let mut s = toy(1.0, 1.0);
        s.states.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn schedule_file_parses() {
        let text = "repeats = 3\n\n[[segments]]\nduration_s = 2e-6\ndrive393 = 4.0\n\n[[segments]]\nduration_s = 5e-8\ndrive850_sigma = 230.0\n";
        let s = PulseSchedule::from_toml(text).unwrap();
        assert_eq!(s.repeats, 3);
        assert!((s.total_duration() - 6.15e-6).abs() < 1e-18);
        assert_eq!(s.segments[1].controls.drive393, 0.0);
        assert!(PulseSchedule::from_toml("[[segments]]\nduration_s = 0.0\n").is_err());
    }

    #[test]
    fn off_resonant_suppression_value() {
        let s = ReducedSchemeParams::default().off_resonant_suppression();
        let x = 4.0 * std::f64::consts::PI * 3.1e9 / 1.46e8;
        assert!((1.0 / s - 1.0 - x * x).abs() < 1e-6 * x * x);
        assert!((x * x - 7.12e4).abs() < 100.0);
    }
}
