//! Acceptance campaign: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the report is always printed; the exit status
//! is non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use ion_readout::classifiers::{log_likelihoods, LikelihoodModels, Threshold};
use ion_readout::distributions::{poisson_pmf, ReadoutParams};
use ion_readout::shelving::{
    build_generator, default_scheme, expm_generator, sweep_shelving, OptimizeOptions,
    ShelvingMode, ShelvingOptimum,
};
use ion_readout::sweeps::{
    bin_time_campaign, error_stats, log_grid, optimize_threshold, sweep_adaptive,
    sweep_efficiency, threshold_error_curve, EfficiencyConfig, ErrorStats, SweepRecord,
};
use ion_readout::tracesim::{
    run_trials, stream_id, CampaignOptions, CountTrace, Label, TraceSimulator,
};
use ion_readout::ClassifierSpec;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn us(t: f64) -> f64 {
    t * 1e6
}

fn recursion_oracle() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(0x5eed_0001);
    let t_s = 10e-6;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=12usize);
        let (mb, md) = (rng.random_range(0.05..3.0), rng.random_range(0.001..0.5));
        let tau = rng.random_range(2e-4..2.0);
        let models = LikelihoodModels::new(poisson_pmf(mb, None).unwrap(), poisson_pmf(md, None).unwrap(), t_s, tau)
            .expect("valid models");
        let counts: Vec<u32> = (0..n).map(|_| rng.random_range(0..=6)).collect();
        let b: Vec<f64> = counts.iter().map(|&k| models.bright().prob(k as usize)).collect();
        let d: Vec<f64> = counts.iter().map(|&k| models.dark().prob(k as usize)).collect();
        // Direct sum over the sub-bin in which the ion decays.
        let stay = (1.0 - n as f64 * t_s / tau) * d.iter().product::<f64>();
        let decays: f64 = (0..n)
            .map(|j| d[..j].iter().product::<f64>() * b[j..].iter().product::<f64>())
            .sum::<f64>()
            * (t_s / tau);
        let direct = stay + decays;
        let (_, log_pd) = log_likelihoods(&CountTrace::new(counts, t_s), &models, true);
        worst = worst.max((log_pd.exp() / direct - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("max relative difference {worst:.2e} over 10^4 traces"))
}

fn ml_asymptote(eta0_curve: &[SweepRecord]) -> Outcome {
    let at_1ms = eta0_curve
        .iter()
        .find(|r| (r.x_value - 1e-3).abs() < 1e-9)
        .expect("1 ms point in the sweep");
    let s = &at_1ms.stats;
    outcome(
        (0.75e-4..=1.05e-4).contains(&s.eps),
        format!(
            "eps(t_b=1 ms) = {:.3e} [95% {:.3e}, {:.3e}], eps_B {:.2e}, eps_D {:.2e}, {} trials/label",
            s.eps, s.eps_95.lo, s.eps_95.hi, s.eps_b, s.eps_d, s.trials_bright
        ),
    )
}

fn threshold_optimum(params: &ReadoutParams) -> Outcome {
    let n_all: Vec<usize> = (1..=params.sub_bins).collect();
    let best = optimize_threshold(params, &n_all).expect("optimizer runs");
    let t_b = best.sub_bins as f64 * params.sub_bin_duration;
    let pass = (350e-6 - 1e-12..=500e-6 + 1e-12).contains(&t_b)
        && [4.5, 5.5, 6.5].contains(&best.n_c.value())
        && best.eps <= 2.0e-4;
    outcome(
        pass,
        format!(
            "optimum t_b = {:.0} us, n_c = {}, eps = {:.3e} (eps_B {:.2e}, eps_D {:.2e})",
            us(t_b),
            best.n_c,
            best.eps,
            best.eps_b,
            best.eps_d
        ),
    )
}

fn crossover(params: &ReadoutParams) -> Outcome {
    let n_list: Vec<usize> = (25..=100).step_by(5).collect();
    let thresholds: Vec<Threshold> = threshold_error_curve(params, &n_list)
        .expect("analytic thresholds")
        .iter()
        .map(|p| p.n_c)
        .collect();
    let tallies = bin_time_campaign(
        params,
        &n_list,
        Some(&thresholds),
        true,
        1_000_000,
        41,
        CampaignOptions::default(),
    )
    .expect("campaign runs");
    let thr = tallies.threshold.expect("threshold tallies");
    let mut worst: Option<(usize, f64, f64)> = None;
    let mut margin = f64::INFINITY;
    for ((&n, ml), th) in tallies.n_list.iter().zip(&tallies.ml).zip(&thr) {
        let (e_ml, e_th) = (error_stats(ml).unwrap().eps, error_stats(th).unwrap().eps);
        if e_th - e_ml < margin {
            margin = e_th - e_ml;
            worst = Some((n, e_ml, e_th));
        }
    }
    let (n, e_ml, e_th) = worst.expect("non-empty grid");
    outcome(
        margin >= 0.0,
        format!(
            "t_b 250..1000 us: smallest margin at {} us, ML {:.3e} vs threshold {:.3e}",
            n * 10,
            e_ml,
            e_th
        ),
    )
}

fn adaptive_operating_point(records: &[SweepRecord]) -> Outcome {
    let hit = records.iter().find(|r| {
        let s = &r.stats;
        s.eps <= 1.2e-4
            && s.mean_ta <= 160e-6
            && (50e-6..=110e-6).contains(&s.mean_ta_bright)
            && (180e-6..=270e-6).contains(&s.mean_ta_dark)
    });
    let show = |r: &SweepRecord| {
        let s = &r.stats;
        format!(
            "e_c = {:.2e}: eps = {:.3e}, t_a = {:.1} us (bright {:.1}, dark {:.1})",
            r.x_value,
            s.eps,
            us(s.mean_ta),
            us(s.mean_ta_bright),
            us(s.mean_ta_dark)
        )
    };
    match hit {
        Some(r) => outcome(true, show(r)),
        None => {
            let best = records
                .iter()
                .filter(|r| r.stats.mean_ta <= 160e-6)
                .min_by(|a, b| a.stats.eps.total_cmp(&b.stats.eps));
            outcome(false, format!("no e_c meets all bands; best under 160 us: {}", best.map_or("none".into(), show)))
        }
    }
}

fn bright_asymmetry(records: &[SweepRecord]) -> Outcome {
    let hit = records.iter().find(|r| {
        let s = &r.stats;
        s.eps_b <= 1e-5 && s.mean_ta_bright <= 120e-6 && s.eps_d <= 3.5e-4
    });
    match hit {
        Some(r) => outcome(
            true,
            format!(
                "e_c = {:.2e}: eps_B = {:.2e} [95% hi {:.2e}] in {:.1} us, eps_D = {:.2e}",
                r.x_value,
                r.stats.eps_b,
                r.stats.eps_b_95.hi,
                us(r.stats.mean_ta_bright),
                r.stats.eps_d
            ),
        ),
        None => outcome(false, "no e_c reaches eps_B <= 1e-5 within 120 us with eps_D <= 3.5e-4".into()),
    }
}

fn efficiency_scaling(eps_inf_base: f64, eps_inf_high: f64) -> Outcome {
    let ratio = eps_inf_high / eps_inf_base;
    outcome(
        (0.06..=0.16).contains(&ratio),
        format!("eps_inf(2%) / eps_inf(0.19%) = {eps_inf_high:.3e} / {eps_inf_base:.3e} = {ratio:.3}"),
    )
}

fn decay_fraction(params: &ReadoutParams) -> Outcome {
    let trials = 1_000_000u64;
    let mut lines = Vec::new();
    let mut pass = true;
    for len in [params.sub_bins, 50_000] {
        let sim = TraceSimulator::new(&ReadoutParams { sub_bins: len, ..params.clone() }, Default::default())
            .expect("valid params");
        let decayed = (0..trials)
            .filter(|&i| sim.stream(Label::Dark, stream_id(Label::Dark, i), 77, len).decay_time().is_some())
            .count() as f64;
        let t_b = len as f64 * params.sub_bin_duration;
        let p = 1.0 - (-t_b / params.shelf_lifetime).exp();
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let z = (decayed / trials as f64 - p) / sigma;
        pass &= z.abs() <= 3.0;
        lines.push(format!("t_b = {t_b} s: {:.5e} vs {p:.5e} ({z:+.2} sigma)", decayed / trials as f64));
    }
    outcome(pass, lines.join("; "))
}

fn determinism(params: &ReadoutParams) -> Outcome {
    let specs = [
        ClassifierSpec::Ml { sub_bins: 42, include_decay: true },
        ClassifierSpec::Adaptive { e_c: 1e-4, t_c: 500e-6, include_decay: false },
        ClassifierSpec::Threshold { sub_bins: 42, n_c: Threshold::above(5) },
    ];
    let mut pass = true;
    for spec in &specs {
        let classifier = spec.build(params).expect("valid spec");
        let stats: Vec<ErrorStats> = [1, 4, 8]
            .iter()
            .map(|&w| {
                let options = CampaignOptions { workers: Some(w), ..Default::default() };
                let tally = run_trials(params, 200_000, classifier.as_ref(), 2024, options).expect("campaign");
                error_stats(&tally).expect("stats")
            })
            .collect();
        pass &= stats.windows(2).all(|w| w[0] == w[1]);
    }
    outcome(pass, "threshold, ML and adaptive ErrorStats at 1, 4, 8 workers, 2x10^5 trials/label".into())
}

fn is_u_shaped(curve: &[&ShelvingOptimum]) -> bool {
    let min = curve.iter().map(|p| p.error.eps_t).fold(f64::INFINITY, f64::min);
    let (first, last) = (curve[0].error.eps_t, curve[curve.len() - 1].error.eps_t);
    min < first && min < last
}

fn max_population_drift(p: &ShelvingOptimum) -> f64 {
    let scheme = default_scheme();
    let maps: Vec<_> = p
        .schedule
        .segments
        .iter()
        .map(|s| expm_generator(&build_generator(&scheme, &s.controls).unwrap(), s.duration_s).unwrap())
        .collect();
    let mut drift = 0.0f64;
    for start in [0, 1] {
        let mut pop = vec![0.0; 8];
        pop[start] = 1.0;
        for _ in 0..p.schedule.repeats {
            for m in &maps {
                pop = m.mul_vec(&pop);
                drift = drift.max((pop.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    drift
}

fn shelving() -> Outcome {
    let grid: Vec<f64> = [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 160.0, 250.0, 500.0, 1000.0, 2000.0, 5000.0]
        .iter()
        .map(|t| t * 1e-6)
        .collect();
    let sweep = sweep_shelving(
        &default_scheme(),
        &grid,
        &[ShelvingMode::Continuous, ShelvingMode::Pulsed],
        &OptimizeOptions::default(),
    )
    .expect("shelving sweep");
    let curve = |m| sweep.iter().filter(|p| p.mode == m).collect::<Vec<_>>();
    let (cont, pulsed) = (curve(ShelvingMode::Continuous), curve(ShelvingMode::Pulsed));
    let u_shape = is_u_shaped(&cont) && is_u_shaped(&pulsed);
    let dominated = cont.iter().zip(&pulsed).all(|(c, p)| p.error.eps_t <= c.error.eps_t);
    let mut minima = Vec::new();
    let mut in_band = true;
    for (name, c) in [("pulsed", &pulsed), ("continuous", &cont)] {
        let best = c
            .iter()
            .min_by(|a, b| a.error.eps_t.total_cmp(&b.error.eps_t))
            .expect("non-empty");
        in_band &= (1e-4..=1.5e-3).contains(&best.error.eps_t) && (50e-6..=500e-6).contains(&best.t_t);
        minima.push(format!("{name} min {:.2e} at {:.0} us", best.error.eps_t, us(best.t_t)));
    }
    let drift = sweep.iter().map(max_population_drift).fold(0.0, f64::max);
    outcome(
        u_shape && dominated && in_band && drift <= 1e-9,
        format!(
            "U-shape {u_shape}, pulsed <= continuous {dominated}, {}, population drift {drift:.1e}",
            minima.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let params = ReadoutParams::calcium();
    let options = CampaignOptions::default();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |id, name, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} [{id:>2}] {name}: {} ({secs:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o, secs));
    };

    run(1, "recursion equals direct decay sum", &mut recursion_oracle);

    // The base-efficiency ML curve serves both the asymptote and the efficiency ratio.
    let config = EfficiencyConfig::default();
    let start = Instant::now();
    let efficiency = sweep_efficiency(&params, &[config.eta0, 0.02], &config, 10_000_000, 7, options)
        .expect("efficiency sweep");
    println!("     shared efficiency campaign ({:.1} s)", start.elapsed().as_secs_f64());
    run(2, "ML asymptote at t_b = 1 ms", &mut || ml_asymptote(&efficiency[0].curve));
    run(3, "analytic threshold optimum", &mut || threshold_optimum(&params));
    run(4, "ML beats threshold for t_b >= 250 us", &mut || crossover(&params));

    let start = Instant::now();
    let adaptive = sweep_adaptive(&params, &log_grid(1e-6, 1e-1, 21), 500e-6, false, 10_000_000, 11, options)
        .expect("adaptive sweep");
    println!("     shared adaptive campaign ({:.1} s)", start.elapsed().as_secs_f64());
    run(5, "adaptive operating point", &mut || adaptive_operating_point(&adaptive));
    run(6, "bright-state asymmetry", &mut || bright_asymmetry(&adaptive));
    run(7, "efficiency scaling of eps_inf", &mut || {
        efficiency_scaling(efficiency[0].eps_inf, efficiency[1].eps_inf)
    });
    run(8, "dark-trace decay fraction", &mut || decay_fraction(&params));
    run(9, "bit-exact results across worker counts", &mut || determinism(&params));
    run(10, "shelving transfer sweep", &mut shelving);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
