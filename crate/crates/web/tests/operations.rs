use ion_readout_web::{adaptive_trajectory, histograms, threshold_curve, Rates};

const RATES: Rates = Rates {
    bright_rate: 55_800.0,
    dark_rate: 442.0,
    shelf_lifetime: 1.168,
    sub_bin_duration: 10e-6,
};

#[test]
fn histograms_are_normalized() {
    let h = histograms(RATES, 42).unwrap();
    for col in [&h.bright, &h.dark_decay, &h.dark_no_decay] {
        let total: f64 = col.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }
    let mean: f64 = h.bright.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    assert!((mean - 55_800.0 * 420e-6).abs() < 1e-3);
    // Decay adds mass at high counts.
    assert!(h.dark_decay[10] > h.dark_no_decay[10]);
}

#[test]
fn threshold_curve_has_interior_minimum() {
    let c = threshold_curve(RATES, 60).unwrap();
    assert_eq!(c.eps.len(), 60);
    assert!(c.best > 5 && c.best < 59, "{}", c.best);
    assert!(c.eps[c.best] < 2e-4);
    assert!((c.t_b[0] - 10e-6).abs() < 1e-15);
    assert!(c.n_c.iter().all(|v| v.fract() == 0.5));
}

#[test]
fn trajectory_stops_below_target() {
    let t = adaptive_trajectory(RATES, false, 1e-4, 500e-6, false, 5).unwrap();
    assert_eq!(t.counts.len(), 50);
    assert_eq!(t.posterior_error.len(), 50);
    assert_eq!(t.verdict, "bright");
    assert!(t.stopped_at < 50);
    assert!(t.posterior_error[t.stopped_at - 1] < 1e-4);
    assert!(t.posterior_error[..t.stopped_at - 1].iter().all(|&e| e >= 1e-4));
    assert!((t.readout_time - t.stopped_at as f64 * 10e-6).abs() < 1e-15);

    let d = adaptive_trajectory(RATES, true, 1e-4, 500e-6, false, 5).unwrap();
    if d.decay_time.is_none() {
        assert_eq!(d.verdict, "dark");
    }
    // Same inputs, same trajectory.
    let again = adaptive_trajectory(RATES, true, 1e-4, 500e-6, false, 5).unwrap();
    assert_eq!(d.counts, again.counts);
}

#[test]
fn invalid_inputs_are_errors() {
    let bad = Rates { dark_rate: 1e6, ..RATES };
    assert!(histograms(bad, 10).is_err());
    assert!(threshold_curve(RATES, 0).is_err());
    assert!(adaptive_trajectory(RATES, false, 0.7, 500e-6, false, 1).is_err());
    assert!(adaptive_trajectory(RATES, false, 1e-4, 55e-7, false, 1).is_err());
}
