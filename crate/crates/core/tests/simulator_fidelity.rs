use sekf::simulators::{
    layer_equation, sample_and_hold_reference, simulate_cstr, simulate_glucose, simulate_two_timescale,
    simulate_two_timescale_with, CstrConfig, GlucoseConfig, TwoTimescaleConfig,
};

#[test]
fn example_one_matches_a_hundred_times_finer_integration() {
    let cfg = TwoTimescaleConfig::default();
    let coarse = simulate_two_timescale(&cfg).unwrap();
    let fine = simulate_two_timescale_with(&cfg, cfg.substeps * 100).unwrap();
    assert_eq!(coarse.len(), 1001);
    let worst = coarse
        .clean
        .iter()
        .zip(&fine.clean)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "max deviation {worst:e}");
}

#[test]
fn sample_and_hold_breaks_exactly_at_the_switch_times() {
    let cfg = TwoTimescaleConfig::default();
    let held = sample_and_hold_reference(&cfg, 25.0).unwrap();
    assert_eq!(held.switch_times, vec![25.0, 50.0, 75.0]);

    // Curvature (second difference) away from the initial transient.
    let start = (10.0 / cfg.sample_interval) as usize;
    let d2: Vec<(usize, f64)> = (start..held.x.len() - 1)
        .map(|k| (k, (held.x[k + 1] - 2.0 * held.x[k] + held.x[k - 1]).abs()))
        .collect();
    let switch_idx: Vec<usize> = held
        .switch_times
        .iter()
        .map(|t| (t / cfg.sample_interval).round() as usize)
        .collect();
    let mut ranked = d2.clone();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut top: Vec<usize> = ranked[..3].iter().map(|(k, _)| *k).collect();
    top.sort();
    assert_eq!(top, switch_idx);
    let smooth_max = ranked[3].1;
    for &k in &switch_idx {
        let kink = d2.iter().find(|(i, _)| *i == k).unwrap().1;
        assert!(
            kink > 3.0 * smooth_max,
            "t = {}: kink {kink:e} vs smooth {smooth_max:e}",
            held.t[k]
        );
    }
}

#[test]
fn sample_and_hold_beats_the_layer_equation() {
    let cfg = TwoTimescaleConfig::default();
    let truth = simulate_two_timescale(&cfg).unwrap();
    let layer = layer_equation(&cfg, cfg.p0).unwrap();
    let held = sample_and_hold_reference(&cfg, 25.0).unwrap();
    let err = |x: &[f64]| x.iter().zip(&truth.clean).map(|(a, s)| (a - s[0]).abs()).sum::<f64>() / x.len() as f64;
    assert!(err(&held.x) < err(&layer.x));
    assert!(layer.switch_times.is_empty());
}

#[test]
fn cstr_stays_physical_and_drifts_only_in_maintenance() {
    let cfg = CstrConfig::default();
    let ds = simulate_cstr(&cfg).unwrap();
    assert!(ds.clean.iter().flatten().all(|c| *c >= 0.0));
    assert_eq!(cfg.k2r_at(0.0), cfg.k2r_at(cfg.drift_start()));
    assert!(cfg.k2r_at(ds.t[ds.len() - 1]) > cfg.k2r_at(cfg.drift_start()));
    assert!(ds.inputs.iter().all(|u| u[0] >= cfg.feed_min && u[0] <= cfg.feed_max));
}

#[test]
fn glucose_is_deterministic_and_bounded() {
    let cfg = GlucoseConfig::default().scaled(1.0 / 60.0).unwrap();
    let a = simulate_glucose(&cfg).unwrap();
    let b = simulate_glucose(&cfg).unwrap();
    assert_eq!(a.clean, b.clean);
    assert!(a.clean.iter().all(|x| x.iter().all(|v| v.is_finite())));
    assert!(a.clean.iter().all(|x| x[0] > 20.0 && x[0] < 600.0));
    assert!(cfg.si_at(a.t[a.len() - 1]) < cfg.si_at(0.0));
}
