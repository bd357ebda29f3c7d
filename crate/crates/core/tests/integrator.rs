use levylab::integrator::{
    path_streams, refinement_study, simulate_ensemble, simulate_interlaced,
    simulate_small_jump_path, simulate_snapshots, StepConfig,
};
use levylab::presets;
use levylab::stats;
use std::f64::consts::SQRT_2;

#[test]
fn ou_mean_and_linearity() {
    let p = presets::ou(1.0, SQRT_2);
    let cfg = StepConfig::new(1e-3);
    let one = simulate_ensemble(&p, &[vec![1.0]], 1.0, &cfg, 4000, 1).unwrap();
    let v: Vec<f64> = one.terminal.iter().map(|x| x[0]).collect();
    let (m, se) = stats::mean_se(&v);
    let bias = ((1.0f64 - 1e-3).powi(1000) - (-1.0f64).exp()).abs();
    assert!((m - (-1.0f64).exp()).abs() < 3.0 * se + bias, "{m} +- {se}");
    // same noise, doubled start: the difference is deterministic
    let two = simulate_ensemble(&p, &[vec![2.0]], 1.0, &cfg, 4000, 1).unwrap();
    let w: Vec<f64> = two.terminal.iter().map(|x| x[0]).collect();
    assert!((stats::mean(&w) - 2.0 * m).abs() < 3.0 * se);
}

#[test]
fn ensembles_are_seed_deterministic() {
    let p = presets::mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5);
    let cfg = StepConfig::new(1e-2);
    let a = simulate_ensemble(&p, &[vec![0.3]], 1.0, &cfg, 200, 9).unwrap();
    let b = simulate_ensemble(&p, &[vec![0.3]], 1.0, &cfg, 200, 9).unwrap();
    let bits = |e: &levylab::integrator::Ensemble| {
        e.terminal
            .iter()
            .map(|x| x[0].to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.large_jumps, b.large_jumps);
}

#[test]
fn euler_weak_order_for_ou() {
    let p = presets::ou(1.0, SQRT_2);
    let base = StepConfig::new(0.1).with_antithetic();
    let study = refinement_study(
        &p,
        &[1.0],
        1.0,
        &base,
        &[0.1, 0.01, 0.001],
        200,
        3,
        |x| x[0],
        Some((-1.0f64).exp()),
    )
    .unwrap();
    assert!(study.slope >= 0.8, "{study:?}");
}

#[test]
fn interlacing_without_large_jumps_is_the_small_jump_path() {
    let p = presets::pure_stable(1.5);
    let cfg = StepConfig::new(1e-2);
    let mut checked = 0;
    for i in 0..60 {
        let (mut streams, _) = path_streams(&cfg, 21, i);
        let mut probe = streams.clone();
        let events = p
            .levy
            .as_ref()
            .unwrap()
            .sample_large_jumps(0.5, &mut probe.jumps);
        if !events.is_empty() {
            continue;
        }
        let full = simulate_interlaced(&p, &[0.2], 0.5, &cfg, &mut streams).unwrap();
        let small = simulate_small_jump_path(&p, &[0.2], 0.0, 0.5, &cfg, &mut probe.flow).unwrap();
        assert_eq!(full.states, small.states);
        assert_eq!(full.times, small.times);
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn fractional_moments_grow_at_most_linearly() {
    // sup_t E|X_t|^{0.9} / (|x0| + t + 1) should be one constant across starts
    let times: Vec<f64> = (1..=20).map(|k| 0.5 * k as f64).collect();
    for (name, p) in [
        ("ou_singular", presets::ou_singular()),
        ("mixing_jump", presets::mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5)),
    ] {
        let mut cs = vec![];
        for x0 in [0.0, 2.0, 5.0] {
            let snaps =
                simulate_snapshots(&p, &[x0], &times, &StepConfig::new(1e-2), 1000, 4).unwrap();
            let c = times
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let m = stats::mean(
                        &snaps
                            .iter()
                            .map(|s| s[k][0].abs().powf(0.9))
                            .collect::<Vec<_>>(),
                    );
                    m / (x0 + t + 1.0)
                })
                .fold(0.0, f64::max);
            cs.push(c);
        }
        let (lo, hi) = (
            cs.iter().cloned().fold(f64::INFINITY, f64::min),
            cs.iter().cloned().fold(0.0, f64::max),
        );
        assert!(hi <= 3.0 * lo && hi < 2.0, "{name}: {cs:?}");
    }
}
