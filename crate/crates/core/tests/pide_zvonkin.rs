use levylab::pide::{
    build_zvonkin_auto, solve_elliptic, zvonkin_grid, Extension, GridFunction, GridSpec,
    PideOptions,
};
use levylab::presets;
use levylab::rng::stream;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::{PI, SQRT_2};

fn elliptic_error(n: usize) -> f64 {
    // u = sin x on [-pi, pi] for L = u'' - x u', lambda = 1
    let p = presets::ou(1.0, SQRT_2);
    let grid = GridSpec::new(-PI, PI, n).unwrap();
    let f = GridFunction::from_fn(
        grid,
        |x| -x.sin() - x * x.cos() - x.sin(),
        Extension::Constant,
    )
    .unwrap();
    let opts = PideOptions {
        cell_average: false,
        ..PideOptions::default()
    };
    let sol = solve_elliptic(&p, &f, 1.0, &opts).unwrap();
    (0..n)
        .map(|i| (sol.u.values[i] - grid.node(i).sin()).abs())
        .fold(0.0, f64::max)
}

#[test]
fn elliptic_refinement_is_second_order() {
    let coarse = elliptic_error(101);
    let fine = elliptic_error(201);
    let order = (coarse / fine).log2();
    assert!(order > 1.8, "errors {coarse:e} {fine:e}, order {order}");
}

#[test]
fn zvonkin_map_round_trips() {
    let p = presets::ou_singular();
    let grid = zvonkin_grid(&p, 0.002).unwrap();
    let z = build_zvonkin_auto(&p, grid, &PideOptions::default()).unwrap();
    let m = &z.map;
    let mut rng = stream(17, 0);
    for _ in 0..10_000 {
        let x: f64 = rng.random_range(grid.lo..grid.hi);
        assert!((m.phi_inverse(m.phi(x)) - x).abs() < 1e-7);
        let y: f64 = rng.random_range(m.phi(grid.lo)..m.phi(grid.hi));
        assert!((m.phi(m.phi_inverse(y)) - y).abs() < 1e-7);
    }
    assert!(m.sup_u + m.sup_du <= 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nonpositive_forcing_gives_nonnegative_solution(
        centers in proptest::collection::vec(-3.0f64..3.0, 1..4),
        heights in proptest::collection::vec(0.0f64..5.0, 4),
        lambda in 0.1f64..10.0,
        jumps in any::<bool>(),
    ) {
        let p = if jumps { presets::mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5) } else { presets::ou(1.0, SQRT_2) };
        let grid = GridSpec::new(-5.0, 5.0, 201).unwrap();
        let f = GridFunction::from_fn(
            grid,
            |x| -centers.iter().zip(&heights).map(|(c, h)| h * (-(x - c).powi(2)).exp()).sum::<f64>(),
            Extension::Constant,
        )
        .unwrap();
        let sol = solve_elliptic(&p, &f, lambda, &PideOptions::default()).unwrap();
        prop_assert!(sol.u.values.iter().all(|v| *v >= -1e-12));
    }
}

#[test]
fn transformed_simulation_reproduces_the_direct_law() {
    let p = presets::ou_singular();
    let cfg = levylab::integrator::StepConfig::new(1e-3);
    let (rep, direct, mapped) =
        levylab::pide::zvonkin_crossval(&p, 0.5, 1.0, 20_000, &cfg, 5, 0.002, 0.05).unwrap();
    assert_eq!(direct.len(), mapped.len());
    assert!(rep.pass, "{rep:?}");
}
