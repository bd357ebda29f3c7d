use levylab::levy::{levy_constant, sample_isotropic_stable_into, LevyModel};
use levylab::rng::stream;
use levylab::stats;
use proptest::prelude::*;

fn samples(alpha: f64, t: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 0);
    let mut out = [0.0];
    (0..n)
        .map(|_| {
            sample_isotropic_stable_into(alpha, t, &mut rng, &mut out).unwrap();
            out[0]
        })
        .collect()
}

#[test]
fn sampler_is_reproducible() {
    assert_eq!(samples(1.5, 1.0, 1000, 4), samples(1.5, 1.0, 1000, 4));
    assert_ne!(samples(1.5, 1.0, 1000, 4), samples(1.5, 1.0, 1000, 5));
}

#[test]
fn self_similarity() {
    // X_t s^{-1/alpha} has the law of X_{t/s}
    let (alpha, s): (f64, f64) = (1.5, 4.0);
    let a: Vec<f64> = samples(alpha, 2.0, 100_000, 1)
        .iter()
        .map(|v| v * s.powf(-1.0 / alpha))
        .collect();
    let b = samples(alpha, 0.5, 100_000, 2);
    assert!(stats::ks_two_sample(&a, &b).passes(0.01));
}

#[test]
fn gaussian_limit_variance() {
    let v = samples(2.0, 0.7, 100_000, 3);
    let var = stats::variance(&v);
    // variance of the sample variance of a Gaussian: 2 sigma^4 / n
    let se = (2.0f64).sqrt() * 1.4 / (v.len() as f64).sqrt();
    assert!((var - 1.4).abs() < 3.0 * se, "{var}");
}

#[test]
fn two_dimensional_characteristic_function() {
    let mut rng = stream(8, 0);
    let mut out = [0.0; 2];
    let n = 100_000;
    let xi = [0.6, -0.4];
    let mut acc = 0.0;
    for _ in 0..n {
        sample_isotropic_stable_into(1.5, 1.0, &mut rng, &mut out).unwrap();
        acc += (xi[0] * out[0] + xi[1] * out[1]).cos();
    }
    let norm = (xi[0] * xi[0] + xi[1] * xi[1] as f64).sqrt();
    let exact = (-norm.powf(1.5)).exp();
    let se = ((1.0 - exact * exact) / 2.0 / n as f64).sqrt();
    assert!((acc / n as f64 - exact).abs() < 4.0 * se);
}

#[test]
fn large_jump_rate_matches_levy_measure() {
    let m = LevyModel::stable(1.5, 1, 1.0).unwrap();
    // 2 int_1^inf r^{-2.5} dr = 4/3
    assert!((m.big_jump_rate() - 4.0 / 3.0).abs() < 1e-10);
    let mut rng = stream(6, 0);
    let counts: Vec<f64> = (0..10_000)
        .map(|_| m.sample_large_jumps(1.0, &mut rng).len() as f64)
        .collect();
    let (mean, se) = stats::mean_se(&counts);
    assert!((mean - 4.0 / 3.0).abs() < 3.0 * se, "{mean}");
}

#[test]
fn levy_constant_matches_quadrature() {
    // int (1 - cos z) |z|^{-1-alpha} dz at xi = 1
    let alpha = 1.5;
    // 1 - cos r = 2 sin^2(r/2), without cancellation near 0
    let f = |r: f64| 4.0 * (0.5 * r).sin().powi(2) * r.powf(-1.0 - alpha);
    let tol = levylab::quad::Tolerance::new(1e-15, 1e-12);
    let pi = std::f64::consts::PI;
    let mut v = levylab::quad::radial(f, 0.0, pi, 1e-12).unwrap();
    for k in 1..400 {
        v += levylab::quad::adaptive(f, k as f64 * pi, (k + 1) as f64 * pi, tol)
            .unwrap()
            .0;
    }
    // beyond A = 400 pi the cosine part is O(A^{-1-alpha-1}) after integrating by parts
    let a = 400.0 * pi;
    v += 2.0 * a.powf(-alpha) / alpha;
    assert!((v / levy_constant(1, alpha) - 1.0).abs() < 1e-7, "{v}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_mass_is_additive(alpha in 0.2f64..1.95, a in 0.01f64..1.0, w1 in 0.01f64..5.0, w2 in 0.01f64..5.0, k in 0.0f64..1.4, d in 1usize..4) {
        let m = LevyModel::stable(alpha, d, 1.0).unwrap();
        let (b, c) = (a + w1, a + w1 + w2);
        let lhs = m.tail_mass(a, b, k).unwrap() + m.tail_mass(b, c, k).unwrap();
        let rhs = m.tail_mass(a, c, k).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs());
    }

    #[test]
    fn zero_time_increment_vanishes(alpha in 0.3f64..2.0, seed in any::<u64>()) {
        let mut rng = stream(seed, 0);
        let mut out = [1.0];
        sample_isotropic_stable_into(alpha, 0.0, &mut rng, &mut out).unwrap();
        prop_assert_eq!(out[0], 0.0);
    }
}
