//! Monte Carlo and grid checks of analytic inequalities: occupation (Krylov)
//! bounds, Khasminskii exponential moments, the stochastic Gronwall bound and
//! the Hardy–Littlewood maximal function.

use crate::error::{domain, Error, Result};
use crate::integrator::{par_paths, path_streams, StateKind, StepConfig, Stepper};
use crate::pide::{Extension, GridFunction, GridSpec};
use crate::quad;
use crate::rng::stream;
use crate::sde::SdeProblem;
use crate::stats;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Scalar function of `(t, x)` in one space dimension.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The estimate is too unreliable to judge.
    Withheld,
}

/// `||f||_{L^q_p(S, T)} = (int_S^T (int |f|^p dx)^{q/p} dt)^{1/q}`, with
/// `p` or `q` infinite meaning a supremum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedNormSpec {
    pub p: f64,
    pub q: f64,
}

impl MixedNormSpec {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0 && q > 1.0) {
            return domain(format!(
                "mixed-norm exponents must lie in (1, inf], got p = {p}, q = {q}"
            ));
        }
        Ok(Self { p, q })
    }

    fn lebesgue(exponent: f64, xs: &[f64], values: &[f64]) -> f64 {
        if exponent.is_infinite() {
            return values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let powered: Vec<f64> = values.iter().map(|v| v.abs().powf(exponent)).collect();
        quad::trapezoid(xs, &powered).powf(1.0 / exponent)
    }

    /// Norm of tabulated values `values[i][j] = f(times[i], xs[j])`,
    /// trapezoid in `x` first, then in `t`.
    pub fn norm_tabulated(&self, times: &[f64], xs: &[f64], values: &[Vec<f64>]) -> f64 {
        let inner: Vec<f64> = values
            .iter()
            .map(|row| Self::lebesgue(self.p, xs, row))
            .collect();
        if times.len() == 1 {
            return if self.q.is_infinite() { inner[0] } else { 0.0 };
        }
        Self::lebesgue(self.q, times, &inner)
    }

    /// Norm of `f` on `[t0, t1] x grid` with `nt` time nodes.
    pub fn norm(
        &self,
        f: &dyn Fn(f64, f64) -> f64,
        t0: f64,
        t1: f64,
        nt: usize,
        grid: GridSpec,
    ) -> f64 {
        let xs = grid.nodes();
        let nt = nt.max(2);
        let times: Vec<f64> = (0..nt)
            .map(|i| t0 + (t1 - t0) * i as f64 / (nt - 1) as f64)
            .collect();
        let values: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| xs.iter().map(|&x| f(t, x)).collect())
            .collect();
        self.norm_tabulated(&times, &xs, &values)
    }
}

/// Where the mixed norms are evaluated: a space grid and time nodes per
/// unit interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormGrid {
    pub space: GridSpec,
    pub time_nodes: usize,
}

/// `int_0^T f(s, X_s) ds` for each function, by the trapezoid rule over
/// every visited state (grid, pre-jump and post-jump), one path per entry.
fn occupation_integrals(
    p: &SdeProblem,
    family: &[SpaceTimeFn],
    x0: f64,
    horizon: f64,
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if p.dim != 1 {
        return domain("occupation integrals are implemented for d = 1");
    }
    let stepper = Stepper::new(p, *cfg)?;
    par_paths(n_paths, |i| {
        let (mut streams, sign) = path_streams(cfg, seed, i);
        let mut acc = vec![0.0; family.len()];
        let mut prev: Option<(f64, Vec<f64>)> = None;
        let mut obs = |t: f64, x: &[f64], _k: StateKind| {
            let vals: Vec<f64> = family.iter().map(|f| f(t, x[0])).collect();
            if let Some((t0, v0)) = &prev {
                let w = 0.5 * (t - t0);
                for (a, (u, v)) in acc.iter_mut().zip(v0.iter().zip(&vals)) {
                    *a += w * (u + v);
                }
            }
            prev = Some((t, vals));
            true
        };
        let out = stepper.run_interlaced(&[x0], 0.0, horizon, &mut streams, sign, &mut obs)?;
        if let Some(t) = out.exploded_at {
            return Err(Error::Explosion(t));
        }
        Ok(acc)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KrylovMember {
    pub norm: f64,
    pub lhs: f64,
    pub se: f64,
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KrylovReport {
    pub members: Vec<KrylovMember>,
    pub lhs: f64,
    /// Largest ratio `E int f(s, X_s) ds / ||f||`: the empirical constant.
    pub sup_ratio: f64,
    pub se: f64,
    pub min_ratio: f64,
    /// `sup_ratio / min_ratio`.
    pub spread: f64,
    pub norm_span: f64,
    /// The integrability condition `d/p + 2/q < 2` (or `d/p + alpha/q < alpha`
    /// for pure-jump problems) does not hold; reported, not enforced.
    pub index_warning: bool,
    pub verdict: Verdict,
}

/// Ratios of simulated occupation integrals to mixed norms over a family of
/// functions (all evaluated on the same paths). Passes when the ratios stay
/// within a factor `max_spread` of each other.
#[allow(clippy::too_many_arguments)]
pub fn krylov_ratio(
    p: &SdeProblem,
    family: &[SpaceTimeFn],
    spec: MixedNormSpec,
    grid: NormGrid,
    x0: f64,
    horizon: f64,
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
    max_spread: f64,
) -> Result<KrylovReport> {
    if family.is_empty() || !(horizon > 0.0) {
        return domain("need a nonempty family and a positive horizon");
    }
    let nt = ((grid.time_nodes as f64 * horizon).ceil() as usize).max(2);
    let norms: Vec<f64> = family
        .iter()
        .map(|f| spec.norm(&|t, x| f(t, x), 0.0, horizon, nt, grid.space))
        .collect();
    if let Some(k) = norms.iter().position(|n| !(*n > 0.0)) {
        return domain(format!(
            "family member {k} has zero mixed norm; the ratio is undefined"
        ));
    }
    let paths = occupation_integrals(p, family, x0, horizon, n_paths, cfg, seed)?;
    let members: Vec<KrylovMember> = norms
        .iter()
        .enumerate()
        .map(|(k, &norm)| {
            let vals: Vec<f64> = paths.iter().map(|v| v[k]).collect();
            let (lhs, se) = stats::mean_se(&vals);
            KrylovMember {
                norm,
                lhs,
                se,
                ratio: lhs / norm,
                ratio_se: se / norm,
            }
        })
        .collect();
    let top = members
        .iter()
        .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .copied()
        .expect("nonempty family");
    let min_ratio = members
        .iter()
        .map(|m| m.ratio)
        .fold(f64::INFINITY, f64::min);
    let spread = top.ratio / min_ratio;
    let nmax = norms.iter().cloned().fold(0.0, f64::max);
    let nmin = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let d = p.dim as f64;
    let index_warning = if p.has_diffusion() {
        !(d / spec.p + 2.0 / spec.q < 2.0)
    } else {
        let a = p.levy.as_ref().and_then(|l| l.alpha()).unwrap_or(2.0);
        !(d / spec.p + a / spec.q < a)
    };
    Ok(KrylovReport {
        lhs: top.lhs,
        sup_ratio: top.ratio,
        se: top.ratio_se,
        min_ratio,
        spread,
        norm_span: nmax / nmin,
        index_warning,
        verdict: if spread <= max_spread {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        members,
    })
}

/// Smallest `n` such that `||f||_{L^q_p((j-1)T/n, jT/n)} <= 1 / (2 lambda c0)`
/// for every `j`.
pub fn khasminskii_partition(
    f: &dyn Fn(f64, f64) -> f64,
    spec: MixedNormSpec,
    grid: NormGrid,
    lambda: f64,
    c0: f64,
    horizon: f64,
) -> Result<usize> {
    if !(lambda >= 0.0 && c0 > 0.0 && horizon > 0.0) {
        return domain("need lambda >= 0, c0 > 0 and a positive horizon");
    }
    if lambda == 0.0 {
        return Ok(1);
    }
    let target = 1.0 / (2.0 * lambda * c0);
    for n in 1..=4096usize {
        let len = horizon / n as f64;
        let nt = ((grid.time_nodes as f64 * len).ceil() as usize).max(3);
        let ok = (0..n)
            .all(|j| spec.norm(f, j as f64 * len, (j + 1) as f64 * len, nt, grid.space) <= target);
        if ok {
            return Ok(n);
        }
    }
    domain("no partition with at most 4096 pieces meets the Khasminskii condition")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KhasminskiiReport {
    /// Empirical `E exp(lambda int_0^T f(s, X_s) ds)`.
    pub lhs: f64,
    /// `2^n`.
    pub rhs_or_cap: f64,
    pub se: f64,
    pub n: usize,
    pub lambda: f64,
    /// Share of the sample mean carried by the top 0.1% of samples.
    pub reliability: f64,
    pub verdict: Verdict,
}

/// One-sided 99% normal quantile.
const Z99: f64 = 2.326_347_874_040_840_8;

#[allow(clippy::too_many_arguments)]
pub fn khasminskii_bound(
    p: &SdeProblem,
    f: SpaceTimeFn,
    spec: MixedNormSpec,
    grid: NormGrid,
    lambda: f64,
    c0: f64,
    x0: f64,
    horizon: f64,
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
) -> Result<KhasminskiiReport> {
    let nt = ((grid.time_nodes as f64 * horizon).ceil() as usize).max(2);
    for i in 0..nt {
        let t = horizon * i as f64 / (nt - 1) as f64;
        if grid.space.nodes().iter().any(|&x| f(t, x) < 0.0) {
            return domain("Khasminskii's bound needs f >= 0");
        }
    }
    let n = khasminskii_partition(&|t, x| f(t, x), spec, grid, lambda, c0, horizon)?;
    let occ = occupation_integrals(p, &[f], x0, horizon, n_paths, cfg, seed)?;
    let samples: Vec<f64> = occ.iter().map(|v| (lambda * v[0]).exp()).collect();
    let (lhs, se) = stats::mean_se(&samples);
    let s = stats::sorted(&samples);
    let top = (n_paths / 1000).max(1);
    let reliability = s[s.len() - top..].iter().sum::<f64>() / s.iter().sum::<f64>();
    let cap = 2f64.powi(n as i32);
    let verdict = if reliability > 0.5 {
        Verdict::Withheld
    } else if lhs - Z99 * se <= cap {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(KhasminskiiReport {
        lhs,
        rhs_or_cap: cap,
        se,
        n,
        lambda,
        reliability,
        verdict,
    })
}

/// The increasing process `A` of a Gronwall scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AProcess {
    Zero,
    /// `A_t = rate t`.
    Linear {
        rate: f64,
    },
    /// `A_t = size N_t` for a Poisson process of the given rate.
    Poisson {
        rate: f64,
        size: f64,
    },
}

impl AProcess {
    /// `E exp(theta A_T)`.
    fn exp_moment(&self, theta: f64, horizon: f64) -> f64 {
        match *self {
            AProcess::Zero => 1.0,
            AProcess::Linear { rate } => (theta * rate * horizon).exp(),
            AProcess::Poisson { rate, size } => {
                (rate * horizon * ((theta * size).exp() - 1.0)).exp()
            }
        }
    }
}

/// The martingale `M` of a Gronwall scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Martingale {
    Zero,
    /// `scale (N_t - rate t)`; needs `eta >= scale rate` to keep `xi >= 0`.
    CompensatedPoisson {
        rate: f64,
        scale: f64,
    },
    /// Increments `xi (exp(vol dW - vol^2 dt / 2) - 1)`.
    Multiplicative {
        vol: f64,
    },
}

/// `xi_{k+1} = xi_k + eta dt + xi_k dA_k + dM_k` on a uniform grid: a
/// piecewise-constant process satisfying the integral identity exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallScenario {
    pub xi0: f64,
    pub eta: f64,
    pub a: AProcess,
    pub m: Martingale,
}

impl GronwallScenario {
    fn validate(&self) -> Result<()> {
        if !(self.xi0 >= 0.0 && self.eta >= 0.0) {
            return domain("xi0 and eta must be nonnegative");
        }
        match self.a {
            AProcess::Linear { rate } if !(rate >= 0.0) => return domain("A must be increasing"),
            AProcess::Poisson { rate, size } if !(rate >= 0.0 && size >= 0.0) => {
                return domain("A must be increasing")
            }
            _ => {}
        }
        match self.m {
            Martingale::CompensatedPoisson { rate, scale }
                if !(rate >= 0.0 && scale >= 0.0 && self.eta >= scale * rate) =>
            {
                domain(
                    "compensated Poisson martingale needs rate, scale >= 0 and eta >= scale * rate",
                )
            }
            Martingale::Multiplicative { vol } if !(vol >= 0.0) => {
                domain("vol must be nonnegative")
            }
            _ => Ok(()),
        }
    }

    /// Running maximum of one simulated path.
    fn sup_path<R: Rng>(&self, horizon: f64, n_steps: usize, rng: &mut R) -> f64 {
        let dt = horizon / n_steps as f64;
        let mut xi = self.xi0;
        let mut sup = xi;
        for _ in 0..n_steps {
            let da = match self.a {
                AProcess::Zero => 0.0,
                AProcess::Linear { rate } => rate * dt,
                AProcess::Poisson { rate, size } => size * poisson(rate * dt, rng),
            };
            let dm = match self.m {
                Martingale::Zero => 0.0,
                Martingale::CompensatedPoisson { rate, scale } => {
                    scale * (poisson(rate * dt, rng) - rate * dt)
                }
                Martingale::Multiplicative { vol } => {
                    let w: f64 = StandardNormal.sample(rng);
                    xi * ((vol * dt.sqrt() * w - 0.5 * vol * vol * dt).exp() - 1.0)
                }
            };
            xi += self.eta * dt + xi * da + dm;
            sup = sup.max(xi);
        }
        sup
    }
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> f64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallReport {
    /// `[E (sup_t xi)^q]^{1/q}`.
    pub lhs: f64,
    /// `(p/(p-q))^{1/q} (E e^{p A_T/(1-p)})^{(1-p)/p} E(xi0 + int eta)`.
    pub rhs_or_cap: f64,
    pub se: f64,
    pub reliability: f64,
    pub verdict: Verdict,
}

/// Both sides of the stochastic Gronwall inequality for a constructed
/// scenario; passes when `lhs - 3 se <= rhs`.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_gronwall_check(
    scenario: &GronwallScenario,
    p: f64,
    q: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<GronwallReport> {
    if !(q > 0.0 && q < p && p < 1.0) {
        return domain(format!("need 0 < q < p < 1, got p = {p}, q = {q}"));
    }
    if !(horizon > 0.0) || n_steps == 0 || n_paths == 0 {
        return domain("need a positive horizon, n_steps and n_paths");
    }
    scenario.validate()?;
    let sups = par_paths(n_paths, |i| {
        Ok(scenario.sup_path(horizon, n_steps, &mut stream(seed, i)))
    })?;
    let powered: Vec<f64> = sups.iter().map(|s| s.max(0.0).powf(q)).collect();
    let (m, se_m) = stats::mean_se(&powered);
    let lhs = m.powf(1.0 / q);
    let se = if m > 0.0 { lhs / (q * m) * se_m } else { 0.0 };
    let moment = scenario.a.exp_moment(p / (1.0 - p), horizon);
    let rhs = (p / (p - q)).powf(1.0 / q)
        * moment.powf((1.0 - p) / p)
        * (scenario.xi0 + scenario.eta * horizon);
    let s = stats::sorted(&powered);
    let total: f64 = s.iter().sum();
    let top = (n_paths / 1000).max(1);
    let reliability = if total > 0.0 {
        s[s.len() - top..].iter().sum::<f64>() / total
    } else {
        0.0
    };
    // a single path has no error estimate; judge the point value
    let slack = if se.is_finite() { 3.0 * se } else { 0.0 };
    let verdict = if lhs - slack <= rhs {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(GronwallReport {
        lhs,
        rhs_or_cap: rhs,
        se,
        reliability,
        verdict,
    })
}

/// Random scenario with its exponents `(p, q)`, for property testing.
pub fn random_gronwall_scenario<R: Rng>(rng: &mut R) -> (GronwallScenario, f64, f64) {
    let xi0 = rng.random_range(0.0..3.0);
    let mut eta: f64 = rng.random_range(0.0..2.0);
    let a = match rng.random_range(0..3) {
        0 => AProcess::Zero,
        1 => AProcess::Linear {
            rate: rng.random_range(0.0..2.0),
        },
        _ => AProcess::Poisson {
            rate: rng.random_range(0.0..3.0),
            size: rng.random_range(0.0..0.5),
        },
    };
    let m = match rng.random_range(0..3) {
        0 => Martingale::Zero,
        1 => {
            let rate: f64 = rng.random_range(0.0..5.0);
            let scale = rng.random_range(0.0..0.5);
            eta = eta.max(rate * scale);
            Martingale::CompensatedPoisson { rate, scale }
        }
        _ => Martingale::Multiplicative {
            vol: rng.random_range(0.0..1.5),
        },
    };
    let p = rng.random_range(0.2..0.95);
    let q = rng.random_range(0.05..0.9) * p;
    (GronwallScenario { xi0, eta, a, m }, p, q)
}

/// `Mf(x_i) = max_k (1 / 2 s_k) int_{x_i - s_k}^{x_i + s_k} |f|` over the grid
/// radii `s_k = k h`, with `f` taken as zero off the grid and `k = 0`
/// meaning `|f(x_i)|`. Integrals are trapezoid prefix sums, so the windows
/// are exact for the piecewise-linear interpolant.
pub fn maximal_function(f: &GridFunction) -> GridFunction {
    let n = f.n();
    let h = f.h();
    let a: Vec<f64> = f.values.iter().map(|v| v.abs()).collect();
    let mut prefix = vec![0.0; n];
    for i in 1..n {
        prefix[i] = prefix[i - 1] + 0.5 * h * (a[i - 1] + a[i]);
    }
    let values = (0..n)
        .map(|i| {
            let mut best = a[i];
            for k in 1..n {
                let lo = i.saturating_sub(k);
                let hi = (i + k).min(n - 1);
                let avg = (prefix[hi] - prefix[lo]) / (2.0 * k as f64 * h);
                best = best.max(avg);
                if lo == 0 && hi == n - 1 {
                    break;
                }
            }
            best
        })
        .collect();
    GridFunction {
        lo: f.lo,
        hi: f.hi,
        values,
        extension: Extension::Constant,
    }
}

/// Worst ratio `|f(x) - f(y)| / (2 |x - y| (M|f'|(x) + M|f'|(y)))` over node
/// pairs; at most 1 when the pointwise maximal-function bound holds in `d = 1`.
pub fn maximal_lipschitz_ratio(f: &GridFunction, pairs: &[(usize, usize)]) -> f64 {
    let slopes: Vec<f64> = f.nodal_slopes().iter().map(|s| s.abs()).collect();
    let m = maximal_function(&GridFunction {
        lo: f.lo,
        hi: f.hi,
        values: slopes,
        extension: Extension::Constant,
    });
    pairs
        .iter()
        .filter(|(i, j)| i != j)
        .map(|&(i, j)| {
            let num = (f.values[i] - f.values[j]).abs();
            let den = 2.0 * (f.node(i) - f.node(j)).abs() * (m.values[i] + m.values[j]);
            num / den
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::stats::normal_cdf;
    use std::f64::consts::SQRT_2;

    fn indicator(c: f64, delta: f64) -> SpaceTimeFn {
        Arc::new(move |_t, x: f64| if x.abs() <= delta { c } else { 0.0 })
    }

    #[test]
    fn mixed_norm_of_indicator() {
        let spec = MixedNormSpec::new(2.0, 4.0).unwrap();
        let grid = GridSpec::new(-1.0, 1.0, 2001).unwrap();
        // int_0^2 (2 * 0.5)^{2} dt = 2 -> 2^{1/4}
        let v = spec.norm(
            &|_t, x: f64| if x.abs() <= 0.5 { 1.0 } else { 0.0 },
            0.0,
            2.0,
            5,
            grid,
        );
        assert!((v - 2f64.powf(0.25)).abs() < 2e-3, "{v}");
        let sup = MixedNormSpec::new(f64::INFINITY, f64::INFINITY).unwrap();
        assert_eq!(sup.norm(&|t, x| t * x, 0.0, 2.0, 5, grid), 2.0);
        assert!(MixedNormSpec::new(1.0, 2.0).is_err());
    }

    #[test]
    fn brownian_occupation_oracle() {
        let p = presets::brownian(SQRT_2);
        let delta = 0.1;
        let oracle = quad::adaptive(
            |s: f64| 2.0 * normal_cdf(delta / (2.0 * s).sqrt()) - 1.0,
            0.0,
            1.0,
            quad::Tolerance::default(),
        )
        .unwrap()
        .0;
        let occ = occupation_integrals(
            &p,
            &[indicator(1.0, delta)],
            0.0,
            1.0,
            4000,
            &StepConfig::new(1e-3),
            3,
        )
        .unwrap();
        let v: Vec<f64> = occ.iter().map(|r| r[0]).collect();
        let (m, se) = stats::mean_se(&v);
        assert!(
            (m - oracle).abs() < 4.0 * se + 2e-3,
            "{m} +- {se} vs {oracle}"
        );
    }

    #[test]
    fn krylov_homogeneity_and_zero_member() {
        let p = presets::brownian(SQRT_2);
        let spec = MixedNormSpec::new(1.1, 2.0).unwrap();
        let grid = NormGrid {
            space: GridSpec::new(-2.0, 2.0, 4001).unwrap(),
            time_nodes: 4,
        };
        let cfg = StepConfig::new(1e-2);
        let a = krylov_ratio(
            &p,
            &[indicator(1.0, 0.3)],
            spec,
            grid,
            0.0,
            1.0,
            500,
            &cfg,
            1,
            3.0,
        )
        .unwrap();
        let b = krylov_ratio(
            &p,
            &[indicator(10.0, 0.3)],
            spec,
            grid,
            0.0,
            1.0,
            500,
            &cfg,
            1,
            3.0,
        )
        .unwrap();
        assert!((a.sup_ratio / b.sup_ratio - 1.0).abs() < 1e-12);
        let zero: SpaceTimeFn = Arc::new(|_, _| 0.0);
        assert!(krylov_ratio(&p, &[zero], spec, grid, 0.0, 1.0, 10, &cfg, 1, 3.0).is_err());
    }

    #[test]
    fn khasminskii_trivial_and_monotone() {
        let p = presets::brownian(SQRT_2);
        let spec = MixedNormSpec::new(1.1, 2.0).unwrap();
        let grid = NormGrid {
            space: GridSpec::new(-2.0, 2.0, 801).unwrap(),
            time_nodes: 4,
        };
        let cfg = StepConfig::new(1e-2);
        let zero: SpaceTimeFn = Arc::new(|_, _| 0.0);
        let r = khasminskii_bound(&p, zero, spec, grid, 1.0, 0.5, 0.0, 1.0, 200, &cfg, 1).unwrap();
        assert_eq!(
            (r.lhs, r.rhs_or_cap, r.n, r.verdict),
            (1.0, 2.0, 1, Verdict::Pass)
        );
        let mut last = 0.0f64;
        for lambda in [0.5, 1.0, 2.0, 4.0] {
            let r = khasminskii_bound(
                &p,
                indicator(1.0, 0.1),
                spec,
                grid,
                lambda,
                0.5,
                0.0,
                1.0,
                300,
                &cfg,
                2,
            )
            .unwrap();
            assert!(r.lhs >= last);
            last = r.lhs;
        }
        let neg: SpaceTimeFn = Arc::new(|_, _| -1.0);
        assert!(khasminskii_bound(&p, neg, spec, grid, 1.0, 0.5, 0.0, 1.0, 10, &cfg, 1).is_err());
    }

    #[test]
    fn gronwall_closed_forms() {
        let s = GronwallScenario {
            xi0: 1.0,
            eta: 0.0,
            a: AProcess::Zero,
            m: Martingale::Zero,
        };
        let r = stochastic_gronwall_check(&s, 2.0 / 3.0, 1.0 / 3.0, 1.0, 100, 50, 1).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-14);
        assert!((r.rhs_or_cap - 8.0).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);
        let s = GronwallScenario {
            a: AProcess::Linear { rate: 1.0 },
            ..s
        };
        let r = stochastic_gronwall_check(&s, 2.0 / 3.0, 1.0 / 3.0, 1.0, 10_000, 4, 1).unwrap();
        assert!((r.lhs - 1.0f64.exp()).abs() < 1e-3);
        // (E e^{2 A_T})^{1/2} = e^T
        assert!((r.rhs_or_cap - 8.0 * 1f64.exp()).abs() < 1e-10);
        assert!(stochastic_gronwall_check(&s, 0.3, 0.5, 1.0, 10, 10, 1).is_err());
        assert!(stochastic_gronwall_check(&s, 1.0, 0.5, 1.0, 10, 10, 1).is_err());
    }

    #[test]
    fn maximal_function_examples() {
        let grid = GridSpec::new(-4.0, 4.0, 801).unwrap();
        let c = GridFunction::from_fn(grid, |_| -2.5, Extension::Constant).unwrap();
        assert!(maximal_function(&c)
            .values
            .iter()
            .all(|v| (v - 2.5).abs() < 1e-12));
        let ind = GridFunction::from_fn(
            grid,
            |x| if x.abs() <= 1.0 { 1.0 } else { 0.0 },
            Extension::Constant,
        )
        .unwrap();
        let m = maximal_function(&ind);
        let i3 = 700;
        assert!((grid.node(i3) - 3.0).abs() < 1e-12);
        assert!((m.values[i3] - 0.25).abs() <= grid.h(), "{}", m.values[i3]);
        assert!(m.values.iter().zip(&ind.values).all(|(a, b)| a >= &b.abs()));
    }
}
