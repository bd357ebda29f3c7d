//! Long-run behaviour: invariant-measure estimation, the Lyapunov generator
//! margin, total-variation decay between two starting points and the
//! strong-Feller modulus.

use crate::error::{domain, Error, Result};
use crate::integrator::{
    par_paths, path_streams, simulate_snapshots, StateKind, StepConfig, Stepper,
};
use crate::sde::{norm, spherical_radial, SdeProblem};
use crate::stats;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{self, Write};

/// Histogram view of a one-dimensional law together with its raw samples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub count: usize,
    /// Silverman bandwidth, for a kernel view of the same sample.
    pub bandwidth: f64,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Freedman–Diaconis histogram of `samples` (at most 10^4 bins).
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::SampleStarved(format!("{} samples", samples.len())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: "sample".into(),
                location: "empirical measure".into(),
            });
        }
        let s = stats::sorted(&samples);
        let (lo, hi) = (s[0], s[s.len() - 1]);
        let width = stats::freedman_diaconis(&s);
        let bins = if hi > lo && width > 0.0 {
            (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
        } else {
            1
        };
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let w = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + i as f64 * w })
            .collect();
        let mut counts = vec![0usize; bins];
        for &v in &samples {
            let i = (((v - lo) / w) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let n = samples.len() as f64;
        let masses = counts.iter().map(|&c| c as f64 / n).collect();
        let sd = stats::variance(&samples).sqrt();
        let spread = sd.min(stats::iqr_sorted(&s) / 1.34);
        let bandwidth = 0.9 * if spread > 0.0 { spread } else { sd.max(1e-12) } * n.powf(-0.2);
        Ok(Self {
            edges,
            masses,
            count: samples.len(),
            bandwidth,
            samples,
        })
    }

    pub fn mean(&self) -> f64 {
        stats::mean(&self.samples)
    }

    pub fn variance(&self) -> f64 {
        stats::variance(&self.samples)
    }

    /// Fraction of samples outside `[a, b]`.
    pub fn mass_outside(&self, a: f64, b: f64) -> f64 {
        self.samples.iter().filter(|v| **v < a || **v > b).count() as f64 / self.count as f64
    }

    /// CSV with columns `bin_lo, bin_hi, mass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,mass")?;
        for (e, m) in self.edges.windows(2).zip(&self.masses) {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", e[0], e[1], m)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvariantSpec {
    pub x0: f64,
    /// Time discarded before sampling.
    pub burn_in: f64,
    pub n_samples: usize,
    /// Grid steps between retained samples.
    pub thinning: usize,
    /// Independent chains sharing the sample budget (1 = a single long chain).
    pub chains: usize,
}

/// Time averages along long interlaced paths started at `x0`: after
/// `burn_in`, every `thinning`-th grid state is kept. Chains get consecutive
/// stream indices and are pooled in chain order.
pub fn estimate_invariant(
    p: &SdeProblem,
    spec: &InvariantSpec,
    cfg: &StepConfig,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if p.dim != 1 {
        return domain("invariant-measure estimation is implemented for d = 1");
    }
    if spec.n_samples == 0 || spec.thinning == 0 || spec.chains == 0 || !(spec.burn_in >= 0.0) {
        return domain("need n_samples, thinning, chains >= 1 and burn_in >= 0");
    }
    let stepper = Stepper::new(p, *cfg)?;
    let per_chain = spec.n_samples.div_ceil(spec.chains);
    let chains = par_paths(spec.chains, |c| {
        let (mut streams, sign) = path_streams(cfg, seed, c);
        let want = per_chain.min(spec.n_samples.saturating_sub(per_chain * c as usize));
        let horizon = spec.burn_in + (want * spec.thinning) as f64 * cfg.dt * 1.000_001 + cfg.dt;
        let mut out = Vec::with_capacity(want);
        let mut since = 0usize;
        let mut obs = |t: f64, x: &[f64], kind: StateKind| {
            if kind == StateKind::Step && t > spec.burn_in {
                since += 1;
                if since == spec.thinning {
                    since = 0;
                    out.push(x[0]);
                }
            }
            out.len() < want
        };
        let res = stepper.run_interlaced(&[spec.x0], 0.0, horizon, &mut streams, sign, &mut obs)?;
        if let Some(t) = res.exploded_at {
            return Err(Error::Explosion(t));
        }
        Ok(out)
    })?;
    EmpiricalMeasure::from_samples(chains.concat())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovPoint {
    pub x: f64,
    pub generator: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub c1: f64,
    pub c2: f64,
    pub r: f64,
    pub points: Vec<LyapunovPoint>,
    pub max_margin: f64,
    pub pass: bool,
}

/// `L h(x)` for `h(x) = sqrt(1 + |x|^2)`: analytic derivatives for the local
/// part, quadrature of `h(x + g) - h(x) - 1{|z| < R} g . grad h` for the jumps.
pub fn lyapunov_generator(p: &SdeProblem, x: &[f64]) -> Result<f64> {
    if !p.time_homogeneous {
        return domain("the Lyapunov generator needs time-homogeneous coefficients");
    }
    let d = p.dim;
    let h = (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let grad: Vec<f64> = x.iter().map(|v| v / h).collect();
    let b = p.drift(0.0, x);
    let mut value: f64 = b.iter().zip(&grad).map(|(a, g)| a * g).sum();
    if p.has_diffusion() {
        let s = p.sigma(0.0, x);
        // a = sigma sigma^T, hess h = I/h - x x^T / h^3
        for i in 0..d {
            for j in 0..d {
                let a: f64 = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
                let hess = if i == j { 1.0 / h } else { 0.0 } - x[i] * x[j] / h.powi(3);
                value += 0.5 * a * hess;
            }
        }
    }
    if p.has_jumps() {
        let levy = p.levy.as_ref().expect("jumps imply a Levy model");
        let r = levy.big_jump_radius;
        // h(x+g) - h(x) = (2 x.g + |g|^2) / (h(x+g) + h(x)), rearranged so the
        // compensated increment is O(|g|^2) without cancellation
        let increment = |z: &[f64], compensate: bool| {
            let g = p.jump(0.0, x, z);
            let xg: f64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
            let gg: f64 = g.iter().map(|v| v * v).sum();
            let hy = (1.0
                + x.iter()
                    .zip(&g)
                    .map(|(a, b)| (a + b) * (a + b))
                    .sum::<f64>())
            .sqrt();
            let s = h + hy;
            if compensate {
                gg / s - xg * (2.0 * xg + gg) / (h * s * s)
            } else {
                (2.0 * xg + gg) / s
            }
        };
        value += spherical_radial(levy, &|z: &[f64]| increment(z, true), 0.0, r)?;
        value += spherical_radial(levy, &|z: &[f64]| increment(z, false), r, f64::INFINITY)
            .map_err(|e| match e {
                Error::Divergent { .. } => Error::Divergent {
                    endpoint: "r2 = inf".into(),
                    detail:
                        "Gamma^{0,1}_{R,inf}(g) is infinite, the large jumps have no first moment"
                            .into(),
                },
                other => other,
            })?;
    }
    Ok(value)
}

fn radial_points(dim: usize, radii: &[f64]) -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    for &r in radii {
        for s in [1.0, -1.0] {
            if r == 0.0 && s < 0.0 {
                continue;
            }
            let mut x = vec![0.0; dim];
            x[0] = s * r;
            pts.push(x);
        }
    }
    pts
}

/// Margin `L h + c1 h^{1+r} - c2` on `+-r e_1` for each radius; passes when
/// it is nonpositive everywhere.
pub fn lyapunov_margin(
    p: &SdeProblem,
    radial_grid: &[f64],
    c1: f64,
    c2: f64,
    r: f64,
) -> Result<LyapunovReport> {
    let mut points = Vec::new();
    for x in radial_points(p.dim, radial_grid) {
        let lh = lyapunov_generator(p, &x)?;
        let h = (1.0 + norm(&x).powi(2)).sqrt();
        points.push(LyapunovPoint {
            x: x[0],
            generator: lh,
            margin: lh + c1 * h.powf(1.0 + r) - c2,
        });
    }
    let max_margin = points
        .iter()
        .map(|q| q.margin)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LyapunovReport {
        c1,
        c2,
        r,
        points,
        max_margin,
        pass: max_margin <= 0.0,
    })
}

/// Fits `(c1, c2)`: `c1` is half the smallest decay rate `-L h / h^{1+r}` over
/// the outer half of the grid, `c2` the smallest constant closing the bound.
pub fn fit_lyapunov(p: &SdeProblem, radial_grid: &[f64], r: f64) -> Result<LyapunovReport> {
    let rmax = radial_grid.iter().cloned().fold(0.0, f64::max);
    let pts = radial_points(p.dim, radial_grid);
    let mut vals = Vec::with_capacity(pts.len());
    let mut rate = f64::INFINITY;
    for x in &pts {
        let lh = lyapunov_generator(p, x)?;
        let h = (1.0 + norm(x).powi(2)).sqrt();
        if norm(x) >= 0.5 * rmax {
            rate = rate.min(-lh / h.powf(1.0 + r));
        }
        vals.push((lh, h));
    }
    let c1 = 0.5 * rate;
    let c2 = vals
        .iter()
        .map(|(lh, h)| lh + c1 * h.powf(1.0 + r))
        .fold(f64::NEG_INFINITY, f64::max);
    lyapunov_margin(p, radial_grid, c1, c2, r)
}

/// Matched-binning estimate of `TV(law(X), law(Y))` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TvEstimate {
    pub tv: f64,
    pub se: f64,
    pub bin_width: f64,
}

/// `(1/2) sum_bins |p_X - p_Y|` on a common grid anchored at the pooled
/// minimum. Independent samples use the Freedman–Diaconis width of the
/// pooled sample. Paired samples (common random numbers) widen the bins to
/// `min(4 median|X_k - Y_k|, IQR / 8)` when that is larger, since the
/// estimator's upward noise bias is driven by pairs split across bin edges.
/// The standard error is the delta-method value for the paired indicator
/// differences.
pub fn tv_distance(xs: &[f64], ys: &[f64], paired: bool) -> Result<TvEstimate> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return domain("TV estimation needs two samples of equal size >= 2");
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "sample".into(),
            location: "TV estimate".into(),
        });
    }
    let n = xs.len();
    let mut pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let iqr = stats::iqr_sorted(&pooled);
    let mut width = stats::freedman_diaconis(&pooled);
    if paired {
        let mut gaps: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| (a - b).abs()).collect();
        gaps.sort_by(f64::total_cmp);
        let med = stats::quantile_sorted(&gaps, 0.5);
        width = width.max((4.0 * med).min(iqr / 8.0));
    }
    if !(width > 0.0) {
        let spread = pooled[pooled.len() - 1] - pooled[0];
        width = if spread > 0.0 { spread / 64.0 } else { 1.0 };
    }
    let origin = pooled[0];
    let bin = |v: f64| ((v - origin) / width).floor() as i64;
    let mut counts: BTreeMap<i64, i64> = BTreeMap::new();
    for (&a, &b) in xs.iter().zip(ys) {
        *counts.entry(bin(a)).or_insert(0) += 1;
        *counts.entry(bin(b)).or_insert(0) -= 1;
    }
    let total: i64 = counts.values().map(|c| c.abs()).sum();
    let tv = 0.5 * total as f64 / n as f64;
    let sign = |v: f64| counts.get(&bin(v)).map_or(0.0, |c| (*c).signum() as f64);
    let psi: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(&a, &b)| sign(a) - sign(b))
        .collect();
    let se = stats::variance(&psi).sqrt() / (2.0 * (n as f64).sqrt());
    Ok(TvEstimate {
        tv,
        se,
        bin_width: width,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VClass {
    /// Uniform in the starting point (`r > 0`).
    Uniform,
    /// Weighted by `V(x) = 1 + |x|` (`r = 0`).
    VLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TvPoint {
    pub t: f64,
    pub tv: f64,
    pub se: f64,
    pub bin_width: f64,
    pub used: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErgodicityReport {
    /// Fitted decay rate; `+inf` when the two laws are indistinguishable.
    pub gamma: f64,
    pub r_squared: f64,
    pub v_class: VClass,
    pub noise_floor: f64,
    pub points: Vec<TvPoint>,
}

/// TV between the laws started at `x0` and `y0` on `times` (common random
/// numbers across the two ensembles), then a least-squares fit of
/// `log TV = c - gamma t` over the times where TV exceeds three times the
/// binomial noise floor `1/sqrt(n)`.
pub fn tv_decay_rate(
    p: &SdeProblem,
    x0: f64,
    y0: f64,
    times: &[f64],
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
) -> Result<ErgodicityReport> {
    if times.len() < 4 {
        return domain("TV decay fitting needs at least 4 time points");
    }
    if p.dim != 1 {
        return domain("TV decay is implemented for d = 1");
    }
    let v_class = match p.tags.dissipativity {
        Some(d) if d.r > 0.0 => VClass::Uniform,
        _ => VClass::VLinear,
    };
    let noise_floor = 1.0 / (n_paths as f64).sqrt();
    let xs = simulate_snapshots(p, &[x0], times, cfg, n_paths, seed)?;
    let ys = simulate_snapshots(p, &[y0], times, cfg, n_paths, seed)?;
    let mut points = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let a: Vec<f64> = xs.iter().map(|s| s[k][0]).collect();
        let b: Vec<f64> = ys.iter().map(|s| s[k][0]).collect();
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Explosion(t));
        }
        let est = tv_distance(&a, &b, true)?;
        points.push(TvPoint {
            t,
            tv: est.tv,
            se: est.se,
            bin_width: est.bin_width,
            used: est.tv >= 3.0 * noise_floor,
        });
    }
    if x0 == y0 {
        return Ok(ErgodicityReport {
            gamma: f64::INFINITY,
            r_squared: 0.0,
            v_class,
            noise_floor,
            points,
        });
    }
    if !points[0].used {
        return Err(Error::SignalTooWeak(format!(
            "TV = {:.3e} at t = {} is below 3/sqrt(n) = {:.3e}; move x0 and y0 apart or start earlier",
            points[0].tv,
            points[0].t,
            3.0 * noise_floor
        )));
    }
    let used: Vec<&TvPoint> = points.iter().filter(|q| q.used).collect();
    if used.len() < 2 {
        return Ok(ErgodicityReport {
            gamma: f64::INFINITY,
            r_squared: 0.0,
            v_class,
            noise_floor,
            points,
        });
    }
    let lt: Vec<f64> = used.iter().map(|q| q.t).collect();
    let ly: Vec<f64> = used.iter().map(|q| q.tv.ln()).collect();
    let fit = stats::linear_fit(&lt, &ly);
    Ok(ErgodicityReport {
        gamma: -fit.slope,
        r_squared: fit.r_squared,
        v_class,
        noise_floor,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FellerEstimate {
    pub t: f64,
    pub modulus: f64,
    pub se: f64,
    /// `modulus / (|x - y| t^{-1/2})`; absent when `x = y`.
    pub ratio: Option<f64>,
    pub ratio_se: Option<f64>,
}

/// Strong-Feller modulus on the total-variation scale, `TV(law X_t(x),
/// law X_t(y))`, from paired paths with common random numbers. The signal
/// check compares against three paired standard errors.
pub fn strong_feller_modulus(
    p: &SdeProblem,
    t: f64,
    x: f64,
    y: f64,
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
) -> Result<FellerEstimate> {
    if !(t > 0.0) {
        return domain(format!("t must be positive, got {t}"));
    }
    if p.dim != 1 {
        return domain("the strong-Feller modulus is implemented for d = 1");
    }
    if x == y {
        return Ok(FellerEstimate {
            t,
            modulus: 0.0,
            se: 0.0,
            ratio: None,
            ratio_se: None,
        });
    }
    let xs = simulate_snapshots(p, &[x], &[t], cfg, n_paths, seed)?;
    let ys = simulate_snapshots(p, &[y], &[t], cfg, n_paths, seed)?;
    let a: Vec<f64> = xs.iter().map(|s| s[0][0]).collect();
    let b: Vec<f64> = ys.iter().map(|s| s[0][0]).collect();
    if a.iter().chain(&b).any(|v| !v.is_finite()) {
        return Err(Error::Explosion(t));
    }
    let est = tv_distance(&a, &b, true)?;
    let (modulus, se) = (est.tv, est.se);
    if modulus < 3.0 * se || modulus == 0.0 {
        return Err(Error::SignalTooWeak(format!(
            "modulus {modulus:.3e} is within 3 standard errors ({se:.3e}) of zero"
        )));
    }
    let scale = (x - y).abs() / t.sqrt();
    Ok(FellerEstimate {
        t,
        modulus,
        se,
        ratio: Some(modulus / scale),
        ratio_se: Some(se / scale),
    })
}
