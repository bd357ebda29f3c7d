//! Transition densities: Fourier-inversion references for isotropic stable
//! laws, kernel density estimates of simulated laws, two-sided and gradient
//! envelope checks, and densities of processes killed on leaving an interval.

use crate::error::{domain, Error, Result};
use crate::integrator::{
    par_paths, path_streams, simulate_snapshots, StateKind, StepConfig, Stepper,
};
use crate::levy::levy_constant;
use crate::quad::{self, Tolerance};
use crate::sde::SdeProblem;
use crate::stats;
use serde::Serialize;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use std::io::{self, Write};

/// Beyond `TAIL_SWITCH * t^{1/alpha}` the oscillatory inversion is not
/// trusted and the tail asymptotic is offered instead.
pub const TAIL_SWITCH: f64 = 20.0;

/// Density at radius `r` of the isotropic stable law in `R^d` with
/// characteristic function `exp(-t |xi|^alpha)`.
pub fn stable_density_reference(alpha: f64, d: usize, t: f64, r: f64) -> Result<f64> {
    validate_stable(alpha, d, t, r)?;
    if alpha == 2.0 {
        return Ok((4.0 * PI * t).powf(-(d as f64) / 2.0) * (-r * r / (4.0 * t)).exp());
    }
    let scale = t.powf(1.0 / alpha);
    let rho = r / scale;
    if rho > TAIL_SWITCH {
        return Err(Error::Accuracy {
            r,
            tail: stable_tail(alpha, d, t, r),
        });
    }
    Ok(unit_density(alpha, d, rho)? * scale.powi(-(d as i32)))
}

/// As [`stable_density_reference`], but falls back to the tail asymptotic
/// instead of failing; for integrals over long ranges.
pub fn stable_density(alpha: f64, d: usize, t: f64, r: f64) -> Result<f64> {
    match stable_density_reference(alpha, d, t, r) {
        Err(Error::Accuracy { tail, .. }) => Ok(tail),
        other => other,
    }
}

/// `c_{d,alpha} t r^{-d-alpha}`, the large-`r` behaviour of the density.
pub fn stable_tail(alpha: f64, d: usize, t: f64, r: f64) -> f64 {
    t * r.powf(-(d as f64) - alpha) / levy_constant(d, alpha)
}

fn validate_stable(alpha: f64, d: usize, t: f64, r: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return domain(format!("alpha must lie in (0, 2], got {alpha}"));
    }
    if d == 0 || !(t > 0.0) || !(r >= 0.0) || !r.is_finite() {
        return domain(format!(
            "need d >= 1, t > 0, r >= 0 (d = {d}, t = {t}, r = {r})"
        ));
    }
    Ok(())
}

/// Oscillatory integral `int_0^inf f(s) ds` summed over panels of width
/// `pi / rho` (half periods), stopping once `e^{-s^alpha}` is negligible.
fn oscillatory<F: Fn(f64) -> f64>(f: F, alpha: f64, rho: f64) -> Result<f64> {
    let s_max = 42f64.powf(1.0 / alpha);
    let width = if rho > 0.0 { (PI / rho).min(1.0) } else { 1.0 };
    let tol = Tolerance::new(1e-17, 1e-12);
    let mut total = 0.0;
    let mut a = 0.0;
    while a < s_max {
        let b = a + width;
        total += quad::adaptive(&f, a, b, tol)?.0;
        a = b;
    }
    Ok(total)
}

fn unit_density(alpha: f64, d: usize, rho: f64) -> Result<f64> {
    match d {
        1 => Ok(oscillatory(|s| (rho * s).cos() * (-s.powf(alpha)).exp(), alpha, rho)? / PI),
        3 if rho > 0.0 => Ok(oscillatory(
            |s| s * (rho * s).sin() * (-s.powf(alpha)).exp(),
            alpha,
            rho,
        )? / (2.0 * PI * PI * rho)),
        _ => {
            // radial Fourier inversion with J_{d/2 - 1}
            let df = d as f64;
            let nu = df / 2.0 - 1.0;
            if rho == 0.0 {
                let v = gamma(df / alpha) / alpha;
                return Ok(v / (2f64.powf(df - 1.0) * PI.powf(df / 2.0) * gamma(df / 2.0)));
            }
            let v = oscillatory(
                |s| s.powf(df / 2.0) * bessel_j(nu, rho * s) * (-s.powf(alpha)).exp(),
                alpha,
                rho,
            )?;
            Ok(v * (2.0 * PI).powf(-df / 2.0) * rho.powf(-nu))
        }
    }
}

/// Bessel function `J_nu(x)` for integer or half-integer `nu >= 0`, `x >= 0`.
pub(crate) fn bessel_j(nu: f64, x: f64) -> f64 {
    if x < 12.0 {
        // power series; cancellation stays below 1e-10 absolute on this range
        let h = 0.5 * x;
        let mut term = h.powf(nu) / gamma(nu + 1.0);
        let mut sum = term;
        for k in 1..200 {
            let kf = k as f64;
            term *= -h * h / (kf * (kf + nu));
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        return sum;
    }
    if nu.fract() == 0.0 {
        // periodic trapezoid of the Bessel integral is spectrally accurate
        let n = nu as i32;
        let m = (x as usize + n as usize + 40) * 2;
        let s: f64 = (0..m)
            .map(|k| {
                let tau = 2.0 * PI * k as f64 / m as f64;
                (n as f64 * tau - x * tau.sin()).cos()
            })
            .sum();
        return s / m as f64;
    }
    // spherical Bessel recurrence, stable upward for x > order
    let order = (nu - 0.5).round() as usize;
    let mut jm = x.sin() / x;
    if order == 0 {
        return jm * (2.0 * x / PI).sqrt();
    }
    let mut j = x.sin() / (x * x) - x.cos() / x;
    for l in 1..order {
        let next = (2 * l + 1) as f64 / x * j - jm;
        jm = j;
        j = next;
    }
    j * (2.0 * x / PI).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
    Silverman,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
}

impl DensityEstimate {
    /// Trapezoid mass over the evaluation window.
    pub fn mass(&self) -> f64 {
        quad::trapezoid(&self.points, &self.values)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,value,se")?;
        for ((x, v), s) in self.points.iter().zip(&self.values).zip(&self.se) {
            writeln!(w, "{x:.16e},{v:.16e},{s:.16e}")?;
        }
        Ok(())
    }
}

pub fn silverman(samples: &[f64]) -> f64 {
    let s = stats::sorted(samples);
    let sd = stats::variance(samples).sqrt();
    let iqr = stats::iqr_sorted(&s) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

const KERNEL_ROUGHNESS: f64 = 0.282_094_791_773_878_14; // 1 / (2 sqrt(pi))

/// Gaussian KDE of `samples` normalized by `n_total` (>= samples.len(), the
/// excess counting as mass elsewhere), with the asymptotic standard error
/// `sqrt(f R(K) / (n h))`.
fn kde_normalized(samples: &[f64], n_total: usize, points: &[f64], h: f64) -> DensityEstimate {
    let s = stats::sorted(samples);
    let norm = 1.0 / (n_total as f64 * h * (2.0 * PI).sqrt());
    let reach = 9.0 * h;
    let values: Vec<f64> = points
        .iter()
        .map(|&x| {
            let lo = s.partition_point(|v| *v < x - reach);
            let hi = s.partition_point(|v| *v <= x + reach);
            s[lo..hi]
                .iter()
                .map(|v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect();
    let se = values
        .iter()
        .map(|f| (f * KERNEL_ROUGHNESS / (n_total as f64 * h)).sqrt())
        .collect();
    DensityEstimate {
        points: points.to_vec(),
        values,
        se,
        bandwidth: h,
        n_samples: n_total,
    }
}

pub fn kde_density(
    samples: &[f64],
    points: &[f64],
    bandwidth: Bandwidth,
) -> Result<DensityEstimate> {
    if samples.len() < 1000 {
        return Err(Error::SampleStarved(format!(
            "{} samples, KDE needs at least 1000",
            samples.len()
        )));
    }
    if points.is_empty() {
        return domain("empty evaluation window");
    }
    if samples.iter().chain(points).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "sample".into(),
            location: "KDE input".into(),
        });
    }
    let h = match bandwidth {
        Bandwidth::Silverman => silverman(samples),
        Bandwidth::Value(h) => h,
    };
    if !(h > 0.0) {
        return domain(format!("bandwidth must be positive, got {h}"));
    }
    Ok(kde_normalized(samples, samples.len(), points, h))
}

/// One density value on a `(t, |x - y|)` grid, with its standard error
/// (zero for exact values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KernelValue {
    pub t: f64,
    pub dist: f64,
    pub value: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundWitness {
    pub t: f64,
    pub dist: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundFit {
    pub c1: f64,
    pub c2: f64,
    pub violations: usize,
    /// Points whose value is within three standard errors of zero.
    pub excluded: usize,
    pub t_range: (f64, f64),
    pub x_range: (f64, f64),
    pub min_witness: Option<BoundWitness>,
    pub max_witness: Option<BoundWitness>,
    pub pass: bool,
}

/// `t (t^{1/alpha} + r)^{-d-alpha}`.
pub fn stable_envelope(alpha: f64, d: usize, t: f64, r: f64) -> f64 {
    t * (t.powf(1.0 / alpha) + r).powf(-(d as f64) - alpha)
}

fn ranges(values: &[KernelValue]) -> ((f64, f64), (f64, f64)) {
    let fold = |f: fn(&KernelValue) -> f64| {
        values
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            })
    };
    (fold(|v| v.t), fold(|v| v.dist))
}

/// Fits `c1 = min`, `c2 = max` of `rho / envelope` over the values above
/// the noise floor; passes when `c1 > 0` and `c2 / c1 <= max_ratio`.
pub fn check_two_sided(
    values: &[KernelValue],
    alpha: f64,
    d: usize,
    max_ratio: f64,
) -> Result<BoundFit> {
    if values.is_empty() {
        return domain("no density values to check");
    }
    let (t_range, x_range) = ranges(values);
    let mut excluded = 0;
    let mut lo: Option<BoundWitness> = None;
    let mut hi: Option<BoundWitness> = None;
    for v in values {
        if v.se > 0.0 && v.value <= 3.0 * v.se {
            excluded += 1;
            continue;
        }
        let w = BoundWitness {
            t: v.t,
            dist: v.dist,
            ratio: v.value / stable_envelope(alpha, d, v.t, v.dist),
        };
        if lo.is_none_or(|l| w.ratio < l.ratio) {
            lo = Some(w);
        }
        if hi.is_none_or(|h| w.ratio > h.ratio) {
            hi = Some(w);
        }
    }
    let (c1, c2) = match (lo, hi) {
        (Some(l), Some(h)) => (l.ratio, h.ratio),
        _ => {
            return Err(Error::SignalTooWeak(
                "every density value is within 3 SE of zero".into(),
            ))
        }
    };
    let pass = c1 > 0.0 && c2 / c1 <= max_ratio;
    Ok(BoundFit {
        c1,
        c2,
        violations: 0,
        excluded,
        t_range,
        x_range,
        min_witness: lo,
        max_witness: hi,
        pass,
    })
}

/// Counts values outside `[lower, upper] * envelope` by more than three
/// standard errors; values within three standard errors of zero are
/// excluded. `c1`, `c2` of the result are the observed ratio range.
pub fn check_envelope(
    values: &[KernelValue],
    alpha: f64,
    d: usize,
    lower: f64,
    upper: f64,
) -> Result<BoundFit> {
    if !(lower <= upper) {
        return domain("envelope needs lower <= upper");
    }
    let mut fit = check_two_sided(values, alpha, d, f64::INFINITY)?;
    let mut violations = 0;
    for v in values {
        if v.se > 0.0 && v.value <= 3.0 * v.se {
            continue;
        }
        let env = stable_envelope(alpha, d, v.t, v.dist);
        if v.value + 3.0 * v.se < lower * env || v.value - 3.0 * v.se > upper * env {
            violations += 1;
        }
    }
    fit.violations = violations;
    fit.pass = violations == 0;
    Ok(fit)
}

/// Reference values of the stable law on a `(t, r)` product grid.
pub fn reference_grid(
    alpha: f64,
    d: usize,
    times: &[f64],
    radii: &[f64],
) -> Result<Vec<KernelValue>> {
    let mut out = Vec::with_capacity(times.len() * radii.len());
    for &t in times {
        for &r in radii {
            out.push(KernelValue {
                t,
                dist: r,
                value: stable_density(alpha, d, t, r)?,
                se: 0.0,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradientPoint {
    pub x: f64,
    pub gradient: f64,
    pub se: f64,
    /// `|grad| (t^{1/alpha} + |x - y|)^{d + alpha} t^{1/alpha - 1}`.
    pub scaled: f64,
    pub scaled_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientReport {
    pub t: f64,
    pub y: f64,
    pub points: Vec<GradientPoint>,
    pub sup_scaled: f64,
    /// The standard error at the supremum exceeds half the estimate.
    pub inconclusive: bool,
}

fn gradient_scale(alpha: f64, t: f64, dist: f64) -> f64 {
    (t.powf(1.0 / alpha) + dist).powf(1.0 + alpha) * t.powf(1.0 / alpha - 1.0)
}

fn gradient_report(t: f64, y: f64, points: Vec<GradientPoint>) -> GradientReport {
    let best = points
        .iter()
        .max_by(|a, b| a.scaled.total_cmp(&b.scaled))
        .copied();
    let (sup_scaled, inconclusive) = match best {
        Some(b) => (b.scaled, b.scaled_se > 0.5 * b.scaled),
        None => (0.0, true),
    };
    GradientReport {
        t,
        y,
        points,
        sup_scaled,
        inconclusive,
    }
}

/// Gradient of the start point of the simulated density `rho(t, x, y)` by
/// central differences of KDEs started at `x +- h` with common random
/// numbers. `alpha` sets the envelope scaling (use 2 for diffusions).
#[allow(clippy::too_many_arguments)]
pub fn check_gradient_bound(
    p: &SdeProblem,
    alpha: f64,
    t: f64,
    x_grid: &[f64],
    y: f64,
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
    h: f64,
) -> Result<GradientReport> {
    if !(h > 0.0) {
        return domain(format!("probe step must be positive, got {h}"));
    }
    if !(t > 0.0) || p.dim != 1 {
        return domain("gradient check needs t > 0 and d = 1");
    }
    let mut points = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let up: Vec<f64> = simulate_snapshots(p, &[x + h], &[t], cfg, n_paths, seed)?
            .iter()
            .map(|s| s[0][0])
            .collect();
        let dn: Vec<f64> = simulate_snapshots(p, &[x - h], &[t], cfg, n_paths, seed)?
            .iter()
            .map(|s| s[0][0])
            .collect();
        if up.iter().chain(&dn).any(|v| !v.is_finite()) {
            return Err(Error::Explosion(t));
        }
        let pooled: Vec<f64> = up.iter().chain(&dn).copied().collect();
        let bw = silverman(&pooled);
        let kernel = |v: f64| (-0.5 * ((v - y) / bw).powi(2)).exp() / (bw * (2.0 * PI).sqrt());
        let psi: Vec<f64> = up
            .iter()
            .zip(&dn)
            .map(|(a, b)| (kernel(*a) - kernel(*b)) / (2.0 * h))
            .collect();
        let (gradient, se) = stats::mean_se(&psi);
        let scale = gradient_scale(alpha, t, (x - y).abs());
        points.push(GradientPoint {
            x,
            gradient,
            se,
            scaled: gradient.abs() * scale,
            scaled_se: se * scale,
        });
    }
    Ok(gradient_report(t, y, points))
}

/// The same scaled gradient for the stable reference density, by central
/// differences of exact values.
pub fn reference_gradient(
    alpha: f64,
    t: f64,
    x_grid: &[f64],
    y: f64,
    h: f64,
) -> Result<GradientReport> {
    if !(h > 0.0) {
        return domain(format!("probe step must be positive, got {h}"));
    }
    let mut points = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let g = (stable_density(alpha, 1, t, (x + h - y).abs())?
            - stable_density(alpha, 1, t, (x - h - y).abs())?)
            / (2.0 * h);
        let scaled = g.abs() * gradient_scale(alpha, t, (x - y).abs());
        points.push(GradientPoint {
            x,
            gradient: g,
            se: 0.0,
            scaled,
            scaled_se: 0.0,
        });
    }
    Ok(gradient_report(t, y, points))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KilledDensity {
    pub density: DensityEstimate,
    pub survival: f64,
    /// Every estimate exceeds three standard errors.
    pub positive: bool,
}

/// Density at time `t` of the process started at `x` and killed at its first
/// exit from `(lo, hi)`, tested at every grid and jump time; a jump landing
/// outside kills at the jump time.
#[allow(clippy::too_many_arguments)]
pub fn killed_density(
    p: &SdeProblem,
    interval: (f64, f64),
    t: f64,
    x: f64,
    points: &[f64],
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
) -> Result<KilledDensity> {
    let (lo, hi) = interval;
    if p.dim != 1 || !(lo < hi) || !(x > lo && x < hi) || !(t > 0.0) {
        return domain(format!(
            "need d = 1, t > 0 and x in the open interval ({lo}, {hi}); x = {x}"
        ));
    }
    let stepper = Stepper::new(p, *cfg)?;
    let ends = par_paths(n_paths, |i| {
        let (mut streams, sign) = path_streams(cfg, seed, i);
        let mut inside = true;
        let mut obs = |_t: f64, s: &[f64], kind: StateKind| {
            if kind != StateKind::PreJump && !(s[0] > lo && s[0] < hi) {
                inside = false;
            }
            inside
        };
        let out = stepper.run_interlaced(&[x], 0.0, t, &mut streams, sign, &mut obs)?;
        Ok((inside && out.exploded_at.is_none()).then(|| out.x_end[0]))
    })?;
    let survivors: Vec<f64> = ends.into_iter().flatten().collect();
    let survival = survivors.len() as f64 / n_paths as f64;
    if survival < 1e-3 || survivors.len() < 2 {
        return Err(Error::SampleStarved(format!(
            "survival probability {survival:.3e}"
        )));
    }
    if points.is_empty() {
        return domain("empty evaluation window");
    }
    let h = silverman(&survivors);
    if !(h > 0.0) {
        return domain("survivors have no spread");
    }
    let density = kde_normalized(&survivors, n_paths, points, h);
    let positive = density
        .values
        .iter()
        .zip(&density.se)
        .all(|(v, s)| *v > 3.0 * s);
    Ok(KilledDensity {
        density,
        survival,
        positive,
    })
}

/// `sum_n phi_n(x) phi_n(y) e^{-lambda_n t}` for Brownian motion with
/// generator `(sigma^2 / 2) d^2/dx^2` killed outside `(lo, hi)`.
pub fn dirichlet_brownian_kernel(sigma: f64, interval: (f64, f64), t: f64, x: f64, y: f64) -> f64 {
    let (lo, hi) = interval;
    let len = hi - lo;
    let mut sum = 0.0;
    for n in 1..10_000 {
        let k = n as f64 * PI / len;
        let decay = (-0.5 * sigma * sigma * k * k * t).exp();
        sum += 2.0 / len * (k * (x - lo)).sin() * (k * (y - lo)).sin() * decay;
        if decay < 1e-18 {
            break;
        }
    }
    sum
}
