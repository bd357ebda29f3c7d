//! Driving noise: isotropic alpha-stable and tabulated radial Lévy measures,
//! their exact samplers, and moment integrals against the Lévy measure.
//!
//! The Lévy measure of `LevyKind::IsotropicStable` is the unnormalized
//! `nu(dz) = |z|^{-d-alpha} dz`. The stand-alone stable sampler instead uses
//! the symbol convention `E exp(i xi.X_t) = exp(-t |xi|^alpha)`; the two are
//! related by [`levy_constant`].

use crate::error::{domain, Error, Result};
use crate::quad::{self, Tolerance};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevyKind {
    IsotropicStable {
        alpha: f64,
    },
    /// `nu(dz) = rho(|z|) dz` with `rho` piecewise linear through the table
    /// and zero outside `[radii[0], radii[last]]`.
    RadialTable {
        radii: Vec<f64>,
        density: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevyModel {
    pub kind: LevyKind,
    pub dim: usize,
    pub big_jump_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: Vec<f64>,
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// `C(d, alpha)` with `int (1 - cos(xi.z)) |z|^{-d-alpha} dz = C |xi|^alpha`.
///
/// A process driven by `|z|^{-d-alpha} dz` at time `t` equals in law the
/// symbol-normalized stable variable at time `C t`.
pub fn levy_constant(d: usize, alpha: f64) -> f64 {
    let df = d as f64;
    PI.powf(df / 2.0) * gamma(-alpha / 2.0).abs() / (2f64.powf(alpha) * gamma((df + alpha) / 2.0))
}

impl LevyModel {
    pub fn stable(alpha: f64, dim: usize, big_jump_radius: f64) -> Result<Self> {
        let m = Self {
            kind: LevyKind::IsotropicStable { alpha },
            dim,
            big_jump_radius,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn radial_table(
        radii: Vec<f64>,
        density: Vec<f64>,
        dim: usize,
        big_jump_radius: f64,
    ) -> Result<Self> {
        let m = Self {
            kind: LevyKind::RadialTable { radii, density },
            dim,
            big_jump_radius,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return domain("dimension must be >= 1");
        }
        if !(self.big_jump_radius > 0.0 && self.big_jump_radius.is_finite()) {
            return domain(format!(
                "big-jump radius must be positive, got {}",
                self.big_jump_radius
            ));
        }
        match &self.kind {
            LevyKind::IsotropicStable { alpha } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return domain(format!("stable exponent must lie in (0, 2), got {alpha}"));
                }
            }
            LevyKind::RadialTable { radii, density } => {
                if radii.len() < 2 || radii.len() != density.len() {
                    return domain("radial table needs >= 2 nodes and matching densities");
                }
                if radii[0] < 0.0
                    || radii.windows(2).any(|w| w[1] <= w[0])
                    || !radii.iter().all(|r| r.is_finite())
                {
                    return domain("radial table radii must be finite, nonnegative and increasing");
                }
                if density.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return domain("radial table densities must be finite and nonnegative");
                }
                let m = self.small_moment_integral()?;
                if !m.is_finite() {
                    return domain("int (|z|^2 ^ 1) nu(dz) is not finite");
                }
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            LevyKind::IsotropicStable { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// Radial profile `rho(r)` of `nu(dz) = rho(|z|) dz`.
    pub fn radial_density(&self, r: f64) -> f64 {
        match &self.kind {
            LevyKind::IsotropicStable { alpha } => {
                if r > 0.0 {
                    r.powf(-(self.dim as f64) - alpha)
                } else {
                    f64::INFINITY
                }
            }
            LevyKind::RadialTable { radii, density } => table_eval(radii, density, r),
        }
    }

    /// `int (|z|^2 ^ 1) nu(dz)`.
    pub fn small_moment_integral(&self) -> Result<f64> {
        Ok(self.tail_mass(0.0, 1.0, 2.0)? + self.tail_mass(1.0, f64::INFINITY, 0.0)?)
    }

    /// `int_{r1 <= |z| < r2} |z|^moment nu(dz)`.
    pub fn tail_mass(&self, r1: f64, r2: f64, moment: f64) -> Result<f64> {
        if !(r1 >= 0.0 && r2 >= r1) || moment < 0.0 || r1.is_nan() || r2.is_nan() {
            return domain(format!(
                "tail_mass needs 0 <= r1 <= r2 and moment >= 0, got ({r1}, {r2}, {moment})"
            ));
        }
        if r1 == r2 {
            return Ok(0.0);
        }
        let omega = sphere_area(self.dim);
        match &self.kind {
            LevyKind::IsotropicStable { alpha } => {
                // omega * int r^{k-1} dr with k = moment - alpha
                let k = moment - alpha;
                if k > 0.0 {
                    if r2.is_infinite() {
                        return Err(divergent("r2 = inf", moment, *alpha));
                    }
                    Ok(omega * (r2.powf(k) - r1.powf(k)) / k)
                } else if k < 0.0 {
                    if r1 == 0.0 {
                        return Err(divergent("r1 = 0", moment, *alpha));
                    }
                    let upper = if r2.is_infinite() { 0.0 } else { r2.powf(k) };
                    Ok(omega * (r1.powf(k) - upper) / (-k))
                } else {
                    if r1 == 0.0 {
                        return Err(divergent("r1 = 0", moment, *alpha));
                    }
                    if r2.is_infinite() {
                        return Err(divergent("r2 = inf", moment, *alpha));
                    }
                    Ok(omega * (r2 / r1).ln())
                }
            }
            LevyKind::RadialTable { radii, density } => {
                let d = self.dim as i32;
                let mut total = 0.0;
                for (w, v) in radii.windows(2).zip(density.windows(2)) {
                    let a = w[0].max(r1);
                    let b = w[1].min(r2);
                    if b <= a {
                        continue;
                    }
                    let f = |r: f64| {
                        let s = (r - w[0]) / (w[1] - w[0]);
                        (v[0] + s * (v[1] - v[0])) * r.powf(moment) * r.powi(d - 1)
                    };
                    total += quad::adaptive(f, a, b, Tolerance::new(1e-300, 1e-12))?.0;
                }
                Ok(omega * total)
            }
        }
    }

    /// Rate `nu(B_R^c)` of the large-jump Poisson clock.
    pub fn big_jump_rate(&self) -> f64 {
        self.tail_mass(self.big_jump_radius, f64::INFINITY, 0.0)
            .expect("finite for a valid model")
    }

    /// Sampler for jump marks with `r1 <= |z| < r2`.
    pub fn shell(&self, r1: f64, r2: f64) -> Result<ShellSampler> {
        let rate = self.tail_mass(r1, r2, 0.0)?;
        let radius = match &self.kind {
            LevyKind::IsotropicStable { alpha } => RadiusLaw::Power {
                alpha: *alpha,
                r1,
                r2,
            },
            LevyKind::RadialTable { radii, density } => {
                RadiusLaw::Tabulated(radius_cdf_table(radii, density, self.dim, r1, r2)?)
            }
        };
        Ok(ShellSampler {
            dim: self.dim,
            rate,
            radius,
        })
    }

    /// Large jumps on `[0, horizon]`: Poisson times at rate `nu(B_R^c)`,
    /// marks from the normalized restriction of `nu` to `B_R^c`.
    pub fn sample_large_jumps<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Vec<JumpEvent> {
        let shell = self
            .shell(self.big_jump_radius, f64::INFINITY)
            .expect("valid model");
        shell.sample_events(0.0, horizon, rng)
    }

    /// One increment at time `t` of the symbol-normalized isotropic stable
    /// process `E exp(i xi.X_t) = exp(-t |xi|^alpha)`.
    pub fn sample_isotropic_stable<R: Rng + ?Sized>(
        &self,
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match self.kind {
            LevyKind::IsotropicStable { alpha } => {
                let mut out = vec![0.0; self.dim];
                sample_isotropic_stable_into(alpha, t, rng, &mut out)?;
                Ok(out)
            }
            _ => domain("sample_isotropic_stable requires an isotropic stable model"),
        }
    }
}

fn divergent(endpoint: &str, moment: f64, alpha: f64) -> Error {
    Error::Divergent {
        endpoint: endpoint.to_string(),
        detail: format!("|z|^{moment} against |z|^(-d-{alpha}) is not integrable there"),
    }
}

fn table_eval(radii: &[f64], density: &[f64], r: f64) -> f64 {
    if r < radii[0] || r > radii[radii.len() - 1] {
        return 0.0;
    }
    let i = match radii.binary_search_by(|p| p.total_cmp(&r)) {
        Ok(i) => return density[i],
        Err(i) => i - 1,
    };
    let s = (r - radii[i]) / (radii[i + 1] - radii[i]);
    density[i] + s * (density[i + 1] - density[i])
}

const TABLE_REFINE: usize = 64;

fn radius_cdf_table(
    radii: &[f64],
    density: &[f64],
    d: usize,
    r1: f64,
    r2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let lo = radii[0].max(r1);
    let hi = radii[radii.len() - 1].min(r2);
    let mut nodes = vec![];
    let mut cdf = vec![];
    if hi <= lo {
        return Ok((nodes, cdf));
    }
    let n = TABLE_REFINE * (radii.len() - 1);
    let f = |r: f64| table_eval(radii, density, r) * r.powi(d as i32 - 1);
    let mut acc = 0.0;
    nodes.push(lo);
    cdf.push(0.0);
    for k in 1..=n {
        let a = lo + (hi - lo) * (k - 1) as f64 / n as f64;
        let b = lo + (hi - lo) * k as f64 / n as f64;
        acc += quad::gauss_kronrod(&f, a, b).0;
        nodes.push(b);
        cdf.push(acc);
    }
    if acc > 0.0 {
        cdf.iter_mut().for_each(|c| *c /= acc);
    }
    Ok((nodes, cdf))
}

#[derive(Clone, Debug)]
enum RadiusLaw {
    Power { alpha: f64, r1: f64, r2: f64 },
    Tabulated((Vec<f64>, Vec<f64>)),
}

/// Poisson sampler for the jumps of `nu` restricted to a radial shell.
#[derive(Clone, Debug)]
pub struct ShellSampler {
    dim: usize,
    rate: f64,
    radius: RadiusLaw,
}

impl ShellSampler {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn sample_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match &self.radius {
            RadiusLaw::Power { alpha, r1, r2 } => {
                // P(|Z| > r) proportional to r^{-alpha} - r2^{-alpha}
                let a = r1.powf(-alpha);
                let b = if r2.is_infinite() {
                    0.0
                } else {
                    r2.powf(-alpha)
                };
                (a - u * (a - b)).powf(-1.0 / alpha)
            }
            RadiusLaw::Tabulated((nodes, cdf)) => {
                let i = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[i - 1], cdf[i]);
                let s = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                nodes[i - 1] + s * (nodes[i] - nodes[i - 1])
            }
        }
    }

    pub fn sample_mark_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let r = self.sample_radius(rng);
        unit_direction_into(self.dim, rng, out);
        out.iter_mut().for_each(|v| *v *= r);
    }

    /// Jump events on `(t0, t1]` in increasing time order.
    pub fn sample_events<R: Rng + ?Sized>(&self, t0: f64, t1: f64, rng: &mut R) -> Vec<JumpEvent> {
        let mut events = Vec::new();
        if self.rate <= 0.0 {
            return events;
        }
        let mut t = t0;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / self.rate;
            if t > t1 {
                break;
            }
            let mut mark = vec![0.0; self.dim];
            self.sample_mark_into(rng, &mut mark);
            events.push(JumpEvent { time: t, mark });
        }
        events
    }

    /// Number of shell jumps in a window of length `dt`.
    pub fn poisson_count<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> u64 {
        let mean = self.rate * dt;
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean)
            .map(|p| p.sample(rng) as u64)
            .unwrap_or(0)
    }
}

pub(crate) fn unit_direction_into<R: Rng + ?Sized>(d: usize, rng: &mut R, out: &mut [f64]) {
    if d == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
            n2 += *v * *v;
        }
        if n2 > 1e-300 {
            let n = n2.sqrt();
            out.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

/// Chambers–Mallows–Stuck draw of a standard symmetric stable variable with
/// `E exp(i xi X) = exp(-|xi|^alpha)`, `alpha in (0, 2]`.
pub fn standard_symmetric_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    if alpha == 1.0 {
        return v.tan();
    }
    (alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Kanter's draw of a positive stable variable with Laplace transform
/// `E exp(-s A) = exp(-s^a)`, `a in (0, 1]`.
pub fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a == 1.0 {
        return 1.0;
    }
    let v = PI * rng.random::<f64>();
    let w: f64 = Exp1.sample(rng);
    let sv = v.sin();
    (a * v).sin() / sv.powf(1.0 / a) * (((1.0 - a) * v).sin() / w).powf((1.0 - a) / a)
}

/// Symbol-normalized stable increment at time `t` for `alpha in (0, 2]`:
/// CMS in one dimension, Brownian subordination by a positive
/// `alpha/2`-stable clock otherwise.
pub fn sample_isotropic_stable_into<R: Rng + ?Sized>(
    alpha: f64,
    t: f64,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return domain(format!("stable exponent must lie in (0, 2], got {alpha}"));
    }
    if !(t >= 0.0) {
        return domain(format!("time must be nonnegative, got {t}"));
    }
    if t == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    if out.len() == 1 {
        out[0] = t.powf(1.0 / alpha) * standard_symmetric_stable(alpha, rng);
        return Ok(());
    }
    // X = sqrt(2 A_t) N(0, I) with E exp(-s A_t) = exp(-t s^{alpha/2})
    let a = t.powf(2.0 / alpha) * positive_stable(alpha / 2.0, rng);
    let scale = (2.0 * a).sqrt();
    for v in out.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v = scale * n;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn tail_mass_closed_forms() {
        let m = LevyModel::stable(1.5, 1, 1.0).unwrap();
        assert!((m.tail_mass(0.0, 1.0, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((m.tail_mass(1.0, f64::INFINITY, 0.0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.tail_mass(0.3, 0.3, 1.0).unwrap(), 0.0);
        assert!((m.big_jump_rate() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tail_mass_divergence_names_endpoint() {
        let m = LevyModel::stable(1.5, 1, 1.0).unwrap();
        match m.tail_mass(0.0, 1.0, 1.0) {
            Err(Error::Divergent { endpoint, .. }) => assert_eq!(endpoint, "r1 = 0"),
            other => panic!("{other:?}"),
        }
        match m.tail_mass(1.0, f64::INFINITY, 2.0) {
            Err(Error::Divergent { endpoint, .. }) => assert_eq!(endpoint, "r2 = inf"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(LevyModel::stable(2.0, 1, 1.0).is_err());
        assert!(LevyModel::stable(0.0, 1, 1.0).is_err());
        assert!(LevyModel::stable(1.5, 1, 0.0).is_err());
        assert!(LevyModel::radial_table(vec![1.0, 0.5], vec![1.0, 1.0], 1, 1.0).is_err());
        let m = LevyModel::stable(1.5, 1, 1.0).unwrap();
        let mut r = stream(0, 0);
        assert!(m.sample_isotropic_stable(-1.0, &mut r).is_err());
    }

    #[test]
    fn zero_time_increment_is_zero() {
        let m = LevyModel::stable(1.5, 1, 1.0).unwrap();
        let mut r = stream(0, 0);
        assert_eq!(m.sample_isotropic_stable(0.0, &mut r).unwrap(), vec![0.0]);
    }

    #[test]
    fn levy_constant_cauchy_and_gaussian_limits() {
        assert!((levy_constant(1, 1.0) - PI).abs() < 1e-12);
        // d = 3, alpha = 1: int (1-cos) |z|^{-4} dz = pi^2 |xi|
        assert!((levy_constant(3, 1.0) - PI * PI).abs() < 1e-10);
    }

    #[test]
    fn radial_table_without_mass_outside_radius_has_no_large_jumps() {
        let m = LevyModel::radial_table(vec![0.0, 0.5, 1.0], vec![2.0, 1.0, 0.0], 1, 1.0).unwrap();
        let mut r = stream(3, 0);
        assert!(m.sample_large_jumps(100.0, &mut r).is_empty());
    }

    #[test]
    fn radial_table_moments_match_quadrature() {
        // rho(r) = 1 - r on [0, 1], d = 1: int_{|z|<1} z^2 rho = 2 (1/3 - 1/4) = 1/6
        let m = LevyModel::radial_table(vec![0.0, 1.0], vec![1.0, 0.0], 1, 0.5).unwrap();
        assert!((m.tail_mass(0.0, 1.0, 2.0).unwrap() - 1.0 / 6.0).abs() < 1e-12);
        // tail beyond 0.5: 2 int_{0.5}^1 (1-r) dr = 0.25
        assert!((m.big_jump_rate() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn large_jump_marks_respect_radius() {
        let m = LevyModel::stable(1.2, 3, 0.7).unwrap();
        let mut r = stream(11, 0);
        let ev = m.sample_large_jumps(50.0, &mut r);
        assert!(!ev.is_empty());
        for w in ev.windows(2) {
            assert!(w[0].time < w[1].time);
        }
        for e in &ev {
            let n: f64 = e.mark.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n >= 0.7 && e.time <= 50.0);
        }
    }
}
