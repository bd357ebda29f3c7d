//! Coefficient triples `(sigma, b, g)` for jump SDEs together with
//! grid-based audits of the structural hypotheses placed on them.
//!
//! Coefficients are shared closures. They must be free of hidden mutable
//! state: ensembles call them concurrently from worker threads.

use crate::error::{domain, Error, Result};
use crate::levy::{LevyKind, LevyModel};
use crate::quad;
use crate::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// `(t, x) -> scalar`
pub type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, out)`; writes a vector (or a row-major `d x d` matrix).
pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, z, out)`
pub type JumpMap = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Floor applied to `|x|` before evaluating the singular drift part.
pub const SINGULAR_FLOOR: f64 = 1e-10;

#[derive(Clone)]
pub enum Diffusion {
    None,
    /// `sigma(t, x) = s(t, x) I`
    Scalar(ScalarField),
    /// Row-major `d x d` matrix.
    Matrix(VectorField),
}

#[derive(Clone)]
pub enum JumpCoeff {
    None,
    /// `g(t, x, z) = s(t, x) z`
    Scalar(ScalarField),
    /// Arbitrary `g`; `odd_in_z` declares `g(t, x, -z) = -g(t, x, z)`, which
    /// makes every symmetric compensator vanish.
    General {
        map: JumpMap,
        odd_in_z: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipticity {
    pub c0: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRegularity {
    pub c1: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dissipativity {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTags {
    pub ellipticity: Option<Ellipticity>,
    pub jump: Option<JumpRegularity>,
    pub dissipativity: Option<Dissipativity>,
}

#[derive(Clone)]
pub struct SdeProblem {
    pub name: String,
    pub dim: usize,
    pub diffusion: Diffusion,
    /// Singular part `b1`, evaluated with `|x|` floored at [`SINGULAR_FLOOR`].
    pub drift_singular: Option<VectorField>,
    /// Regular part `b2`.
    pub drift_regular: Option<VectorField>,
    pub jump: JumpCoeff,
    pub levy: Option<LevyModel>,
    pub tags: HypothesisTags,
    pub time_homogeneous: bool,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("levy", &self.levy)
            .field("tags", &self.tags)
            .finish_non_exhaustive()
    }
}

impl SdeProblem {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            diffusion: Diffusion::None,
            drift_singular: None,
            drift_regular: None,
            jump: JumpCoeff::None,
            levy: None,
            tags: HypothesisTags::default(),
            time_homogeneous: true,
        }
    }

    pub fn with_constant_diffusion(self, s: f64) -> Self {
        self.with_scalar_diffusion(Arc::new(move |_, _| s))
    }

    pub fn with_scalar_diffusion(mut self, s: ScalarField) -> Self {
        self.diffusion = Diffusion::Scalar(s);
        self
    }

    pub fn with_matrix_diffusion(mut self, m: VectorField) -> Self {
        self.diffusion = Diffusion::Matrix(m);
        self
    }

    pub fn with_drift(mut self, b: VectorField) -> Self {
        self.drift_regular = Some(b);
        self
    }

    pub fn with_singular_drift(mut self, b: VectorField) -> Self {
        self.drift_singular = Some(b);
        self
    }

    pub fn with_jumps(mut self, g: JumpCoeff, levy: LevyModel) -> Self {
        self.jump = g;
        self.levy = Some(levy);
        self
    }

    pub fn with_tags(mut self, tags: HypothesisTags) -> Self {
        self.tags = tags;
        self
    }

    pub fn time_dependent(mut self) -> Self {
        self.time_homogeneous = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return domain("dimension must be >= 1");
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                domain(format!(
                    "declared constant {name} must be positive, got {v}"
                ))
            }
        };
        if let Some(e) = self.tags.ellipticity {
            positive("c0", e.c0)?;
            positive("beta", e.beta)?;
        }
        if let Some(j) = self.tags.jump {
            positive("c1", j.c1)?;
            positive("beta", j.beta)?;
        }
        if let Some(d) = self.tags.dissipativity {
            positive("kappa1", d.kappa1)?;
            positive("kappa2", d.kappa2)?;
            positive("kappa3", d.kappa3)?;
            if !(d.r > -1.0) {
                return domain(format!(
                    "dissipativity exponent r must exceed -1, got {}",
                    d.r
                ));
            }
        }
        if self.has_jumps() {
            let levy = self
                .levy
                .as_ref()
                .ok_or_else(|| Error::Domain("jump coefficient without a Levy model".into()))?;
            levy.validate()?;
            if levy.dim != self.dim {
                return domain(format!(
                    "Levy dimension {} differs from state dimension {}",
                    levy.dim, self.dim
                ));
            }
            if let LevyKind::IsotropicStable { alpha } = levy.kind {
                if !(alpha > 1.0 && alpha < 2.0) {
                    return domain(format!(
                        "jump SDEs require a stable exponent in (1, 2), got {alpha}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn has_jumps(&self) -> bool {
        !matches!(self.jump, JumpCoeff::None)
    }

    pub fn has_diffusion(&self) -> bool {
        !matches!(self.diffusion, Diffusion::None)
    }

    /// Writes the row-major diffusion matrix.
    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.diffusion {
            Diffusion::None => out.iter_mut().for_each(|v| *v = 0.0),
            Diffusion::Scalar(s) => {
                let v = s(t, x);
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..d {
                    out[i * d + i] = v;
                }
            }
            Diffusion::Matrix(m) => m(t, x, out),
        }
    }

    /// Full drift `b1 + b2`, with the singular part evaluated at the floored point.
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        match &self.drift_regular {
            Some(b) => b(t, x, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
        if let Some(b1) = &self.drift_singular {
            let mut tmp = [0.0; 8];
            if self.dim <= 8 {
                eval_floored(b1, t, x, scratch, &mut tmp[..self.dim]);
                for i in 0..self.dim {
                    out[i] += tmp[i];
                }
            } else {
                let mut v = vec![0.0; self.dim];
                eval_floored(b1, t, x, scratch, &mut v);
                out.iter_mut().zip(&v).for_each(|(o, a)| *o += a);
            }
        }
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.dim];
        self.drift_into(t, x, &mut out, &mut scratch);
        out
    }

    pub fn regular_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if let Some(b) = &self.drift_regular {
            b(t, x, &mut out);
        }
        out
    }

    pub fn singular_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if let Some(b) = &self.drift_singular {
            let mut scratch = vec![0.0; self.dim];
            eval_floored(b, t, x, &mut scratch, &mut out);
        }
        out
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sigma_into(t, x, &mut out);
        out
    }

    pub fn jump_into(&self, t: f64, x: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.jump {
            JumpCoeff::None => out.iter_mut().for_each(|v| *v = 0.0),
            JumpCoeff::Scalar(s) => {
                let v = s(t, x);
                out.iter_mut().zip(z).for_each(|(o, zi)| *o = v * zi);
            }
            JumpCoeff::General { map, .. } => map(t, x, z, out),
        }
    }

    pub fn jump(&self, t: f64, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.jump_into(t, x, z, &mut out);
        out
    }

    /// `true` when every symmetric small-jump compensator vanishes.
    pub fn jump_is_odd(&self) -> bool {
        match &self.jump {
            JumpCoeff::None | JumpCoeff::Scalar(_) => true,
            JumpCoeff::General { odd_in_z, .. } => *odd_in_z,
        }
    }

    fn levy_or_err(&self) -> Result<&LevyModel> {
        self.levy
            .as_ref()
            .ok_or_else(|| Error::Domain("problem has no Levy model".into()))
    }

    /// `Gamma^{j, a}_{r1, r2}(g)(t, x) = int_{r1 <= |z| < r2} |grad_x^j g(t, x, z)|^a nu(dz)`.
    ///
    /// The x-gradient is a central difference with step `1e-5 (|x| + 1)`.
    pub fn gamma_moment(
        &self,
        t: f64,
        x: &[f64],
        j: u8,
        exponent: f64,
        r1: f64,
        r2: f64,
    ) -> Result<f64> {
        if j > 1 {
            return domain("gamma_moment supports j in {0, 1}");
        }
        if matches!(self.jump, JumpCoeff::None) {
            return Ok(0.0);
        }
        let levy = self.levy_or_err()?;
        if let JumpCoeff::Scalar(s) = &self.jump {
            let factor = if j == 0 {
                s(t, x).abs()
            } else {
                grad_norm(|y| s(t, y), x)
            };
            if factor == 0.0 {
                return Ok(0.0);
            }
            return Ok(factor.powf(exponent) * levy.tail_mass(r1, r2, exponent)?);
        }
        let d = self.dim;
        let integrand = |z: &[f64]| -> f64 {
            let v = if j == 0 {
                let g = self.jump(t, x, z);
                norm(&g)
            } else {
                jacobian_hs_norm(|y, out| self.jump_into(t, y, z, out), x, d)
            };
            v.powf(exponent)
        };
        spherical_radial(levy, &integrand, r1, r2)
    }

    /// `sup_x Gamma^{0,2}_{0,eps}(g)(x)` over `points` for each `eps`, the
    /// decay curve behind the small-jump vanishing condition.
    pub fn small_jump_decay(&self, points: &[Vec<f64>], eps: &[f64]) -> Result<Vec<(f64, f64)>> {
        eps.iter()
            .map(|&e| {
                let mut sup: f64 = 0.0;
                for x in points {
                    sup = sup.max(self.gamma_moment(0.0, x, 0, 2.0, 0.0, e)?);
                }
                Ok((e, sup))
            })
            .collect()
    }
}

/// `b1` at `x` pushed radially out to the floor radius. At the origin itself
/// no direction is preferred: the values at `+-floor e_1` are averaged.
fn eval_floored(b1: &VectorField, t: f64, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    let n = norm(x);
    if n >= SINGULAR_FLOOR {
        b1(t, x, out);
        return;
    }
    if n > 0.0 {
        for (s, v) in scratch.iter_mut().zip(x) {
            *s = v * SINGULAR_FLOOR / n;
        }
        b1(t, scratch, out);
        return;
    }
    scratch.iter_mut().for_each(|v| *v = 0.0);
    scratch[0] = SINGULAR_FLOOR;
    b1(t, scratch, out);
    let plus: Vec<f64> = out.to_vec();
    scratch[0] = -SINGULAR_FLOOR;
    b1(t, scratch, out);
    out.iter_mut()
        .zip(&plus)
        .for_each(|(o, p)| *o = 0.5 * (*o + p));
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn fd_step(x: f64) -> f64 {
    1e-5 * (x.abs() + 1.0)
}

fn grad_norm<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> f64 {
    let mut y = x.to_vec();
    let mut s = 0.0;
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        s += ((fp - fm) / (2.0 * h)).powi(2);
    }
    s.sqrt()
}

/// Hilbert–Schmidt norm of the x-Jacobian of a vector map by central differences.
fn jacobian_hs_norm<F: Fn(&[f64], &mut [f64])>(f: F, x: &[f64], d: usize) -> f64 {
    let mut y = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    let mut s = 0.0;
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        y[i] = x[i] + h;
        f(&y, &mut fp);
        y[i] = x[i] - h;
        f(&y, &mut fm);
        y[i] = x[i];
        s += fp
            .iter()
            .zip(&fm)
            .map(|(a, b)| ((a - b) / (2.0 * h)).powi(2))
            .sum::<f64>();
    }
    s.sqrt()
}

/// `int_{r1 <= |z| < r2} F(z) nu(dz)` for an isotropic radial `nu`: radial
/// log-panel quadrature times an angular rule (two points in `d = 1`,
/// uniform angles in `d = 2`, fixed antipodal random directions beyond).
pub(crate) fn spherical_radial<F: Fn(&[f64]) -> f64>(
    levy: &LevyModel,
    f: &F,
    r1: f64,
    r2: f64,
) -> Result<f64> {
    let dirs = sphere_rule(levy.dim);
    let omega = crate::levy::sphere_area(levy.dim);
    let w = omega / dirs.len() as f64;
    let radial_integrand = |r: f64| {
        let mut z = vec![0.0; levy.dim];
        let mut acc = 0.0;
        for e in &dirs {
            for (zi, ei) in z.iter_mut().zip(e) {
                *zi = r * ei;
            }
            acc += f(&z);
        }
        w * acc * levy.radial_density(r) * r.powi(levy.dim as i32 - 1)
    };
    match &levy.kind {
        LevyKind::IsotropicStable { .. } => quad::radial(radial_integrand, r1, r2, 1e-9),
        LevyKind::RadialTable { radii, .. } => {
            let mut total = 0.0;
            for wdw in radii.windows(2) {
                let a = wdw[0].max(r1);
                let b = wdw[1].min(r2);
                if b > a {
                    total += quad::adaptive(
                        &radial_integrand,
                        a,
                        b,
                        quad::Tolerance::new(1e-300, 1e-10),
                    )?
                    .0;
                }
            }
            Ok(total)
        }
    }
}

fn sphere_rule(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..64)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // fixed seeded directions, antipodally paired
            let n = 256;
            let mut out = Vec::with_capacity(2 * n);
            let mut rng = stream(0x5eed, d as u64);
            while out.len() < 2 * n {
                let v: Vec<f64> = (0..d)
                    .map(|_| {
                        rand_distr::Distribution::<f64>::sample(
                            &rand_distr::StandardNormal,
                            &mut rng,
                        )
                    })
                    .collect();
                let nv = norm(&v);
                if nv > 1e-12 {
                    let e: Vec<f64> = v.iter().map(|a| a / nv).collect();
                    out.push(e.iter().map(|a| -a).collect());
                    out.push(e);
                }
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Audits

/// Evaluation points for audits: `(t, x)` pairs.
#[derive(Clone, Debug)]
pub struct AuditGrid {
    pub points: Vec<(f64, Vec<f64>)>,
}

impl AuditGrid {
    /// Product grid with `per_axis` points per axis on `[lo, hi]^d` (capped
    /// at 10^5 nodes) plus `n_random` seeded uniform points, at time `t`.
    pub fn boxed(
        dim: usize,
        lo: f64,
        hi: f64,
        per_axis: usize,
        n_random: usize,
        seed: u64,
        t: f64,
    ) -> Self {
        let mut points = Vec::new();
        let total = (per_axis as f64).powi(dim as i32);
        if total <= 1e5 {
            let mut idx = vec![0usize; dim];
            loop {
                let x: Vec<f64> = idx
                    .iter()
                    .map(|&i| lo + (hi - lo) * i as f64 / (per_axis.max(2) - 1) as f64)
                    .collect();
                points.push((t, x));
                let mut k = 0;
                loop {
                    if k == dim {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] < per_axis {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == dim {
                    break;
                }
            }
        }
        let mut rng = stream(seed, 0);
        for _ in 0..n_random {
            let x: Vec<f64> = (0..dim)
                .map(|_| lo + (hi - lo) * rng.random::<f64>())
                .collect();
            points.push((t, x));
        }
        Self { points }
    }

    /// The default audit grid: 201 points per axis plus 64 random points.
    pub fn default_box(dim: usize, lo: f64, hi: f64) -> Self {
        Self::boxed(dim, lo, hi, 201, 64, 0xa0d1, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub check: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub pass: bool,
    /// Smallest constant for which the sandwich bound would hold on the grid.
    pub worst_ratio: f64,
    /// `min (bound - value)` over every inequality checked.
    pub margin: f64,
    /// Largest violation, or the tightest point when everything passes.
    pub witness: Option<Witness>,
    pub evaluations: usize,
}

struct Tracker {
    margin: f64,
    worst_ratio: f64,
    witness: Option<Witness>,
    evaluations: usize,
}

impl Tracker {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            worst_ratio: 0.0,
            witness: None,
            evaluations: 0,
        }
    }
    fn check(&mut self, check: &str, t: f64, x: &[f64], value: f64, bound: f64) {
        self.evaluations += 1;
        let m = bound - value;
        if m < self.margin {
            self.margin = m;
            self.witness = Some(Witness {
                check: check.to_string(),
                t,
                x: x.to_vec(),
                value,
                bound,
            });
        }
    }
    fn ratio(&mut self, r: f64) {
        self.worst_ratio = self.worst_ratio.max(r);
    }
    fn finish(self) -> AuditReport {
        // tolerate roundoff in equality cases
        let pass =
            self.margin >= -1e-9 * (1.0 + self.witness.as_ref().map_or(0.0, |w| w.bound.abs()));
        AuditReport {
            pass,
            worst_ratio: self.worst_ratio,
            margin: self.margin,
            witness: self.witness,
            evaluations: self.evaluations,
        }
    }
}

fn finite_or_err(what: &str, t: f64, x: &[f64], v: &[f64]) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            what: what.into(),
            location: format!("t = {t}, x = {x:?}"),
        })
    }
}

/// Checks `c0^{-1}|xi|^2 <= |sigma^T xi|^2 <= c0 |xi|^2` at every grid point and
/// direction, and the Hölder modulus `||sigma(x) - sigma(x')|| <= c0 |x - x'|^beta`
/// over consecutive grid points.
pub fn audit_ellipticity(
    p: &SdeProblem,
    grid: &AuditGrid,
    directions: &[Vec<f64>],
) -> Result<AuditReport> {
    let tag = p
        .tags
        .ellipticity
        .ok_or_else(|| Error::Domain("no ellipticity constants declared".into()))?;
    let d = p.dim;
    let mut tr = Tracker::new();
    let mut prev: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for (t, x) in &grid.points {
        let s = p.sigma(*t, x);
        finite_or_err("sigma", *t, x, &s)?;
        for xi in directions {
            let xn2: f64 = xi.iter().map(|a| a * a).sum();
            // (sigma^T xi)_k = sum_i sigma_{ik} xi_i
            let q: f64 = (0..d)
                .map(|k| (0..d).map(|i| s[i * d + k] * xi[i]).sum::<f64>().powi(2))
                .sum();
            tr.ratio((q / xn2).max(xn2 / q));
            tr.check("upper ellipticity", *t, x, q, tag.c0 * xn2);
            tr.check("lower ellipticity", *t, x, xn2 / tag.c0, q);
        }
        if let Some((pt, px, ps)) = &prev {
            if *pt == *t {
                let dx = norm(&x.iter().zip(px).map(|(a, b)| a - b).collect::<Vec<_>>());
                if dx > 0.0 {
                    let ds = norm(&s.iter().zip(ps).map(|(a, b)| a - b).collect::<Vec<_>>());
                    tr.check("sigma Hoelder", *t, x, ds, tag.c0 * dx.powf(tag.beta));
                }
            }
        }
        prev = Some((*t, x.clone(), s));
    }
    Ok(tr.finish())
}

/// Checks `g(x, 0) = 0`, the bi-Lipschitz sandwich in `z`, and the x-Hölder
/// conditions with the declared `(c1, beta)` on the given `(z, z')` pairs.
pub fn audit_jump_coeff(
    p: &SdeProblem,
    grid: &AuditGrid,
    z_pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<AuditReport> {
    let tag = p
        .tags
        .jump
        .ok_or_else(|| Error::Domain("no jump-coefficient constants declared".into()))?;
    let d = p.dim;
    let mut tr = Tracker::new();
    let zero = vec![0.0; d];
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for (t, x) in &grid.points {
        let g0 = p.jump(*t, x, &zero);
        finite_or_err("g", *t, x, &g0)?;
        tr.check("g(x, 0) = 0", *t, x, norm(&g0), 0.0);
        for (z, zp) in z_pairs {
            let g = p.jump(*t, x, z);
            let gp = p.jump(*t, x, zp);
            finite_or_err("g", *t, x, &g)?;
            let dz = norm(&z.iter().zip(zp).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dz == 0.0 {
                continue;
            }
            let dg = norm(&g.iter().zip(&gp).map(|(a, b)| a - b).collect::<Vec<_>>());
            tr.ratio((dg / dz).max(dz / dg));
            tr.check("upper Lipschitz in z", *t, x, dg, tag.c1 * dz);
            tr.check("lower Lipschitz in z", *t, x, dz / tag.c1, dg);
            // z-Hoelder of the z-Jacobian
            let jz = z_jacobian(p, *t, x, z);
            let jzp = z_jacobian(p, *t, x, zp);
            let dj = norm(&jz.iter().zip(&jzp).map(|(a, b)| a - b).collect::<Vec<_>>());
            tr.check(
                "grad_z g Hoelder in z",
                *t,
                x,
                dj,
                tag.c1 * dz.powf(tag.beta),
            );
        }
        if let Some((pt, px)) = &prev {
            if pt == t {
                let dx = norm(&x.iter().zip(px).map(|(a, b)| a - b).collect::<Vec<_>>());
                if dx > 0.0 {
                    for (z, _) in z_pairs {
                        let nz = norm(z);
                        let g = p.jump(*t, x, z);
                        let gp = p.jump(*t, px, z);
                        let dg = norm(&g.iter().zip(&gp).map(|(a, b)| a - b).collect::<Vec<_>>());
                        tr.check(
                            "g Hoelder in x",
                            *t,
                            x,
                            dg,
                            tag.c1 * dx.powf(tag.beta) * 2.0 * nz,
                        );
                        let jz = z_jacobian(p, *t, x, z);
                        let jzp = z_jacobian(p, *t, px, z);
                        let dj = norm(&jz.iter().zip(&jzp).map(|(a, b)| a - b).collect::<Vec<_>>());
                        tr.check(
                            "grad_z g Hoelder in x",
                            *t,
                            x,
                            dj,
                            tag.c1 * dx.powf(tag.beta) * (nz + 1.0),
                        );
                    }
                }
            }
        }
        prev = Some((*t, x.clone()));
    }
    Ok(tr.finish())
}

fn z_jacobian(p: &SdeProblem, t: f64, x: &[f64], z: &[f64]) -> Vec<f64> {
    let d = p.dim;
    let mut out = vec![0.0; d * d];
    let mut zz = z.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        let h = fd_step(z[j]);
        zz[j] = z[j] + h;
        p.jump_into(t, x, &zz, &mut fp);
        zz[j] = z[j] - h;
        p.jump_into(t, x, &zz, &mut fm);
        zz[j] = z[j];
        for i in 0..d {
            out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DissipativityReport {
    pub pass: bool,
    /// `min (-kappa1 |x|^{2+r} + kappa2 - 2<x, b(x)> - ||sigma(x)||^2)`
    pub kappa1_margin: f64,
    /// `min (kappa3 (1 + |x|^{1+r}) - |b2(x)|)`
    pub kappa3_margin: f64,
    pub witness: Option<Witness>,
}

/// Evaluates `2<x, b(x)> + ||sigma(x)||^2 <= -kappa1 |x|^{2+r} + kappa2` (with the
/// full drift) and the growth bound `|b2(x)| <= kappa3 (1 + |x|^{1+r})` on the
/// points `r e` for each radius and each coordinate direction `+-e_i`.
pub fn audit_dissipativity(p: &SdeProblem, radial_grid: &[f64]) -> Result<DissipativityReport> {
    if !p.time_homogeneous {
        return domain("dissipativity audit needs a time-homogeneous problem");
    }
    let tag = p
        .tags
        .dissipativity
        .ok_or_else(|| Error::Domain("no dissipativity constants declared".into()))?;
    audit_dissipativity_with(p, radial_grid, tag)
}

pub fn audit_dissipativity_with(
    p: &SdeProblem,
    radial_grid: &[f64],
    tag: Dissipativity,
) -> Result<DissipativityReport> {
    if !(tag.r > -1.0) {
        return domain(format!(
            "dissipativity exponent r must exceed -1, got {}",
            tag.r
        ));
    }
    let mut m1 = Tracker::new();
    let mut m3 = Tracker::new();
    for x in radial_points(p.dim, radial_grid) {
        let nx = norm(&x);
        let (lhs, b2n) = dissipation_terms(p, &x)?;
        m1.check(
            "dissipativity",
            0.0,
            &x,
            lhs,
            -tag.kappa1 * nx.powf(2.0 + tag.r) + tag.kappa2,
        );
        m3.check(
            "growth",
            0.0,
            &x,
            b2n,
            tag.kappa3 * (1.0 + nx.powf(1.0 + tag.r)),
        );
    }
    let pass = m1.margin >= -1e-9 && m3.margin >= -1e-9;
    let witness = if m1.margin <= m3.margin {
        m1.witness
    } else {
        m3.witness
    };
    Ok(DissipativityReport {
        pass,
        kappa1_margin: m1.margin,
        kappa3_margin: m3.margin,
        witness,
    })
}

fn radial_points(dim: usize, radii: &[f64]) -> Vec<Vec<f64>> {
    let mut pts = Vec::new();
    for &r in radii {
        for i in 0..dim {
            for s in [1.0, -1.0] {
                let mut x = vec![0.0; dim];
                x[i] = s * r;
                pts.push(x);
            }
        }
    }
    pts
}

fn dissipation_terms(p: &SdeProblem, x: &[f64]) -> Result<(f64, f64)> {
    let b = p.drift(0.0, x);
    let s = p.sigma(0.0, x);
    finite_or_err("drift", 0.0, x, &b)?;
    finite_or_err("sigma", 0.0, x, &s)?;
    let xb: f64 = x.iter().zip(&b).map(|(a, c)| a * c).sum();
    let hs: f64 = s.iter().map(|a| a * a).sum();
    let b2 = if p.drift_singular.is_some() {
        p.regular_drift(0.0, x)
    } else {
        b
    };
    Ok((2.0 * xb + hs, norm(&b2)))
}

/// Fits dissipativity constants on a radial grid for exponent `r`: `kappa1` is
/// half the smallest outer-shell decay rate, `kappa2` and `kappa3` the
/// smallest values making the inequalities hold on the grid.
pub fn fit_dissipativity(p: &SdeProblem, radial_grid: &[f64], r: f64) -> Result<Dissipativity> {
    let pts = radial_points(p.dim, radial_grid);
    let rmax = radial_grid.iter().cloned().fold(0.0, f64::max);
    let mut k1 = f64::INFINITY;
    let mut rows = Vec::with_capacity(pts.len());
    for x in &pts {
        let nx = norm(x);
        let (lhs, b2n) = dissipation_terms(p, x)?;
        if nx >= 0.5 * rmax && nx > 0.0 {
            k1 = k1.min(-lhs / nx.powf(2.0 + r));
        }
        rows.push((nx, lhs, b2n));
    }
    let kappa1 = 0.5 * k1;
    let kappa2 = rows
        .iter()
        .map(|(nx, lhs, _)| lhs + kappa1 * nx.powf(2.0 + r))
        .fold(f64::MIN, f64::max)
        .max(1e-12);
    let kappa3 = rows
        .iter()
        .map(|(nx, _, b)| b / (1.0 + nx.powf(1.0 + r)))
        .fold(0.0, f64::max)
        .max(1e-12);
    Ok(Dissipativity {
        kappa1,
        kappa2,
        kappa3,
        r,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub pass: bool,
    /// Largest difference quotient on the `n`-point grid.
    pub coarse: f64,
    /// Largest difference quotient on the `2n - 1`-point grid.
    pub fine: f64,
    pub argmax: f64,
}

/// Grid Lipschitz certificate for a scalar function on `[lo, hi]`: the
/// largest difference quotient must not grow (beyond 25%) when the grid is
/// refined, which separates Lipschitz functions from ones with jumps or
/// blow-ups.
pub fn audit_grid_lipschitz<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<LipschitzReport> {
    if n < 3 || !(hi > lo) {
        return domain("Lipschitz audit needs n >= 3 and lo < hi");
    }
    let quotient = |m: usize| -> Result<(f64, f64)> {
        let h = (hi - lo) / (m - 1) as f64;
        let mut best = (0.0, lo);
        let mut prev = f(lo);
        for i in 1..m {
            let x = lo + i as f64 * h;
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    what: "function".into(),
                    location: format!("x = {x}"),
                });
            }
            let q = (v - prev).abs() / h;
            if q > best.0 {
                best = (q, x);
            }
            prev = v;
        }
        Ok(best)
    };
    let (coarse, _) = quotient(n)?;
    let (fine, argmax) = quotient(2 * n - 1)?;
    Ok(LipschitzReport {
        pass: fine <= 1.25 * coarse + 1e-12,
        coarse,
        fine,
        argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn one_d(name: &str) -> SdeProblem {
        SdeProblem::new(name, 1)
    }

    fn dirs1() -> Vec<Vec<f64>> {
        vec![vec![1.0], vec![-1.0]]
    }

    #[test]
    fn identity_diffusion_is_elliptic_with_unit_ratio() {
        let p = one_d("id")
            .with_constant_diffusion(1.0)
            .with_tags(HypothesisTags {
                ellipticity: Some(Ellipticity { c0: 1.0, beta: 1.0 }),
                ..Default::default()
            });
        let r = audit_ellipticity(&p, &AuditGrid::default_box(1, -3.0, 3.0), &dirs1()).unwrap();
        assert!(r.pass);
        assert_eq!(r.worst_ratio, 1.0);
    }

    #[test]
    fn doubled_diffusion_fails_unit_constant() {
        let p = SdeProblem::new("diag2", 2)
            .with_constant_diffusion(2.0)
            .with_tags(HypothesisTags {
                ellipticity: Some(Ellipticity { c0: 1.0, beta: 1.0 }),
                ..Default::default()
            });
        let grid = AuditGrid::boxed(2, -1.0, 1.0, 5, 0, 1, 0.0);
        let r = audit_ellipticity(&p, &grid, &[vec![1.0, 0.0], vec![0.6, 0.8]]).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(w.check, "upper ellipticity");
        assert!((w.value - 4.0).abs() < 1e-12 && (w.bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oscillating_diffusion_passes_with_c0_4() {
        let p = one_d("osc")
            .with_scalar_diffusion(Arc::new(|_, x| 1.0 + 0.5 * x[0].sin()))
            .with_tags(HypothesisTags {
                ellipticity: Some(Ellipticity { c0: 4.0, beta: 1.0 }),
                ..Default::default()
            });
        let r = audit_ellipticity(&p, &AuditGrid::default_box(1, -10.0, 10.0), &dirs1()).unwrap();
        assert!(r.pass, "{r:?}");
        // extrema 0.5 and 1.5 give ratios 4 and 2.25
        assert!(r.worst_ratio <= 4.0 && r.worst_ratio > 3.9);
    }

    #[test]
    fn nonfinite_sigma_reports_location() {
        let p = one_d("bad")
            .with_scalar_diffusion(Arc::new(|_, x| 1.0 / x[0]))
            .with_tags(HypothesisTags {
                ellipticity: Some(Ellipticity { c0: 4.0, beta: 1.0 }),
                ..Default::default()
            });
        let grid = AuditGrid {
            points: vec![(0.0, vec![1.0]), (0.0, vec![0.0])],
        };
        assert!(matches!(
            audit_ellipticity(&p, &grid, &dirs1()),
            Err(Error::Evaluation { .. })
        ));
    }

    fn z_pairs() -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![
            (vec![0.5], vec![-0.25]),
            (vec![2.0], vec![1.0]),
            (vec![-3.0], vec![0.1]),
        ]
    }

    fn levy() -> LevyModel {
        LevyModel::stable(1.5, 1, 1.0).unwrap()
    }

    #[test]
    fn additive_jumps_pass() {
        let p = one_d("add")
            .with_jumps(JumpCoeff::Scalar(Arc::new(|_, _| 1.0)), levy())
            .with_tags(HypothesisTags {
                jump: Some(JumpRegularity { c1: 1.0, beta: 0.5 }),
                ..Default::default()
            });
        let r = audit_jump_coeff(&p, &AuditGrid::default_box(1, -3.0, 3.0), &z_pairs()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn multiplicative_jumps_need_c1_3() {
        let make = |c1| {
            one_d("mult")
                .with_jumps(
                    JumpCoeff::Scalar(Arc::new(|_, x: &[f64]| 2.0 + x[0].sin())),
                    levy(),
                )
                .with_tags(HypothesisTags {
                    jump: Some(JumpRegularity { c1, beta: 0.5 }),
                    ..Default::default()
                })
        };
        let grid = AuditGrid::default_box(1, -4.0, 4.0);
        assert!(
            audit_jump_coeff(&make(3.0), &grid, &z_pairs())
                .unwrap()
                .pass
        );
        let r = audit_jump_coeff(&make(2.0), &grid, &z_pairs()).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(w.check, "upper Lipschitz in z");
        assert!((w.x[0].sin() - 1.0).abs() < 1e-3, "{w:?}");
    }

    #[test]
    fn hoelder_jump_coefficient_fails_at_origin() {
        let p = one_d("holder")
            .with_jumps(
                JumpCoeff::Scalar(Arc::new(|_, x: &[f64]| x[0].abs().sqrt())),
                levy(),
            )
            .with_tags(HypothesisTags {
                jump: Some(JumpRegularity {
                    c1: 10.0,
                    beta: 0.5,
                }),
                ..Default::default()
            });
        let r = audit_jump_coeff(&p, &AuditGrid::default_box(1, -2.0, 2.0), &z_pairs()).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        assert_eq!(w.check, "lower Lipschitz in z");
        assert_eq!(w.x, vec![0.0]);
    }

    fn diss(k1: f64, k2: f64, k3: f64, r: f64) -> HypothesisTags {
        HypothesisTags {
            dissipativity: Some(Dissipativity {
                kappa1: k1,
                kappa2: k2,
                kappa3: k3,
                r,
            }),
            ..Default::default()
        }
    }

    fn radial() -> Vec<f64> {
        (0..=200).map(|i| i as f64 * 0.25).collect()
    }

    #[test]
    fn ou_dissipativity_holds_with_equality() {
        let p = presets::ou(1.0, 1.0).with_tags(diss(2.0, 1.0, 1.0, 0.0));
        let r = audit_dissipativity(&p, &radial()).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.kappa1_margin.abs() < 1e-9);
    }

    #[test]
    fn cubic_drift_dissipativity() {
        let p = one_d("cubic")
            .with_constant_diffusion(1.0)
            .with_drift(Arc::new(|_, x, out| out[0] = -x[0] * x[0].abs()))
            .with_tags(diss(2.0, 1.0, 1.0, 1.0));
        assert!(audit_dissipativity(&p, &radial()).unwrap().pass);
    }

    #[test]
    fn expanding_drift_fails() {
        let p = one_d("expand")
            .with_constant_diffusion(1.0)
            .with_drift(Arc::new(|_, x, out| out[0] = x[0]))
            .with_tags(diss(0.1, 1.0, 2.0, 0.0));
        let r = audit_dissipativity(&p, &radial()).unwrap();
        assert!(!r.pass);
        assert!(r.witness.unwrap().x[0].abs() > 1.0);
    }

    #[test]
    fn enlarging_grid_never_increases_margin() {
        let p = presets::ou(1.0, 1.0).with_tags(diss(1.5, 1.0, 1.0, 0.0));
        let small = audit_dissipativity(&p, &radial()[..50]).unwrap();
        let large = audit_dissipativity(&p, &radial()).unwrap();
        assert!(large.kappa1_margin <= small.kappa1_margin);
    }

    #[test]
    fn gamma_moment_examples() {
        let l = levy();
        let additive = one_d("add").with_jumps(JumpCoeff::Scalar(Arc::new(|_, _| 1.0)), l.clone());
        assert_eq!(
            additive
                .gamma_moment(0.0, &[0.7], 1, 2.0, 0.0, 1.0)
                .unwrap(),
            0.0
        );
        let sine = one_d("sin").with_jumps(
            JumpCoeff::Scalar(Arc::new(|_, x: &[f64]| x[0].sin())),
            l.clone(),
        );
        let v = sine
            .gamma_moment(0.0, &[std::f64::consts::FRAC_PI_2], 0, 2.0, 0.0, 1.0)
            .unwrap();
        assert!((v - 4.0).abs() < 4e-6, "{v}");
        let v = sine.gamma_moment(0.0, &[0.0], 1, 2.0, 0.0, 1.0).unwrap();
        assert!((v - 4.0).abs() < 4e-6, "{v}");
        // the same integrand routed through the general quadrature path
        let general = one_d("gen").with_jumps(
            JumpCoeff::General {
                map: Arc::new(|_, x: &[f64], z: &[f64], o: &mut [f64]| o[0] = x[0].sin() * z[0]),
                odd_in_z: true,
            },
            l,
        );
        let v = general.gamma_moment(0.0, &[0.0], 1, 2.0, 0.0, 1.0).unwrap();
        assert!((v - 4.0).abs() < 4e-6, "{v}");
        let v = general
            .gamma_moment(0.0, &[std::f64::consts::FRAC_PI_2], 0, 2.0, 0.0, 1.0)
            .unwrap();
        assert!((v - 4.0).abs() < 4e-6, "{v}");
    }

    #[test]
    fn gamma_moment_is_additive_over_shells() {
        let p = one_d("gen").with_jumps(
            JumpCoeff::General {
                map: Arc::new(|_, x: &[f64], z: &[f64], o: &mut [f64]| {
                    o[0] = (1.5 + x[0].cos()) * z[0].sin()
                }),
                odd_in_z: true,
            },
            levy(),
        );
        let x = [0.3];
        let whole = p.gamma_moment(0.0, &x, 0, 2.0, 0.0, 1.0).unwrap();
        let a = p.gamma_moment(0.0, &x, 0, 2.0, 0.0, 0.37).unwrap();
        let b = p.gamma_moment(0.0, &x, 0, 2.0, 0.37, 1.0).unwrap();
        assert!(
            ((a + b) - whole).abs() <= 1e-9 * whole,
            "{a} + {b} vs {whole}"
        );
    }

    #[test]
    fn small_jump_decay_curve_is_decreasing() {
        let p = one_d("add").with_jumps(JumpCoeff::Scalar(Arc::new(|_, _| 1.0)), levy());
        let eps: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
        let curve = p.small_jump_decay(&[vec![0.0]], &eps).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
        // 4 eps^{1/2}
        assert!((curve[2].1 - 4.0 * 0.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_audit_separates_smooth_and_singular() {
        assert!(
            audit_grid_lipschitz(|x| x.sin(), -3.0, 3.0, 401)
                .unwrap()
                .pass
        );
        assert!(
            !audit_grid_lipschitz(|x| x.signum() * x.abs().sqrt(), -1.0, 1.0, 401)
                .unwrap()
                .pass
        );
        assert!(
            !audit_grid_lipschitz(|x| if x.abs() <= 1.0 { 1.0 } else { 0.0 }, -3.0, 3.0, 400)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn problem_validation() {
        let bad = one_d("t").with_tags(diss(1.0, 1.0, 1.0, -1.5));
        assert!(bad.validate().is_err());
        let cauchy = one_d("c").with_jumps(
            JumpCoeff::Scalar(Arc::new(|_, _| 1.0)),
            LevyModel::stable(1.0, 1, 1.0).unwrap(),
        );
        assert!(cauchy.validate().is_err());
        assert!(presets::ou_singular().validate().is_ok());
    }
}
