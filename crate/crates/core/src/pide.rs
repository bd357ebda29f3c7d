//! One-dimensional finite differences for backward and resolvent
//! integro-differential equations, and the drift-removing change of
//! variables `Phi(x) = x + u(x)` built from them.

use crate::error::{domain, Error, Result};
use crate::integrator::{simulate_ensemble, StepConfig};
use crate::levy::LevyModel;
use crate::quad::{self, Tolerance};
use crate::sde::{
    audit_dissipativity_with, audit_grid_lipschitz, fit_dissipativity, Diffusion, Dissipativity,
    DissipativityReport, JumpCoeff, LipschitzReport, SdeProblem,
};
use crate::stats;
use serde::Serialize;
use std::io::{self, Write};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    Constant,
    Linear,
}

/// Nodal values on a uniform grid, evaluated between nodes by cubic Hermite
/// interpolation with second-order finite-difference slopes (exact for
/// quadratics), and outside the grid by the extension policy.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
    pub extension: Extension,
}

/// Up to eight `(node, weight)` pairs representing a linear functional of
/// the nodal values.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    idx: [usize; 8],
    w: [f64; 8],
    len: usize,
}

impl Stencil {
    fn new() -> Self {
        Self {
            idx: [0; 8],
            w: [0.0; 8],
            len: 0,
        }
    }
    fn push(&mut self, i: usize, w: f64) {
        for k in 0..self.len {
            if self.idx[k] == i {
                self.w[k] += w;
                return;
            }
        }
        self.idx[self.len] = i;
        self.w[self.len] = w;
        self.len += 1;
    }
    fn apply(&self, v: &[f64]) -> f64 {
        (0..self.len).map(|k| self.w[k] * v[self.idx[k]]).sum()
    }
}

impl GridFunction {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>, extension: Extension) -> Result<Self> {
        if values.len() < 3 {
            return domain(format!(
                "grid functions need n >= 3 nodes, got {}",
                values.len()
            ));
        }
        if !(hi > lo) {
            return domain(format!("grid needs lo < hi, got [{lo}, {hi}]"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: "grid value".into(),
                location: format!("node {i}"),
            });
        }
        Ok(Self {
            lo,
            hi,
            values,
            extension,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: GridSpec, f: F, extension: Extension) -> Result<Self> {
        let values = (0..grid.n).map(|i| f(grid.node(i))).collect();
        Self::new(grid.lo, grid.hi, values, extension)
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            lo: grid.lo,
            hi: grid.hi,
            values: vec![0.0; grid.n],
            extension: Extension::Linear,
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            lo: self.lo,
            hi: self.hi,
            n: self.values.len(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.n() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.grid().node(i)
    }

    fn slope_stencil(n: usize, h: f64, j: usize, out: &mut Stencil, scale: f64) {
        let c = scale / (2.0 * h);
        if j == 0 {
            out.push(0, -3.0 * c);
            out.push(1, 4.0 * c);
            out.push(2, -c);
        } else if j == n - 1 {
            out.push(n - 1, 3.0 * c);
            out.push(n - 2, -4.0 * c);
            out.push(n - 3, c);
        } else {
            out.push(j + 1, c);
            out.push(j - 1, -c);
        }
    }

    /// Stencil of `u(y)` (`deriv = false`) or `u'(y)` (`deriv = true`).
    fn stencil(grid: GridSpec, extension: Extension, y: f64, deriv: bool) -> Stencil {
        let n = grid.n;
        let h = grid.h();
        let mut s = Stencil::new();
        if y <= grid.lo || y >= grid.hi {
            let (end, j) = if y <= grid.lo {
                (grid.lo, 0)
            } else {
                (grid.hi, n - 1)
            };
            match (extension, deriv) {
                (Extension::Constant, false) => s.push(j, 1.0),
                (Extension::Constant, true) => {}
                (Extension::Linear, false) => {
                    s.push(j, 1.0);
                    Self::slope_stencil(n, h, j, &mut s, y - end);
                }
                (Extension::Linear, true) => Self::slope_stencil(n, h, j, &mut s, 1.0),
            }
            return s;
        }
        let pos = (y - grid.lo) / h;
        let k = (pos.floor() as usize).min(n - 2);
        let t = pos - k as f64;
        let (a0, a1, b0, b1) = if deriv {
            (
                (6.0 * t * t - 6.0 * t) / h,
                (-6.0 * t * t + 6.0 * t) / h,
                3.0 * t * t - 4.0 * t + 1.0,
                3.0 * t * t - 2.0 * t,
            )
        } else {
            (
                2.0 * t * t * t - 3.0 * t * t + 1.0,
                -2.0 * t * t * t + 3.0 * t * t,
                h * (t * t * t - 2.0 * t * t + t),
                h * (t * t * t - t * t),
            )
        };
        s.push(k, a0);
        s.push(k + 1, a1);
        Self::slope_stencil(n, h, k, &mut s, b0);
        Self::slope_stencil(n, h, k + 1, &mut s, b1);
        s
    }

    pub fn eval(&self, y: f64) -> f64 {
        Self::stencil(self.grid(), self.extension, y, false).apply(&self.values)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        Self::stencil(self.grid(), self.extension, y, true).apply(&self.values)
    }

    /// Nodal second differences (one-sided at the ends), linearly interpolated.
    pub fn second_derivative(&self, y: f64) -> f64 {
        let n = self.n();
        let h = self.h();
        let v = &self.values;
        let d2 = |j: usize| {
            let j = j.clamp(1, n - 2);
            (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (h * h)
        };
        if y <= self.lo {
            return d2(1);
        }
        if y >= self.hi {
            return d2(n - 2);
        }
        let pos = (y - self.lo) / h;
        let k = (pos.floor() as usize).min(n - 2);
        let t = pos - k as f64;
        (1.0 - t) * d2(k) + t * d2(k + 1)
    }

    /// Nodal finite-difference slopes.
    pub fn nodal_slopes(&self) -> Vec<f64> {
        let n = self.n();
        let h = self.h();
        (0..n)
            .map(|j| {
                let mut s = Stencil::new();
                Self::slope_stencil(n, h, j, &mut s, 1.0);
                s.apply(&self.values)
            })
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_derivative(&self) -> f64 {
        self.nodal_slopes().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `x, value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.16e},{:.16e}", self.node(i), v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 3 || !(hi > lo) {
            return domain(format!(
                "grid needs n >= 3 and lo < hi, got [{lo}, {hi}] with n = {n}"
            ));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.hi
        } else {
            self.lo + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Averages of `f` over the cells `[x_i - h/2, x_i + h/2]` clipped to the
    /// domain; the natural nodal value of a merely integrable function.
    pub fn cell_averages<F: Fn(f64) -> f64>(&self, f: F) -> Result<Vec<f64>> {
        let h = self.h();
        (0..self.n)
            .map(|i| {
                let x = self.node(i);
                let a = (x - 0.5 * h).max(self.lo);
                let b = (x + 0.5 * h).min(self.hi);
                let tol = Tolerance::new(1e-13, 1e-10);
                let left = quad::adaptive(&f, a, x, tol)?.0;
                let right = quad::adaptive(&f, x, b, tol)?.0;
                Ok((left + right) / (b - a))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Dirichlet {
        lo: f64,
        hi: f64,
    },
    /// Homogeneous Neumann condition by mirrored ghost nodes.
    ZeroFlux,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PideOptions {
    pub boundary: Boundary,
    /// Fixed-point stopping threshold on the max-norm update.
    pub tol: f64,
    /// Residual growth over this many sweeps counts as non-contraction.
    pub growth_window: usize,
    pub max_sweeps: usize,
    /// The small/large split radius is `delta_scale * sqrt(h)`.
    pub delta_scale: f64,
    /// Average the drift and forcing over cells instead of sampling nodes.
    pub cell_average: bool,
}

impl Default for PideOptions {
    fn default() -> Self {
        Self {
            boundary: Boundary::Dirichlet { lo: 0.0, hi: 0.0 },
            tol: 1e-8,
            growth_window: 50,
            max_sweeps: 10_000,
            delta_scale: 1.0,
            cell_average: true,
        }
    }
}

fn require_1d(p: &SdeProblem) -> Result<()> {
    if p.dim != 1 {
        return domain(format!(
            "the PDE layer is one-dimensional, problem has d = {}",
            p.dim
        ));
    }
    Ok(())
}

/// `int_{|z| < delta} g(x, z)^2 nu(dz)`.
fn inner_second_moment(p: &SdeProblem, x: f64, delta: f64) -> Result<f64> {
    p.gamma_moment(0.0, &[x], 0, 2.0, 0.0, delta)
}

/// Small-jump operator `int_{|z| < R} [u(x + g) - u(x) - g u'(x)] nu(dz)` at
/// a point `x` of the grid: second-order Taylor term below
/// `delta = sqrt(h)` and adaptive quadrature of the exact increment above.
pub fn apply_nonlocal(u: &GridFunction, p: &SdeProblem, x: f64) -> Result<f64> {
    require_1d(p)?;
    if !(x >= u.lo && x <= u.hi) {
        return Err(Error::Extrapolation {
            x,
            lo: u.lo,
            hi: u.hi,
        });
    }
    let levy = match (&p.jump, &p.levy) {
        (JumpCoeff::None, _) | (_, None) => return Ok(0.0),
        (_, Some(l)) => l,
    };
    let r = levy.big_jump_radius;
    let delta = u.h().sqrt().min(r);
    let inner = 0.5 * u.second_derivative(x) * inner_second_moment(p, x, delta)?;
    let ux = u.eval(x);
    let dux = u.derivative(x);
    let mut outer = 0.0;
    let tol = Tolerance::new(1e-13, 1e-10);
    for sign in [1.0, -1.0] {
        let f = |rad: f64| {
            let g = p.jump(0.0, &[x], &[sign * rad])[0];
            (u.eval(x + g) - ux - g * dux) * levy.radial_density(rad)
        };
        // split at grid-scale pieces so the kinks of the interpolant are seen
        let pieces = (((r - delta) / u.h()).ceil() as usize).clamp(1, 64);
        for k in 0..pieces {
            let a = delta + (r - delta) * k as f64 / pieces as f64;
            let b = delta + (r - delta) * (k + 1) as f64 / pieces as f64;
            outer += quad::adaptive(&f, a, b, tol)?.0;
        }
    }
    Ok(inner + outer)
}

/// Discretized generator `A u'' + B u' - kill u + J u` on the grid, with `J`
/// the (lagged) shell integral `int u(x + g) nu(dz)`.
struct Discretization {
    grid: GridSpec,
    a: Vec<f64>,
    b: Vec<f64>,
    kill: Vec<f64>,
    jump_rows: Vec<Vec<(usize, f64)>>,
}

fn sigma_1d(p: &SdeProblem, x: f64) -> f64 {
    match &p.diffusion {
        Diffusion::None => 0.0,
        _ => p.sigma(0.0, &[x])[0],
    }
}

fn discretize(p: &SdeProblem, grid: GridSpec, opts: &PideOptions) -> Result<Discretization> {
    require_1d(p)?;
    let n = grid.n;
    let h = grid.h();
    let xs = grid.nodes();
    let mut a: Vec<f64> = xs.iter().map(|&x| 0.5 * sigma_1d(p, x).powi(2)).collect();
    let mut b: Vec<f64> = if opts.cell_average {
        grid.cell_averages(|x| p.drift(0.0, &[x])[0])?
    } else {
        xs.iter().map(|&x| p.drift(0.0, &[x])[0]).collect()
    };
    let mut kill = vec![0.0; n];
    let mut jump_rows = vec![Vec::new(); n];
    if let (true, Some(levy)) = (p.has_jumps(), &p.levy) {
        let r = levy.big_jump_radius;
        let delta = (opts.delta_scale * h.sqrt()).min(r);
        for i in 0..n {
            let x = xs[i];
            a[i] += 0.5 * inner_second_moment(p, x, delta)?;
            let (row, mass, first) = shell_row(p, levy, grid, x, delta, r)?;
            kill[i] = mass;
            b[i] -= first;
            jump_rows[i] = row;
        }
    }
    if let Some(i) = a.iter().chain(&b).position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "PDE coefficient".into(),
            location: format!("x = {}", xs[i % n]),
        });
    }
    Ok(Discretization {
        grid,
        a,
        b,
        kill,
        jump_rows,
    })
}

const GL3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    (0.0, 0.888_888_888_888_888_9),
    (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
];

/// Quadrature of the shell `delta <= |z| < R` in `s = ln |z|` with panels fine
/// enough that consecutive landing points move by at most one cell. Returns
/// the sparse row of `u -> int u(x + g) nu`, the shell mass and
/// `int g nu` over the shell.
fn shell_row(
    p: &SdeProblem,
    levy: &LevyModel,
    grid: GridSpec,
    x: f64,
    delta: f64,
    r: f64,
) -> Result<(Vec<(usize, f64)>, f64, f64)> {
    let h = grid.h();
    let probe = [delta, 0.5 * (delta + r), r];
    let mut lip: f64 = 0.0;
    for &rad in &probe {
        for s in [1.0, -1.0] {
            lip = lip.max(p.jump(0.0, &[x], &[s * rad])[0].abs() / rad);
        }
    }
    let (s0, s1) = (delta.ln(), r.ln());
    let panels = if lip == 0.0 {
        1
    } else {
        (((s1 - s0) * r * lip / h).ceil() as usize).clamp(8, 4000)
    };
    let ds = (s1 - s0) / panels as f64;
    let mut acc: Vec<(usize, f64)> = Vec::new();
    let mut mass = 0.0;
    let mut first = 0.0;
    for k in 0..panels {
        let mid = s0 + (k as f64 + 0.5) * ds;
        for (node, weight) in GL3 {
            let rad = (mid + 0.5 * ds * node).exp();
            let w = 0.5 * ds * weight * levy.radial_density(rad) * rad;
            for sign in [1.0, -1.0] {
                let g = p.jump(0.0, &[x], &[sign * rad])[0];
                if !g.is_finite() {
                    return Err(Error::Evaluation {
                        what: "g".into(),
                        location: format!("x = {x}, z = {}", sign * rad),
                    });
                }
                mass += w;
                first += w * g;
                let st = GridFunction::stencil(grid, Extension::Linear, x + g, false);
                for q in 0..st.len {
                    acc.push((st.idx[q], w * st.w[q]));
                }
            }
        }
    }
    acc.sort_by_key(|e| e.0);
    let mut row: Vec<(usize, f64)> = Vec::new();
    for (i, w) in acc {
        match row.last_mut() {
            Some(last) if last.0 == i => last.1 += w,
            _ => row.push((i, w)),
        }
    }
    Ok((row, mass, first))
}

/// Tridiagonal matrix `(lower, diag, upper)`.
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = self.upper[0] / self.diag[0];
        d[0] = rhs[0] / self.diag[0];
        for i in 1..n {
            let m = self.diag[i] - self.lower[i] * c[i - 1];
            c[i] = self.upper[i] / m;
            d[i] = (rhs[i] - self.lower[i] * d[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }
}

impl Discretization {
    /// Local operator `A d2 + B d1 - (lambda + kill + shift)`; centered first
    /// derivative while the cell Péclet number allows it, upwind otherwise.
    fn local_matrix(&self, lambda: f64, shift: f64, boundary: Boundary) -> Tridiagonal {
        let n = self.grid.n;
        let h = self.grid.h();
        let mut t = Tridiagonal {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        };
        for i in 0..n {
            let (a, b) = (self.a[i], self.b[i]);
            let (mut lo, mut up) = (a / (h * h), a / (h * h));
            let mut dg = -2.0 * a / (h * h) - lambda - self.kill[i] - shift;
            if b.abs() * h <= 2.0 * a {
                lo -= b / (2.0 * h);
                up += b / (2.0 * h);
            } else if b > 0.0 {
                up += b / h;
                dg -= b / h;
            } else {
                lo -= b / h;
                dg += b / h;
            }
            t.lower[i] = lo;
            t.diag[i] = dg;
            t.upper[i] = up;
        }
        match boundary {
            Boundary::Dirichlet { .. } => {
                for i in [0, n - 1] {
                    t.lower[i] = 0.0;
                    t.upper[i] = 0.0;
                    t.diag[i] = 1.0;
                }
            }
            Boundary::ZeroFlux => {
                // ghost u_{-1} = u_1 with a vanishing centered first derivative
                let a0 = self.a[0] / (h * h);
                t.upper[0] = 2.0 * a0;
                t.diag[0] = -2.0 * a0 - lambda - self.kill[0] - shift;
                t.lower[0] = 0.0;
                let an = self.a[n - 1] / (h * h);
                t.lower[n - 1] = 2.0 * an;
                t.diag[n - 1] = -2.0 * an - lambda - self.kill[n - 1] - shift;
                t.upper[n - 1] = 0.0;
            }
        }
        t
    }

    fn has_jumps(&self) -> bool {
        self.jump_rows.iter().any(|r| !r.is_empty())
    }

    fn apply_jump(&self, u: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.jump_rows) {
            *o = row.iter().map(|(j, w)| w * u[*j]).sum();
        }
    }

    /// Solves `(T - shift) u + J u = rhs` with the nonlocal part lagged.
    fn solve_lagged(
        &self,
        t: &Tridiagonal,
        rhs: &[f64],
        start: &[f64],
        boundary: Boundary,
        lambda: f64,
        opts: &PideOptions,
    ) -> Result<(Vec<f64>, usize)> {
        let n = self.grid.n;
        let fix = |r: &mut [f64]| {
            if let Boundary::Dirichlet { lo, hi } = boundary {
                r[0] = lo;
                r[n - 1] = hi;
            }
        };
        if !self.has_jumps() {
            let mut r = rhs.to_vec();
            fix(&mut r);
            return Ok((t.solve(&r), 1));
        }
        let mut u = start.to_vec();
        let mut ju = vec![0.0; n];
        let mut prev_res = f64::INFINITY;
        let mut first_res = f64::INFINITY;
        for sweep in 1..=opts.max_sweeps {
            self.apply_jump(&u, &mut ju);
            let mut r: Vec<f64> = rhs.iter().zip(&ju).map(|(a, j)| a - j).collect();
            fix(&mut r);
            let next = t.solve(&r);
            let res = next
                .iter()
                .zip(&u)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            u = next;
            if res <= opts.tol * scale {
                return Ok((u, sweep));
            }
            if sweep == 1 {
                first_res = res;
            }
            if !res.is_finite() || (sweep >= opts.growth_window && res > first_res) {
                return Err(Error::NonConvergence {
                    lambda,
                    residual: res,
                });
            }
            prev_res = res;
        }
        Err(Error::NonConvergence {
            lambda,
            residual: prev_res,
        })
    }
}

/// Space-time solution on a uniform time grid; `values[k]` is `u(times[k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct PideSolution {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PideSolution {
    pub fn at(&self, k: usize) -> GridFunction {
        GridFunction {
            lo: self.grid.lo,
            hi: self.grid.hi,
            values: self.values[k].clone(),
            extension: Extension::Linear,
        }
    }

    pub fn initial(&self) -> GridFunction {
        self.at(0)
    }
}

/// Backward problem `du/dt + (L - lambda) u = f`, `u(T) = 0`, on
/// `[0, horizon]` by implicit Euler in reversed time with `n_steps` steps.
pub fn solve_backward_pide<F: Fn(f64, f64) -> f64>(
    p: &SdeProblem,
    f: F,
    lambda: f64,
    horizon: f64,
    grid: GridSpec,
    n_steps: usize,
    opts: &PideOptions,
) -> Result<PideSolution> {
    if !(lambda >= 0.0) || !(horizon > 0.0) || n_steps == 0 {
        return domain("need lambda >= 0, horizon > 0 and at least one time step");
    }
    let disc = discretize(p, grid, opts)?;
    let dt = horizon / n_steps as f64;
    let t = disc.local_matrix(lambda, 1.0 / dt, opts.boundary);
    let xs = grid.nodes();
    let mut values = vec![vec![0.0; grid.n]; n_steps + 1];
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
    for k in (0..n_steps).rev() {
        let tk = times[k];
        let next = &values[k + 1];
        let rhs: Vec<f64> = xs
            .iter()
            .zip(next)
            .map(|(&x, un)| f(tk, x) - un / dt)
            .collect();
        let (u, _) = disc.solve_lagged(&t, &rhs, next, opts.boundary, lambda, opts)?;
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                what: "PIDE solution".into(),
                location: format!("t = {tk}, node {i}"),
            });
        }
        values[k] = u;
    }
    Ok(PideSolution {
        grid,
        times,
        values,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipticSolution {
    pub u: GridFunction,
    pub lambda: f64,
    pub sup_u: f64,
    pub sup_du: f64,
    pub sweeps: usize,
}

/// Resolvent problem `(L - lambda) u = f` with `L` the generator of `p`
/// (diffusion, full drift and small jumps).
pub fn solve_elliptic(
    p: &SdeProblem,
    f: &GridFunction,
    lambda: f64,
    opts: &PideOptions,
) -> Result<EllipticSolution> {
    if !(lambda >= 0.0) {
        return domain(format!("lambda must be nonnegative, got {lambda}"));
    }
    let grid = f.grid();
    let disc = discretize(p, grid, opts)?;
    let t = disc.local_matrix(lambda, 0.0, opts.boundary);
    let (u, sweeps) = disc.solve_lagged(
        &t,
        &f.values,
        &vec![0.0; grid.n],
        opts.boundary,
        lambda,
        opts,
    )?;
    let u = GridFunction::new(grid.lo, grid.hi, u, Extension::Linear)?;
    Ok(EllipticSolution {
        sup_u: u.sup_norm(),
        sup_du: u.sup_derivative(),
        u,
        lambda,
        sweeps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaStep {
    pub lambda: f64,
    pub sup_u: f64,
    pub sup_du: f64,
}

/// `Phi(x) = x + u(x)` with a fast monotone inverse.
#[derive(Clone, Debug)]
pub struct ZvonkinMap {
    pub u: GridFunction,
    pub lambda: f64,
    pub sup_u: f64,
    pub sup_du: f64,
    /// `Phi(x_i)` at the grid nodes (strictly increasing).
    images: Vec<f64>,
}

impl ZvonkinMap {
    pub fn new(u: GridFunction, lambda: f64) -> Result<Self> {
        let sup_u = u.sup_norm();
        let sup_du = u.sup_derivative();
        let images: Vec<f64> = (0..u.n()).map(|i| u.node(i) + u.values[i]).collect();
        if images.windows(2).any(|w| w[1] <= w[0]) {
            return domain("Phi is not strictly increasing on the grid");
        }
        Ok(Self {
            u,
            lambda,
            sup_u,
            sup_du,
            images,
        })
    }

    pub fn identity(grid: GridSpec) -> Self {
        Self::new(GridFunction::zeros(grid), 0.0).expect("identity map is monotone")
    }

    pub fn phi(&self, x: f64) -> f64 {
        x + self.u.eval(x)
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        1.0 + self.u.derivative(x)
    }

    /// Solves `Phi(x) = y`: bracket from the nodal images, then safeguarded
    /// Newton iterations.
    pub fn phi_inverse(&self, y: f64) -> f64 {
        let n = self.images.len();
        let h = self.u.h();
        let (mut a, mut b);
        if y <= self.images[0] {
            let s = self.phi_prime(self.u.lo);
            return self.u.lo + (y - self.images[0]) / s;
        } else if y >= self.images[n - 1] {
            let s = self.phi_prime(self.u.hi);
            return self.u.hi + (y - self.images[n - 1]) / s;
        } else {
            let k = self.images.partition_point(|&v| v <= y).clamp(1, n - 1) - 1;
            a = self.u.node(k);
            b = a + h;
        }
        let (ya, yb) = (self.phi(a), self.phi(b));
        let mut x = a + (b - a) * (y - ya) / (yb - ya);
        for _ in 0..50 {
            let fx = self.phi(x) - y;
            if fx.abs() <= 1e-14 * (1.0 + y.abs()) {
                break;
            }
            if fx > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let step = x - fx / self.phi_prime(x);
            x = if step > a && step < b {
                step
            } else {
                0.5 * (a + b)
            };
            if b - a <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }

    pub fn diagnostics(&self) -> ZvonkinDiagnostics {
        ZvonkinDiagnostics {
            lambda: self.lambda,
            sup_u: self.sup_u,
            sup_du: self.sup_du,
            grid: self.u.grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZvonkinDiagnostics {
    pub lambda: f64,
    pub sup_u: f64,
    pub sup_du: f64,
    pub grid: GridSpec,
}

pub struct Zvonkin {
    pub map: Arc<ZvonkinMap>,
    pub transformed: SdeProblem,
    /// Every `lambda` tried, in order.
    pub trail: Vec<LambdaStep>,
}

/// Largest `|x|` scale suggested by the dissipativity constants:
/// `(kappa2 / kappa1)^{1/(2 + r)}`, at least 1.
pub fn dissipativity_scale(p: &SdeProblem) -> f64 {
    p.tags
        .dissipativity
        .map_or(1.0, |d| (d.kappa2 / d.kappa1).powf(1.0 / (2.0 + d.r)))
        .max(1.0)
}

/// Default truncated domain `[-L, L]` with `L` ten times the dissipativity scale.
pub fn zvonkin_grid(p: &SdeProblem, h: f64) -> Result<GridSpec> {
    let l = 10.0 * dissipativity_scale(p);
    let n = (2.0 * l / h).round() as usize + 1;
    GridSpec::new(-l, l, n)
}

/// Solves `(L - lambda) u = -b1` where `L` carries the diffusion, the small
/// jumps and `b1` only, so that `Phi = x + u` absorbs the singular drift.
pub fn zvonkin_solve(
    p: &SdeProblem,
    lambda: f64,
    grid: GridSpec,
    opts: &PideOptions,
) -> Result<EllipticSolution> {
    require_1d(p)?;
    if !p.time_homogeneous {
        return domain("the drift-removing map needs time-homogeneous coefficients");
    }
    let mut core = p.clone();
    core.drift_regular = None;
    let rhs = match &p.drift_singular {
        None => vec![0.0; grid.n],
        Some(_) => {
            let b1 = |x: f64| -core.singular_drift(0.0, &[x])[0];
            if opts.cell_average {
                grid.cell_averages(b1)?
            } else {
                grid.nodes().into_iter().map(b1).collect()
            }
        }
    };
    let f = GridFunction::new(grid.lo, grid.hi, rhs, Extension::Linear)?;
    solve_elliptic(&core, &f, lambda, opts)
}

/// Builds `Phi` at a fixed `lambda`, refusing when `|u| + |u'| > 1/2`.
pub fn build_zvonkin(
    p: &SdeProblem,
    lambda: f64,
    grid: GridSpec,
    opts: &PideOptions,
) -> Result<Zvonkin> {
    let sol = zvonkin_solve(p, lambda, grid, opts)?;
    let step = LambdaStep {
        lambda,
        sup_u: sol.sup_u,
        sup_du: sol.sup_du,
    };
    let norm = sol.sup_u + sol.sup_du;
    if norm > 0.5 {
        return Err(Error::Contraction { lambda, norm });
    }
    let map = Arc::new(ZvonkinMap::new(sol.u, lambda)?);
    Ok(Zvonkin {
        transformed: transform(p, map.clone()),
        map,
        trail: vec![step],
    })
}

/// `lambda = 10, 20, 40, ...` until the contraction condition holds.
pub fn build_zvonkin_auto(p: &SdeProblem, grid: GridSpec, opts: &PideOptions) -> Result<Zvonkin> {
    let mut lambda = 10.0;
    let mut trail = Vec::new();
    for _ in 0..30 {
        let sol = zvonkin_solve(p, lambda, grid, opts)?;
        trail.push(LambdaStep {
            lambda,
            sup_u: sol.sup_u,
            sup_du: sol.sup_du,
        });
        if sol.sup_u + sol.sup_du <= 0.5 {
            let map = Arc::new(ZvonkinMap::new(sol.u, lambda)?);
            return Ok(Zvonkin {
                transformed: transform(p, map.clone()),
                map,
                trail,
            });
        }
        lambda *= 2.0;
    }
    let last = trail.last().expect("at least one attempt");
    Err(Error::Contraction {
        lambda: last.lambda,
        norm: last.sup_u + last.sup_du,
    })
}

impl Zvonkin {
    /// The transformed problem with `sigma~` and `b~` tabulated on a uniform
    /// grid over `Phi([lo, hi])` (same node count as `u`), which avoids an
    /// inverse-map solve per coefficient evaluation. Jumps stay exact.
    pub fn tabulated(&self) -> Result<SdeProblem> {
        let src = &self.transformed;
        let m = &self.map;
        let grid = GridSpec::new(m.phi(m.u.lo), m.phi(m.u.hi), m.u.n())?;
        let mut q = src.clone();
        q.name = format!("{}_tabulated", src.name);
        if src.has_diffusion() {
            let s = GridFunction::from_fn(grid, |y| src.sigma(0.0, &[y])[0], Extension::Constant)?;
            q.diffusion = Diffusion::Scalar(Arc::new(move |_, y| s.eval(y[0])));
        }
        let b = GridFunction::from_fn(grid, |y| src.drift(0.0, &[y])[0], Extension::Linear)?;
        q.drift_regular = Some(Arc::new(move |_, y, out| out[0] = b.eval(y[0])));
        Ok(q)
    }
}

/// Coefficients of `Y = Phi(X)`: `sigma~ = (Phi' sigma) o Phi^{-1}`,
/// `b~ = (lambda u + Phi' b2) o Phi^{-1}`,
/// `g~(y, z) = Phi(Phi^{-1}(y) + g(Phi^{-1}(y), z)) - y`.
pub fn transform(p: &SdeProblem, map: Arc<ZvonkinMap>) -> SdeProblem {
    let mut q = SdeProblem::new(format!("{}_transformed", p.name), 1);
    q.time_homogeneous = true;
    if p.has_diffusion() {
        let (src, m) = (p.clone(), map.clone());
        q.diffusion = Diffusion::Scalar(Arc::new(move |_, y| {
            let x = m.phi_inverse(y[0]);
            m.phi_prime(x) * src.sigma(0.0, &[x])[0]
        }));
    }
    {
        let (src, m) = (p.clone(), map.clone());
        q.drift_regular = Some(Arc::new(move |_, y, out| {
            let x = m.phi_inverse(y[0]);
            out[0] = m.lambda * m.u.eval(x) + m.phi_prime(x) * src.regular_drift(0.0, &[x])[0];
        }));
    }
    if p.has_jumps() {
        let (src, m) = (p.clone(), map.clone());
        q.jump = JumpCoeff::General {
            map: Arc::new(move |_, y, z, out| {
                let x = m.phi_inverse(y[0]);
                let g = src.jump(0.0, &[x], z)[0];
                out[0] = m.phi(x + g) - y[0];
            }),
            odd_in_z: false,
        };
        q.levy = p.levy.clone();
    }
    q
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossValidation {
    pub lambda: f64,
    pub sup_u: f64,
    pub sup_du: f64,
    pub w1: f64,
    pub w1_tolerance: f64,
    /// Transformed drift on `Phi([lo/2, hi/2])`.
    pub lipschitz: LipschitzReport,
    /// Constants fitted on radii up to `fit_radius`, audited up to five times that.
    pub fit_radius: f64,
    pub dissipativity: Dissipativity,
    pub dissipativity_audit: DissipativityReport,
    pub pass: bool,
}

/// Terminal laws at time `t` from `x0`: direct simulation of `p` against
/// simulating `Y = Phi(X)` from the tabulated transformed problem and mapping
/// back. Both ensembles share the seed.
#[allow(clippy::too_many_arguments)]
pub fn zvonkin_crossval(
    p: &SdeProblem,
    x0: f64,
    t: f64,
    n_paths: usize,
    cfg: &StepConfig,
    seed: u64,
    h: f64,
    w1_tolerance: f64,
) -> Result<(CrossValidation, Vec<f64>, Vec<f64>)> {
    require_1d(p)?;
    let grid = zvonkin_grid(p, h)?;
    let z = build_zvonkin_auto(p, grid, &PideOptions::default())?;
    let q = z.tabulated()?;
    let m = &z.map;
    let direct = simulate_ensemble(p, &[vec![x0]], t, cfg, n_paths, seed)?.coordinate(0);
    let mapped: Vec<f64> = simulate_ensemble(&q, &[vec![m.phi(x0)]], t, cfg, n_paths, seed)?
        .coordinate(0)
        .into_iter()
        .map(|y| m.phi_inverse(y))
        .collect();
    let w1 = stats::wasserstein1(&direct, &mapped);
    let lipschitz = audit_grid_lipschitz(
        |y| q.drift(0.0, &[y])[0],
        m.phi(0.5 * grid.lo),
        m.phi(0.5 * grid.hi),
        2001,
    )?;
    let fit_radius = 0.5 * grid.hi;
    let radii = |r: f64| -> Vec<f64> { (0..=200).map(|k| r * k as f64 / 200.0).collect() };
    let dissipativity = fit_dissipativity(&z.transformed, &radii(fit_radius), 0.0)?;
    let dissipativity_audit =
        audit_dissipativity_with(&z.transformed, &radii(5.0 * fit_radius), dissipativity)?;
    let pass = w1 <= w1_tolerance
        && lipschitz.pass
        && dissipativity.kappa1 > 0.0
        && dissipativity_audit.pass;
    let report = CrossValidation {
        lambda: m.lambda,
        sup_u: m.sup_u,
        sup_du: m.sup_du,
        w1,
        w1_tolerance,
        lipschitz,
        fit_radius,
        dissipativity,
        dissipativity_audit,
        pass,
    };
    Ok((report, direct, mapped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use std::f64::consts::PI;

    fn stable_additive() -> SdeProblem {
        SdeProblem::new("add", 1).with_jumps(
            JumpCoeff::Scalar(Arc::new(|_, _| 1.0)),
            LevyModel::stable(1.5, 1, 1.0).unwrap(),
        )
    }

    #[test]
    fn interpolation_reproduces_quadratics() {
        let grid = GridSpec::new(-2.0, 3.0, 11).unwrap();
        let u = GridFunction::from_fn(grid, |x| 1.0 - 2.0 * x + 0.7 * x * x, Extension::Linear)
            .unwrap();
        for &y in &[-1.93, -0.01, 0.5, 1.234, 2.99] {
            assert!((u.eval(y) - (1.0 - 2.0 * y + 0.7 * y * y)).abs() < 1e-12);
            assert!((u.derivative(y) - (-2.0 + 1.4 * y)).abs() < 1e-12);
            assert!((u.second_derivative(y) - 1.4).abs() < 1e-9);
        }
        // linear extension uses the end slope
        assert!((u.eval(4.0) - (u.eval(3.0) + u.derivative(3.0))).abs() < 1e-12);
        let c = GridFunction {
            extension: Extension::Constant,
            ..u.clone()
        };
        assert_eq!(c.eval(10.0), c.values[10]);
    }

    #[test]
    fn grid_function_validation() {
        assert!(GridFunction::new(0.0, 1.0, vec![1.0, 2.0], Extension::Linear).is_err());
        assert!(GridFunction::new(1.0, 0.0, vec![1.0; 4], Extension::Linear).is_err());
        assert!(GridFunction::new(0.0, 1.0, vec![1.0, f64::NAN, 0.0], Extension::Linear).is_err());
    }

    #[test]
    fn nonlocal_of_quadratic_is_the_second_moment() {
        let grid = GridSpec::new(-4.0, 4.0, 401).unwrap();
        let u = GridFunction::from_fn(grid, |x| x * x, Extension::Linear).unwrap();
        let v = apply_nonlocal(&u, &stable_additive(), 0.3).unwrap();
        assert!((v - 4.0).abs() < 1e-4, "{v}");
    }

    #[test]
    fn nonlocal_annihilates_affine_functions() {
        let grid = GridSpec::new(-4.0, 4.0, 201).unwrap();
        let p = stable_additive();
        for f in [|_: f64| 2.5, |x: f64| 3.0 * x - 1.0] {
            let u = GridFunction::from_fn(grid, f, Extension::Linear).unwrap();
            assert!(apply_nonlocal(&u, &p, 0.7).unwrap().abs() < 1e-9);
        }
        let u = GridFunction::from_fn(grid, |x| x, Extension::Linear).unwrap();
        assert!(matches!(
            apply_nonlocal(&u, &p, 9.0),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn shell_rows_match_pointwise_operator() {
        // discretized J u - kill u - first u' + inner u'' against apply_nonlocal
        let grid = GridSpec::new(-6.0, 6.0, 241).unwrap();
        let p = presets::multiplicative_stable();
        let u = GridFunction::from_fn(grid, |x| (0.7 * x).sin() + 0.1 * x * x, Extension::Linear)
            .unwrap();
        let disc = discretize(&p, grid, &PideOptions::default()).unwrap();
        let mut ju = vec![0.0; grid.n];
        disc.apply_jump(&u.values, &mut ju);
        for i in [60, 120, 170] {
            let x = grid.node(i);
            let delta = grid.h().sqrt();
            let inner = 0.5 * inner_second_moment(&p, x, delta).unwrap();
            let first = disc.a[i] - inner; // diffusion part is zero here
            assert!(first.abs() < 1e-12);
            let discrete = ju[i] - disc.kill[i] * u.values[i]
                + disc.b[i] * u.derivative(x)
                + inner * u.second_derivative(x);
            let exact = apply_nonlocal(&u, &p, x).unwrap();
            assert!(
                (discrete - exact).abs() < 2e-3 * (1.0 + exact.abs()),
                "{x}: {discrete} vs {exact}"
            );
        }
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let grid = GridSpec::new(-5.0, 5.0, 101).unwrap();
        let p = presets::ou(1.0, SQRT2);
        let sol = solve_backward_pide(&p, |_, _| 0.0, 1.0, 1.0, grid, 10, &PideOptions::default())
            .unwrap();
        assert!(sol.values.iter().all(|v| v.iter().all(|a| *a == 0.0)));
        let e =
            solve_elliptic(&p, &GridFunction::zeros(grid), 1.0, &PideOptions::default()).unwrap();
        assert_eq!(e.sup_u, 0.0);
    }

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn constant_forcing_ode_oracle() {
        let grid = GridSpec::new(-20.0, 20.0, 401).unwrap();
        let p = presets::brownian(SQRT2);
        let opts = PideOptions {
            boundary: Boundary::ZeroFlux,
            ..Default::default()
        };
        let sol = solve_backward_pide(&p, |_, _| 1.0, 1.0, 10.0, grid, 2000, &opts).unwrap();
        let u0 = sol.initial().eval(0.0);
        assert!((u0 + (1.0 - (-10f64).exp())).abs() < 1e-3, "{u0}");
        let f = GridFunction::from_fn(grid, |_| 1.0, Extension::Linear).unwrap();
        let e = solve_elliptic(&p, &f, 1.0, &opts).unwrap();
        assert!((e.u.eval(0.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn manufactured_heat_solution_is_second_order_in_space() {
        let p = presets::brownian(SQRT2);
        let horizon = 1.0;
        let err = |n: usize| {
            let grid = GridSpec::new(-PI, PI, n).unwrap();
            // u = (T - t) sin x solves du/dt + u'' = -(1 + T - t) sin x
            let sol = solve_backward_pide(
                &p,
                |t, x| -(1.0 + horizon - t) * x.sin(),
                0.0,
                horizon,
                grid,
                20,
                &PideOptions::default(),
            )
            .unwrap();
            let u0 = sol.initial();
            (0..n)
                .map(|i| (u0.values[i] - horizon * grid.node(i).sin()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(41), err(81));
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "order {order} ({e1}, {e2})");
    }

    #[test]
    fn comparison_principle() {
        let grid = GridSpec::new(-5.0, 5.0, 201).unwrap();
        let p = presets::ou_singular();
        let f = GridFunction::from_fn(
            grid,
            |x| -(-x * x).exp() - 0.1 * x.cos().abs(),
            Extension::Linear,
        )
        .unwrap();
        let u = solve_elliptic(&p, &f, 0.5, &PideOptions::default())
            .unwrap()
            .u;
        assert!(u.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn zvonkin_without_singular_drift_is_identity() {
        let p = presets::ou(1.0, SQRT2);
        let grid = GridSpec::new(-10.0, 10.0, 201).unwrap();
        let z = build_zvonkin(&p, 10.0, grid, &PideOptions::default()).unwrap();
        assert_eq!(z.map.sup_u, 0.0);
        for &x in &[-3.0, 0.2, 4.5] {
            assert_eq!(z.map.phi(x), x);
            assert!((z.transformed.drift(0.0, &[x])[0] - p.drift(0.0, &[x])[0]).abs() < 1e-14);
            assert!((z.transformed.sigma(0.0, &[x])[0] - p.sigma(0.0, &[x])[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn zvonkin_map_inverts() {
        let p = presets::ou_singular();
        let grid = GridSpec::new(-20.0, 20.0, 8001).unwrap();
        let z = build_zvonkin_auto(&p, grid, &PideOptions::default()).unwrap();
        assert!(z.map.sup_u + z.map.sup_du <= 0.5);
        let trail: Vec<f64> = z.trail.iter().map(|s| s.sup_du).collect();
        assert!(trail.windows(2).all(|w| w[1] < w[0]), "{trail:?}");
        for k in 0..200 {
            let x = -19.0 + 38.0 * (k as f64 * 0.618_033_988_749_895).fract();
            let y = z.map.phi(x);
            assert!((z.map.phi_inverse(y) - x).abs() < 1e-10);
            assert!((z.map.phi(z.map.phi_inverse(x)) - x).abs() < 1e-10);
        }
    }

    #[test]
    fn contraction_refusal_reports_norm() {
        let p = presets::ou_singular();
        let grid = GridSpec::new(-20.0, 20.0, 4001).unwrap();
        match build_zvonkin(&p, 0.1, grid, &PideOptions::default()) {
            Err(Error::Contraction { lambda, norm }) => {
                assert_eq!(lambda, 0.1);
                assert!(norm > 0.5);
            }
            other => panic!("expected refusal, got {:?}", other.map(|z| z.map.lambda)),
        }
    }

    #[test]
    fn lagged_nonlocal_solve_converges() {
        let grid = GridSpec::new(-8.0, 8.0, 321).unwrap();
        let p = presets::mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5);
        let f = GridFunction::from_fn(grid, |x| -(-x * x).exp(), Extension::Linear).unwrap();
        let sol = solve_elliptic(&p, &f, 1.0, &PideOptions::default()).unwrap();
        assert!(sol.sweeps > 1);
        // residual of the full discrete operator at an interior node
        assert!(sol.u.values.iter().all(|v| v.is_finite() && *v >= -1e-12));
    }
}
