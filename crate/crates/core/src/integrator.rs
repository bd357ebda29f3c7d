//! Euler–Maruyama paths with compensated small jumps and the interlacing of
//! large jumps, plus deterministic parallel ensembles.

use crate::error::{domain, Error, Result};
use crate::levy::{levy_constant, sample_isotropic_stable_into, JumpEvent, LevyKind, ShellSampler};
use crate::rng::{PathStreams, StreamRng};
use crate::sde::{spherical_radial, JumpCoeff, SdeProblem};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::{self, Write};

/// States with `|x|` beyond this are recorded as an explosion.
pub const EXPLOSION_RADIUS: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    /// Small-jump cutoff; `None` means `R / 32`.
    pub epsilon: Option<f64>,
    /// Replace the jumps below the cutoff by a Gaussian of matching variance.
    pub gaussian_correction: bool,
    /// For `g = s(x) z` with isotropic stable noise, draw the whole jump
    /// increment as one stable variable scaled by `s(X_k)` (no truncation).
    pub exact_stable: bool,
    /// Pair ensemble paths `2k, 2k + 1` as antithetic copies sharing streams.
    pub antithetic: bool,
    pub max_steps: usize,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            epsilon: None,
            gaussian_correction: false,
            exact_stable: false,
            antithetic: false,
            max_steps: 100_000_000,
        }
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = Some(eps);
        self
    }

    pub fn with_gaussian_correction(mut self) -> Self {
        self.gaussian_correction = true;
        self
    }

    pub fn with_exact_stable(mut self) -> Self {
        self.exact_stable = true;
        self
    }

    pub fn with_antithetic(mut self) -> Self {
        self.antithetic = true;
        self
    }

    pub fn cutoff(&self, p: &SdeProblem) -> f64 {
        let r = p.levy.as_ref().map_or(1.0, |l| l.big_jump_radius);
        self.epsilon.unwrap_or(r / 32.0)
    }

    pub fn validate(&self, p: &SdeProblem) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return domain(format!("dt must be positive, got {}", self.dt));
        }
        if self.max_steps == 0 {
            return domain("max_steps must be positive");
        }
        if let Some(levy) = &p.levy {
            let eps = self.cutoff(p);
            if !(eps > 0.0 && eps <= levy.big_jump_radius) {
                return domain(format!("small-jump cutoff must lie in (0, R], got {eps}"));
            }
        }
        if self.exact_stable && p.has_jumps() {
            let scalar = matches!(p.jump, JumpCoeff::Scalar(_));
            let stable = matches!(
                p.levy.as_ref().map(|l| &l.kind),
                Some(LevyKind::IsotropicStable { .. })
            );
            if !(scalar && stable) {
                return domain("exact stable stepping needs g = s(x) z and isotropic stable noise");
            }
        }
        if p.has_jumps() && !p.jump_is_odd() && p.dim > 2 && !self.exact_stable {
            return domain("compensator quadrature for a non-odd jump map is limited to d <= 2");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Initial,
    Step,
    /// Left limit at a large-jump time.
    PreJump,
    /// State right after a large jump.
    Jump,
}

/// Receives every state of a path as it is produced; returning `false` stops
/// the path (used for killing and early exit).
pub trait PathObserver {
    fn visit(&mut self, t: f64, x: &[f64], kind: StateKind) -> bool;
}

impl<F: FnMut(f64, &[f64], StateKind) -> bool> PathObserver for F {
    fn visit(&mut self, t: f64, x: &[f64], kind: StateKind) -> bool {
        self(t, x, kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathOutcome {
    pub t_end: f64,
    pub x_end: Vec<f64>,
    pub exploded_at: Option<f64>,
    pub stopped: bool,
    pub steps: usize,
    pub large_jumps: usize,
}

/// Per-problem precomputation shared by all paths.
pub struct Stepper<'a> {
    p: &'a SdeProblem,
    cfg: StepConfig,
    shell: Option<ShellSampler>,
    large: Option<ShellSampler>,
    /// `int_{|z| < eps} |z|^2 nu(dz)`
    small_second_moment: f64,
    exact_scale: f64,
    exact_alpha: f64,
    eps: f64,
}

struct Buffers {
    b: Vec<f64>,
    s: Vec<f64>,
    g: Vec<f64>,
    z: Vec<f64>,
    scratch: Vec<f64>,
    x: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(p: &'a SdeProblem, cfg: StepConfig) -> Result<Self> {
        p.validate()?;
        cfg.validate(p)?;
        let eps = cfg.cutoff(p);
        let mut st = Stepper {
            p,
            cfg,
            shell: None,
            large: None,
            small_second_moment: 0.0,
            exact_scale: 0.0,
            exact_alpha: 0.0,
            eps,
        };
        if let (true, Some(levy)) = (p.has_jumps(), &p.levy) {
            if cfg.exact_stable {
                let alpha = levy.alpha().expect("checked in validate");
                st.exact_alpha = alpha;
                st.exact_scale = levy_constant(levy.dim, alpha).powf(1.0 / alpha);
            } else {
                st.shell = Some(levy.shell(eps, levy.big_jump_radius)?);
                st.large = Some(levy.shell(levy.big_jump_radius, f64::INFINITY)?);
                if cfg.gaussian_correction {
                    st.small_second_moment = levy.tail_mass(0.0, eps, 2.0)?;
                }
            }
        }
        Ok(st)
    }

    pub fn problem(&self) -> &SdeProblem {
        self.p
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    /// Large jumps on `(t0, t1]`, empty in exact-stable mode (the stable
    /// increment already contains them).
    pub fn large_jumps(&self, t0: f64, t1: f64, rng: &mut StreamRng) -> Vec<JumpEvent> {
        match &self.large {
            Some(s) => s.sample_events(t0, t1, rng),
            None => Vec::new(),
        }
    }

    fn buffers(&self) -> Buffers {
        let d = self.p.dim;
        Buffers {
            b: vec![0.0; d],
            s: vec![0.0; d * d],
            g: vec![0.0; d],
            z: vec![0.0; d],
            scratch: vec![0.0; d],
            x: vec![0.0; d],
        }
    }

    fn compensator(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let levy = self.p.levy.as_ref().expect("jumps imply a Levy model");
        let r = levy.big_jump_radius;
        for i in 0..self.p.dim {
            out[i] = spherical_radial(
                levy,
                &|zz: &[f64]| {
                    let mut g = vec![0.0; zz.len()];
                    self.p.jump_into(t, x, zz, &mut g);
                    g[i]
                },
                self.eps,
                r,
            )?;
        }
        Ok(())
    }

    /// One Euler step of length `h` from `(t, x)`, in place.
    fn step(
        &self,
        t: f64,
        h: f64,
        x: &mut [f64],
        sign: f64,
        rng: &mut StreamRng,
        buf: &mut Buffers,
    ) -> Result<()> {
        let d = self.p.dim;
        let p = self.p;
        buf.x.copy_from_slice(x);
        p.drift_into(t, &buf.x, &mut buf.b, &mut buf.scratch);
        for i in 0..d {
            x[i] += buf.b[i] * h;
        }
        if p.has_diffusion() {
            p.sigma_into(t, &buf.x, &mut buf.s);
            let sq = h.sqrt();
            for j in 0..d {
                let n: f64 = StandardNormal.sample(rng);
                buf.z[j] = sign * sq * n;
            }
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += buf.s[i * d + j] * buf.z[j];
                }
                x[i] += acc;
            }
        }
        if !p.has_jumps() {
            return Ok(());
        }
        if self.cfg.exact_stable {
            let s = match &p.jump {
                JumpCoeff::Scalar(s) => s(t, &buf.x),
                _ => unreachable!(),
            };
            sample_isotropic_stable_into(self.exact_alpha, h, rng, &mut buf.z)?;
            for i in 0..d {
                x[i] += sign * s * self.exact_scale * buf.z[i];
            }
            return Ok(());
        }
        let shell = self.shell.as_ref().expect("truncated mode");
        let n = shell.poisson_count(h, rng);
        for _ in 0..n {
            shell.sample_mark_into(rng, &mut buf.z);
            buf.z.iter_mut().for_each(|v| *v *= sign);
            p.jump_into(t, &buf.x, &buf.z, &mut buf.g);
            for i in 0..d {
                x[i] += buf.g[i];
            }
        }
        if !p.jump_is_odd() {
            self.compensator(t, &buf.x, &mut buf.g)?;
            for i in 0..d {
                x[i] -= h * buf.g[i];
            }
        }
        if self.cfg.gaussian_correction {
            let var = match &p.jump {
                JumpCoeff::Scalar(s) => s(t, &buf.x).powi(2) * self.small_second_moment,
                _ => p.gamma_moment(t, &buf.x, 0, 2.0, 0.0, self.eps)?,
            } / d as f64;
            let sd = (var * h).sqrt();
            for xi in x.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *xi += sign * sd * n;
            }
        }
        Ok(())
    }

    /// Drives one path over `[t0, t1]` on the uniform grid `t0 + k dt` with
    /// the given large-jump times inserted. `sign = -1` negates all noise.
    pub fn run<O: PathObserver + ?Sized>(
        &self,
        x0: &[f64],
        t0: f64,
        t1: f64,
        events: &[JumpEvent],
        sign: f64,
        rng: &mut StreamRng,
        obs: &mut O,
    ) -> Result<PathOutcome> {
        if x0.len() != self.p.dim {
            return domain(format!(
                "initial point has dimension {}, problem has {}",
                x0.len(),
                self.p.dim
            ));
        }
        if !(t1 >= t0) {
            return domain(format!("need t0 <= t1, got [{t0}, {t1}]"));
        }
        let dt = self.cfg.dt;
        let mut buf = self.buffers();
        let mut x = x0.to_vec();
        let mut t = t0;
        let mut k: u64 = 0;
        let mut next_event = 0;
        let mut steps = 0usize;
        let mut out = PathOutcome {
            t_end: t0,
            x_end: x.clone(),
            exploded_at: None,
            stopped: false,
            steps: 0,
            large_jumps: 0,
        };
        if !obs.visit(t, &x, StateKind::Initial) {
            out.stopped = true;
            return Ok(out);
        }
        while t < t1 {
            let base_next = (t0 + (k + 1) as f64 * dt).min(t1);
            let ev = events.get(next_event).filter(|e| e.time <= t1);
            let (t_next, jump) = match ev {
                Some(e) if e.time <= base_next => (e.time, Some(e)),
                _ => (base_next, None),
            };
            if t_next > t {
                steps += 1;
                if steps > self.cfg.max_steps {
                    return Err(Error::MaxSteps(self.cfg.max_steps));
                }
                self.step(t, t_next - t, &mut x, sign, rng, &mut buf)?;
            }
            t = t_next;
            if t_next >= base_next {
                k += 1;
            }
            if exploded(&x) {
                out.exploded_at = Some(t);
                break;
            }
            match jump {
                Some(e) => {
                    next_event += 1;
                    if !obs.visit(t, &x, StateKind::PreJump) {
                        out.stopped = true;
                        break;
                    }
                    buf.z
                        .iter_mut()
                        .zip(&e.mark)
                        .for_each(|(z, m)| *z = sign * m);
                    self.p.jump_into(t, &x, &buf.z, &mut buf.g);
                    x.iter_mut().zip(&buf.g).for_each(|(a, g)| *a += g);
                    out.large_jumps += 1;
                    if exploded(&x) {
                        out.exploded_at = Some(t);
                        break;
                    }
                    if !obs.visit(t, &x, StateKind::Jump) {
                        out.stopped = true;
                        break;
                    }
                }
                None => {
                    if !obs.visit(t, &x, StateKind::Step) {
                        out.stopped = true;
                        break;
                    }
                }
            }
        }
        out.t_end = t;
        out.x_end = x;
        out.steps = steps;
        Ok(out)
    }

    /// Interlaced path on `[t0, t1]`: large jumps from `streams.jumps`, the
    /// small-jump flow from `streams.flow`.
    pub fn run_interlaced<O: PathObserver + ?Sized>(
        &self,
        x0: &[f64],
        t0: f64,
        t1: f64,
        streams: &mut PathStreams,
        sign: f64,
        obs: &mut O,
    ) -> Result<PathOutcome> {
        let events = self.large_jumps(t0, t1, &mut streams.jumps);
        self.run(x0, t0, t1, &events, sign, &mut streams.flow, obs)
    }
}

fn exploded(x: &[f64]) -> bool {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    !n2.is_finite() || n2 > EXPLOSION_RADIUS * EXPLOSION_RADIUS
}

/// A fully recorded path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `true` where the state is the post-jump value at a large-jump time.
    pub is_jump: Vec<bool>,
    /// Applied large jumps (marks as used, after any antithetic flip).
    pub events: Vec<JumpEvent>,
    /// Left limits `X(tau-)` at each event.
    pub pre_jump: Vec<Vec<f64>>,
    pub exploded_at: Option<f64>,
}

struct Recorder {
    path: PathSample,
}

impl PathObserver for Recorder {
    fn visit(&mut self, t: f64, x: &[f64], kind: StateKind) -> bool {
        match kind {
            StateKind::PreJump => self.path.pre_jump.push(x.to_vec()),
            _ => {
                self.path.times.push(t);
                self.path.states.push(x.to_vec());
                self.path.is_jump.push(kind == StateKind::Jump);
            }
        }
        true
    }
}

fn recorder() -> Recorder {
    Recorder {
        path: PathSample {
            times: vec![],
            states: vec![],
            is_jump: vec![],
            events: vec![],
            pre_jump: vec![],
            exploded_at: None,
        },
    }
}

/// Path of the SDE without large jumps on `[t0, t1]`.
pub fn simulate_small_jump_path(
    p: &SdeProblem,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &StepConfig,
    rng: &mut StreamRng,
) -> Result<PathSample> {
    let st = Stepper::new(p, *cfg)?;
    let mut rec = recorder();
    let out = st.run(x0, t0, t1, &[], 1.0, rng, &mut rec)?;
    rec.path.exploded_at = out.exploded_at;
    Ok(rec.path)
}

/// Full path on `[0, horizon]` by interlacing large jumps into the
/// small-jump flow.
pub fn simulate_interlaced(
    p: &SdeProblem,
    x0: &[f64],
    horizon: f64,
    cfg: &StepConfig,
    streams: &mut PathStreams,
) -> Result<PathSample> {
    let st = Stepper::new(p, *cfg)?;
    let events = st.large_jumps(0.0, horizon, &mut streams.jumps);
    let mut rec = recorder();
    let out = st.run(x0, 0.0, horizon, &events, 1.0, &mut streams.flow, &mut rec)?;
    let applied = rec.path.pre_jump.len();
    rec.path.events = events.into_iter().take(applied).collect();
    rec.path.exploded_at = out.exploded_at;
    Ok(rec.path)
}

/// Streams and noise sign of ensemble path `i`.
pub fn path_streams(cfg: &StepConfig, master_seed: u64, i: u64) -> (PathStreams, f64) {
    if cfg.antithetic {
        (
            PathStreams::new(master_seed, i / 2),
            if i % 2 == 1 { -1.0 } else { 1.0 },
        )
    } else {
        (PathStreams::new(master_seed, i), 1.0)
    }
}

/// Maps `f` over path indices `0..n` in parallel and returns the results in
/// index order, so any reduction over them is independent of scheduling.
pub fn par_paths<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub horizon: f64,
    pub terminal: Vec<Vec<f64>>,
    pub exploded_at: Vec<Option<f64>>,
    pub large_jumps: Vec<usize>,
}

impl Ensemble {
    pub fn n_paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn explosion_rate(&self) -> f64 {
        self.exploded_at.iter().filter(|e| e.is_some()).count() as f64 / self.n_paths() as f64
    }

    /// Coordinate `i` of the terminal states of non-exploded paths.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.terminal
            .iter()
            .zip(&self.exploded_at)
            .filter(|(_, e)| e.is_none())
            .map(|(x, _)| x[i])
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.terminal.first().map_or(0, |x| x.len());
        (0..d)
            .map(|i| crate::stats::mean(&self.coordinate(i)))
            .collect()
    }
}

/// `n_paths` independent interlaced paths on `[0, horizon]`. `x0s` holds one
/// start point per path, or a single point used for all of them.
pub fn simulate_ensemble(
    p: &SdeProblem,
    x0s: &[Vec<f64>],
    horizon: f64,
    cfg: &StepConfig,
    n_paths: usize,
    master_seed: u64,
) -> Result<Ensemble> {
    if n_paths == 0 {
        return domain("n_paths must be >= 1");
    }
    if !(x0s.len() == 1 || x0s.len() == n_paths) {
        return domain(format!(
            "expected 1 or {n_paths} start points, got {}",
            x0s.len()
        ));
    }
    let st = Stepper::new(p, *cfg)?;
    let outs = par_paths(n_paths, |i| {
        let (mut streams, sign) = path_streams(cfg, master_seed, i);
        let x0 = if x0s.len() == 1 {
            &x0s[0]
        } else {
            &x0s[i as usize]
        };
        st.run_interlaced(
            x0,
            0.0,
            horizon,
            &mut streams,
            sign,
            &mut |_: f64, _: &[f64], _: StateKind| true,
        )
    })?;
    Ok(Ensemble {
        horizon,
        terminal: outs.iter().map(|o| o.x_end.clone()).collect(),
        exploded_at: outs.iter().map(|o| o.exploded_at).collect(),
        large_jumps: outs.iter().map(|o| o.large_jumps).collect(),
    })
}

/// States at fixed snapshot times for each path (the first state at or after
/// each snapshot time; `NaN` rows after an explosion or stop).
pub fn simulate_snapshots(
    p: &SdeProblem,
    x0: &[f64],
    times: &[f64],
    cfg: &StepConfig,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.is_empty() {
        return domain("snapshot times must be nonempty and increasing");
    }
    let horizon = *times.last().unwrap();
    let st = Stepper::new(p, *cfg)?;
    let tol = 1e-9 * horizon.max(1.0);
    par_paths(n_paths, |i| {
        let (mut streams, sign) = path_streams(cfg, master_seed, i);
        let mut snaps: Vec<Vec<f64>> = Vec::with_capacity(times.len());
        let mut obs = |t: f64, x: &[f64], kind: StateKind| {
            if kind != StateKind::PreJump {
                while snaps.len() < times.len() && t >= times[snaps.len()] - tol {
                    snaps.push(x.to_vec());
                }
            }
            snaps.len() < times.len()
        };
        st.run_interlaced(x0, 0.0, horizon, &mut streams, sign, &mut obs)?;
        while snaps.len() < times.len() {
            snaps.push(vec![f64::NAN; p.dim]);
        }
        Ok(snaps)
    })
}

/// Weak-convergence harness: `E f(X_T)` for each step size with standard
/// errors and the fitted log-log slope of `|E f^{dt} - E f^{dt_min}|`
/// (or against `reference` when supplied).
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementStudy {
    pub dts: Vec<f64>,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

pub fn refinement_study<F: Fn(&[f64]) -> f64 + Sync>(
    p: &SdeProblem,
    x0: &[f64],
    horizon: f64,
    base: &StepConfig,
    dts: &[f64],
    n_paths: usize,
    seed: u64,
    functional: F,
    reference: Option<f64>,
) -> Result<RefinementStudy> {
    if dts.len() < 2 {
        return domain("refinement study needs at least two step sizes");
    }
    let mut means = vec![];
    let mut ses = vec![];
    for &dt in dts {
        let cfg = StepConfig { dt, ..*base };
        let ens = simulate_ensemble(p, &[x0.to_vec()], horizon, &cfg, n_paths, seed)?;
        let vals: Vec<f64> = ens.terminal.iter().map(|x| functional(x)).collect();
        let vals = pair_means(&vals, base.antithetic);
        means.push(crate::stats::mean(&vals));
        ses.push(crate::stats::std_error(&vals));
    }
    let (reference, fit_range) = match reference {
        Some(r) => (r, dts.len()),
        None => {
            let imin = dts
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            (means[imin], dts.len() - 1)
        }
    };
    let errors: Vec<f64> = means.iter().map(|m| (m - reference).abs()).collect();
    let mut order: Vec<usize> = (0..dts.len()).collect();
    order.sort_by(|&a, &b| dts[b].total_cmp(&dts[a]));
    let idx: Vec<usize> = order.into_iter().take(fit_range).collect();
    let lx: Vec<f64> = idx.iter().map(|&i| dts[i].ln()).collect();
    let ly: Vec<f64> = idx.iter().map(|&i| errors[i].max(1e-300).ln()).collect();
    let slope = crate::stats::linear_fit(&lx, &ly).slope;
    Ok(RefinementStudy {
        dts: dts.to_vec(),
        means,
        std_errors: ses,
        errors,
        slope,
    })
}

/// Averages antithetic pairs so that standard errors see independent values.
pub fn pair_means(values: &[f64], antithetic: bool) -> Vec<f64> {
    if !antithetic {
        return values.to_vec();
    }
    values
        .chunks(2)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Path dump with columns `path_id, t, x_1..x_d, is_jump`.
pub fn write_paths_csv<W: Write>(mut w: W, paths: &[(usize, &PathSample)]) -> io::Result<()> {
    let d = paths
        .iter()
        .find_map(|(_, p)| p.states.first().map(|s| s.len()))
        .unwrap_or(1);
    write!(w, "path_id,t")?;
    for i in 1..=d {
        write!(w, ",x_{i}")?;
    }
    writeln!(w, ",is_jump")?;
    for (id, p) in paths {
        for ((t, x), j) in p.times.iter().zip(&p.states).zip(&p.is_jump) {
            write!(w, "{id},{t:.16e}")?;
            for v in x {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w, ",{}", u8::from(*j))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyModel;
    use crate::presets;
    use crate::rng::stream;
    use crate::stats;
    use std::sync::Arc;

    #[test]
    fn zero_coefficients_give_a_constant_path() {
        let p = SdeProblem::new("still", 1);
        let path = simulate_small_jump_path(
            &p,
            &[1.0],
            0.0,
            1.0,
            &StepConfig::new(0.01),
            &mut stream(1, 0),
        )
        .unwrap();
        assert!(path.states.iter().all(|x| x[0] == 1.0));
        assert_eq!(path.times.len(), 101);
        assert_eq!(*path.times.last().unwrap(), 1.0);
    }

    #[test]
    fn empty_interval_and_reversed_interval() {
        let p = presets::ou(1.0, 1.0);
        let path = simulate_small_jump_path(
            &p,
            &[0.5],
            2.0,
            2.0,
            &StepConfig::new(0.1),
            &mut stream(1, 0),
        )
        .unwrap();
        assert_eq!(path.states, vec![vec![0.5]]);
        assert!(simulate_small_jump_path(
            &p,
            &[0.5],
            2.0,
            1.0,
            &StepConfig::new(0.1),
            &mut stream(1, 0)
        )
        .is_err());
    }

    #[test]
    fn max_steps_is_enforced() {
        let p = presets::ou(1.0, 1.0);
        let cfg = StepConfig {
            max_steps: 5,
            ..StepConfig::new(0.1)
        };
        let err =
            simulate_small_jump_path(&p, &[0.0], 0.0, 1.0, &cfg, &mut stream(1, 0)).unwrap_err();
        assert!(matches!(err, Error::MaxSteps(5)));
    }

    #[test]
    fn explosion_is_flagged_not_thrown() {
        let p = SdeProblem::new("blowup", 1).with_drift(Arc::new(|_, x, o| o[0] = x[0] * x[0]));
        let path = simulate_small_jump_path(
            &p,
            &[1.0],
            0.0,
            5.0,
            &StepConfig::new(1e-3),
            &mut stream(1, 0),
        )
        .unwrap();
        let t = path.exploded_at.expect("x' = x^2 blows up at t = 1");
        assert!(t > 0.9 && t < 1.1, "{t}");
    }

    fn jump_only() -> SdeProblem {
        SdeProblem::new("jumps", 1).with_jumps(
            JumpCoeff::Scalar(Arc::new(|_, _| 1.0)),
            LevyModel::stable(1.5, 1, 1.0).unwrap(),
        )
    }

    #[test]
    fn large_jumps_are_spliced_exactly() {
        let p = presets::mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5);
        let mut streams = PathStreams::new(3, 0);
        let path =
            simulate_interlaced(&p, &[2.0], 10.0, &StepConfig::new(0.01), &mut streams).unwrap();
        assert!(!path.events.is_empty());
        let mut j = 0;
        for (k, &flag) in path.is_jump.iter().enumerate() {
            if flag {
                let e = &path.events[j];
                assert_eq!(path.times[k], e.time);
                let expect = path.pre_jump[j][0] + p.jump(e.time, &path.pre_jump[j], &e.mark)[0];
                assert_eq!(path.states[k][0], expect);
                j += 1;
            }
        }
        assert_eq!(j, path.events.len());
        assert!(path.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn large_jump_count_matches_discontinuities() {
        let p = jump_only();
        let cfg = StepConfig::new(1e-3);
        for seed in 0..20 {
            let path =
                simulate_interlaced(&p, &[0.0], 1.0, &cfg, &mut PathStreams::new(seed, 0)).unwrap();
            let big = path
                .is_jump
                .iter()
                .enumerate()
                .filter(|(k, _)| {
                    *k > 0 && (path.states[*k][0] - path.pre_jump_or_prev(*k)).abs() >= 1.0
                })
                .count();
            assert_eq!(big, path.events.len());
        }
    }

    impl PathSample {
        fn pre_jump_or_prev(&self, k: usize) -> f64 {
            if self.is_jump[k] {
                let j = self.is_jump[..k].iter().filter(|f| **f).count();
                self.pre_jump[j][0]
            } else {
                self.states[k - 1][0]
            }
        }
    }

    #[test]
    fn no_large_jumps_means_identical_paths() {
        let p = SdeProblem::new("table", 1)
            .with_constant_diffusion(1.0)
            .with_jumps(
                JumpCoeff::Scalar(Arc::new(|_, _| 1.0)),
                LevyModel::radial_table(vec![0.01, 0.5], vec![10.0, 10.0], 1, 1.0).unwrap(),
            );
        let cfg = StepConfig::new(0.01);
        let a = simulate_interlaced(&p, &[0.3], 2.0, &cfg, &mut PathStreams::new(9, 4)).unwrap();
        let b =
            simulate_small_jump_path(&p, &[0.3], 0.0, 2.0, &cfg, &mut PathStreams::new(9, 4).flow)
                .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_of_one_matches_interlaced_stream_zero() {
        let p = presets::mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5);
        let cfg = StepConfig::new(0.01);
        let ens = simulate_ensemble(&p, &[vec![1.0]], 3.0, &cfg, 1, 77).unwrap();
        let path =
            simulate_interlaced(&p, &[1.0], 3.0, &cfg, &mut PathStreams::new(77, 0)).unwrap();
        assert_eq!(ens.terminal[0], *path.states.last().unwrap());
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let p = presets::mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5);
        let cfg = StepConfig::new(0.01);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&p, &[vec![1.0]], 1.0, &cfg, 64, 5).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
    }

    #[test]
    fn antithetic_pairs_negate_noise() {
        let p = presets::brownian(1.0);
        let cfg = StepConfig::new(0.1).with_antithetic();
        let ens = simulate_ensemble(&p, &[vec![0.0]], 1.0, &cfg, 4, 2).unwrap();
        assert_eq!(ens.terminal[0][0], -ens.terminal[1][0]);
        assert_ne!(ens.terminal[0][0], ens.terminal[2][0]);
    }

    #[test]
    fn exact_stable_mode_scales_with_levy_constant() {
        // pure g = z: X_1 is symbol-stable at time C(1, 1.5)
        let p = jump_only();
        let cfg = StepConfig::new(0.25).with_exact_stable();
        let ens = simulate_ensemble(&p, &[vec![0.0]], 1.0, &cfg, 20_000, 11).unwrap();
        let c = levy_constant(1, 1.5);
        let cf: Vec<f64> = ens.coordinate(0).iter().map(|x| x.cos()).collect();
        let (m, se) = stats::mean_se(&cf);
        assert!((m - (-c).exp()).abs() < 4.0 * se, "{m} vs {}", (-c).exp());
    }

    #[test]
    fn truncated_and_exact_modes_agree_in_law() {
        let p = jump_only();
        let a = simulate_ensemble(
            &p,
            &[vec![0.0]],
            1.0,
            &StepConfig::new(0.01).with_gaussian_correction(),
            4000,
            1,
        )
        .unwrap();
        let b = simulate_ensemble(
            &p,
            &[vec![0.0]],
            1.0,
            &StepConfig::new(0.05).with_exact_stable(),
            4000,
            2,
        )
        .unwrap();
        let ks = stats::ks_two_sample(&a.coordinate(0), &b.coordinate(0));
        assert!(ks.passes(0.01), "{ks:?}");
    }

    #[test]
    fn non_odd_jump_map_is_compensated() {
        // g(x, z) = z^2 on shells: E X_t stays 0 when the compensator is removed
        let p = SdeProblem::new("sq", 1).with_jumps(
            JumpCoeff::General {
                map: Arc::new(|_, _, z: &[f64], o: &mut [f64]| o[0] = z[0] * z[0]),
                odd_in_z: false,
            },
            LevyModel::stable(1.5, 1, 1.0).unwrap(),
        );
        let st = Stepper::new(&p, StepConfig::new(0.1)).unwrap();
        let mut comp = [0.0];
        st.compensator(0.0, &[0.0], &mut comp).unwrap();
        let expect = LevyModel::stable(1.5, 1, 1.0)
            .unwrap()
            .tail_mass(1.0 / 32.0, 1.0, 2.0)
            .unwrap();
        assert!((comp[0] - expect).abs() < 1e-8 * expect);
        let outs = par_paths(4000, |i| {
            let mut rng = stream(3, i);
            st.run(
                &[0.0],
                0.0,
                1.0,
                &[],
                1.0,
                &mut rng,
                &mut |_: f64, _: &[f64], _: StateKind| true,
            )
        })
        .unwrap();
        let v: Vec<f64> = outs.iter().map(|o| o.x_end[0]).collect();
        let (m, se) = stats::mean_se(&v);
        assert!(m.abs() < 4.0 * se, "{m} {se}");
    }

    #[test]
    fn snapshots_hit_requested_times() {
        let p = presets::ou(1.0, 1.0);
        let cfg = StepConfig::new(0.1);
        let snaps = simulate_snapshots(&p, &[1.0], &[0.0, 0.5, 1.0], &cfg, 3, 4).unwrap();
        let ens = simulate_ensemble(&p, &[vec![1.0]], 1.0, &cfg, 3, 4).unwrap();
        for i in 0..3 {
            assert_eq!(snaps[i][0], vec![1.0]);
            assert_eq!(snaps[i][2], ens.terminal[i]);
        }
    }

    #[test]
    fn csv_dump_has_expected_columns() {
        let p = presets::ou(1.0, 1.0);
        let path = simulate_small_jump_path(
            &p,
            &[1.0],
            0.0,
            0.2,
            &StepConfig::new(0.1),
            &mut stream(1, 0),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &[(0, &path)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,t,x_1,is_jump");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0.0000000000000000e0,1.0000000000000000e0,0"));
    }

    #[test]
    fn config_validation() {
        let p = jump_only();
        assert!(StepConfig::new(0.0).validate(&p).is_err());
        assert!(StepConfig::new(0.1).with_epsilon(2.0).validate(&p).is_err());
        let general = SdeProblem::new("g", 1).with_jumps(
            JumpCoeff::General {
                map: Arc::new(|_, _, z: &[f64], o: &mut [f64]| o[0] = z[0]),
                odd_in_z: true,
            },
            LevyModel::stable(1.5, 1, 1.0).unwrap(),
        );
        assert!(StepConfig::new(0.1)
            .with_exact_stable()
            .validate(&general)
            .is_err());
    }
}
