//! Dispatch from a validated config to the library, producing a JSON
//! result, an overall verdict and CSV tables.

use crate::config::{ConfigError, ExperimentConfig};
use crate::expr::{Expr, Var};
use crate::output::Table;
use crate::params::*;
use levylab::density::{
    check_envelope, check_two_sided, dirichlet_brownian_kernel, kde_density, killed_density,
    reference_grid, stable_envelope, Bandwidth, KernelValue,
};
use levylab::ergodicity::{
    estimate_invariant, fit_lyapunov, lyapunov_margin, tv_decay_rate, InvariantSpec,
};
use levylab::inequality::{
    khasminskii_bound, krylov_ratio, random_gronwall_scenario, stochastic_gronwall_check,
    MixedNormSpec, NormGrid, SpaceTimeFn, Verdict,
};
use levylab::integrator::{
    par_paths, path_streams, simulate_ensemble, simulate_interlaced, simulate_snapshots,
    write_paths_csv, StepConfig,
};
use levylab::pide::zvonkin_crossval;
use levylab::rng::{child_seed, stream};
use levylab::sde::{
    audit_dissipativity, audit_ellipticity, audit_grid_lipschitz, audit_jump_coeff, AuditGrid,
    SdeProblem,
};
use levylab::stats;
use serde::Serialize;
use serde_json::{json, Value};
use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerics(#[from] levylab::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The check could not be judged reliably; not a failure.
    Withheld,
}

impl From<Verdict> for Status {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Status::Pass,
            Verdict::Fail => Status::Fail,
            Verdict::Withheld => Status::Withheld,
        }
    }
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub results: Value,
    pub status: Status,
    pub tables: Vec<Table>,
}

fn outcome<T: Serialize>(
    body: &T,
    status: Status,
    tables: Vec<Table>,
) -> Result<Outcome, RunError> {
    let mut results = serde_json::to_value(body)?;
    if let Value::Object(m) = &mut results {
        m.insert("verdict".into(), serde_json::to_value(status)?);
    }
    Ok(Outcome {
        results,
        status,
        tables,
    })
}

fn missing(field: &str) -> RunError {
    RunError::Config(ConfigError::Fields(vec![format!(
        "{field}: required for this experiment"
    )]))
}

fn step_config(cfg: &ExperimentConfig) -> Result<StepConfig, RunError> {
    let n = &cfg.numerics;
    let mut sc = StepConfig::new(n.dt.ok_or_else(|| missing("numerics.dt"))?);
    if let Some(e) = n.epsilon {
        sc = sc.with_epsilon(e);
    }
    if n.exact_stable {
        sc = sc.with_exact_stable();
    }
    if n.gaussian_correction {
        sc = sc.with_gaussian_correction();
    }
    Ok(sc)
}

fn n_paths(cfg: &ExperimentConfig) -> Result<usize, RunError> {
    cfg.numerics
        .n_paths
        .ok_or_else(|| missing("numerics.n_paths"))
}

fn space_time_fn(name: &str, src: &str) -> Result<SpaceTimeFn, RunError> {
    let e = Expr::parse(src, &[Var::T, Var::X]).map_err(|e| {
        ConfigError::Fields(vec![format!(
            "params.{name}: column {}: {}",
            e.column, e.message
        )])
    })?;
    Ok(std::sync::Arc::new(move |t, x| e.eval(t, x, 0.0)))
}

/// Runs the configured experiment. Deterministic for a fixed config.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    cfg.validate()?;
    let params = Params::parse(cfg.experiment, &cfg.params)
        .map_err(|e| ConfigError::Fields(vec![format!("params: {e}")]))?;
    if let Params::VerifyGronwall(g) = &params {
        return gronwall(cfg, g);
    }
    let p = cfg.build_problem()?;
    match &params {
        Params::Simulate(s) => simulate(cfg, &p, s),
        Params::Invariant(s) => invariant(cfg, &p, s),
        Params::TvDecay(s) => tv_decay(cfg, &p, s),
        Params::ZvonkinCrossval(s) => zvonkin(cfg, &p, s),
        Params::Heatkernel(s) => heatkernel(cfg, &p, s),
        Params::Dirichlet(s) => dirichlet(cfg, &p, s),
        Params::VerifyKrylov(s) => krylov(cfg, &p, s),
        Params::VerifyKhasminskii(s) => khasminskii(cfg, &p, s),
        Params::Lyapunov(s) => lyapunov(&p, s),
        Params::Audit(s) => audit(&p, s),
        Params::VerifyGronwall(_) => unreachable!("handled above"),
    }
}

fn simulate(
    cfg: &ExperimentConfig,
    p: &SdeProblem,
    prm: &SimulateParams,
) -> Result<Outcome, RunError> {
    let sc = step_config(cfg)?;
    let n = n_paths(cfg)?;
    let x0 = if prm.x0.is_empty() {
        vec![0.0; p.dim]
    } else {
        prm.x0.clone()
    };
    if x0.len() != p.dim {
        return Err(ConfigError::Fields(vec![format!(
            "params.x0: expected {} coordinates, got {}",
            p.dim,
            x0.len()
        )])
        .into());
    }
    let ens = simulate_ensemble(p, std::slice::from_ref(&x0), prm.horizon, &sc, n, cfg.seed)?;
    let saved = par_paths(prm.save_paths.min(n), |i| {
        let (mut streams, _) = path_streams(&sc, cfg.seed, i);
        simulate_interlaced(p, &x0, prm.horizon, &sc, &mut streams)
    })?;
    let indexed: Vec<(usize, &_)> = saved.iter().enumerate().collect();
    let paths = Table::from_writer("paths.csv", |w| write_paths_csv(w, &indexed))?;
    let mut header = vec!["path_id".to_string()];
    header.extend((1..=p.dim).map(|i| format!("x_{i}")));
    header.push("exploded".into());
    let mut terminal = header.join(",") + "\n";
    for (i, (x, e)) in ens.terminal.iter().zip(&ens.exploded_at).enumerate() {
        let cells: Vec<String> = x.iter().map(|v| format!("{v:.16e}")).collect();
        terminal += &format!("{i},{},{}\n", cells.join(","), u8::from(e.is_some()));
    }
    let variance: Vec<f64> = (0..p.dim)
        .map(|i| stats::variance(&ens.coordinate(i)))
        .collect();
    let body = json!({
        "problem": p.name,
        "n_paths": n,
        "horizon": prm.horizon,
        "x0": x0,
        "mean": ens.mean(),
        "variance": variance,
        "explosion_rate": ens.explosion_rate(),
        "mean_large_jumps": ens.large_jumps.iter().sum::<usize>() as f64 / n as f64,
    });
    let tables = vec![
        paths,
        Table {
            name: "terminal.csv".into(),
            bytes: terminal.into_bytes(),
        },
    ];
    outcome(&body, Status::Pass, tables)
}

fn invariant(
    cfg: &ExperimentConfig,
    p: &SdeProblem,
    prm: &InvariantParams,
) -> Result<Outcome, RunError> {
    let sc = step_config(cfg)?;
    let spec = InvariantSpec {
        x0: prm.x0,
        burn_in: cfg
            .numerics
            .burn_in
            .ok_or_else(|| missing("numerics.burn_in"))?,
        n_samples: n_paths(cfg)?,
        thinning: prm.thinning,
        chains: prm.chains,
    };
    let m = estimate_invariant(p, &spec, &sc, cfg.seed)?;
    let var = m.variance();
    let (check, status) = match prm.variance_target {
        Some(target) => {
            let rel = (var / target - 1.0).abs();
            (
                json!({"target": target, "rel_error": rel, "rel_tol": prm.rel_tol}),
                Status::from_bool(rel <= prm.rel_tol),
            )
        }
        None => (Value::Null, Status::Pass),
    };
    let body = json!({
        "mean": m.mean(),
        "variance": var,
        "n_samples": m.count,
        "bandwidth": m.bandwidth,
        "burn_in": spec.burn_in,
        "thinning": spec.thinning,
        "chains": spec.chains,
        "variance_check": check,
    });
    let table = Table::from_writer("invariant.csv", |w| m.write_csv(w))?;
    outcome(&body, status, vec![table])
}

fn tv_decay(
    cfg: &ExperimentConfig,
    p: &SdeProblem,
    prm: &TvDecayParams,
) -> Result<Outcome, RunError> {
    let sc = step_config(cfg)?;
    let rep = tv_decay_rate(p, prm.x0, prm.y0, &prm.times, n_paths(cfg)?, &sc, cfg.seed)?;
    let mut ok = rep.gamma.is_infinite() || (rep.gamma > 0.0 && rep.r_squared >= prm.min_r_squared);
    if let Some((g, tol)) = prm.expected_gamma {
        ok &= (rep.gamma - g).abs() <= tol;
    }
    let rows = rep
        .points
        .iter()
        .map(|q| vec![q.t, q.tv, q.se, q.bin_width, f64::from(u8::from(q.used))]);
    let table = Table::numeric(
        "tv_decay.csv",
        &["t", "tv", "se", "bin_width", "used"],
        rows,
    );
    outcome(&rep, Status::from_bool(ok), vec![table])
}

fn zvonkin(
    cfg: &ExperimentConfig,
    p: &SdeProblem,
    prm: &ZvonkinParams,
) -> Result<Outcome, RunError> {
    let sc = step_config(cfg)?;
    let (rep, direct, mapped) = zvonkin_crossval(
        p,
        prm.x0,
        prm.t,
        n_paths(cfg)?,
        &sc,
        cfg.seed,
        prm.h,
        prm.w1_tolerance,
    )?;
    let (a, b) = (stats::sorted(&direct), stats::sorted(&mapped));
    let rows = (1..100).map(|k| {
        let q = k as f64 / 100.0;
        vec![
            q,
            stats::quantile_sorted(&a, q),
            stats::quantile_sorted(&b, q),
        ]
    });
    let table = Table::numeric("quantiles.csv", &["level", "direct", "transformed"], rows);
    outcome(&rep, Status::from_bool(rep.pass), vec![table])
}

fn heatkernel(
    cfg: &ExperimentConfig,
    p: &SdeProblem,
    prm: &HeatkernelParams,
) -> Result<Outcome, RunError> {
    let alpha = match prm
        .alpha
        .or_else(|| p.levy.as_ref().and_then(|l| l.alpha()))
    {
        Some(a) => a,
        None => return Err(missing("params.alpha (the problem has no stable noise)")),
    };
    let reference = reference_grid(alpha, 1, &prm.times, &prm.radii)?;
    let fit = check_two_sided(&reference, alpha, 1, prm.max_ratio)?;
    let rows = reference
        .iter()
        .map(|v| vec![v.t, v.dist, v.value, stable_envelope(alpha, 1, v.t, v.dist)]);
    let mut tables = vec![Table::numeric(
        "reference.csv",
        &["t", "dist", "value", "envelope"],
        rows,
    )];
    let mut envelope = Value::Null;
    let mut ok = fit.pass;
    if prm.simulate {
        let sc = step_config(cfg)?;
        let snaps = simulate_snapshots(p, &[prm.x0], &prm.mc_times, &sc, n_paths(cfg)?, cfg.seed)?;
        let mut values = Vec::new();
        let mut rows = Vec::new();
        for (k, &t) in prm.mc_times.iter().enumerate() {
            let s: Vec<f64> = snaps
                .iter()
                .map(|v| v[k][0])
                .filter(|v| v.is_finite())
                .collect();
            let est = kde_density(&s, &prm.points, Bandwidth::Silverman)?;
            for (i, &x) in prm.points.iter().enumerate() {
                values.push(KernelValue {
                    t,
                    dist: (x - prm.x0).abs(),
                    value: est.values[i],
                    se: est.se[i],
                });
                rows.push(vec![t, x, est.values[i], est.se[i], est.bandwidth]);
            }
        }
        let env = check_envelope(&values, alpha, 1, fit.c1 / 2.0, 2.0 * fit.c2)?;
        ok &= env.pass;
        envelope = serde_json::to_value(&env)?;
        tables.push(Table::numeric(
            "kde.csv",
            &["t", "x", "value", "se", "bandwidth"],
            rows,
        ));
    }
    let body = json!({"alpha": alpha, "reference": fit, "envelope": envelope});
    outcome(&body, Status::from_bool(ok), tables)
}

fn dirichlet(
    cfg: &ExperimentConfig,
    p: &SdeProblem,
    prm: &DirichletParams,
) -> Result<Outcome, RunError> {
    let sc = step_config(cfg)?;
    let mut points = prm.points.clone();
    let at = match points.iter().position(|x| (x - prm.x0).abs() < 1e-12) {
        Some(i) => i,
        None => {
            points.push(prm.x0);
            points.len() - 1
        }
    };
    let k = killed_density(
        p,
        prm.interval,
        prm.t,
        prm.x0,
        &points,
        n_paths(cfg)?,
        &sc,
        cfg.seed,
    )?;
    let d = &k.density;
    let min_ratio = d
        .values
        .iter()
        .zip(&d.se)
        .map(|(v, s)| v / s)
        .fold(f64::INFINITY, f64::min);
    let mut ok = k.positive;
    let eigen = match prm.eigen_sigma {
        Some(sigma) => {
            let exact = dirichlet_brownian_kernel(sigma, prm.interval, prm.t, prm.x0, prm.x0);
            let rel = (d.values[at] / exact - 1.0).abs();
            ok &= rel <= prm.rel_tol;
            json!({"exact": exact, "estimate": d.values[at], "se": d.se[at], "rel_error": rel, "rel_tol": prm.rel_tol})
        }
        None => Value::Null,
    };
    let body = json!({
        "survival": k.survival,
        "positive": k.positive,
        "min_value_over_se": min_ratio,
        "bandwidth": d.bandwidth,
        "eigen_check": eigen,
    });
    let table = Table::from_writer("killed_density.csv", |w| d.write_csv(w))?;
    outcome(&body, Status::from_bool(ok), vec![table])
}

fn norm_grid(cfg: &ExperimentConfig, time_nodes: usize) -> Result<NormGrid, RunError> {
    let g = cfg.numerics.grid.ok_or_else(|| missing("numerics.grid"))?;
    Ok(NormGrid {
        space: g.spec()?,
        time_nodes,
    })
}

fn krylov(cfg: &ExperimentConfig, p: &SdeProblem, prm: &KrylovParams) -> Result<Outcome, RunError> {
    let sc = step_config(cfg)?;
    let family = prm
        .family
        .iter()
        .enumerate()
        .map(|(i, s)| space_time_fn(&format!("family[{i}]"), s))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = MixedNormSpec::new(prm.p, prm.q)?;
    let rep = krylov_ratio(
        p,
        &family,
        spec,
        norm_grid(cfg, prm.time_nodes)?,
        prm.x0,
        prm.horizon,
        n_paths(cfg)?,
        &sc,
        cfg.seed,
        prm.max_spread,
    )?;
    let rows = rep
        .members
        .iter()
        .map(|m| vec![m.norm, m.lhs, m.se, m.ratio, m.ratio_se]);
    let table = Table::numeric(
        "krylov.csv",
        &["norm", "lhs", "se", "ratio", "ratio_se"],
        rows,
    );
    outcome(&rep, rep.verdict.into(), vec![table])
}

fn khasminskii(
    cfg: &ExperimentConfig,
    p: &SdeProblem,
    prm: &KhasminskiiParams,
) -> Result<Outcome, RunError> {
    let sc = step_config(cfg)?;
    let f = space_time_fn("f", &prm.f)?;
    let spec = MixedNormSpec::new(prm.p, prm.q)?;
    let lambda = cfg
        .numerics
        .lambda
        .ok_or_else(|| missing("numerics.lambda"))?;
    let rep = khasminskii_bound(
        p,
        f,
        spec,
        norm_grid(cfg, prm.time_nodes)?,
        lambda,
        prm.c0,
        prm.x0,
        prm.horizon,
        n_paths(cfg)?,
        &sc,
        cfg.seed,
    )?;
    outcome(&rep, rep.verdict.into(), vec![])
}

fn gronwall(cfg: &ExperimentConfig, prm: &GronwallParams) -> Result<Outcome, RunError> {
    let n = n_paths(cfg)?;
    let mut body = serde_json::Map::new();
    let mut ok = true;
    if let Some(spec) = &prm.scenario {
        let (Some(pe), Some(qe)) = (prm.p, prm.q) else {
            return Err(missing("params.p and params.q"));
        };
        let rep = stochastic_gronwall_check(
            &spec.scenario(),
            pe,
            qe,
            prm.horizon,
            prm.n_steps,
            n,
            cfg.seed,
        )?;
        ok &= rep.verdict == Verdict::Pass;
        body.insert("lhs".into(), json!(rep.lhs));
        body.insert("cap".into(), json!(rep.rhs_or_cap));
        body.insert("se".into(), json!(rep.se));
        body.insert("reliability".into(), json!(rep.reliability));
    }
    if prm.random > 0 {
        let mut rng = stream(child_seed(cfg.seed, 1), 0);
        let mut failures = Vec::new();
        let mut worst: f64 = 0.0;
        for k in 0..prm.random {
            let (sc, pe, qe) = random_gronwall_scenario(&mut rng);
            let rep = stochastic_gronwall_check(
                &sc,
                pe,
                qe,
                prm.horizon,
                prm.n_steps,
                n,
                child_seed(cfg.seed, 2 + k as u64),
            )?;
            if rep.rhs_or_cap > 0.0 {
                worst = worst.max(rep.lhs / rep.rhs_or_cap);
            }
            if rep.verdict != Verdict::Pass {
                failures.push(json!({"scenario": sc, "p": pe, "q": qe, "lhs": rep.lhs, "cap": rep.rhs_or_cap, "se": rep.se}));
            }
        }
        ok &= failures.is_empty();
        body.insert(
            "random".into(),
            json!({"count": prm.random, "failures": failures, "worst_ratio": worst}),
        );
    }
    if body.is_empty() {
        return Err(missing("params.scenario or params.random"));
    }
    outcome(&Value::Object(body), Status::from_bool(ok), vec![])
}

fn lyapunov(p: &SdeProblem, prm: &LyapunovParams) -> Result<Outcome, RunError> {
    let r = prm.r.or(p.tags.dissipativity.map(|d| d.r)).unwrap_or(0.0);
    let rep = match (prm.c1, prm.c2) {
        (Some(c1), Some(c2)) => lyapunov_margin(p, &prm.radii, c1, c2, r)?,
        (None, None) => fit_lyapunov(p, &prm.radii, r)?,
        _ => return Err(missing("params.c1 together with params.c2")),
    };
    let rows = rep.points.iter().map(|q| vec![q.x, q.generator, q.margin]);
    let table = Table::numeric("lyapunov.csv", &["x", "generator", "margin"], rows);
    outcome(&rep, Status::from_bool(rep.pass), vec![table])
}

/// Hypothesis audits for every declared constant, plus grid Lipschitz
/// reports on the drift parts (informational).
pub fn audit(p: &SdeProblem, prm: &AuditParams) -> Result<Outcome, RunError> {
    let grid = AuditGrid::default_box(p.dim, prm.lo, prm.hi);
    let mut body = serde_json::Map::new();
    let mut ok = true;
    if p.tags.ellipticity.is_some() {
        let dirs: Vec<Vec<f64>> = (0..p.dim)
            .map(|i| {
                let mut e = vec![0.0; p.dim];
                e[i] = 1.0;
                e
            })
            .collect();
        let rep = audit_ellipticity(p, &grid, &dirs)?;
        ok &= rep.pass;
        body.insert("ellipticity".into(), serde_json::to_value(rep)?);
    }
    if p.tags.jump.is_some() {
        let marks = [-3.0, -1.0, -0.25, 0.1, 0.5, 2.0];
        let mut pairs = Vec::new();
        for i in 0..p.dim {
            for w in marks.windows(2) {
                let (mut z, mut zp) = (vec![0.0; p.dim], vec![0.0; p.dim]);
                z[i] = w[0];
                zp[i] = w[1];
                pairs.push((z, zp));
            }
        }
        let rep = audit_jump_coeff(p, &grid, &pairs)?;
        ok &= rep.pass;
        body.insert("jump".into(), serde_json::to_value(rep)?);
    }
    if p.tags.dissipativity.is_some() && p.time_homogeneous {
        let rep = audit_dissipativity(p, &prm.radii)?;
        ok &= rep.pass;
        body.insert("dissipativity".into(), serde_json::to_value(rep)?);
    }
    if p.dim == 1 {
        let mut lip = serde_json::Map::new();
        if p.drift_regular.is_some() {
            let rep = audit_grid_lipschitz(|x| p.regular_drift(0.0, &[x])[0], prm.lo, prm.hi, 401)?;
            lip.insert("b2".into(), serde_json::to_value(rep)?);
        }
        if p.drift_singular.is_some() {
            // odd grid size puts a node at 0 for symmetric ranges; shift off it
            let rep = audit_grid_lipschitz(
                |x| p.singular_drift(0.0, &[x])[0],
                prm.lo,
                prm.hi + 1e-3,
                400,
            )?;
            lip.insert("b1".into(), serde_json::to_value(rep)?);
        }
        body.insert("lipschitz".into(), Value::Object(lip));
    }
    body.insert("problem".into(), json!(p.name));
    outcome(&Value::Object(body), Status::from_bool(ok), vec![])
}
