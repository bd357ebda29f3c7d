//! Experiment-specific settings from the `params` object of a config.

use crate::config::ExperimentKind;
use levylab::inequality::{AProcess, GronwallScenario, Martingale};
use serde::{Deserialize, Serialize};
use serde_json::Value;

fn steps(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h).round() as usize;
    (0..=n).map(|k| lo + h * k as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateParams {
    /// Start point; empty means the origin.
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// Number of full paths written to `paths.csv`.
    pub save_paths: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            x0: vec![],
            horizon: 1.0,
            save_paths: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantParams {
    pub x0: f64,
    pub thinning: usize,
    pub chains: usize,
    /// Expected stationary variance, checked at `rel_tol`.
    pub variance_target: Option<f64>,
    pub rel_tol: f64,
}

impl Default for InvariantParams {
    fn default() -> Self {
        Self {
            x0: 0.0,
            thinning: 10,
            chains: 1,
            variance_target: None,
            rel_tol: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvDecayParams {
    pub x0: f64,
    pub y0: f64,
    pub times: Vec<f64>,
    pub min_r_squared: f64,
    /// `[gamma, tolerance]`
    pub expected_gamma: Option<(f64, f64)>,
}

impl Default for TvDecayParams {
    fn default() -> Self {
        Self {
            x0: 2.0,
            y0: -2.0,
            times: steps(1.0, 5.0, 0.5),
            min_r_squared: 0.95,
            expected_gamma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZvonkinParams {
    pub x0: f64,
    pub t: f64,
    /// Spatial step of the resolvent solve.
    pub h: f64,
    pub w1_tolerance: f64,
}

impl Default for ZvonkinParams {
    fn default() -> Self {
        Self {
            x0: 0.5,
            t: 1.0,
            h: 0.002,
            w1_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatkernelParams {
    /// Stability index of the reference envelope; defaults to the problem's.
    pub alpha: Option<f64>,
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub max_ratio: f64,
    /// Simulate the problem and test its KDE against `[c1/2, 2 c2]`.
    pub simulate: bool,
    pub x0: f64,
    pub mc_times: Vec<f64>,
    pub points: Vec<f64>,
}

impl Default for HeatkernelParams {
    fn default() -> Self {
        Self {
            alpha: None,
            times: steps(0.1, 1.0, 0.1),
            radii: steps(0.0, 5.0, 0.1),
            max_ratio: 3.0,
            simulate: true,
            x0: 0.0,
            mc_times: vec![0.1, 0.25, 0.5, 1.0],
            points: steps(-5.0, 5.0, 0.1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirichletParams {
    pub interval: (f64, f64),
    pub t: f64,
    pub x0: f64,
    pub points: Vec<f64>,
    /// For pure Brownian problems: compare the density at `x0` with the
    /// eigenfunction series for this `sigma`.
    pub eigen_sigma: Option<f64>,
    pub rel_tol: f64,
}

impl Default for DirichletParams {
    fn default() -> Self {
        Self {
            interval: (-1.0, 1.0),
            t: 0.5,
            x0: 0.0,
            points: steps(-0.9, 0.9, 0.1),
            eigen_sigma: None,
            rel_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovParams {
    /// Family of `f(t, x)` expressions.
    pub family: Vec<String>,
    #[serde(default = "krylov_p")]
    pub p: f64,
    #[serde(default = "two")]
    pub q: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default = "twenty")]
    pub time_nodes: usize,
    #[serde(default = "three")]
    pub max_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KhasminskiiParams {
    /// Nonnegative `f(t, x)`.
    pub f: String,
    #[serde(default = "krylov_p")]
    pub p: f64,
    #[serde(default = "two")]
    pub q: f64,
    /// Krylov constant, e.g. a measured `sup_ratio`.
    pub c0: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default = "twenty")]
    pub time_nodes: usize,
}

fn krylov_p() -> f64 {
    1.1
}
fn two() -> f64 {
    2.0
}
fn three() -> f64 {
    3.0
}
fn unit() -> f64 {
    1.0
}
fn twenty() -> usize {
    20
}

/// A named scenario or an explicit one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Named(NamedScenario),
    Explicit(GronwallScenario),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedScenario {
    /// `xi = 1`, no drift, no `A`, no martingale.
    Constants,
}

impl ScenarioSpec {
    pub fn scenario(&self) -> GronwallScenario {
        match self {
            ScenarioSpec::Named(NamedScenario::Constants) => GronwallScenario {
                xi0: 1.0,
                eta: 0.0,
                a: AProcess::Zero,
                m: Martingale::Zero,
            },
            ScenarioSpec::Explicit(s) => *s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GronwallParams {
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default = "unit")]
    pub horizon: f64,
    #[serde(default = "hundred")]
    pub n_steps: usize,
    /// Also check this many randomized scenarios.
    #[serde(default)]
    pub random: usize,
}

fn hundred() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovParams {
    pub radii: Vec<f64>,
    /// Exponent in `L h <= -c1 h^{1+r} + c2`; defaults to the declared
    /// dissipativity exponent, else 0.
    pub r: Option<f64>,
    /// Check these constants instead of fitting them.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            radii: steps(0.0, 50.0, 0.5),
            r: None,
            c1: None,
            c2: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditParams {
    pub lo: f64,
    pub hi: f64,
    pub radii: Vec<f64>,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            lo: -5.0,
            hi: 5.0,
            radii: steps(0.0, 50.0, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Simulate(SimulateParams),
    Invariant(InvariantParams),
    TvDecay(TvDecayParams),
    ZvonkinCrossval(ZvonkinParams),
    Heatkernel(HeatkernelParams),
    Dirichlet(DirichletParams),
    VerifyKrylov(KrylovParams),
    VerifyKhasminskii(KhasminskiiParams),
    VerifyGronwall(GronwallParams),
    Lyapunov(LyapunovParams),
    Audit(AuditParams),
}

impl Params {
    pub fn parse(kind: ExperimentKind, v: &Value) -> Result<Self, serde_json::Error> {
        use ExperimentKind as K;
        let v = v.clone();
        Ok(match kind {
            K::Simulate => Params::Simulate(serde_json::from_value(v)?),
            K::Invariant => Params::Invariant(serde_json::from_value(v)?),
            K::TvDecay => Params::TvDecay(serde_json::from_value(v)?),
            K::ZvonkinCrossval => Params::ZvonkinCrossval(serde_json::from_value(v)?),
            K::Heatkernel => Params::Heatkernel(serde_json::from_value(v)?),
            K::Dirichlet => Params::Dirichlet(serde_json::from_value(v)?),
            K::VerifyKrylov => Params::VerifyKrylov(serde_json::from_value(v)?),
            K::VerifyKhasminskii => Params::VerifyKhasminskii(serde_json::from_value(v)?),
            K::VerifyGronwall => Params::VerifyGronwall(serde_json::from_value(v)?),
            K::Lyapunov => Params::Lyapunov(serde_json::from_value(v)?),
            K::Audit => Params::Audit(serde_json::from_value(v)?),
        })
    }
}
