//! Experiment configuration files.

use crate::expr::{Expr, ExprError, Var};
use levylab::levy::LevyModel;
use levylab::pide::GridSpec;
use levylab::presets;
use levylab::sde::{HypothesisTags, JumpCoeff, SdeProblem};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Schema(String),
    #[error("invalid config: {}", .0.join("; "))]
    Fields(Vec<String>),
    #[error("{0}")]
    Preset(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Invariant,
    TvDecay,
    ZvonkinCrossval,
    Heatkernel,
    Dirichlet,
    VerifyKrylov,
    VerifyKhasminskii,
    VerifyGronwall,
    Lyapunov,
    Audit,
}

impl ExperimentKind {
    fn needs_problem(self) -> bool {
        self != ExperimentKind::VerifyGronwall
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Preset(String),
    Inline(InlineProblem),
}

/// Coefficients of a one-dimensional problem as expressions. `b` is an
/// alias for the regular drift `b2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<HypothesisTags>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum LevySpec {
    Stable(StableSpec),
    Table(RadialTableSpec),
}

// Dispatch by shape so that field errors name the offending field instead
// of "did not match any variant".
impl<'de> Deserialize<'de> for ProblemSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) => Ok(ProblemSpec::Preset(s)),
            serde_json::Value::Object(_) => serde_json::from_value(v)
                .map(ProblemSpec::Inline)
                .map_err(D::Error::custom),
            _ => Err(D::Error::custom(
                "problem must be a preset name or an object of expressions",
            )),
        }
    }
}

impl<'de> Deserialize<'de> for LevySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        if v.get("alpha").is_some() {
            serde_json::from_value(v)
                .map(LevySpec::Stable)
                .map_err(D::Error::custom)
        } else if v.get("radii").is_some() {
            serde_json::from_value(v)
                .map(LevySpec::Table)
                .map_err(D::Error::custom)
        } else {
            Err(D::Error::custom(
                "levy needs either alpha or a radii/density table",
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableSpec {
    pub alpha: f64,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(rename = "R", default = "one_f")]
    pub big_jump_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialTableSpec {
    pub radii: Vec<f64>,
    pub density: Vec<f64>,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(rename = "R", default = "one_f")]
    pub big_jump_radius: f64,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl LevySpec {
    pub fn model(&self) -> levylab::Result<LevyModel> {
        match self {
            LevySpec::Stable(s) => LevyModel::stable(s.alpha, s.dim, s.big_jump_radius),
            LevySpec::Table(t) => LevyModel::radial_table(
                t.radii.clone(),
                t.density.clone(),
                t.dim,
                t.big_jump_radius,
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridConfig {
    pub fn spec(&self) -> levylab::Result<GridSpec> {
        GridSpec::new(self.lo, self.hi, self.n)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Draw `s(X) z` stable increments in one piece instead of truncating.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exact_stable: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gaussian_correction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levy: Option<LevySpec>,
    #[serde(default)]
    pub numerics: Numerics,
    /// Experiment-specific settings; see [`crate::params`].
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without running: the problem
    /// builds, the parameters fit the experiment and the numerics it needs
    /// are present. All problems found are reported together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad = Vec::new();
        if self.experiment.needs_problem() {
            match &self.problem {
                None => bad.push("problem: required for this experiment".to_string()),
                Some(_) => {
                    if let Err(e) = self.build_problem() {
                        match e {
                            ConfigError::Fields(f) => bad.extend(f),
                            ConfigError::Preset(m) => return Err(ConfigError::Preset(m)),
                            other => bad.push(other.to_string()),
                        }
                    }
                }
            }
        }
        if let Some(l) = &self.levy {
            if let Err(e) = l.model() {
                bad.push(format!("levy: {e}"));
            }
        }
        if let Err(e) = crate::params::Params::parse(self.experiment, &self.params) {
            bad.push(format!("params: {e}"));
        }
        let n = &self.numerics;
        let positive = |v: Option<f64>, name: &str, bad: &mut Vec<String>| {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    bad.push(format!("numerics.{name}: must be positive, got {v}"));
                }
            }
        };
        positive(n.dt, "dt", &mut bad);
        positive(n.epsilon, "epsilon", &mut bad);
        if let Some(b) = n.burn_in {
            if !(b >= 0.0) {
                bad.push(format!("numerics.burn_in: must be nonnegative, got {b}"));
            }
        }
        if let Some(l) = n.lambda {
            if !(l >= 0.0) {
                bad.push(format!("numerics.lambda: must be nonnegative, got {l}"));
            }
        }
        if n.n_paths == Some(0) {
            bad.push("numerics.n_paths: must be positive".into());
        }
        if let Some(g) = n.grid {
            if let Err(e) = g.spec() {
                bad.push(format!("numerics.grid: {e}"));
            }
        }
        use ExperimentKind::*;
        let need = |field: &str, present: bool, bad: &mut Vec<String>| {
            if !present {
                bad.push(
                    format!("numerics.{field}: required for {:?}", self.experiment).to_lowercase(),
                );
            }
        };
        match self.experiment {
            Simulate | TvDecay | ZvonkinCrossval | Dirichlet | VerifyKrylov | VerifyKhasminskii => {
                need("dt", n.dt.is_some(), &mut bad);
                need("n_paths", n.n_paths.is_some(), &mut bad);
            }
            Invariant => {
                need("dt", n.dt.is_some(), &mut bad);
                need("n_paths", n.n_paths.is_some(), &mut bad);
                need("burn_in", n.burn_in.is_some(), &mut bad);
            }
            Heatkernel | VerifyGronwall => need("n_paths", n.n_paths.is_some(), &mut bad),
            Lyapunov | Audit => {}
        }
        if matches!(self.experiment, VerifyKrylov | VerifyKhasminskii) {
            need("grid", n.grid.is_some(), &mut bad);
        }
        if self.experiment == VerifyKhasminskii {
            need("lambda", n.lambda.is_some(), &mut bad);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Fields(bad))
        }
    }

    pub fn build_problem(&self) -> Result<SdeProblem, ConfigError> {
        let spec = self.problem.as_ref().ok_or_else(|| {
            ConfigError::Fields(vec!["problem: required for this experiment".into()])
        })?;
        let levy = match &self.levy {
            Some(l) => Some(
                l.model()
                    .map_err(|e| ConfigError::Fields(vec![format!("levy: {e}")]))?,
            ),
            None => None,
        };
        match spec {
            ProblemSpec::Preset(name) => {
                let mut p =
                    presets::by_name(name).map_err(|e| ConfigError::Preset(e.to_string()))?;
                if let Some(l) = levy {
                    if !p.has_jumps() {
                        return Err(ConfigError::Fields(vec![format!(
                            "levy: preset '{name}' has no jump part"
                        )]));
                    }
                    if l.dim != p.dim {
                        return Err(ConfigError::Fields(vec![format!(
                            "levy.dim: preset '{name}' has d = {}",
                            p.dim
                        )]));
                    }
                    p.levy = Some(l);
                }
                Ok(p)
            }
            ProblemSpec::Inline(inline) => inline.build(levy),
        }
    }
}

fn field_expr(name: &str, src: &str, vars: &[Var]) -> Result<Expr, String> {
    Expr::parse(src, vars).map_err(|ExprError { column, message }| {
        format!("problem.{name}: column {column}: {message}")
    })
}

impl InlineProblem {
    pub fn build(&self, levy: Option<LevyModel>) -> Result<SdeProblem, ConfigError> {
        let mut bad = Vec::new();
        let tx = [Var::T, Var::X];
        let mut parse = |name: &str, src: &Option<String>, vars: &[Var]| -> Option<Expr> {
            let src = src.as_ref()?;
            match field_expr(name, src, vars) {
                Ok(e) => Some(e),
                Err(m) => {
                    bad.push(m);
                    None
                }
            }
        };
        let sigma = parse("sigma", &self.sigma, &tx);
        let b = parse("b", &self.b, &tx);
        let b1 = parse("b1", &self.b1, &tx);
        let b2 = parse("b2", &self.b2, &tx);
        let g = parse("g", &self.g, &[Var::T, Var::X, Var::Z]);
        if self.b.is_some() && self.b2.is_some() {
            bad.push("problem: give either b or b2, not both".into());
        }
        if self.g.is_some() && levy.is_none() {
            bad.push("levy: required when problem.g is given".into());
        }
        if self.g.is_none() && levy.is_some() {
            bad.push("levy: given but problem.g is missing".into());
        }
        if let Some(l) = &levy {
            if l.dim != 1 {
                bad.push(format!(
                    "levy.dim: inline problems are one-dimensional, got {}",
                    l.dim
                ));
            }
        }
        if !bad.is_empty() {
            return Err(ConfigError::Fields(bad));
        }
        let time_dependent = [&sigma, &b, &b1, &b2, &g]
            .iter()
            .any(|e| e.as_ref().is_some_and(|e| e.uses(Var::T)));
        let mut p = SdeProblem::new("inline", 1);
        if let Some(s) = sigma {
            p = p.with_scalar_diffusion(Arc::new(move |t, x| s.eval(t, x[0], 0.0)));
        }
        if let Some(d) = b.or(b2) {
            p = p.with_drift(Arc::new(move |t, x, out| out[0] = d.eval(t, x[0], 0.0)));
        }
        if let Some(d) = b1 {
            p = p.with_singular_drift(Arc::new(move |t, x, out| out[0] = d.eval(t, x[0], 0.0)));
        }
        if let (Some(g), Some(l)) = (g, levy) {
            let coeff = match g.linear_in_z() {
                Some(s) => JumpCoeff::Scalar(Arc::new(move |t, x| s.eval(t, x[0], 0.0))),
                None => {
                    let odd_in_z = looks_odd(&g);
                    JumpCoeff::General {
                        map: Arc::new(move |t, x, z, out| out[0] = g.eval(t, x[0], z[0])),
                        odd_in_z,
                    }
                }
            };
            p = p.with_jumps(coeff, l);
        }
        if let Some(tags) = self.tags {
            p = p.with_tags(tags);
        }
        if time_dependent {
            p = p.time_dependent();
        }
        p.validate()
            .map_err(|e| ConfigError::Fields(vec![format!("problem: {e}")]))?;
        Ok(p)
    }
}

/// `g(t, x, -z) = -g(t, x, z)` on a probe grid, bit for bit.
fn looks_odd(g: &Expr) -> bool {
    let probes = [-3.7, -1.0, -0.31, 0.0, 0.2, 0.9, 2.5, 11.0];
    let marks = [1e-3, 0.05, 0.4, 1.0, 3.3, 25.0];
    probes.iter().all(|&x| {
        marks.iter().all(|&z| {
            [0.0, 0.7].iter().all(|&t| {
                let (a, b) = (g.eval(t, x, z), g.eval(t, x, -z));
                a == -b
            })
        })
    })
}
