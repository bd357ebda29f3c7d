//! Built-in problems used by the experiments and tests.

use crate::error::{Error, Result};
use crate::levy::LevyModel;
use crate::sde::{
    Dissipativity, Ellipticity, HypothesisTags, JumpCoeff, JumpRegularity, SdeProblem,
};
use std::f64::consts::SQRT_2;
use std::sync::Arc;

/// `(name, description)` of every registered preset.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "ou_singular",
        "dX = sqrt(2) dW - X dt + sign(X)|X|^(-1/2) 1{|X|<=1} dt",
    ),
    (
        "mixing_jump",
        "dX = dW + 0.5 |X-|^(1/2) dL - X dt, L isotropic 1.5-stable, R = 1",
    ),
    ("ou", "dX = sqrt(2) dW - X dt"),
    (
        "ou_stable",
        "dX = dW + dL - X dt, L isotropic 1.5-stable, R = 1",
    ),
    ("cubic_ou", "dX = sqrt(2) dW - X|X| dt"),
    ("brownian", "dX = sqrt(2) dW"),
    ("pure_stable", "dX = dL, L isotropic 1.5-stable, R = 1"),
    (
        "multiplicative_stable",
        "dX = (2 + sin X-)/3 dL, L isotropic 1.5-stable, R = 1",
    ),
];

pub fn by_name(name: &str) -> Result<SdeProblem> {
    Ok(match name {
        "ou_singular" => ou_singular(),
        "mixing_jump" => mixing_jump(1.0, 0.5, 0.5, 1.0, 1.5),
        "ou" => ou(1.0, SQRT_2),
        "ou_stable" => ou_stable(),
        "cubic_ou" => cubic_ou(SQRT_2),
        "brownian" => brownian(SQRT_2),
        "pure_stable" => pure_stable(1.5),
        "multiplicative_stable" => multiplicative_stable(),
        _ => {
            let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            return Err(Error::Domain(format!(
                "unknown preset '{name}'; known presets: {}",
                known.join(", ")
            )));
        }
    })
}

fn stable_levy(alpha: f64) -> LevyModel {
    LevyModel::stable(alpha, 1, 1.0).expect("valid stable model")
}

/// The singular drift `sign(x)|x|^{-1/2}` cut off outside `[-1, 1]`.
pub fn singular_drift_1d(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        x.signum() * x.abs().powf(-0.5)
    } else {
        0.0
    }
}

pub fn ou_singular() -> SdeProblem {
    SdeProblem::new("ou_singular", 1)
        .with_constant_diffusion(SQRT_2)
        .with_singular_drift(Arc::new(|_, x, out| out[0] = singular_drift_1d(x[0])))
        .with_drift(Arc::new(|_, x, out| out[0] = -x[0]))
        .with_tags(HypothesisTags {
            ellipticity: Some(Ellipticity { c0: 2.0, beta: 1.0 }),
            jump: None,
            dissipativity: Some(Dissipativity {
                kappa1: 1.0,
                kappa2: 4.0,
                kappa3: 1.0,
                r: 0.0,
            }),
        })
}

/// `dX = dW + lambda1 |X-|^beta dL - lambda0 X|X|^{gamma-1} dt` in `d = 1`.
pub fn mixing_jump(lambda0: f64, lambda1: f64, beta: f64, gamma: f64, alpha: f64) -> SdeProblem {
    let r = gamma - 1.0;
    SdeProblem::new("mixing_jump", 1)
        .with_constant_diffusion(1.0)
        .with_drift(Arc::new(move |_, x, out| {
            out[0] = -lambda0 * x[0] * x[0].abs().powf(gamma - 1.0)
        }))
        .with_jumps(
            JumpCoeff::Scalar(Arc::new(move |_, x| lambda1 * x[0].abs().powf(beta))),
            stable_levy(alpha),
        )
        .with_tags(HypothesisTags {
            ellipticity: Some(Ellipticity { c0: 1.0, beta: 1.0 }),
            jump: None,
            dissipativity: Some(Dissipativity {
                kappa1: lambda0,
                kappa2: 1.0,
                kappa3: lambda0,
                r,
            }),
        })
}

/// `dX = sigma dW - rate X dt`.
pub fn ou(rate: f64, sigma: f64) -> SdeProblem {
    SdeProblem::new("ou", 1)
        .with_constant_diffusion(sigma)
        .with_drift(Arc::new(move |_, x, out| out[0] = -rate * x[0]))
}

pub fn ou_stable() -> SdeProblem {
    SdeProblem::new("ou_stable", 1)
        .with_constant_diffusion(1.0)
        .with_drift(Arc::new(|_, x, out| out[0] = -x[0]))
        .with_jumps(JumpCoeff::Scalar(Arc::new(|_, _| 1.0)), stable_levy(1.5))
        .with_tags(HypothesisTags {
            ellipticity: Some(Ellipticity { c0: 1.0, beta: 1.0 }),
            jump: Some(JumpRegularity { c1: 1.0, beta: 1.0 }),
            dissipativity: Some(Dissipativity {
                kappa1: 1.0,
                kappa2: 1.0,
                kappa3: 1.0,
                r: 0.0,
            }),
        })
}

/// `dX = sigma dW - X|X| dt`, the `r = 1` dissipative case.
pub fn cubic_ou(sigma: f64) -> SdeProblem {
    SdeProblem::new("cubic_ou", 1)
        .with_constant_diffusion(sigma)
        .with_drift(Arc::new(|_, x, out| out[0] = -x[0] * x[0].abs()))
        .with_tags(HypothesisTags {
            ellipticity: Some(Ellipticity {
                c0: (sigma * sigma).max(1.0 / (sigma * sigma)),
                beta: 1.0,
            }),
            jump: None,
            dissipativity: Some(Dissipativity {
                kappa1: 2.0,
                kappa2: sigma * sigma,
                kappa3: 1.0,
                r: 1.0,
            }),
        })
}

pub fn brownian(sigma: f64) -> SdeProblem {
    SdeProblem::new("brownian", 1).with_constant_diffusion(sigma)
}

pub fn pure_stable(alpha: f64) -> SdeProblem {
    SdeProblem::new("pure_stable", 1)
        .with_jumps(JumpCoeff::Scalar(Arc::new(|_, _| 1.0)), stable_levy(alpha))
        .with_tags(HypothesisTags {
            jump: Some(JumpRegularity { c1: 1.0, beta: 1.0 }),
            ..Default::default()
        })
}

pub fn multiplicative_stable() -> SdeProblem {
    SdeProblem::new("multiplicative_stable", 1)
        .with_jumps(
            JumpCoeff::Scalar(Arc::new(|_, x| (2.0 + x[0].sin()) / 3.0)),
            stable_levy(1.5),
        )
        .with_tags(HypothesisTags {
            jump: Some(JumpRegularity { c1: 3.0, beta: 1.0 }),
            ..Default::default()
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{audit_dissipativity, audit_ellipticity, audit_jump_coeff, AuditGrid};

    #[test]
    fn every_preset_builds_and_validates() {
        for (name, _) in PRESETS {
            let p = by_name(name).unwrap();
            p.validate().unwrap();
            assert_eq!(&p.name, name);
        }
        assert!(matches!(by_name("nope"), Err(Error::Domain(m)) if m.contains("ou_singular")));
    }

    #[test]
    fn declared_tags_pass_their_audits() {
        let radial: Vec<f64> = (0..=400).map(|i| i as f64 * 0.125).collect();
        let grid = AuditGrid::default_box(1, -10.0, 10.0);
        let pairs = vec![
            (vec![0.5], vec![-0.25]),
            (vec![2.0], vec![1.0]),
            (vec![-3.0], vec![0.1]),
        ];
        for (name, _) in PRESETS {
            let p = by_name(name).unwrap();
            if p.tags.ellipticity.is_some() {
                assert!(
                    audit_ellipticity(&p, &grid, &[vec![1.0]]).unwrap().pass,
                    "{name}"
                );
            }
            if p.tags.jump.is_some() {
                assert!(audit_jump_coeff(&p, &grid, &pairs).unwrap().pass, "{name}");
            }
            if p.tags.dissipativity.is_some() {
                let r = audit_dissipativity(&p, &radial).unwrap();
                assert!(r.pass, "{name}: {r:?}");
            }
        }
    }

    #[test]
    fn singular_drift_values() {
        assert_eq!(singular_drift_1d(0.25), 2.0);
        assert_eq!(singular_drift_1d(-0.25), -2.0);
        assert_eq!(singular_drift_1d(1.5), 0.0);
        // finite near the origin, and no preferred side exactly at it
        let b = ou_singular().drift(0.0, &[1e-14]);
        assert!(b[0].is_finite() && b[0] > 0.0);
        assert_eq!(ou_singular().drift(0.0, &[0.0]), vec![0.0]);
    }
}
