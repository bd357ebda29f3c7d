//! Deterministic quadrature: adaptive Gauss–Kronrod on finite intervals and a
//! log-panel scheme for radial integrals against power-law weights.

use crate::error::{Error, Result};
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }
    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-14, 1e-10)
    }
}

/// One 15-point Kronrod panel with its embedded 7-point Gauss error estimate.
pub fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss–Kronrod integration on `[a, b]`.
///
/// Returns the estimate and its error bound. Non-finite integrand values
/// produce an evaluation error.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let (v, e) = gauss_kronrod(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment {
        a,
        b,
        value: v,
        err: e,
    });
    let mut total = v;
    let mut total_err = e;
    let mut splits = 0;
    while total_err > tol.target(total) && splits < 2000 {
        let seg = heap.pop().expect("non-empty");
        let m = 0.5 * (seg.a + seg.b);
        if m <= seg.a || m >= seg.b {
            heap.push(seg);
            break;
        }
        let (v1, e1) = gauss_kronrod(&f, seg.a, m);
        let (v2, e2) = gauss_kronrod(&f, m, seg.b);
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.err;
        heap.push(Segment {
            a: seg.a,
            b: m,
            value: v1,
            err: e1,
        });
        heap.push(Segment {
            a: m,
            b: seg.b,
            value: v2,
            err: e2,
        });
        splits += 1;
    }
    // resum to shed accumulated cancellation in the running totals
    let (mut value, mut err) = (0.0, 0.0);
    for s in heap.iter() {
        value += s.value;
        err += s.err;
    }
    if !value.is_finite() {
        return Err(Error::Evaluation {
            what: "integrand".into(),
            location: format!("[{a}, {b}]"),
        });
    }
    Ok((value, err))
}

/// Integral of `f` over `[r1, r2)` with `0 <= r1 < r2 <= inf`, designed for
/// integrands with power-law behaviour at `0` and `inf`.
///
/// Works in the variable `s = ln r` on unit panels. Panels extending toward
/// `0` or `inf` are added until their contributions decay geometrically; the
/// remainder is closed with a geometric-series extrapolation. A panel
/// sequence that fails to decay is reported as divergent at that endpoint.
pub fn radial<F: Fn(f64) -> f64>(f: F, r1: f64, r2: f64, rel: f64) -> Result<f64> {
    if !(r1 >= 0.0 && r2 > r1) {
        if r1 == r2 {
            return Ok(0.0);
        }
        return Err(Error::Domain(format!(
            "radial integral needs 0 <= r1 < r2, got [{r1}, {r2})"
        )));
    }
    let g = |s: f64| {
        let r = s.exp();
        f(r) * r
    };
    let panel_tol = Tolerance::new(1e-300, rel * 1e-2);
    let lo_open = r1 == 0.0;
    let hi_open = r2.is_infinite();
    let s_lo = if lo_open { None } else { Some(r1.ln()) };
    let s_hi = if hi_open { None } else { Some(r2.ln()) };
    // finite core
    let (core_a, core_b) = match (s_lo, s_hi) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, a + 1.0),
        (None, Some(b)) => (b - 1.0, b),
        (None, None) => (-0.5, 0.5),
    };
    let n_core = ((core_b - core_a).ceil() as usize).max(1);
    let w = (core_b - core_a) / n_core as f64;
    let mut total = 0.0;
    for k in 0..n_core {
        let a = core_a + k as f64 * w;
        total += adaptive(&g, a, a + w, panel_tol)?.0;
    }
    if lo_open {
        total += tail_panels(&g, core_a, -1.0, rel, total, "r1 = 0")?;
    }
    if hi_open {
        total += tail_panels(&g, core_b, 1.0, rel, total, "r2 = inf")?;
    }
    Ok(total)
}

fn tail_panels<F: Fn(f64) -> f64>(
    g: &F,
    start: f64,
    dir: f64,
    rel: f64,
    core: f64,
    name: &str,
) -> Result<f64> {
    let tol = Tolerance::new(1e-300, rel * 1e-2);
    let mut sum = 0.0;
    let mut prev = f64::NAN;
    let mut decaying = 0;
    let mut growing = 0;
    let mut s = start;
    for _ in 0..800 {
        let (a, b) = if dir < 0.0 {
            (s - 1.0, s)
        } else {
            (s, s + 1.0)
        };
        let v = adaptive(g, a, b, tol)?.0;
        sum += v;
        s += dir;
        let scale = (core + sum).abs().max(1e-300);
        if v.abs() <= 1e-300 {
            return Ok(sum);
        }
        let ratio = (v / prev).abs();
        if ratio.is_finite() && ratio < 0.98 {
            decaying += 1;
        } else {
            decaying = 0;
        }
        if ratio.is_finite() && ratio >= 1.0 {
            growing += 1;
            if growing >= 30 {
                break;
            }
        } else {
            growing = 0;
        }
        if decaying >= 3 {
            let q = ratio;
            let remainder = v * q / (1.0 - q);
            if remainder.abs() <= rel * scale * 1e-1 {
                return Ok(sum + remainder);
            }
        }
        prev = v;
    }
    Err(Error::Divergent {
        endpoint: name.to_string(),
        detail: "panel contributions do not decay geometrically".into(),
    })
}

/// Composite trapezoid rule on a uniformly spaced sample.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Composite trapezoid rule on an arbitrary increasing grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
