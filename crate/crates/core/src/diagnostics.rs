//! Quantitative instruments: KL divergence, total variation and the
//! Pinsker certificate, one-sided limits and jump classification,
//! singularity exponents, and junction-order probes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::potentials::Side;
use crate::pushforward::CriticalKind;
use crate::quadrature::QuadratureConfig;

/// Relative gap between one-sided limits that counts as a jump.
pub const JUMP_THRESHOLD: f64 = 1e-6;

/// Offsets (relative to `max(1, |y|)`) used to estimate one-sided limits.
const LIMIT_OFFSETS: [f64; 3] = [1e-4, 1e-5, 1e-6];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Jump,
    BlowUp,
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpReport {
    pub location: f64,
    /// `+∞` for a blow-up (serialized as `null`).
    pub left_limit: f64,
    pub right_limit: f64,
    pub classification: Classification,
    pub exponent_estimate: Option<f64>,
}

/// `lim p(y ± ε)` as `ε → 0`.
///
/// Closed forms are evaluated on the exact one-sided piece. Otherwise the
/// limit is extrapolated linearly from three offsets; a value that keeps
/// growing as the offset shrinks is reported as `+∞`, as is the folded side
/// of the image of a stationary point.
pub fn one_sided_limit(d: &Density, y: f64, side: Side) -> f64 {
    if let Some(v) = d.potential() {
        return v.derivative(y, 0, side).map_or(0.0, |v| (-v).exp());
    }
    if folds_onto(d, y, side) {
        return f64::INFINITY;
    }
    let scale = y.abs().max(1.0);
    let sign = if side == Side::Left { -1.0 } else { 1.0 };
    let vals: Vec<f64> = LIMIT_OFFSETS.iter().map(|e| d.eval(y + sign * e * scale)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let (v1, v2, v3) = (vals[0], vals[1], vals[2]);
    if v1 > 0.0 && v3 / v1 > 1.5 && v3 / v2 > 1.1 && v2 > v1 {
        return f64::INFINITY;
    }
    // linear Richardson on offsets 1e-5 and 1e-6
    let r = LIMIT_OFFSETS[2] / (LIMIT_OFFSETS[1] - LIMIT_OFFSETS[2]);
    (v3 + (v3 - v2) * r).max(0.0)
}

/// True when `y` is the image of a stationary point of the map, approached
/// from `side` by the folded branches, and the base density is positive
/// there: `p` then grows like `|y - y*|^(-1/2)` or faster.
fn folds_onto(d: &Density, y: f64, side: Side) -> bool {
    let (Some(branches), Some(base)) = (d.branches(), d.base()) else {
        return false;
    };
    let map = branches.map();
    branches
        .critical()
        .iter()
        .filter(|c| c.kind == CriticalKind::Stationary && c.value == y && base.eval(c.x) > 0.0)
        .any(|c| {
            let e = 1e-6 * c.x.abs().max(1.0);
            let (l, r) = (map.derivative_side(c.x - e, Side::Left), map.derivative_side(c.x + e, Side::Right));
            match side {
                // local maximum: both branches arrive from below
                Side::Left => !(l < 0.0 && r > 0.0),
                Side::Right => !(l > 0.0 && r < 0.0),
            }
        })
}

pub fn classify(left: f64, right: f64) -> Classification {
    if left.is_infinite() || right.is_infinite() {
        Classification::BlowUp
    } else if (left - right).abs() > JUMP_THRESHOLD * left.abs().max(right.abs()) {
        Classification::Jump
    } else {
        Classification::Smooth
    }
}

/// Limits and classification at each candidate location.
pub fn scan_jumps(d: &Density, candidates: &[f64]) -> Vec<JumpReport> {
    candidates
        .iter()
        .map(|&y| {
            let left = one_sided_limit(d, y, Side::Left);
            let right = one_sided_limit(d, y, Side::Right);
            let classification = classify(left, right);
            let exponent_estimate = if classification == Classification::BlowUp {
                let side = if left.is_infinite() { Side::Left } else { Side::Right };
                measure_singularity_exponent(|t| d.eval(t), y, side).ok().map(|f| f.alpha)
            } else {
                None
            };
            JumpReport {
                location: y,
                left_limit: left,
                right_limit: right,
                classification,
                exponent_estimate,
            }
        })
        .collect()
}

/// `KL(p | q) = ∫ p ln(p/q)`; `+∞` when `q` vanishes where `p` has mass.
pub fn kl_divergence(p: &Density, q: &Density, cfg: &QuadratureConfig) -> Result<f64> {
    if !support_covered(p, q) {
        return Ok(f64::INFINITY);
    }
    let floor = 1e-300f64.ln();
    let est = p.integrate_log(
        |y, lp| {
            let lq = q.log_eval(y);
            lp.max(floor) - lq
        },
        None,
        cfg,
    );
    match est {
        Ok(e) => Ok(e.value),
        Err(Error::QuadratureFailure { reason, .. }) if reason.contains("non-finite") => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn support_covered(p: &Density, q: &Density) -> bool {
    if let (Some(vp), Some(vq)) = (p.potential(), q.potential()) {
        // symbolic: a live piece of p must not overlap a vacuum piece of q
        for (i, piece) in vp.pieces().iter().enumerate() {
            if piece.is_vacuum() || vp.local_range(i).is_none_or(|(_, a, b)| a >= b) {
                continue;
            }
            for qp in vq.pieces() {
                if qp.is_vacuum() && qp.lo < piece.hi && qp.hi > piece.lo {
                    return false;
                }
            }
        }
        return true;
    }
    let (lo, hi) = p.support();
    let n = 2000;
    (0..n).all(|i| {
        let y = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
        !(p.eval(y) > 0.0 && q.log_eval(y) == f64::NEG_INFINITY)
    })
}

/// `|P(A) - Q(A)|` for `A = (lo, hi)`: a lower bound on `sup_A |P(A) - Q(A)|`.
pub fn tv_lower_bound(p: &Density, q: &Density, a: (f64, f64), cfg: &QuadratureConfig) -> Result<f64> {
    let (lo, hi) = a;
    let pa = p.integrate_over(|_| 1.0, lo, hi, cfg)?.value;
    let qa = q.integrate_over(|_| 1.0, lo, hi, cfg)?.value;
    Ok((pa - qa).abs())
}

/// `2·TV_A²`, a lower bound on `KL(p | target)` by Pinsker's inequality.
pub fn pinsker_certificate(p: &Density, target: &Density, a: (f64, f64), cfg: &QuadratureConfig) -> Result<f64> {
    let tv = tv_lower_bound(p, target, a, cfg)?;
    Ok(2.0 * tv * tv)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub alpha: f64,
    pub prefactor: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
}

/// Largest log-space residual accepted by [`measure_singularity_exponent`].
pub const EXPONENT_FIT_LIMIT: f64 = 0.05;

/// Fits `p(y) ≈ C·|y - y*|^(-α)` by least squares in log-log space over
/// 20 logarithmically spaced offsets `ε ∈ [1e-10, 1e-4]` on one side.
pub fn measure_singularity_exponent(p: impl Fn(f64) -> f64, y_star: f64, side: Side) -> Result<ExponentFit> {
    let sign = if side == Side::Left { -1.0 } else { 1.0 };
    let n = 20;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let le = (1e-10f64).ln() + ((1e-4f64).ln() - (1e-10f64).ln()) * i as f64 / (n - 1) as f64;
        let eps = le.exp();
        let v = p(y_star + sign * eps);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::FitUnstable {
                residual: f64::INFINITY,
                limit: EXPONENT_FIT_LIMIT,
            });
        }
        xs.push(le);
        ys.push(v.ln());
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - icpt - slope * x).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();
    if residual > EXPONENT_FIT_LIMIT {
        return Err(Error::FitUnstable {
            residual,
            limit: EXPONENT_FIT_LIMIT,
        });
    }
    Ok(ExponentFit {
        alpha: -slope,
        prefactor: icpt.exp(),
        residual,
    })
}

/// KL of each state's density against the target, in order.
pub fn energy_trace(states: &[crate::flow::FlowState], energy: &crate::flow::KLEnergy, cfg: &QuadratureConfig) -> Result<Vec<(usize, f64)>> {
    states.iter().map(|s| Ok((s.k, energy.value(&s.current, cfg)?))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JunctionProbe {
    pub location: f64,
    /// One-sided derivatives of orders `0..=max_order`.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    /// Orders whose one-sided derivatives disagree.
    pub discontinuous_orders: Vec<usize>,
    /// `C^m` class implied by the first disagreeing order, if any.
    pub class_estimate: Option<i32>,
}

/// One-sided derivatives at `x0` from least-squares polynomial fits on each
/// side (degree `max_order + 3`, 16 points over `[x0, x0 ± delta]`).
pub fn one_sided_derivatives(f: &impl Fn(f64) -> f64, x0: f64, side: Side, max_order: usize, delta: f64) -> Result<Vec<f64>> {
    let degree = max_order + 3;
    let n = 16;
    let sign = if side == Side::Left { -1.0 } else { 1.0 };
    let mut a = DMatrix::zeros(n, degree + 1);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let t = (i + 1) as f64 / n as f64; // scaled offset in (0, 1]
        let v = f(x0 + sign * t * delta);
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("probe value not finite at {}", x0 + sign * t * delta)));
        }
        b[i] = v;
        let mut pw = 1.0;
        for j in 0..=degree {
            a[(i, j)] = pw;
            pw *= t;
        }
    }
    let coef = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(max_order + 1);
    let mut fact = 1.0;
    for k in 0..=max_order {
        if k > 0 {
            fact *= k as f64;
        }
        // d^k/dx^k of c_k (sign·(x-x0)/delta)^k
        out.push(coef[k] * fact * (sign / delta).powi(k as i32));
    }
    Ok(out)
}

/// Compares one-sided derivatives of `f` at `x0`; order `k` counts as
/// discontinuous when the gap exceeds `rel_tol·max(1, |left|, |right|)`
/// and persists when the window shrinks from `2·delta` to `delta`. Fit
/// truncation error shrinks with the window, a genuine jump does not.
pub fn junction_probe(f: impl Fn(f64) -> f64, x0: f64, max_order: usize, delta: f64, rel_tol: f64) -> Result<JunctionProbe> {
    let gaps = |d: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            one_sided_derivatives(&f, x0, Side::Left, max_order, d)?,
            one_sided_derivatives(&f, x0, Side::Right, max_order, d)?,
        ))
    };
    let (coarse_l, coarse_r) = gaps(2.0 * delta)?;
    let (left, right) = gaps(delta)?;
    let discontinuous_orders: Vec<usize> = (0..=max_order)
        .filter(|&k| {
            let scale = 1f64.max(left[k].abs()).max(right[k].abs());
            let fine = (left[k] - right[k]).abs();
            fine > rel_tol * scale && fine >= 0.5 * (coarse_l[k] - coarse_r[k]).abs()
        })
        .collect();
    let class_estimate = discontinuous_orders.first().map(|&k| k as i32 - 1);
    Ok(JunctionProbe {
        location: x0,
        left,
        right,
        discontinuous_orders,
        class_estimate,
    })
}

/// Exact one-sided derivatives of `V = -ln p` at `x0` from the density's
/// Taylor jets, compared as in [`junction_probe`].
pub fn junction_jets(d: &Density, x0: f64, max_order: usize, rel_tol: f64) -> Result<JunctionProbe> {
    let derivatives = |side: Side| -> Result<Vec<f64>> {
        let jet = d
            .log_jet(x0, max_order, side)
            .filter(|j| j[0].is_finite())
            .ok_or_else(|| Error::InvalidArgument(format!("no finite jet of ln p at {x0}")))?;
        let mut fact = 1.0;
        Ok(jet
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                -c * fact
            })
            .collect())
    };
    let (left, right) = (derivatives(Side::Left)?, derivatives(Side::Right)?);
    let discontinuous_orders: Vec<usize> = (0..=max_order)
        .filter(|&k| (left[k] - right[k]).abs() > rel_tol * 1f64.max(left[k].abs()).max(right[k].abs()))
        .collect();
    let class_estimate = discontinuous_orders.first().map(|&k| k as i32 - 1);
    Ok(JunctionProbe {
        location: x0,
        left,
        right,
        discontinuous_orders,
        class_estimate,
    })
}

/// Machine-readable result line aggregated by the command-line tool.
/// Non-finite numbers are written as the strings `"inf"`, `"-inf"`, `"nan"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub kind: String,
    pub inputs: serde_json::Value,
    #[serde(with = "extended_float")]
    pub value: f64,
    #[serde(with = "extended_float")]
    pub tolerance: f64,
    pub pass: bool,
}

/// JSON has no infinities; this keeps them round-trippable.
mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_finite() => s.serialize_f64(v),
            v if v.is_nan() => s.serialize_str("nan"),
            v if v > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}
