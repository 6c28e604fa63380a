//! The forward-Euler engine for `F(ρ) = KL(ρ | e^{-U})`.
//!
//! One step pushes the current density through `T(x) = x - h(U' - V')(x)`
//! where `ρ = e^{-V}`. Steps are refused once the density has left the
//! slope domain (a jump or blow-up was detected) unless forced; forced
//! steps mark the trajectory non-conforming.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::diagnostics::{self, Classification};
use crate::error::{Error, Result};
use crate::potentials::{PiecewisePotential, PotentialPiece, Side, Smoothness};
use crate::pushforward::{
    injectivity_condition, InjectivityReport, PiecewiseMap, PiecewiseVelocity, ScoreVelocity, VelocityField,
};
use crate::quadrature::QuadratureConfig;
use crate::roots;
use crate::Poly;

#[derive(Clone, Debug)]
pub struct KLEnergy {
    target: PiecewisePotential,
    density: Density,
}

impl KLEnergy {
    /// `target` must be normalized to within `1e-8`.
    pub fn new(target: PiecewisePotential) -> Result<Self> {
        let density = Density::closed_form(target.clone());
        let mass = density.integrate(|_| 1.0, &QuadratureConfig::default())?.value;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("target is not normalized: mass {mass}")));
        }
        Ok(Self { target, density })
    }

    pub fn target(&self) -> &PiecewisePotential {
        &self.target
    }

    pub fn target_density(&self) -> &Density {
        &self.density
    }

    pub fn value(&self, rho: &Density, cfg: &QuadratureConfig) -> Result<f64> {
        diagnostics::kl_divergence(rho, &self.density, cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VelocityMode {
    /// Refuse potentials with value jumps.
    Strict,
    /// Use one-sided derivatives on each piece (forced continuation).
    OneSided,
}

/// `w = U' - V'` as a piecewise polynomial on the union of breakpoints.
///
/// Pieces where `V` is vacuum carry no mass; there `w` interpolates
/// linearly between the neighbouring values so that `T` stays monotone
/// and maps the gap onto the gap between the neighbouring images.
pub fn kl_velocity(energy: &KLEnergy, v: &PiecewisePotential, mode: VelocityMode) -> Result<PiecewiseVelocity> {
    let u = energy.target();
    if mode == VelocityMode::Strict {
        if let Some(j) = v.junction_smoothness().iter().position(|s| *s == Smoothness::Finite(-1)) {
            return Err(Error::NonDifferentiable { x: v.breakpoints()[j] });
        }
    }
    let mut breaks: Vec<f64> = u.breakpoints().iter().chain(v.breakpoints()).copied().collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let sample_point = |lo: f64, hi: f64| match (lo.is_finite(), hi.is_finite()) {
        (true, _) => lo,
        (false, true) => roots::step_beyond(hi, -1.0),
        (false, false) => 0.0,
    };
    // w on non-vacuum intervals, `None` where V is vacuum
    let mut pieces: Vec<Option<(f64, Poly)>> = Vec::with_capacity(breaks.len() + 1);
    for i in 0..=breaks.len() {
        let lo = if i == 0 { f64::NEG_INFINITY } else { breaks[i - 1] };
        let hi = breaks.get(i).copied().unwrap_or(f64::INFINITY);
        let x = sample_point(lo, hi);
        let vi = v.piece_index(x);
        let Some((ov, qv)) = v.local(vi) else {
            pieces.push(None);
            continue;
        };
        let (ou, qu) = u
            .local(u.piece_index(x))
            .ok_or_else(|| Error::InvalidArgument("target potential has a vacuum piece".into()))?;
        // re-anchor at the interval's finite end so huge coordinates stay exact
        let anchor = if lo.is_finite() && lo != *ov && (lo - ov).abs() <= 1e6 { lo } else { *ov };
        let du = qu.derivative().compose_affine(1.0, anchor - ou);
        let dv = qv.derivative().compose_affine(1.0, anchor - ov);
        pieces.push(Some((anchor, du.sub(&dv))));
    }

    let value_at = |p: &Option<(f64, Poly)>, x: f64| p.as_ref().map(|(o, q)| q.eval(x - o));
    let mut resolved = Vec::with_capacity(pieces.len());
    for i in 0..pieces.len() {
        if let Some(p) = &pieces[i] {
            resolved.push(p.clone());
            continue;
        }
        // extent of the vacuum run containing interval i
        let mut a = i;
        while a > 0 && pieces[a - 1].is_none() {
            a -= 1;
        }
        let mut b = i;
        while b + 1 < pieces.len() && pieces[b + 1].is_none() {
            b += 1;
        }
        let lo = if a == 0 { f64::NEG_INFINITY } else { breaks[a - 1] };
        let hi = breaks.get(b).copied().unwrap_or(f64::INFINITY);
        let wl = if a > 0 { value_at(&pieces[a - 1], lo) } else { None };
        let wr = if b + 1 < pieces.len() { value_at(&pieces[b + 1], hi) } else { None };
        let bridge = match (wl, wr) {
            (Some(l), Some(r)) => (lo, Poly::linear(l, (r - l) / (hi - lo))),
            (Some(l), None) => (0.0, Poly::constant(l)),
            (None, Some(r)) => (0.0, Poly::constant(r)),
            (None, None) => (0.0, Poly::zero()),
        };
        resolved.push(bridge);
    }
    PiecewiseVelocity::new(breaks, resolved)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Regularity {
    InDomain,
    OutOfDomain { reason: String, location: f64 },
}

impl Regularity {
    pub fn is_in_domain(&self) -> bool {
        matches!(self, Regularity::InDomain)
    }
}

/// Scans the density's breakpoints and singular points for jumps and
/// blow-ups. A jump means the density is not `W^{1,1}_loc`, so the state
/// has left the domain of the metric slope.
pub fn regularity_gate(d: &Density) -> (Regularity, Vec<f64>) {
    let mut candidates = d.breakpoints();
    candidates.extend(d.singular_points());
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let reports = diagnostics::scan_jumps(d, &candidates);
    let flagged: Vec<_> = reports
        .iter()
        .filter(|r| r.classification != Classification::Smooth)
        .collect();
    let locations = flagged.iter().map(|r| r.location).collect();
    let verdict = match flagged.first() {
        None => Regularity::InDomain,
        Some(r) => {
            let reason = match r.classification {
                Classification::Jump => "jump discontinuity".to_string(),
                _ => match r.exponent_estimate {
                    Some(a) if a >= 1.0 => "non-integrable blow-up".to_string(),
                    _ => "jump discontinuity with integrable blow-up".to_string(),
                },
            };
            Regularity::OutOfDomain {
                reason,
                location: r.location,
            }
        }
    };
    (verdict, locations)
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub k: usize,
    pub current: Density,
    /// `V_k` when the density is known in closed form.
    pub potential_form: Option<PiecewisePotential>,
    pub step_history: Vec<f64>,
    pub regularity: Regularity,
    pub jump_locations: Vec<f64>,
    /// False once a step has been forced past a regularity halt.
    pub conforming: bool,
}

impl FlowState {
    pub fn new(initial: PiecewisePotential) -> Self {
        let current = Density::closed_form(initial.clone());
        let (regularity, jump_locations) = regularity_gate(&current);
        Self {
            k: 0,
            current,
            potential_form: Some(initial),
            step_history: Vec::new(),
            regularity,
            jump_locations,
            conforming: true,
        }
    }

    /// Transport map the next step would apply.
    pub fn velocity(&self, energy: &KLEnergy, force: bool) -> Result<VelocityField> {
        match &self.potential_form {
            Some(v) => {
                let mode = if force { VelocityMode::OneSided } else { VelocityMode::Strict };
                Ok(VelocityField::Piecewise(kl_velocity(energy, v, mode)?))
            }
            None => {
                let mut jumps = self.current.breakpoints();
                jumps.extend(self.current.singular_points());
                jumps.extend(self.jump_locations.iter().copied());
                Ok(VelocityField::Score(ScoreVelocity::new(
                    energy.target().clone(),
                    self.current.clone(),
                    jumps,
                )))
            }
        }
    }
}

/// `ρ_{k+1} = (Id - h(U' - V_k'))_♯ ρ_k`.
pub fn fe_step(state: &FlowState, energy: &KLEnergy, h: f64, force: bool) -> Result<FlowState> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidArgument(format!("step size must lie in (0, 1), got {h}")));
    }
    if let Regularity::OutOfDomain { reason, location } = &state.regularity {
        if !force {
            return Err(Error::RegularityHalt {
                reason: reason.clone(),
                location: *location,
            });
        }
    }
    let velocity = state.velocity(energy, force)?;
    let map = PiecewiseMap::new(velocity, h)?;
    let branches = Arc::new(map.decompose()?);
    let mut current = Density::pushforward(state.current.clone(), branches.clone());
    let mut potential_form = None;
    if let (Some(v), Some(w)) = (&state.potential_form, map.velocity().as_piecewise()) {
        if w.is_piecewise_affine() && branches.is_injective() {
            let next = propagate_affine(v, &map)?;
            current = current.with_closed_form(next.clone());
            potential_form = Some(next);
        }
    }
    let (regularity, jump_locations) = regularity_gate(&current);
    let mut step_history = state.step_history.clone();
    step_history.push(h);
    Ok(FlowState {
        k: state.k + 1,
        current,
        potential_form,
        step_history,
        regularity,
        jump_locations,
        conforming: state.conforming && state.regularity.is_in_domain(),
    })
}

/// `V_{k+1}(T(x)) = V_k(x) + ln T'(x)` for an increasing map that is affine
/// on every velocity piece. Gaps in the image become vacuum.
pub fn propagate_affine(v: &PiecewisePotential, map: &PiecewiseMap) -> Result<PiecewisePotential> {
    let w = map
        .velocity()
        .as_piecewise()
        .ok_or_else(|| Error::InvalidArgument("closed-form propagation needs a piecewise velocity".into()))?;
    let h = map.h();
    let mut out: Vec<PotentialPiece> = Vec::new();
    let push = |mut piece: PotentialPiece, out: &mut Vec<PotentialPiece>| {
        if let Some(last) = out.last_mut() {
            // images of a shared endpoint agree up to rounding; vacuum yields
            let scale = [last.lo, last.hi, piece.hi]
                .iter()
                .filter(|v| v.is_finite())
                .fold(1.0f64, |m, v| m.max(v.abs()));
            if (piece.lo - last.hi).abs() <= 1e-12 * scale {
                if last.is_vacuum() {
                    last.hi = piece.lo;
                } else {
                    piece.lo = last.hi;
                }
            }
        }
        if out.last().is_some_and(|l| !(l.lo < l.hi)) {
            out.pop();
        }
        if !(piece.lo < piece.hi) {
            return;
        }
        if let Some(last) = out.last_mut() {
            if last.hi < piece.lo {
                let gap = PotentialPiece::vacuum(last.hi, piece.lo);
                if last.is_vacuum() {
                    last.hi = piece.lo;
                } else {
                    out.push(gap);
                }
            }
        }
        match out.last_mut() {
            Some(last) if last.is_vacuum() && piece.is_vacuum() => last.hi = piece.hi,
            _ => out.push(piece),
        }
    };
    for (idx, (wo, wq)) in w.pieces().iter().enumerate() {
        let lo = if idx == 0 { f64::NEG_INFINITY } else { w.breaks()[idx - 1] };
        let hi = w.breaks().get(idx).copied().unwrap_or(f64::INFINITY);
        // T on this piece: T(wo + s) = t0 + slope·s
        let t0 = wo + (0.0 - h * wq.coeff(0));
        let slope = 1.0 - h * wq.coeff(1);
        if !(slope > 0.0) {
            return Err(Error::InvalidArgument("closed-form propagation needs an increasing map".into()));
        }
        let image = |x: f64| {
            if x.is_finite() {
                wo + ((x - wo) - h * wq.eval(x - wo))
            } else {
                x
            }
        };
        let (ilo, ihi) = (image(lo), image(hi));
        let probe = if lo.is_finite() { lo } else if hi.is_finite() { roots::step_beyond(hi, -1.0) } else { 0.0 };
        let vi = v.piece_index(probe);
        let piece = match v.local(vi) {
            None => PotentialPiece::vacuum(ilo, ihi),
            Some((vo, vq)) => {
                // anchor the new piece at its finite left end when possible
                let (anchor_x, anchor_y) = if lo.is_finite() {
                    (lo, ilo)
                } else if hi.is_finite() {
                    (hi, ihi)
                } else {
                    (*wo, t0)
                };
                // V_k(anchor_x + s) as a polynomial in s
                let base = if anchor_x == *vo {
                    vq.clone()
                } else {
                    vq.compose_affine(1.0, anchor_x - vo)
                };
                // y - anchor_y = slope·s
                let mut q = base.compose_affine(1.0 / slope, 0.0);
                let c0 = q.coeff(0) + slope.ln();
                let mut coeffs = q.coeffs().to_vec();
                if coeffs.is_empty() {
                    coeffs.push(0.0);
                }
                coeffs[0] = c0;
                q = Poly::new(coeffs);
                PotentialPiece::shifted(ilo, ihi, anchor_y, q.coeffs().to_vec())
            }
        };
        push(piece, &mut out);
    }
    Ok(PiecewisePotential::new(out)?.with_log_normalizer(v.log_normalizer()))
}

/// Coefficients of the closed-form Example 2 iterates. `beta = b - a·c` is
/// the log-density at the inner edge of the outer piece, tracked separately
/// because `b` loses all precision once `a` is large.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ex2Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub beta: f64,
}

/// Iterates `a' = a/(1-h)`, `c' = (1-h)c + a·h`,
/// `b' = b + a²h/(1-h) - ln(1-h)` from `(1, 1/2 - ln D0, 1)`.
pub fn ex2_recurrence(schedule: &[f64]) -> Result<Vec<Ex2Coefficients>> {
    let ln_d0 = crate::scenarios::example2_d0().ln();
    let b0 = 0.5 - ln_d0;
    let mut out = vec![Ex2Coefficients {
        a: 1.0,
        b: b0,
        c: 1.0,
        beta: b0 - 1.0,
    }];
    for &h in schedule {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::InvalidArgument(format!("step size must lie in (0, 1), got {h}")));
        }
        let k = *out.last().unwrap();
        let l = (1.0 - h).ln();
        out.push(Ex2Coefficients {
            a: k.a / (1.0 - h),
            b: k.b + k.a * k.a * h / (1.0 - h) - l,
            c: (1.0 - h) * k.c + k.a * h,
            beta: k.beta - l,
        });
    }
    Ok(out)
}

/// `p_k(x)`: Gaussian core on `(-1, 1)`, vacuum up to `c_k`, exponential
/// tail beyond; even in `x`.
pub fn ex2_density(k: &Ex2Coefficients, x: f64) -> f64 {
    let ax = x.abs();
    if ax < 1.0 {
        (-0.5 * x * x).exp() / crate::scenarios::example2_d0()
    } else if ax < k.c {
        0.0
    } else {
        (k.beta - k.a * (ax - k.c)).exp()
    }
}

/// Closed-form Example 2 potential `V_k = -ln p_k` (half-open convention).
pub fn ex2_potential(k: &Ex2Coefficients) -> Result<PiecewisePotential> {
    let inf = f64::INFINITY;
    let ln_d0 = crate::scenarios::example2_d0().ln();
    let mut pieces = vec![PotentialPiece::shifted(-inf, -k.c, -k.c, vec![-k.beta, -k.a])];
    if k.c > 1.0 {
        pieces.push(PotentialPiece::vacuum(-k.c, -1.0));
    }
    pieces.push(PotentialPiece::polynomial(-1.0, 1.0, vec![ln_d0, 0.0, 0.5]));
    if k.c > 1.0 {
        pieces.push(PotentialPiece::vacuum(1.0, k.c));
    }
    pieces.push(PotentialPiece::shifted(k.c, inf, k.c, vec![-k.beta, k.a]));
    PiecewisePotential::new(pieces)
}

/// Bookkeeping of the `C^m` class of `V_k`: each certified step costs two
/// derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessLedger {
    pub class: Smoothness,
    pub history: Vec<(usize, Smoothness)>,
    /// Set once the class drops below `C^1`: `V'` is no longer classical.
    pub halted: bool,
}

impl SmoothnessLedger {
    pub fn new(class: Smoothness) -> Self {
        Self {
            class,
            history: vec![(0, class)],
            halted: matches!(class, Smoothness::Finite(m) if m < 1),
        }
    }

    /// Records one step certified by `report`.
    pub fn step(&self, h: f64, report: &InjectivityReport) -> Result<Self> {
        if !report.holds {
            return Err(Error::InvalidStep {
                h,
                bound: report.bound,
                witness: report.witness,
            });
        }
        if self.halted {
            return Err(Error::RegularityHalt {
                reason: format!("potential is only {}", self.class),
                location: f64::NAN,
            });
        }
        let class = match self.class {
            Smoothness::Infinite => Smoothness::Infinite,
            Smoothness::Finite(m) => Smoothness::Finite(m - 2),
        };
        let mut history = self.history.clone();
        history.push((history.len(), class));
        Ok(Self {
            class,
            history,
            halted: matches!(class, Smoothness::Finite(m) if m < 1),
        })
    }

    /// Steps from `C^start` until the class drops below `C^1`.
    pub fn steps_until_halt(start: i32) -> usize {
        if start < 1 {
            0
        } else {
            ((start + 1) / 2) as usize
        }
    }
}

/// Certifies one ledger step: `M = sup U''`, `M0 = max(0, -inf V'')`.
pub fn certify_step(velocity: &VelocityField, h: f64, target: &PiecewisePotential, hess_inf_v: f64) -> InjectivityReport {
    let (_, m) = target.hessian_bounds();
    injectivity_condition(velocity, h, m, (-hess_inf_v).max(0.0))
}

/// Lower bound of `V''` for `V = -ln p`, from exact jets on a grid over the
/// support (away from breakpoints and singular points).
pub fn hessian_lower_bound(d: &Density) -> f64 {
    if let Some(v) = d.potential() {
        return v.hessian_bounds().0;
    }
    let (lo, hi) = d.support();
    let skip = {
        let mut s = d.breakpoints();
        s.extend(d.singular_points());
        s
    };
    let n = 2000;
    let mut m = f64::INFINITY;
    for i in 1..n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        if skip.iter().any(|s| (s - x).abs() <= 2e-3 * x.abs().max(1.0)) {
            continue;
        }
        if let Some(j) = d.log_jet(x, 2, Side::Right) {
            let d2 = -2.0 * j[2];
            if d2.is_finite() {
                m = m.min(d2);
            }
        }
    }
    m
}

/// One JSON-lines record of a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub h: Option<f64>,
    pub regularity: Regularity,
    pub jump_locations: Vec<f64>,
    pub coefficients: Option<Ex2Coefficients>,
    pub kl_value: Option<f64>,
    pub conforming: bool,
}

impl TrajectoryRecord {
    pub fn from_state(state: &FlowState, coefficients: Option<Ex2Coefficients>, kl_value: Option<f64>) -> Self {
        Self {
            k: state.k,
            h: state.step_history.last().copied(),
            regularity: state.regularity.clone(),
            jump_locations: state.jump_locations.clone(),
            coefficients,
            kl_value,
            conforming: state.conforming,
        }
    }
}

/// Left and right one-sided values of the density at `x`.
pub fn density_limits(d: &Density, x: f64) -> (f64, f64) {
    (
        diagnostics::one_sided_limit(d, x, Side::Left),
        diagnostics::one_sided_limit(d, x, Side::Right),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    fn ex2_energy() -> KLEnergy {
        KLEnergy::new(scenarios::example2_target()).unwrap()
    }

    #[test]
    fn example1_velocity_is_cubic() {
        let e = KLEnergy::new(scenarios::example1_target()).unwrap();
        let w = kl_velocity(&e, &scenarios::example1_initial(), VelocityMode::Strict).unwrap();
        for x in [-2.0, 0.3, 1.7] {
            assert!((w.eval(x) - x * x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn example2_first_velocity() {
        let w = kl_velocity(&ex2_energy(), &scenarios::example2_initial(), VelocityMode::Strict).unwrap();
        assert!(w.eval(0.4).abs() < 1e-15);
        assert!((w.eval(3.0) - 2.0).abs() < 1e-15);
        assert!((w.eval(-3.0) + 2.0).abs() < 1e-15);
        assert!(w.eval(1.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_start_stays_put() {
        let e = ex2_energy();
        let s0 = FlowState::new(scenarios::example2_target());
        let s1 = fe_step(&s0, &e, 0.3, false).unwrap();
        assert!(s1.regularity.is_in_domain());
        for i in 0..1000 {
            let x = -10.0 + 20.0 * i as f64 / 999.0;
            assert!((s1.current.eval_branch_sum(x) - s0.current.eval(x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn example2_step_jump_ratio() {
        let e = ex2_energy();
        let h = 0.5;
        let s1 = fe_step(&FlowState::new(scenarios::example2_initial()), &e, h, false).unwrap();
        let (l, r) = density_limits(&s1.current, 1.0);
        assert!((r / l - 1.0 / (1.0 - h)).abs() < 1e-12);
        match &s1.regularity {
            Regularity::OutOfDomain { location, .. } => assert_eq!(location.abs(), 1.0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(fe_step(&s1, &e, h, false), Err(Error::RegularityHalt { .. })));
        let s2 = fe_step(&s1, &e, h, true).unwrap();
        assert!(!s2.conforming);
    }

    #[test]
    fn recurrence_hand_values() {
        let c = ex2_recurrence(&[0.5, 0.5]).unwrap();
        assert_eq!((c[1].a, c[1].c), (2.0, 1.0));
        assert_eq!((c[2].a, c[2].c), (4.0, 1.5));
        let ln_d0 = scenarios::example2_d0().ln();
        assert_eq!(c[0].b, 0.5 - ln_d0);
        assert!((ex2_density(&c[0], 0.0) - 1.0 / scenarios::example2_d0()).abs() < 1e-16);
        assert_eq!(ex2_density(&c[2], 1.2), 0.0);
    }

    #[test]
    fn ledger_arithmetic() {
        let ok = InjectivityReport {
            holds: true,
            bound: 1.0,
            witness: None,
        };
        let l = SmoothnessLedger::new(Smoothness::Finite(4));
        let l1 = l.step(0.5, &ok).unwrap();
        assert_eq!(l1.class, Smoothness::Finite(2));
        let l2 = l1.step(0.5, &ok).unwrap();
        assert_eq!(l2.class, Smoothness::Finite(0));
        assert!(l2.halted);
        let inf = SmoothnessLedger::new(Smoothness::Infinite).step(0.5, &ok).unwrap();
        assert_eq!(inf.class, Smoothness::Infinite);
        let bad = InjectivityReport {
            holds: false,
            bound: 0.1,
            witness: Some(4.0),
        };
        assert!(matches!(l.step(0.5, &bad), Err(Error::InvalidStep { .. })));
        assert_eq!(SmoothnessLedger::steps_until_halt(4), 2);
        assert_eq!(SmoothnessLedger::steps_until_halt(5), 3);
    }
}
