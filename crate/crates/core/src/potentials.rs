//! Piecewise-smooth potentials `V` with densities `exp(-V)`.
//!
//! Each piece carries `poly(x - origin) + abs_coeff·|x|` on a half-open
//! interval `[lo, hi)` (the first piece is open at `-∞`), or is a vacuum
//! piece where `V = +∞` and the density vanishes. A piece whose `|x|` term
//! would straddle the origin is split there, so `|x|` is a signed linear
//! term on every stored piece and all forms differentiate exactly.
//!
//! The value at a breakpoint belongs to the piece on its right.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, Estimate, QuadratureConfig};
use crate::series;
use crate::Poly;

/// Piecewise pieces are truncated where `V` exceeds its minimum by this much
/// (`exp(-40) ≈ 4e-18`).
pub const TAIL_CUTOFF: f64 = 40.0;

/// Smoothness class `C^m` at a junction; `Finite(-1)` is a value jump.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Smoothness {
    Finite(i32),
    Infinite,
}

impl Smoothness {
    pub fn finite(self) -> Option<i32> {
        match self {
            Smoothness::Finite(m) => Some(m),
            Smoothness::Infinite => None,
        }
    }
}

impl std::fmt::Display for Smoothness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Smoothness::Finite(m) => write!(f, "C^{m}"),
            Smoothness::Infinite => write!(f, "C^inf"),
        }
    }
}

impl Serialize for Smoothness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Smoothness::Finite(m) => s.serialize_i32(*m),
            Smoothness::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Smoothness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(m) => Ok(Smoothness::Finite(m)),
            Raw::Str(s) if s == "inf" => Ok(Smoothness::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad smoothness {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PieceForm {
    /// `poly(x - origin) + abs_coeff·|x|`
    Smooth { poly: Poly, abs_coeff: f64, origin: f64 },
    /// `V = +∞`: no mass.
    Vacuum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialPiece {
    pub lo: f64,
    pub hi: f64,
    pub form: PieceForm,
}

impl PotentialPiece {
    pub fn polynomial(lo: f64, hi: f64, coeffs: Vec<f64>) -> Self {
        Self {
            lo,
            hi,
            form: PieceForm::Smooth {
                poly: Poly::new(coeffs),
                abs_coeff: 0.0,
                origin: 0.0,
            },
        }
    }

    pub fn with_abs(lo: f64, hi: f64, coeffs: Vec<f64>, abs_coeff: f64) -> Self {
        Self {
            lo,
            hi,
            form: PieceForm::Smooth {
                poly: Poly::new(coeffs),
                abs_coeff,
                origin: 0.0,
            },
        }
    }

    /// `poly(x - origin)`.
    pub fn shifted(lo: f64, hi: f64, origin: f64, coeffs: Vec<f64>) -> Self {
        Self {
            lo,
            hi,
            form: PieceForm::Smooth {
                poly: Poly::new(coeffs),
                abs_coeff: 0.0,
                origin,
            },
        }
    }

    pub fn vacuum(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            form: PieceForm::Vacuum,
        }
    }

    pub fn is_vacuum(&self) -> bool {
        matches!(self.form, PieceForm::Vacuum)
    }

    /// Polynomial pieces are smooth on their interior.
    pub fn max_derivative_order(&self) -> Smoothness {
        Smoothness::Infinite
    }

    /// `(origin, q)` with `V(x) = q(x - origin)` on this piece, the `|x|`
    /// term folded in with the sign it has on the piece.
    pub fn local_polynomial(&self) -> Option<(f64, Poly)> {
        match &self.form {
            PieceForm::Vacuum => None,
            PieceForm::Smooth {
                poly,
                abs_coeff,
                origin,
            } => {
                if *abs_coeff == 0.0 {
                    return Some((*origin, poly.clone()));
                }
                let sign = if self.lo >= 0.0 { 1.0 } else { -1.0 };
                let k = abs_coeff * sign;
                Some((*origin, poly.add(&Poly::linear(k * origin, k))))
            }
        }
    }

    /// The piece as a polynomial in plain `x`.
    pub fn plain_polynomial(&self) -> Option<Poly> {
        self.local_polynomial()
            .map(|(o, q)| if o == 0.0 { q } else { q.compose_affine(1.0, -o) })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePotential {
    pieces: Vec<PotentialPiece>,
    local: Vec<Option<(f64, Poly)>>,
    breakpoints: Vec<f64>,
    junction_smoothness: Vec<Smoothness>,
    log_normalizer: f64,
}

impl PiecewisePotential {
    /// Validates that `pieces` tile ℝ in order and derives breakpoints and
    /// junction smoothness.
    pub fn new(pieces: Vec<PotentialPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidArgument("potential needs at least one piece".into()));
        }
        if pieces[0].lo != f64::NEG_INFINITY || pieces[pieces.len() - 1].hi != f64::INFINITY {
            return Err(Error::InvalidArgument("pieces must cover (-inf, inf)".into()));
        }
        for (i, p) in pieces.iter().enumerate() {
            if !(p.lo < p.hi) {
                return Err(Error::InvalidArgument(format!("piece {i} is degenerate: [{}, {})", p.lo, p.hi)));
            }
            if i > 0 && pieces[i - 1].hi != p.lo {
                return Err(Error::InvalidArgument(format!(
                    "gap or overlap between pieces {} and {i}",
                    i - 1
                )));
            }
            if let PieceForm::Smooth { poly, abs_coeff, origin } = &p.form {
                if !(abs_coeff.is_finite() && origin.is_finite() && poly.coeffs().iter().all(|c| c.is_finite())) {
                    return Err(Error::InvalidArgument(format!("piece {i} has non-finite coefficients")));
                }
            }
        }
        let mut split = Vec::with_capacity(pieces.len() + 1);
        for p in pieces {
            let straddles = matches!(p.form, PieceForm::Smooth { abs_coeff, .. } if abs_coeff != 0.0)
                && p.lo < 0.0
                && p.hi > 0.0;
            if straddles {
                split.push(PotentialPiece {
                    lo: p.lo,
                    hi: 0.0,
                    form: p.form.clone(),
                });
                split.push(PotentialPiece {
                    lo: 0.0,
                    hi: p.hi,
                    form: p.form,
                });
            } else {
                split.push(p);
            }
        }
        let local: Vec<_> = split.iter().map(PotentialPiece::local_polynomial).collect();
        let breakpoints: Vec<f64> = split.iter().skip(1).map(|p| p.lo).collect();
        let mut out = Self {
            pieces: split,
            local,
            breakpoints,
            junction_smoothness: Vec::new(),
            log_normalizer: 0.0,
        };
        out.junction_smoothness = (0..out.breakpoints.len()).map(|j| out.junction_class(j)).collect();
        Ok(out)
    }

    /// Single polynomial piece on all of ℝ.
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(vec![PotentialPiece::polynomial(f64::NEG_INFINITY, f64::INFINITY, coeffs)])
    }

    pub fn with_log_normalizer(mut self, log_normalizer: f64) -> Self {
        self.log_normalizer = log_normalizer;
        self
    }

    /// Computes and stores the log-normalizer so that `∫exp(-V) = 1`.
    pub fn normalized(mut self) -> Result<Self> {
        self.log_normalizer = self.normalize()?;
        Ok(self)
    }

    pub fn pieces(&self) -> &[PotentialPiece] {
        &self.pieces
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn junction_smoothness(&self) -> &[Smoothness] {
        &self.junction_smoothness
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Lowest junction class (the global smoothness of `V`).
    pub fn smoothness(&self) -> Smoothness {
        self.junction_smoothness
            .iter()
            .copied()
            .min()
            .unwrap_or(Smoothness::Infinite)
    }

    pub fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= x)
    }

    pub(crate) fn local(&self, idx: usize) -> Option<&(f64, Poly)> {
        self.local[idx].as_ref()
    }

    /// `V` on piece `idx` without the normalizer; `+∞` on vacuum.
    fn form_value(&self, idx: usize, x: f64) -> f64 {
        match &self.local[idx] {
            None => f64::INFINITY,
            Some((o, q)) => q.eval(x - o),
        }
    }

    fn form_derivative(&self, idx: usize, x: f64, order: usize) -> Option<f64> {
        self.local[idx].as_ref().map(|(o, q)| q.eval_derivative(x - o, order))
    }

    /// `V(x)` including the log-normalizer; `+∞` on vacuum pieces.
    pub fn eval(&self, x: f64) -> f64 {
        self.form_value(self.piece_index(x), x) + self.log_normalizer
    }

    /// One-sided derivative of the given order. `None` on vacuum.
    pub fn derivative(&self, x: f64, order: usize, side: Side) -> Option<f64> {
        let mut idx = self.piece_index(x);
        if side == Side::Left && idx > 0 && self.breakpoints[idx - 1] == x {
            idx -= 1;
        }
        let d = self.form_derivative(idx, x, order)?;
        Some(if order == 0 { d + self.log_normalizer } else { d })
    }

    /// Taylor coefficients of `V` at `x` from `side`, normalizer included.
    /// `None` on vacuum.
    pub fn jet(&self, x: f64, order: usize, side: Side) -> Option<Vec<f64>> {
        let mut idx = self.piece_index(x);
        if side == Side::Left && idx > 0 && self.breakpoints[idx - 1] == x {
            idx -= 1;
        }
        let (o, q) = self.local[idx].as_ref()?;
        let mut out = series::from_poly(q, x - o, order);
        out[0] += self.log_normalizer;
        Some(out)
    }

    /// `V'(x)`. At a kink the mean of the one-sided derivatives is returned.
    pub fn grad(&self, x: f64) -> Result<f64> {
        let idx = self.piece_index(x);
        if idx > 0 && self.breakpoints[idx - 1] == x {
            if self.junction_smoothness[idx - 1] == Smoothness::Finite(-1) {
                return Err(Error::NonDifferentiable { x });
            }
            let l = self.form_derivative(idx - 1, x, 1).unwrap();
            let r = self.form_derivative(idx, x, 1).unwrap();
            return Ok(0.5 * (l + r));
        }
        self.form_derivative(idx, x, 1).ok_or(Error::NonDifferentiable { x })
    }

    pub fn grad_one_sided(&self, x: f64, side: Side) -> Result<f64> {
        self.derivative(x, 1, side).ok_or(Error::NonDifferentiable { x })
    }

    fn junction_class(&self, j: usize) -> Smoothness {
        let b = self.breakpoints[j];
        match (&self.local[j], &self.local[j + 1]) {
            (None, None) => Smoothness::Infinite,
            (None, _) | (_, None) => Smoothness::Finite(-1),
            (Some((ol, ql)), Some((or, qr))) => {
                let top = ql.degree().unwrap_or(0).max(qr.degree().unwrap_or(0)) + 1;
                for k in 0..=top {
                    let l = ql.eval_derivative(b - ol, k);
                    let r = qr.eval_derivative(b - or, k);
                    let scale = 1.0f64.max(l.abs()).max(r.abs());
                    if (l - r).abs() > 1e-9 * scale {
                        return Smoothness::Finite(k as i32 - 1);
                    }
                }
                Smoothness::Infinite
            }
        }
    }

    /// `(inf V'', sup V'')` over ℝ, ignoring vacuum pieces. Either bound may
    /// be infinite.
    pub fn hessian_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (p, local) in self.pieces.iter().zip(&self.local) {
            let Some((o, q)) = local else { continue };
            let h2 = q.nth_derivative(2);
            let h3 = h2.derivative();
            let (a, b) = (p.lo - o, p.hi - o);
            let mut vals = Vec::new();
            for (end, dir) in [(a, -1.0), (b, 1.0)] {
                vals.push(if end.is_finite() { h2.eval(end) } else { h2.limit_at_infinity(dir) });
            }
            vals.extend(h3.real_roots(a, b).into_iter().map(|r| h2.eval(r)));
            if h2.is_zero() {
                vals.push(0.0);
            }
            for v in vals {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// `ln ∫ exp(-V_unnormalized) dx`, with the stored normalizer ignored.
    pub fn normalize(&self) -> Result<f64> {
        self.check_tails()?;
        let cfg = QuadratureConfig::default();
        // per-piece shifts keep every integrand O(1); combine by log-sum-exp
        let mut logs = Vec::new();
        for idx in 0..self.pieces.len() {
            let Some((_, a, b)) = self.local_range(idx) else { continue };
            if !(a < b) {
                continue;
            }
            let (_, q) = self.local[idx].as_ref().unwrap();
            let shift = self.piece_minimum(idx).unwrap();
            let f = |s: f64| (-(q.eval(s) - shift)).exp();
            let e = quadrature::integrate(&f, a, b, &cfg)?;
            if e.value > 0.0 {
                logs.push(e.value.ln() - shift);
            }
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::InvalidArgument("potential carries no mass".into()));
        }
        let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        Ok(top + sum.ln())
    }

    fn check_tails(&self) -> Result<()> {
        let ends = [(0, -1.0, "left"), (self.pieces.len() - 1, 1.0, "right")];
        for (idx, dir, side) in ends {
            if let Some((o, q)) = &self.local[idx] {
                let plain = q.compose_affine(1.0, -o);
                if plain.degree().unwrap_or(0) == 0 || plain.limit_at_infinity(dir) != f64::INFINITY {
                    return Err(Error::NonIntegrableTail { side });
                }
            }
        }
        Ok(())
    }

    /// Minimum of the unnormalized form over piece `idx`; `None` on vacuum.
    fn piece_minimum(&self, idx: usize) -> Option<f64> {
        let (o, q) = self.local[idx].as_ref()?;
        let p = &self.pieces[idx];
        let (a, b) = (p.lo - o, p.hi - o);
        let mut m = f64::INFINITY;
        for s in q.derivative().real_roots(a, b).into_iter().chain([a, b]) {
            if s.is_finite() {
                m = m.min(q.eval(s));
            }
        }
        if !m.is_finite() {
            m = q.eval(0.0);
        }
        Some(m)
    }

    /// Local range `(origin, s_lo, s_hi)` of piece `idx`, with infinite ends
    /// truncated where `V` exceeds the piece minimum by `TAIL_CUTOFF`.
    pub(crate) fn local_range(&self, idx: usize) -> Option<(f64, f64, f64)> {
        let (o, q) = self.local[idx].as_ref()?;
        let level = self.piece_minimum(idx)?;
        let p = &self.pieces[idx];
        let (a, b) = (p.lo - o, p.hi - o);
        let crit = q.derivative().real_roots(a, b);
        let above = |s: f64| q.eval(s) - level > TAIL_CUTOFF;
        let truncate = |start: f64, dir: f64| -> f64 {
            let mut step = 1.0;
            let mut far = start + dir * step;
            while !above(far) && step < 1e300 {
                step *= 2.0;
                far = start + dir * step;
            }
            // bisect to a relative tolerance: tail scales can be tiny
            let (mut inside, mut outside) = (start, far);
            for _ in 0..200 {
                let mid = 0.5 * (inside + outside);
                if (outside - inside).abs() <= 1e-6 * (outside - start).abs() || mid == inside || mid == outside {
                    break;
                }
                if above(mid) {
                    outside = mid;
                } else {
                    inside = mid;
                }
            }
            outside
        };
        let s_lo = if a.is_finite() {
            a
        } else {
            let anchor = crit.first().copied().unwrap_or(if b.is_finite() { b } else { 0.0 });
            truncate(anchor, -1.0)
        };
        let s_hi = if b.is_finite() {
            b
        } else {
            let anchor = crit.last().copied().unwrap_or(if a.is_finite() { a } else { 0.0 });
            truncate(anchor, 1.0)
        };
        Some((*o, s_lo, s_hi))
    }

    /// `∫ exp(-V(x)) g(x, V(x)) dx`, each piece integrated in its own local
    /// coordinate, optionally restricted to `window`.
    pub fn integrate_density<G: Fn(f64, f64) -> f64>(
        &self,
        g: G,
        window: Option<(f64, f64)>,
        cfg: &QuadratureConfig,
    ) -> Result<Estimate> {
        let mut total = Estimate::default();
        for idx in 0..self.pieces.len() {
            let Some((o, mut a, mut b)) = self.local_range(idx) else { continue };
            if let Some((wlo, whi)) = window {
                a = a.max(wlo - o);
                b = b.min(whi - o);
            }
            if !(a < b) {
                continue;
            }
            let (_, q) = self.local[idx].as_ref().unwrap();
            let lz = self.log_normalizer;
            let f = |s: f64| {
                let v = q.eval(s) + lz;
                let w = (-v).exp();
                if w == 0.0 {
                    0.0
                } else {
                    w * g(o + s, v)
                }
            };
            total = total + quadrature::integrate(&f, a, b, cfg)?;
        }
        Ok(total)
    }

    /// Interval outside which every piece is below `exp(-TAIL_CUTOFF)` of
    /// its own peak.
    pub fn support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for idx in 0..self.pieces.len() {
            if let Some((o, a, b)) = self.local_range(idx) {
                if a < b {
                    lo = lo.min(o + a);
                    hi = hi.max(o + b);
                }
            }
        }
        (lo, hi)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PotentialJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: PotentialJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceJson {
    /// `null` means `-∞`.
    pub lo: Option<f64>,
    /// `null` means `+∞`.
    pub hi: Option<f64>,
    #[serde(default)]
    pub poly: Vec<f64>,
    #[serde(default)]
    pub abs_coeff: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub origin: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub vacuum: bool,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialJson {
    pub pieces: Vec<PieceJson>,
    pub log_normalizer: f64,
}

impl From<&PiecewisePotential> for PotentialJson {
    fn from(p: &PiecewisePotential) -> Self {
        let bound = |x: f64| x.is_finite().then_some(x);
        let pieces = p
            .pieces
            .iter()
            .map(|piece| match &piece.form {
                PieceForm::Vacuum => PieceJson {
                    lo: bound(piece.lo),
                    hi: bound(piece.hi),
                    poly: Vec::new(),
                    abs_coeff: 0.0,
                    origin: 0.0,
                    vacuum: true,
                },
                PieceForm::Smooth {
                    poly,
                    abs_coeff,
                    origin,
                } => PieceJson {
                    lo: bound(piece.lo),
                    hi: bound(piece.hi),
                    poly: poly.coeffs().to_vec(),
                    abs_coeff: *abs_coeff,
                    origin: *origin,
                    vacuum: false,
                },
            })
            .collect();
        PotentialJson {
            pieces,
            log_normalizer: p.log_normalizer,
        }
    }
}

impl TryFrom<PotentialJson> for PiecewisePotential {
    type Error = Error;
    fn try_from(raw: PotentialJson) -> Result<Self> {
        let pieces = raw
            .pieces
            .into_iter()
            .map(|p| {
                let lo = p.lo.unwrap_or(f64::NEG_INFINITY);
                let hi = p.hi.unwrap_or(f64::INFINITY);
                if p.vacuum {
                    PotentialPiece::vacuum(lo, hi)
                } else {
                    PotentialPiece {
                        lo,
                        hi,
                        form: PieceForm::Smooth {
                            poly: Poly::new(p.poly),
                            abs_coeff: p.abs_coeff,
                            origin: p.origin,
                        },
                    }
                }
            })
            .collect();
        Ok(PiecewisePotential::new(pieces)?.with_log_normalizer(raw.log_normalizer))
    }
}
