//! Forward-Euler transport maps `T(x) = x - h·w(x)`, their decomposition
//! into monotone branches, and branch-wise inversion.
//!
//! A map is cut into *segments*: maximal intervals inside one velocity
//! piece on which `T'` keeps a strict sign. Segments are glued into
//! *branches* unless the orientation flips between them. A segment owns its
//! left endpoint when that endpoint is a velocity break (half-open
//! convention); endpoints at stationary points (`T' = 0`) are owned by no
//! segment and are reported through a sentinel pre-image with infinite
//! Jacobian.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::potentials::{PiecewisePotential, Side};
use crate::roots::{solve_bracketed, solve_cubic, solve_quadratic, step_beyond};
use crate::series;
use crate::Poly;

/// Velocity given piecewise by polynomials in `x - origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseVelocity {
    breaks: Vec<f64>,
    pieces: Vec<(f64, Poly)>,
}

impl PiecewiseVelocity {
    /// `pieces.len()` must be `breaks.len() + 1`; piece `i` covers
    /// `[breaks[i-1], breaks[i])`.
    pub fn new(breaks: Vec<f64>, pieces: Vec<(f64, Poly)>) -> Result<Self> {
        if pieces.len() != breaks.len() + 1 {
            return Err(Error::InvalidArgument("velocity needs one more piece than breaks".into()));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("velocity breaks must be finite and increasing".into()));
        }
        Ok(Self { breaks, pieces })
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self {
            breaks: Vec::new(),
            pieces: vec![(0.0, Poly::new(coeffs))],
        }
    }

    pub fn zero() -> Self {
        Self::polynomial(Vec::new())
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[(f64, Poly)] {
        &self.pieces
    }

    pub fn piece_index(&self, x: f64) -> usize {
        self.breaks.partition_point(|&b| b <= x)
    }

    fn piece_at(&self, x: f64, side: Side) -> usize {
        let idx = self.piece_index(x);
        if side == Side::Left && idx > 0 && self.breaks[idx - 1] == x {
            idx - 1
        } else {
            idx
        }
    }

    pub fn eval_side(&self, x: f64, side: Side) -> f64 {
        let (o, q) = &self.pieces[self.piece_at(x, side)];
        q.eval(x - o)
    }

    /// `w(x)`; at a break, the mean of the one-sided values.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.piece_index(x);
        if idx > 0 && self.breaks[idx - 1] == x {
            0.5 * (self.eval_side(x, Side::Left) + self.eval_side(x, Side::Right))
        } else {
            self.eval_side(x, Side::Right)
        }
    }

    pub fn derivative_side(&self, x: f64, side: Side) -> f64 {
        let (o, q) = &self.pieces[self.piece_at(x, side)];
        q.eval_derivative(x - o, 1)
    }

    /// Taylor coefficients of `w` at `x` from `side`.
    pub fn jet(&self, x: f64, order: usize, side: Side) -> Vec<f64> {
        let (o, q) = &self.pieces[self.piece_at(x, side)];
        series::from_poly(q, x - o, order)
    }

    /// True when every piece has degree at most one.
    pub fn is_piecewise_affine(&self) -> bool {
        self.pieces.iter().all(|(_, q)| q.degree().unwrap_or(0) <= 1)
    }
}

/// Velocity `w = U' + (ln p)'` of a density known only pointwise, with
/// `(ln p)'` from the density's exact Taylor jets. `jumps` lists points where
/// the field may be discontinuous; outside `window` it is extended affinely.
#[derive(Clone, Debug)]
pub struct ScoreVelocity {
    target: PiecewisePotential,
    density: Density,
    jumps: Vec<f64>,
    window: (f64, f64),
}

impl ScoreVelocity {
    pub fn new(target: PiecewisePotential, density: Density, jumps: Vec<f64>) -> Self {
        let window = density.support();
        let mut jumps = jumps;
        jumps.sort_by(f64::total_cmp);
        jumps.dedup();
        Self {
            target,
            density,
            jumps,
            window,
        }
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    fn inner_jet(&self, x: f64, order: usize, side: Side) -> Vec<f64> {
        let du = self.target.jet(x, order + 1, side).map(|j| series::derivative(&j));
        let dl = self
            .density
            .log_jet(x, order + 1, side)
            .filter(|j| j[0].is_finite())
            .map(|j| series::derivative(&j));
        match (du, dl) {
            (Some(du), Some(dl)) => du.iter().zip(&dl).map(|(a, b)| a + b).collect(),
            _ => vec![f64::NAN; order + 1],
        }
    }

    /// Taylor coefficients of `w` at `x` from `side`.
    pub fn jet(&self, x: f64, order: usize, side: Side) -> Vec<f64> {
        let (a, b) = self.window;
        let edge = if x < a {
            Some((a, Side::Right))
        } else if x > b {
            Some((b, Side::Left))
        } else {
            None
        };
        match edge {
            None => self.inner_jet(x, order, side),
            Some((e, side)) => {
                let w = self.inner_jet(e, 1, side);
                let mut out = vec![0.0; order + 1];
                out[0] = w[0] + w[1] * (x - e);
                if order > 0 {
                    out[1] = w[1];
                }
                out
            }
        }
    }

    pub fn eval_side(&self, x: f64, side: Side) -> f64 {
        self.jet(x, 0, side)[0]
    }

    pub fn derivative_side(&self, x: f64, side: Side) -> f64 {
        self.jet(x, 1, side)[1]
    }
}

#[derive(Clone, Debug)]
pub enum VelocityField {
    Piecewise(PiecewiseVelocity),
    Score(ScoreVelocity),
}

impl VelocityField {
    pub fn zero() -> Self {
        VelocityField::Piecewise(PiecewiseVelocity::zero())
    }

    /// `w(x)`; breaks use the mean of one-sided values.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            VelocityField::Piecewise(p) => p.eval(x),
            VelocityField::Score(s) => {
                if s.jumps.binary_search_by(|j| j.total_cmp(&x)).is_ok() {
                    0.5 * (s.eval_side(x, Side::Left) + s.eval_side(x, Side::Right))
                } else {
                    s.eval_side(x, Side::Right)
                }
            }
        }
    }

    pub fn eval_side(&self, x: f64, side: Side) -> f64 {
        match self {
            VelocityField::Piecewise(p) => p.eval_side(x, side),
            VelocityField::Score(s) => s.eval_side(x, side),
        }
    }

    pub fn derivative_side(&self, x: f64, side: Side) -> f64 {
        match self {
            VelocityField::Piecewise(p) => p.derivative_side(x, side),
            VelocityField::Score(s) => s.derivative_side(x, side),
        }
    }

    pub fn jet(&self, x: f64, order: usize, side: Side) -> Vec<f64> {
        match self {
            VelocityField::Piecewise(p) => p.jet(x, order, side),
            VelocityField::Score(s) => s.jet(x, order, side),
        }
    }

    pub fn as_piecewise(&self) -> Option<&PiecewiseVelocity> {
        match self {
            VelocityField::Piecewise(p) => Some(p),
            VelocityField::Score(_) => None,
        }
    }

    /// Points where the field may be non-smooth.
    pub fn breaks(&self) -> &[f64] {
        match self {
            VelocityField::Piecewise(p) => &p.breaks,
            VelocityField::Score(s) => &s.jumps,
        }
    }
}

/// `T(x) = x - h·w(x)`.
#[derive(Clone, Debug)]
pub struct PiecewiseMap {
    velocity: VelocityField,
    h: f64,
}

impl PiecewiseMap {
    pub fn new(velocity: VelocityField, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
        }
        Ok(Self { velocity, h })
    }

    pub fn identity() -> Self {
        Self {
            velocity: VelocityField::zero(),
            h: 1.0,
        }
    }

    pub fn velocity(&self) -> &VelocityField {
        &self.velocity
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `T(x)` with the half-open convention at breaks (right piece).
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_side(x, Side::Right)
    }

    pub fn eval_side(&self, x: f64, side: Side) -> f64 {
        match &self.velocity {
            VelocityField::Piecewise(p) => {
                let (o, q) = &p.pieces[p.piece_at(x, side)];
                // T in the piece's local coordinate keeps huge origins exact
                let s = x - o;
                o + (s - self.h * q.eval(s))
            }
            VelocityField::Score(_) => x - self.h * self.velocity.eval_side(x, side),
        }
    }

    /// Taylor coefficients of `T` at `x` from `side`.
    pub fn jet(&self, x: f64, order: usize, side: Side) -> Vec<f64> {
        let w = self.velocity.jet(x, order, side);
        let mut t: Vec<f64> = w.iter().map(|c| -self.h * c).collect();
        t[0] = match &self.velocity {
            VelocityField::Piecewise(_) => self.eval_side(x, side),
            VelocityField::Score(_) => x - self.h * w[0],
        };
        if order > 0 {
            t[1] += 1.0;
        }
        t
    }

    /// `T(x)` with the mean convention at breaks, as used for particles.
    pub fn eval_mean(&self, x: f64) -> f64 {
        x - self.h * self.velocity.eval(x)
    }

    pub fn derivative_side(&self, x: f64, side: Side) -> f64 {
        1.0 - self.h * self.velocity.derivative_side(x, side)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.derivative_side(x, Side::Right)
    }

    /// `T` on velocity piece `idx` as a polynomial in `x - origin`.
    fn local_map(&self, idx: usize) -> Option<(f64, Poly)> {
        let p = self.velocity.as_piecewise()?;
        let (o, q) = &p.pieces[idx];
        Some((*o, Poly::linear(*o, 1.0).sub(&q.scale(self.h))))
    }

    pub fn decompose(&self) -> Result<BranchSet> {
        BranchSet::build(self.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Increasing,
    Decreasing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseMethod {
    Affine,
    Quadratic,
    Cubic,
    Bracketed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    /// `T'(x) = 0`: the Jacobian of the inverse diverges.
    Stationary,
    /// Orientation flips across a velocity break.
    Kink,
    /// `T` itself is discontinuous (forced continuation only).
    Jump,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalPoint {
    pub x: f64,
    pub kind: CriticalKind,
    /// `T(x)`; for a jump, the left limit.
    pub value: f64,
    /// Right limit of `T` (differs from `value` only for jumps).
    pub value_right: f64,
}

/// Strictly monotone piece of `T` inside one velocity piece.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    /// Whether `lo` belongs to this segment.
    pub closed_lo: bool,
    /// `T(lo+)` and `T(hi-)`.
    pub t_lo: f64,
    pub t_hi: f64,
    pub orientation: Orientation,
    pub inverse: InverseMethod,
    piece: usize,
}

impl Segment {
    /// Whether `y` is attained on this segment.
    pub fn range_contains(&self, y: f64) -> bool {
        let (a, b) = (self.t_lo, self.t_hi);
        match self.orientation {
            Orientation::Increasing => (y > a || (self.closed_lo && y == a)) && y < b,
            Orientation::Decreasing => (y < a || (self.closed_lo && y == a)) && y > b,
        }
    }

    pub fn range(&self) -> (f64, f64) {
        (self.t_lo.min(self.t_hi), self.t_lo.max(self.t_hi))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneBranch {
    pub lo: f64,
    pub hi: f64,
    pub orientation: Orientation,
    pub range_lo: f64,
    pub range_hi: f64,
    pub inverse: InverseMethod,
    pub segments: std::ops::Range<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preimage {
    pub x: f64,
    pub branch: usize,
    /// `1/|T'(x)|`, or `+∞` at a stationary point.
    pub jacobian: f64,
}

#[derive(Clone, Debug)]
pub struct BranchSet {
    map: PiecewiseMap,
    segments: Vec<Segment>,
    branches: Vec<MonotoneBranch>,
    critical: Vec<CriticalPoint>,
    segment_branch: Vec<usize>,
}

const SCORE_SCAN_POINTS: usize = 4000;

impl BranchSet {
    fn build(map: PiecewiseMap) -> Result<Self> {
        // cut points: (x, is_break)
        let mut cuts: Vec<(f64, bool)> = map.velocity.breaks().iter().map(|&b| (b, true)).collect();
        let mut stationary = Vec::new();
        match &map.velocity {
            VelocityField::Piecewise(p) => {
                for idx in 0..p.pieces.len() {
                    let (o, t) = map.local_map(idx).unwrap();
                    let lo = if idx == 0 { f64::NEG_INFINITY } else { p.breaks[idx - 1] };
                    let hi = p.breaks.get(idx).copied().unwrap_or(f64::INFINITY);
                    let dt = t.derivative();
                    if dt.is_zero() {
                        return Err(Error::DegenerateMap { lo, hi });
                    }
                    for r in dt.real_roots(lo - o, hi - o) {
                        let x = o + r;
                        if x > lo && x < hi {
                            stationary.push(x);
                        }
                    }
                }
            }
            VelocityField::Score(s) => {
                let (a, b) = s.window;
                let jumps = &s.jumps;
                let n = SCORE_SCAN_POINTS;
                let grid: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
                let dv: Vec<f64> = grid.iter().map(|&x| map.derivative_side(x, Side::Right)).collect();
                for i in 0..n {
                    let (u, v) = (grid[i], grid[i + 1]);
                    if jumps.iter().any(|&j| j > u && j <= v) {
                        continue;
                    }
                    if dv[i] * dv[i + 1] < 0.0 {
                        let x = crate::roots::bisect(
                            |x| map.derivative_side(x, Side::Right),
                            u,
                            v,
                            1e-12 * u.abs().max(1.0),
                        );
                        stationary.push(x);
                    }
                }
            }
        }
        cuts.extend(stationary.iter().map(|&x| (x, false)));
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        cuts.dedup_by(|a, b| a.0 == b.0);

        let mut segments = Vec::with_capacity(cuts.len() + 1);
        let mut lo = f64::NEG_INFINITY;
        let mut closed_lo = false;
        for k in 0..=cuts.len() {
            let (hi, next_closed) = cuts.get(k).copied().unwrap_or((f64::INFINITY, false));
            segments.push(Self::segment(&map, lo, hi, closed_lo)?);
            lo = hi;
            closed_lo = next_closed;
        }

        let mut critical = Vec::new();
        for w in segments.windows(2) {
            let (l, r) = (&w[0], &w[1]);
            let x = l.hi;
            if !r.closed_lo {
                let v = map.eval(x);
                critical.push(CriticalPoint {
                    x,
                    kind: CriticalKind::Stationary,
                    value: v,
                    value_right: v,
                });
                continue;
            }
            let scale = l.t_hi.abs().max(r.t_lo.abs()).max(1.0);
            if (l.t_hi - r.t_lo).abs() > 1e-12 * scale {
                critical.push(CriticalPoint {
                    x,
                    kind: CriticalKind::Jump,
                    value: l.t_hi,
                    value_right: r.t_lo,
                });
            } else if l.orientation != r.orientation {
                critical.push(CriticalPoint {
                    x,
                    kind: CriticalKind::Kink,
                    value: r.t_lo,
                    value_right: r.t_lo,
                });
            }
        }

        let mut branches: Vec<MonotoneBranch> = Vec::new();
        let mut segment_branch = Vec::with_capacity(segments.len());
        for (i, s) in segments.iter().enumerate() {
            let (rlo, rhi) = s.range();
            match branches.last_mut() {
                Some(b) if b.orientation == s.orientation => {
                    b.hi = s.hi;
                    b.range_lo = b.range_lo.min(rlo);
                    b.range_hi = b.range_hi.max(rhi);
                    b.segments.end = i + 1;
                    if b.inverse != s.inverse {
                        b.inverse = InverseMethod::Bracketed;
                    }
                }
                _ => branches.push(MonotoneBranch {
                    lo: s.lo,
                    hi: s.hi,
                    orientation: s.orientation,
                    range_lo: rlo,
                    range_hi: rhi,
                    inverse: s.inverse,
                    segments: i..i + 1,
                }),
            }
            segment_branch.push(branches.len() - 1);
        }

        Ok(Self {
            map,
            segments,
            branches,
            critical,
            segment_branch,
        })
    }

    fn segment(map: &PiecewiseMap, lo: f64, hi: f64, closed_lo: bool) -> Result<Segment> {
        let piece = match &map.velocity {
            VelocityField::Piecewise(p) => {
                if lo.is_finite() {
                    p.piece_index(lo)
                } else if hi.is_finite() {
                    p.piece_at(hi, Side::Left)
                } else {
                    0
                }
            }
            VelocityField::Score(_) => 0,
        };
        let t_lo = if lo.is_finite() {
            map.eval_side(lo, Side::Right)
        } else {
            Self::limit(map, piece, hi, -1.0)
        };
        let t_hi = if hi.is_finite() {
            map.eval_side(hi, Side::Left)
        } else {
            Self::limit(map, piece, lo, 1.0)
        };
        let probe = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + lo.abs().max(1.0),
            (false, true) => hi - hi.abs().max(1.0),
            (false, false) => 0.0,
        };
        let slope = map.derivative_side(probe, Side::Right);
        let orientation = if slope > 0.0 || (slope == 0.0 && t_hi > t_lo) {
            Orientation::Increasing
        } else if slope < 0.0 || t_hi < t_lo {
            Orientation::Decreasing
        } else {
            return Err(Error::DegenerateMap { lo, hi });
        };
        let inverse = match map.local_map(piece) {
            Some((_, t)) => match t.degree().unwrap_or(0) {
                0 => return Err(Error::DegenerateMap { lo, hi }),
                1 => InverseMethod::Affine,
                2 => InverseMethod::Quadratic,
                3 => InverseMethod::Cubic,
                _ => InverseMethod::Bracketed,
            },
            None => InverseMethod::Bracketed,
        };
        Ok(Segment {
            lo,
            hi,
            closed_lo,
            t_lo,
            t_hi,
            orientation,
            inverse,
            piece,
        })
    }

    /// `lim T(x)` as `x → dir·∞`, starting from the finite end `from`.
    fn limit(map: &PiecewiseMap, piece: usize, from: f64, dir: f64) -> f64 {
        match map.local_map(piece) {
            Some((_, t)) => t.limit_at_infinity(dir),
            None => {
                let x = if from.is_finite() { from } else { 0.0 };
                let slope = map.derivative_side(x + dir * 1e6, Side::Right);
                if slope > 0.0 {
                    dir * f64::INFINITY
                } else if slope < 0.0 {
                    -dir * f64::INFINITY
                } else {
                    map.eval(x + dir * 1e6)
                }
            }
        }
    }

    pub fn map(&self) -> &PiecewiseMap {
        &self.map
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn branches(&self) -> &[MonotoneBranch] {
        &self.branches
    }

    pub fn critical(&self) -> &[CriticalPoint] {
        &self.critical
    }

    /// Stationary points and orientation-flipping kinks.
    pub fn critical_points(&self) -> Vec<f64> {
        self.critical
            .iter()
            .filter(|c| c.kind != CriticalKind::Jump)
            .map(|c| c.x)
            .collect()
    }

    pub fn critical_values(&self) -> Vec<f64> {
        self.critical
            .iter()
            .filter(|c| c.kind != CriticalKind::Jump)
            .map(|c| c.value)
            .collect()
    }

    /// Images of stationary points: where pushforward densities blow up.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .critical
            .iter()
            .filter(|c| c.kind == CriticalKind::Stationary)
            .map(|c| c.value)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Every point of the domain at which `T` is not locally a smooth
    /// diffeomorphism.
    pub fn cut_points(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.lo).collect()
    }

    pub fn is_injective(&self) -> bool {
        if self.branches.len() != 1 {
            return false;
        }
        // jumps may still fold ranges over each other
        let mut ordered: Vec<(f64, f64)> = self.segments.iter().map(Segment::range).collect();
        if self.branches[0].orientation == Orientation::Decreasing {
            ordered.reverse();
        }
        // adjacent images may overlap by rounding where pieces meet
        ordered
            .windows(2)
            .all(|w| w[0].1 <= w[1].0 + 1e-12 * w[0].0.abs().max(w[1].1.abs()).max(1.0))
    }

    /// All `x` with `T(x) = y`, ascending.
    pub fn preimages(&self, y: f64) -> Vec<Preimage> {
        let mut out = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.range_contains(y) {
                let x = self.invert(seg, y);
                let d = self.map.derivative_side(x, Side::Right).abs();
                out.push(Preimage {
                    x,
                    branch: self.segment_branch[i],
                    jacobian: 1.0 / d,
                });
            }
        }
        for (ci, c) in self.critical.iter().enumerate() {
            if c.kind == CriticalKind::Stationary && c.value == y {
                let seg = self.segments.iter().position(|s| s.lo == c.x).unwrap_or(ci + 1);
                out.push(Preimage {
                    x: c.x,
                    branch: self.segment_branch[seg],
                    jacobian: f64::INFINITY,
                });
            }
        }
        out.sort_by(|a, b| a.x.total_cmp(&b.x));
        out
    }

    /// `x` in `seg` with `T(x) = y`; `y` must lie in the segment's range.
    pub fn invert(&self, seg: &Segment, y: f64) -> f64 {
        if let Some((o, t)) = self.map.local_map(seg.piece) {
            let (a, b) = (seg.lo - o, seg.hi - o);
            let c = |k| t.coeff(k);
            let shifted = |s: f64| s >= a && s <= b;
            let candidates: Vec<f64> = match seg.inverse {
                InverseMethod::Affine => vec![(y - c(0)) / c(1)],
                InverseMethod::Quadratic => solve_quadratic(c(2), c(1), c(0) - y),
                InverseMethod::Cubic => solve_cubic(c(3), c(2), c(1), c(0) - y),
                InverseMethod::Bracketed => Vec::new(),
            };
            let dt = t.derivative();
            let resid = |s: f64| (t.eval(s) - y).abs();
            if let Some(mut s) = candidates.into_iter().filter(|&s| shifted(s)).min_by(|p, q| resid(*p).total_cmp(&resid(*q))) {
                // polish without leaving the segment
                for _ in 0..3 {
                    let d = dt.eval(s);
                    if d == 0.0 {
                        break;
                    }
                    let next = s - (t.eval(s) - y) / d;
                    if shifted(next) && resid(next) < resid(s) {
                        s = next;
                    } else {
                        break;
                    }
                }
                let tol = 1e-12 * y.abs().max(1.0);
                if resid(s) <= tol || seg.inverse == InverseMethod::Affine {
                    return o + s;
                }
            }
            let f = |s: f64| (t.eval(s) - y, dt.eval(s));
            let (lo, hi) = self.bracket(seg, y, |s| t.eval(s), a, b);
            return o + solve_bracketed(f, lo, hi, None);
        }
        let f = |x: f64| {
            let t = self.map.jet(x, 1, Side::Right);
            (t[0] - y, t[1])
        };
        let (lo, hi) = self.bracket(seg, y, |x| self.map.eval(x), seg.lo, seg.hi);
        solve_bracketed(f, lo, hi, None)
    }

    /// Finite sign-changing bracket inside `[a, b]` for `g(s) = y`.
    fn bracket(&self, seg: &Segment, y: f64, g: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let up = seg.orientation == Orientation::Increasing;
        let below = |s: f64| (g(s) < y) == up; // s lies left of the root
        let mut lo = a;
        let mut hi = b;
        if !lo.is_finite() {
            let start = if hi.is_finite() { hi } else { 0.0 };
            let mut step = start.abs().max(1.0);
            lo = start - step;
            while !below(lo) && lo.is_finite() {
                step *= 2.0;
                lo = start - step;
            }
            if !hi.is_finite() && below(start) {
                lo = start;
            }
        }
        if !hi.is_finite() {
            let start = lo.max(if a.is_finite() { a } else { lo });
            let mut step = start.abs().max(1.0);
            hi = start + step;
            while below(hi) && hi.is_finite() {
                step *= 2.0;
                hi = start + step;
            }
        }
        (lo, hi)
    }

    /// Images of domain points, through every segment that contains them.
    pub fn image_points(&self, xs: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for &x in xs {
            if !x.is_finite() {
                continue;
            }
            out.push(self.map.eval_side(x, Side::Right));
            out.push(self.map.eval_side(x, Side::Left));
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BranchSetJson::from(self))?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchJson {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub orientation: Orientation,
    pub range_lo: Option<f64>,
    pub range_hi: Option<f64>,
    pub inverse: InverseMethod,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchSetJson {
    pub critical_points: Vec<f64>,
    pub critical_values: Vec<f64>,
    pub jumps: Vec<f64>,
    pub branches: Vec<BranchJson>,
}

impl From<&BranchSet> for BranchSetJson {
    fn from(b: &BranchSet) -> Self {
        let fin = |x: f64| x.is_finite().then_some(x);
        Self {
            critical_points: b.critical_points(),
            critical_values: b.critical_values(),
            jumps: b
                .critical
                .iter()
                .filter(|c| c.kind == CriticalKind::Jump)
                .map(|c| c.x)
                .collect(),
            branches: b
                .branches
                .iter()
                .map(|br| BranchJson {
                    lo: fin(br.lo),
                    hi: fin(br.hi),
                    orientation: br.orientation,
                    range_lo: fin(br.range_lo),
                    range_hi: fin(br.range_hi),
                    inverse: br.inverse,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// `h < 1/(M + M0)`.
    pub holds: bool,
    pub bound: f64,
    /// A point where `T'(x) <= 0`, if the scan found one.
    pub witness: Option<f64>,
}

/// Checks the step-size condition `h < 1/(M + M0)` that keeps
/// `T' = 1 + h(V'' - U'') > 0`, and scans `T'` for a counter-witness.
pub fn injectivity_condition(velocity: &VelocityField, h: f64, m: f64, m0: f64) -> InjectivityReport {
    let total = m + m0.max(0.0);
    let bound = if total > 0.0 { 1.0 / total } else { f64::INFINITY };
    let map = PiecewiseMap {
        velocity: velocity.clone(),
        h,
    };
    InjectivityReport {
        holds: h < bound,
        bound,
        witness: slope_witness(&map),
    }
}

fn slope_witness(map: &PiecewiseMap) -> Option<f64> {
    let mut candidates: Vec<f64> = Vec::new();
    let mut reach = 10.0f64;
    match &map.velocity {
        VelocityField::Piecewise(p) => {
            for (idx, b) in p.breaks.iter().enumerate() {
                reach = reach.max(b.abs() + 10.0);
                candidates.push(*b);
                let _ = idx;
            }
            for idx in 0..p.pieces.len() {
                let (o, t) = map.local_map(idx).unwrap();
                let lo = if idx == 0 { f64::NEG_INFINITY } else { p.breaks[idx - 1] };
                let hi = p.breaks.get(idx).copied().unwrap_or(f64::INFINITY);
                let dt = t.derivative();
                let roots = dt.real_roots(lo - o, hi - o);
                let extrema = dt.derivative().real_roots(lo - o, hi - o);
                for r in roots.iter().chain(&extrema) {
                    candidates.push(o + r);
                    reach = reach.max((o + r).abs() + 10.0);
                }
                // beyond the outermost root, T' has the sign of its limit
                if !hi.is_finite() {
                    let far = roots.last().map_or(step_beyond(o.max(lo), 1.0), |r| step_beyond(o + r, 1.0));
                    candidates.push(if far.is_finite() { far } else { 1.0 });
                }
                if !lo.is_finite() {
                    let far = roots.first().map_or(step_beyond(o.min(hi), -1.0), |r| step_beyond(o + r, -1.0));
                    candidates.push(if far.is_finite() { far } else { -1.0 });
                }
            }
        }
        VelocityField::Score(s) => {
            let (a, b) = s.window;
            reach = reach.max(a.abs()).max(b.abs());
        }
    }
    let n = 10_000;
    candidates.extend((0..=n).map(|i| -reach + 2.0 * reach * i as f64 / n as f64));
    candidates
        .into_iter()
        .filter(|x| x.is_finite())
        .map(|x| (x, map.derivative_side(x, Side::Right)))
        .filter(|(_, d)| *d <= 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| x)
}

/// Shared handle used by lazy densities.
pub type SharedBranches = Arc<BranchSet>;
