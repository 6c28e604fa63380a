//! Probability densities on ℝ.
//!
//! A density is either a closed form `exp(-V)` for a normalized
//! [`PiecewisePotential`], or the lazy pushforward of a base density through
//! a transport map. Pushforwards are never refit to a grid: every value is
//! the exact branch sum `Σ p_base(x_i)/|T'(x_i)|`, so jumps and integrable
//! blow-ups survive unchanged. A pushforward may carry an attached closed
//! form (when one is known exactly), which is then used for evaluation and
//! quadrature; [`Density::eval_branch_sum`] always walks the lazy chain.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::{PiecewisePotential, Side};
use crate::pushforward::{BranchSet, CriticalKind, Orientation};
use crate::quadrature::{self, Estimate, QuadratureConfig};
use crate::series;

/// Cells per potential piece in the cumulative-mass table.
const CELLS_PER_PIECE: usize = 16;

#[derive(Clone)]
pub struct Density(Arc<Repr>);

enum Repr {
    ClosedForm {
        potential: PiecewisePotential,
        table: OnceLock<std::result::Result<CdfTable, Error>>,
    },
    Pushforward {
        base: Density,
        branches: Arc<BranchSet>,
        closed: Option<Density>,
        geometry: OnceLock<Geometry>,
    },
}

struct Geometry {
    support: (f64, f64),
    breakpoints: Vec<f64>,
    singular: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Cell {
    piece: usize,
    origin: f64,
    s_lo: f64,
    s_hi: f64,
    before: f64,
    mass: f64,
}

struct CdfTable {
    cells: Vec<Cell>,
    total: f64,
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Repr::ClosedForm { potential, .. } => f
                .debug_struct("ClosedForm")
                .field("breakpoints", &potential.breakpoints())
                .field("log_normalizer", &potential.log_normalizer())
                .finish(),
            Repr::Pushforward { base, branches, closed, .. } => f
                .debug_struct("Pushforward")
                .field("h", &branches.map().h())
                .field("branches", &branches.branches().len())
                .field("closed", &closed.is_some())
                .field("base", base)
                .finish(),
        }
    }
}

fn unit_from_counter(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(u128::from(index) * 2);
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform variate in `(0, 1)` for particle/sample `index` under `seed`.
/// Independent of evaluation order and thread count.
pub fn counter_uniform(seed: u64, index: u64) -> f64 {
    unit_from_counter(seed, index)
}

impl Density {
    /// `exp(-V)`; `V` should be normalized.
    pub fn closed_form(potential: PiecewisePotential) -> Self {
        Density(Arc::new(Repr::ClosedForm {
            potential,
            table: OnceLock::new(),
        }))
    }

    /// Lazy `T_♯ base`.
    pub fn pushforward(base: Density, branches: Arc<BranchSet>) -> Self {
        Density(Arc::new(Repr::Pushforward {
            base,
            branches,
            closed: None,
            geometry: OnceLock::new(),
        }))
    }

    /// Attaches an exact closed form to a pushforward (or replaces the
    /// potential of a closed form).
    pub fn with_closed_form(&self, potential: PiecewisePotential) -> Self {
        match &*self.0 {
            Repr::ClosedForm { .. } => Density::closed_form(potential),
            Repr::Pushforward { base, branches, .. } => Density(Arc::new(Repr::Pushforward {
                base: base.clone(),
                branches: branches.clone(),
                closed: Some(Density::closed_form(potential)),
                geometry: OnceLock::new(),
            })),
        }
    }

    pub fn is_pushforward(&self) -> bool {
        matches!(&*self.0, Repr::Pushforward { .. })
    }

    /// The exact potential, when known.
    pub fn potential(&self) -> Option<&PiecewisePotential> {
        match &*self.0 {
            Repr::ClosedForm { potential, .. } => Some(potential),
            Repr::Pushforward { closed, .. } => closed.as_ref().and_then(|c| c.potential()),
        }
    }

    pub fn base(&self) -> Option<&Density> {
        match &*self.0 {
            Repr::ClosedForm { .. } => None,
            Repr::Pushforward { base, .. } => Some(base),
        }
    }

    pub fn branches(&self) -> Option<&Arc<BranchSet>> {
        match &*self.0 {
            Repr::ClosedForm { .. } => None,
            Repr::Pushforward { branches, .. } => Some(branches),
        }
    }

    /// Depth of the lazy pushforward chain.
    pub fn depth(&self) -> usize {
        self.base().map_or(0, |b| 1 + b.depth())
    }

    /// The representation used for evaluation and quadrature.
    fn effective(&self) -> &Density {
        match &*self.0 {
            Repr::Pushforward { closed: Some(c), .. } => c,
            _ => self,
        }
    }

    /// Density value; `+∞` exactly at critical values where a Jacobian
    /// diverges.
    pub fn eval(&self, y: f64) -> f64 {
        match &*self.effective().0 {
            Repr::ClosedForm { potential, .. } => (-potential.eval(y)).exp(),
            Repr::Pushforward { base, branches, .. } => branch_sum(base, branches, y, Density::eval),
        }
    }

    /// Value through the full lazy chain, ignoring attached closed forms.
    pub fn eval_branch_sum(&self, y: f64) -> f64 {
        match &*self.0 {
            Repr::ClosedForm { potential, .. } => (-potential.eval(y)).exp(),
            Repr::Pushforward { base, branches, .. } => branch_sum(base, branches, y, Density::eval_branch_sum),
        }
    }

    /// `ln p(y)`, accurate in the tails where `p` underflows.
    pub fn log_eval(&self, y: f64) -> f64 {
        match &*self.effective().0 {
            Repr::ClosedForm { potential, .. } => -potential.eval(y),
            Repr::Pushforward { base, branches, .. } => {
                let terms: Vec<f64> = branches
                    .preimages(y)
                    .into_iter()
                    .map(|p| {
                        let lb = base.log_eval(p.x);
                        if lb == f64::NEG_INFINITY {
                            f64::NEG_INFINITY
                        } else {
                            lb + p.jacobian.ln()
                        }
                    })
                    .collect();
                let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !top.is_finite() {
                    return top;
                }
                top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
            }
        }
    }

    /// Taylor coefficients of `ln p` at `y` from `side`, propagated exactly
    /// through every pushforward: on each monotone branch
    /// `ln p(T(x)) = ln p_base(x) - ln|T'(x)|`, re-expanded in `y` by series
    /// reversion of `T`. Where `p` vanishes the constant term is `-∞` and
    /// the rest is zero; `None` where a Jacobian diverges.
    pub fn log_jet(&self, y: f64, order: usize, side: Side) -> Option<Vec<f64>> {
        let vanishing = || {
            let mut z = vec![0.0; order + 1];
            z[0] = f64::NEG_INFINITY;
            z
        };
        match &*self.effective().0 {
            Repr::ClosedForm { potential, .. } => Some(
                potential
                    .jet(y, order, side)
                    .map_or_else(vanishing, |j| j.iter().map(|c| -c).collect()),
            ),
            Repr::Pushforward { base, branches, .. } => {
                let map = branches.map();
                let stationary: Vec<f64> = branches
                    .critical()
                    .iter()
                    .filter(|c| c.kind == CriticalKind::Stationary)
                    .map(|c| c.x)
                    .collect();
                let mut terms = Vec::new();
                for seg in branches.segments() {
                    let (lo, hi) = seg.range();
                    let covers = match side {
                        Side::Right => lo <= y && y < hi,
                        Side::Left => lo < y && y <= hi,
                    };
                    if !covers {
                        continue;
                    }
                    let end = if y == seg.t_lo {
                        Some(seg.lo)
                    } else if y == seg.t_hi {
                        Some(seg.hi)
                    } else {
                        None
                    };
                    if end.is_some_and(|e| stationary.contains(&e)) {
                        return None;
                    }
                    let x = end.unwrap_or_else(|| branches.invert(seg, y));
                    let increasing = seg.orientation == Orientation::Increasing;
                    let x_side = if increasing == (side == Side::Right) { Side::Right } else { Side::Left };
                    let lb = base.log_jet(x, order, x_side)?;
                    if lb[0] == f64::NEG_INFINITY {
                        continue;
                    }
                    let t = map.jet(x, order + 1, x_side);
                    if !(t[1] != 0.0 && t[1].is_finite()) {
                        return None;
                    }
                    let jac: Vec<f64> = series::derivative(&t).iter().map(|c| c * t[1].signum()).collect();
                    let a: Vec<f64> = lb.iter().zip(series::ln(&jac)).map(|(l, j)| l - j).collect();
                    let mut tau = t;
                    tau[0] = 0.0;
                    tau.truncate(order + 1);
                    terms.push(series::compose(&a, &series::revert(&tau)));
                }
                match terms.len() {
                    0 => Some(vanishing()),
                    1 => terms.pop(),
                    _ => Some(series::log_sum_exp(&terms)),
                }
            }
        }
    }

    fn geometry(&self) -> &Geometry {
        let Repr::Pushforward { base, branches, geometry, .. } = &*self.0 else {
            unreachable!("geometry is only cached for pushforwards")
        };
        geometry.get_or_init(|| pushforward_geometry(base, branches))
    }

    /// Interval carrying all but a negligible (`≈ e^-40` relative) mass.
    pub fn support(&self) -> (f64, f64) {
        match &*self.0 {
            Repr::ClosedForm { potential, .. } => potential.support(),
            Repr::Pushforward { closed: Some(c), .. } => c.support(),
            Repr::Pushforward { .. } => self.geometry().support,
        }
    }

    /// Points where the density may be non-smooth (including jumps).
    pub fn breakpoints(&self) -> Vec<f64> {
        match &*self.0 {
            Repr::ClosedForm { potential, .. } => potential.breakpoints().to_vec(),
            Repr::Pushforward { .. } => self.geometry().breakpoints.clone(),
        }
    }

    /// Points where the density may blow up.
    pub fn singular_points(&self) -> Vec<f64> {
        match &*self.0 {
            Repr::ClosedForm { .. } => Vec::new(),
            Repr::Pushforward { .. } => self.geometry().singular.clone(),
        }
    }

    /// `∫ f(y) p(y) dy`.
    pub fn integrate<F: Fn(f64) -> f64 + Sync>(&self, f: F, cfg: &QuadratureConfig) -> Result<Estimate> {
        self.integrate_log(|y, _| f(y), None, cfg)
    }

    /// `∫_lo^hi f(y) p(y) dy`.
    pub fn integrate_over<F: Fn(f64) -> f64 + Sync>(
        &self,
        f: F,
        lo: f64,
        hi: f64,
        cfg: &QuadratureConfig,
    ) -> Result<Estimate> {
        if !(lo < hi) {
            return Ok(Estimate::default());
        }
        self.integrate_log(|y, _| f(y), Some((lo, hi)), cfg)
    }

    /// `∫ p(y) g(y, ln p(y)) dy`, optionally restricted to `window`.
    pub fn integrate_log<G: Fn(f64, f64) -> f64>(
        &self,
        g: G,
        window: Option<(f64, f64)>,
        cfg: &QuadratureConfig,
    ) -> Result<Estimate> {
        cfg.validate()?;
        match &*self.effective().0 {
            Repr::ClosedForm { potential, .. } => potential.integrate_density(|x, v| g(x, -v), window, cfg),
            Repr::Pushforward { .. } => {
                let (mut lo, mut hi) = self.support();
                if let Some((a, b)) = window {
                    lo = lo.max(a);
                    hi = hi.min(b);
                }
                if !(lo < hi) {
                    return Ok(Estimate::default());
                }
                let singular = self.singular_points();
                let knots = quadrature::knots_within(
                    lo,
                    hi,
                    self.breakpoints().into_iter().chain(singular.iter().copied()),
                );
                let f = |y: f64| {
                    let p = self.eval(y);
                    if p == 0.0 {
                        0.0
                    } else {
                        p * g(y, p.ln())
                    }
                };
                quadrature::integrate_segments(&f, &knots, &singular, cfg)
            }
        }
    }

    fn table(&self) -> Result<&CdfTable> {
        let Repr::ClosedForm { potential, table } = &*self.0 else {
            unreachable!("tables are only built for closed forms")
        };
        table
            .get_or_init(|| build_table(potential))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `P(Y <= y)`.
    pub fn cdf(&self, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
        if y == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        if y == f64::INFINITY {
            return Ok(1.0);
        }
        let eff = self.effective();
        match &*eff.0 {
            Repr::ClosedForm { potential, .. } => {
                let table = eff.table()?;
                let piece = potential.piece_index(y);
                let (_, q) = match potential.local(piece) {
                    Some(l) => l,
                    None => {
                        // vacuum: all mass of earlier pieces
                        let before = table
                            .cells
                            .iter()
                            .filter(|c| c.piece < piece)
                            .map(|c| c.mass)
                            .sum::<f64>();
                        return Ok((before / table.total).clamp(0.0, 1.0));
                    }
                };
                let mut acc = 0.0;
                for c in &table.cells {
                    if c.piece < piece {
                        acc = c.before + c.mass;
                        continue;
                    }
                    if c.piece > piece {
                        break;
                    }
                    let s = y - c.origin;
                    if s >= c.s_hi {
                        acc = c.before + c.mass;
                        continue;
                    }
                    if s > c.s_lo {
                        let lz = potential.log_normalizer();
                        let f = |t: f64| (-(q.eval(t) + lz)).exp();
                        acc = c.before + quadrature::integrate(&f, c.s_lo, s, cfg)?.value;
                    } else {
                        acc = c.before;
                    }
                    break;
                }
                Ok((acc / table.total).clamp(0.0, 1.0))
            }
            Repr::Pushforward { base, branches, .. } => pushforward_cdf(base, branches, y, cfg),
        }
    }

    /// `y` with `cdf(y) = u`, to `|cdf(y) - u| <= 1e-10`.
    pub fn quantile(&self, u: f64, cfg: &QuadratureConfig) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level must be in (0,1), got {u}")));
        }
        let eff = self.effective();
        match &*eff.0 {
            Repr::ClosedForm { potential, .. } => {
                let table = eff.table()?;
                let target = u * table.total;
                let i = table.cells.partition_point(|c| c.before + c.mass <= target);
                let c = table.cells[i.min(table.cells.len() - 1)];
                let (_, q) = potential.local(c.piece).expect("cells skip vacuum");
                let lz = potential.log_normalizer();
                let dens = |t: f64| (-(q.eval(t) + lz)).exp();
                let want = target - c.before;
                let g = |s: f64| -> Result<f64> { Ok(quadrature::integrate(&dens, c.s_lo, s, cfg)?.value - want) };
                let tol = 1e-13 * table.total;
                let s = newton_bracketed(g, dens, c.s_lo, c.s_hi, -want, c.mass - want, tol)?;
                Ok(c.origin + s)
            }
            Repr::Pushforward { .. } => {
                let (lo, hi) = self.support();
                let g = |y: f64| -> Result<f64> { Ok(self.cdf(y, cfg)? - u) };
                let (glo, ghi) = (g(lo)?, g(hi)?);
                newton_bracketed(g, |y| self.eval(y), lo, hi, glo, ghi, 1e-12)
            }
        }
    }

    /// `n` inverse-CDF samples in index order; sample `i` depends only on
    /// `(seed, i)`.
    pub fn sample(&self, n: usize, seed: u64, cfg: &QuadratureConfig) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        if let Repr::ClosedForm { .. } = &*self.effective().0 {
            self.effective().table()?;
        }
        (0..n as u64)
            .into_par_iter()
            .map(|i| self.quantile(unit_from_counter(seed, i), cfg))
            .collect()
    }

    /// CSV with header `y,p,is_singular`.
    pub fn eval_csv(&self, ys: &[f64]) -> String {
        let singular = self.singular_points();
        let mut out = String::from("y,p,is_singular\n");
        for &y in ys {
            let p = self.eval(y);
            let s = p.is_infinite() || singular.contains(&y);
            out.push_str(&format!("{},{},{}\n", y, fmt_value(p), u8::from(s)));
        }
        out
    }

    /// CSV with header `y,F`.
    pub fn cdf_csv(&self, ys: &[f64], cfg: &QuadratureConfig) -> Result<String> {
        let vals: Vec<f64> = ys.par_iter().map(|&y| self.cdf(y, cfg)).collect::<Result<_>>()?;
        let mut out = String::from("y,F\n");
        for (y, f) in ys.iter().zip(vals) {
            out.push_str(&format!("{y},{f}\n"));
        }
        Ok(out)
    }
}

/// Formats a density value for CSV; `inf` marks the sentinel.
pub fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

fn branch_sum(base: &Density, branches: &BranchSet, y: f64, f: fn(&Density, f64) -> f64) -> f64 {
    let mut total = 0.0;
    for p in branches.preimages(y) {
        let v = f(base, p.x);
        if v == 0.0 {
            continue;
        }
        total += v * p.jacobian;
    }
    total
}

fn pushforward_geometry(base: &Density, branches: &BranchSet) -> Geometry {
    let (a, b) = base.support();
    let map = branches.map();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut take = |v: f64| {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    };
    for s in branches.segments() {
        let l = s.lo.max(a);
        let r = s.hi.min(b);
        if !(l < r) {
            continue;
        }
        take(if l == s.lo { s.t_lo } else { map.eval(l) });
        take(if r == s.hi { s.t_hi } else { map.eval_side(r, Side::Left) });
    }
    for c in branches.critical() {
        if c.x > a && c.x < b {
            take(c.value);
            take(c.value_right);
        }
    }
    let mut pts = branches.image_points(&base.breakpoints());
    for s in branches.segments() {
        for v in [s.t_lo, s.t_hi] {
            if v.is_finite() {
                pts.push(v);
            }
        }
    }
    pts.retain(|&v| v > lo && v < hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut singular = branches.singular_values();
    singular.extend(branches.image_points(&base.singular_points()));
    // kept even beyond the support: the blow-up is still there, just tiny
    singular.retain(|v| v.is_finite());
    singular.sort_by(f64::total_cmp);
    singular.dedup();
    Geometry {
        support: (lo, hi),
        breakpoints: pts,
        singular,
    }
}

/// Base mass of `{x : T(x) <= y}`, summed segment by segment.
fn pushforward_cdf(base: &Density, branches: &BranchSet, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let mut total = 0.0;
    for seg in branches.segments() {
        let (fl, fr) = (seg.t_lo, seg.t_hi);
        let interval = match seg.orientation {
            Orientation::Increasing => {
                if y < fl {
                    None
                } else if y >= fr {
                    Some((seg.lo, seg.hi))
                } else {
                    Some((seg.lo, branches.invert(seg, y)))
                }
            }
            Orientation::Decreasing => {
                if y < fr {
                    None
                } else if y >= fl {
                    Some((seg.lo, seg.hi))
                } else {
                    Some((branches.invert(seg, y), seg.hi))
                }
            }
        };
        if let Some((a, b)) = interval {
            if a < b {
                total += base.cdf(b, cfg)? - base.cdf(a, cfg)?;
            }
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

fn build_table(potential: &PiecewisePotential) -> Result<CdfTable> {
    let cfg = QuadratureConfig::default();
    let lz = potential.log_normalizer();
    let mut cells = Vec::new();
    let mut before = 0.0;
    for piece in 0..potential.pieces().len() {
        let Some((origin, a, b)) = potential.local_range(piece) else { continue };
        if !(a < b) {
            continue;
        }
        let (_, q) = potential.local(piece).unwrap();
        let f = |t: f64| (-(q.eval(t) + lz)).exp();
        for k in 0..CELLS_PER_PIECE {
            let s_lo = a + (b - a) * k as f64 / CELLS_PER_PIECE as f64;
            let s_hi = if k + 1 == CELLS_PER_PIECE {
                b
            } else {
                a + (b - a) * (k + 1) as f64 / CELLS_PER_PIECE as f64
            };
            let mass = quadrature::integrate(&f, s_lo, s_hi, &cfg)?.value;
            cells.push(Cell {
                piece,
                origin,
                s_lo,
                s_hi,
                before,
                mass,
            });
            before += mass;
        }
    }
    if !(before > 0.0) {
        return Err(Error::InvalidArgument("density carries no mass".into()));
    }
    Ok(CdfTable { cells, total: before })
}

/// Root of an increasing `g` on `[lo, hi]` (with known end values) by
/// Newton steps on `g' = dg`, falling back to bisection.
fn newton_bracketed(
    g: impl Fn(f64) -> Result<f64>,
    dg: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    g_lo: f64,
    g_hi: f64,
    tol: f64,
) -> Result<f64> {
    if g_lo >= 0.0 {
        return Ok(lo);
    }
    if g_hi <= 0.0 {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo, hi);
    let (ga, gb) = (g_lo, g_hi);
    // secant start
    let mut x = a + (b - a) * (-ga / (gb - ga));
    if !(x > a && x < b) {
        x = 0.5 * (a + b);
    }
    for _ in 0..200 {
        let gx = g(x)?;
        if gx.abs() <= tol {
            return Ok(x);
        }
        if gx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        if b - a <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
            return Ok(x);
        }
        let d = dg(x);
        let newton = x - gx / d;
        x = if d.is_finite() && d > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pushforward::{PiecewiseMap, PiecewiseVelocity, VelocityField};
    use crate::scenarios;

    fn gauss() -> Density {
        Density::closed_form(scenarios::example1_initial())
    }

    fn ex1_p1(h: f64) -> Density {
        let map = PiecewiseMap::new(VelocityField::Piecewise(PiecewiseVelocity::polynomial(vec![0.0, 0.0, 0.0, 1.0])), h).unwrap();
        Density::pushforward(gauss(), Arc::new(map.decompose().unwrap()))
    }

    fn gaussian_potential(mu: f64, sigma: f64) -> PiecewisePotential {
        let s2 = sigma * sigma;
        PiecewisePotential::polynomial(vec![mu * mu / (2.0 * s2), -mu / s2, 0.5 / s2])
            .unwrap()
            .with_log_normalizer((sigma * (2.0 * std::f64::consts::PI).sqrt()).ln())
    }

    #[test]
    fn log_jets_through_nested_score_steps() {
        use crate::pushforward::ScoreVelocity;
        // toward N(0, 1), a Gaussian stays Gaussian: σ ← σ(1 - h + h/σ²),
        // μ ← μ(1 - h)
        let target = gaussian_potential(0.0, 1.0);
        let (mut mu, mut sigma, h) = (0.7, 1.6, 0.3);
        let mut d = Density::closed_form(gaussian_potential(mu, sigma));
        for _ in 0..3 {
            let v = ScoreVelocity::new(target.clone(), d.clone(), Vec::new());
            let map = PiecewiseMap::new(VelocityField::Score(v), h).unwrap();
            d = Density::pushforward(d, Arc::new(map.decompose().unwrap()));
            sigma *= 1.0 - h + h / (sigma * sigma);
            mu *= 1.0 - h;
        }
        assert_eq!(d.depth(), 3);
        let s2 = sigma * sigma;
        for y in [-1.3, 0.2, 2.5] {
            let exact = [
                -(y - mu) * (y - mu) / (2.0 * s2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln(),
                -(y - mu) / s2,
                -0.5 / s2,
                0.0,
            ];
            for side in [Side::Left, Side::Right] {
                let jet = d.log_jet(y, 3, side).unwrap();
                for (k, (a, b)) in jet.iter().zip(exact).enumerate() {
                    assert!((a - b).abs() < 1e-10, "y={y} order {k}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn log_jet_matches_differences_on_a_nonlinear_map() {
        let d = ex1_p1(0.01);
        for y in [-2.0, 0.3, 0.8, 3.0] {
            let jet = d.log_jet(y, 2, Side::Right).unwrap();
            let e = 1e-4;
            let f = |t: f64| d.log_eval(t);
            assert!((jet[0] - f(y)).abs() < 1e-13);
            assert!((jet[1] - (f(y + e) - f(y - e)) / (2.0 * e)).abs() < 1e-7, "{y}");
            let second = (f(y + e) - 2.0 * f(y) + f(y - e)) / (e * e);
            assert!((2.0 * jet[2] - second).abs() < 1e-5, "{y}");
        }
        // the fold value is approached by a branch with T' -> 0 from below
        // only
        let y_star = d
            .singular_points()
            .into_iter()
            .min_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs()))
            .unwrap();
        assert!((y_star - scenarios::example1_fold_value(0.01)).abs() < 1e-12);
        assert!(d.log_jet(y_star, 1, Side::Left).is_none());
        assert!(d.log_jet(y_star, 1, Side::Right).unwrap()[0].is_finite());
    }

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn gaussian_moments_and_cdf() {
        let cfg = QuadratureConfig::default();
        let d = gauss();
        assert!((d.integrate(|_| 1.0, &cfg).unwrap().value - 1.0).abs() < 1e-10);
        assert!((d.integrate(|x| x * x, &cfg).unwrap().value - 1.0).abs() < 1e-10);
        assert!((d.cdf(0.0, &cfg).unwrap() - 0.5).abs() < 1e-12);
        assert!((d.quantile(0.5, &cfg).unwrap()).abs() < 1e-10);
        let q = d.quantile(0.841_344_746_068_542_9, &cfg).unwrap();
        assert!((q - 1.0).abs() < 1e-9, "{q}");
    }

    #[test]
    fn identity_pushforward_matches_base() {
        let id = Density::pushforward(gauss(), Arc::new(PiecewiseMap::identity().decompose().unwrap()));
        for y in [-3.0, -0.2, 0.0, 1.7] {
            assert_eq!(id.eval(y), gauss().eval(y));
        }
    }

    #[test]
    fn example1_branch_sum_at_zero() {
        let h = 0.01;
        let p1 = ex1_p1(h);
        let expect = phi(0.0) + phi(1.0 / h.sqrt());
        assert!((p1.eval(0.0) - expect).abs() < 1e-15);
        // single branch above y*: x - 0.01 x^3 = 4
        let x = crate::roots::solve_cubic(-0.01, 0.0, 1.0, -4.0)[0];
        let single = phi(x) / (1.0 - 0.03 * x * x).abs();
        assert!((p1.eval(4.0) - single).abs() < 1e-13 * single, "{} vs {}", p1.eval(4.0), single);
        let ystar = p1.branches().unwrap().critical_values()[1];
        assert!((ystar - scenarios::example1_fold_value(h)).abs() < 1e-14);
        assert!(p1.eval(ystar).is_infinite());
    }

    #[test]
    fn example1_mass_is_conserved_through_blow_up() {
        let cfg = QuadratureConfig::default();
        for h in [1e-3, 1e-2, 1e-1] {
            let m = ex1_p1(h).integrate(|_| 1.0, &cfg).unwrap();
            assert!((m.value - 1.0).abs() < 1e-6, "h={h}: {m:?}");
        }
    }

    #[test]
    fn pushforward_cdf_is_monotone_and_complete() {
        let cfg = QuadratureConfig::default();
        let p1 = ex1_p1(0.1);
        let (lo, hi) = p1.support();
        let mut last = 0.0;
        for i in 0..=200 {
            let y = lo + (hi - lo) * i as f64 / 200.0;
            let f = p1.cdf(y, &cfg).unwrap();
            assert!(f >= last - 1e-14);
            last = f;
        }
        assert!(p1.cdf(hi + 1.0, &cfg).unwrap() > 1.0 - 1e-12);
        assert!(p1.cdf(lo - 1.0, &cfg).unwrap() < 1e-12);
        // cdf agrees with quadrature of the density
        let y = 0.7;
        let direct = p1.integrate_over(|_| 1.0, lo, y, &cfg).unwrap().value;
        assert!((p1.cdf(y, &cfg).unwrap() - direct).abs() < 1e-8);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let cfg = QuadratureConfig::default();
        let rho0 = Density::closed_form(scenarios::example2_initial());
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let y = rho0.quantile(u, &cfg).unwrap();
            assert!((rho0.cdf(y, &cfg).unwrap() - u).abs() < 1e-10, "u={u}");
        }
    }

    #[test]
    fn example2_closed_form_cdf() {
        let cfg = QuadratureConfig::default();
        let rho0 = Density::closed_form(scenarios::example2_initial());
        let d0 = scenarios::example2_d0();
        // right tail: ∫_1^∞ exp(-(x - 1/2)) / D0 = e^{-1/2} / D0
        let expect = 1.0 - (-0.5f64).exp() / d0;
        let got = rho0.cdf(1.0, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn sampling_is_deterministic_and_gaussian() {
        let cfg = QuadratureConfig::default();
        let d = gauss();
        let a = d.sample(100_000, 7, &cfg).unwrap();
        let b = d.sample(100_000, 7, &cfg).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.02, "{mean} {var}");
        let c = d.sample(10, 8, &cfg).unwrap();
        assert_ne!(a[..10], c[..]);
    }

    #[test]
    fn csv_marks_singular_points() {
        let p1 = ex1_p1(0.1);
        let ystar = p1.singular_points()[1];
        let csv = p1.eval_csv(&[0.0, ystar]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "y,p,is_singular");
        assert!(lines[1].ends_with(",0"));
        assert!(lines[2].ends_with("inf,1"));
    }
}
