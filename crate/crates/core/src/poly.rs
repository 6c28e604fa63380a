//! Dense univariate polynomials over any [`Float`] scalar.
//!
//! Coefficients are stored in ascending order of power. Trailing zero
//! coefficients are kept as given (so serialized forms round-trip), and
//! [`Polynomial::degree`] ignores them.

use num_traits::Float;

use crate::roots::{solve_bracketed, solve_cubic, solve_quadratic};

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial<T> {
    coeffs: Vec<T>,
}

impl<T: Float> Polynomial<T> {
    pub fn new(coeffs: Vec<T>) -> Self {
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: T) -> Self {
        Self { coeffs: vec![c] }
    }

    /// `c0 + c1 x`
    pub fn linear(c0: T, c1: T) -> Self {
        Self {
            coeffs: vec![c0, c1],
        }
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// Degree ignoring trailing zeros; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|c| *c != T::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.degree().is_none()
    }

    pub fn coeff(&self, k: usize) -> T {
        self.coeffs.get(k).copied().unwrap_or_else(T::zero)
    }

    pub fn leading_coefficient(&self) -> T {
        self.degree().map_or_else(T::zero, |d| self.coeffs[d])
    }

    /// Horner evaluation.
    pub fn eval(&self, x: T) -> T {
        self.coeffs
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * x + c)
    }

    /// `Σ |c_k| |x|^k`, the running-error scale for [`Polynomial::eval`].
    pub fn eval_abs(&self, x: T) -> T {
        let ax = x.abs();
        self.coeffs
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * ax + c.abs())
    }

    pub fn derivative(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| c * T::from(k).unwrap())
            .collect();
        Self { coeffs }
    }

    pub fn nth_derivative(&self, n: usize) -> Self {
        (0..n).fold(self.clone(), |p, _| p.derivative())
    }

    /// Value of the `order`-th derivative at `x` without materializing it.
    pub fn eval_derivative(&self, x: T, order: usize) -> T {
        let mut acc = T::zero();
        for k in (order..self.coeffs.len()).rev() {
            // k! / (k - order)!
            let falling = (k - order + 1..=k).fold(T::one(), |f, j| f * T::from(j).unwrap());
            acc = acc * x + self.coeffs[k] * falling;
        }
        acc
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self {
            coeffs: (0..n).map(|k| self.coeff(k) + other.coeff(k)).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Self::zero();
        }
        let mut out = vec![T::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] = out[i + j] + a * b;
            }
        }
        Self { coeffs: out }
    }

    /// `x ↦ p(a x + b)`.
    pub fn compose_affine(&self, a: T, b: T) -> Self {
        let inner = Self::linear(b, a);
        self.coeffs
            .iter()
            .rev()
            .fold(Self::zero(), |acc, &c| acc.mul(&inner).add(&Self::constant(c)))
    }

    /// Drops trailing zero coefficients.
    pub fn trimmed(&self) -> Self {
        let n = self.degree().map_or(0, |d| d + 1);
        Self {
            coeffs: self.coeffs[..n].to_vec(),
        }
    }

    /// Limit of the polynomial at `+∞` (`dir > 0`) or `-∞` (`dir < 0`):
    /// `±∞` when non-constant, the constant otherwise.
    pub fn limit_at_infinity(&self, dir: T) -> T {
        match self.degree() {
            None => T::zero(),
            Some(0) => self.coeffs[0],
            Some(d) => {
                let lead = self.coeffs[d];
                let sign = if d % 2 == 1 && dir < T::zero() {
                    -lead.signum()
                } else {
                    lead.signum()
                };
                sign * T::infinity()
            }
        }
    }

    /// Cauchy bound: every real root lies in `[-B, B]`.
    pub fn root_bound(&self) -> T {
        match self.degree() {
            None | Some(0) => T::one(),
            Some(d) => {
                let lead = self.coeffs[d].abs();
                let m = self.coeffs[..d]
                    .iter()
                    .fold(T::zero(), |m, c| m.max(c.abs() / lead));
                T::one() + m
            }
        }
    }

    /// All distinct real roots in the closed interval `[lo, hi]`, sorted.
    ///
    /// Either bound may be infinite. Roots of even multiplicity (no sign
    /// change) are found through the critical points of the polynomial.
    pub fn real_roots(&self, lo: T, hi: T) -> Vec<T> {
        let bound = self.root_bound();
        let lo_f = if lo.is_finite() { lo } else { -bound };
        let hi_f = if hi.is_finite() { hi } else { bound };
        if lo_f > hi_f {
            return Vec::new();
        }
        let mut roots = self.roots_rec(lo_f, hi_f);
        roots.retain(|r| *r >= lo && *r <= hi);
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        roots.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * T::one().max(a.abs()) * T::from(16).unwrap());
        roots
    }

    fn roots_rec(&self, lo: T, hi: T) -> Vec<T> {
        let p = self.trimmed();
        let in_range = |r: &T| *r >= lo && *r <= hi;
        match p.degree() {
            None | Some(0) => Vec::new(),
            Some(1) => {
                let r = -p.coeffs[0] / p.coeffs[1];
                if in_range(&r) {
                    vec![r]
                } else {
                    Vec::new()
                }
            }
            Some(2) => solve_quadratic(p.coeffs[2], p.coeffs[1], p.coeffs[0])
                .into_iter()
                .filter(in_range)
                .collect(),
            Some(3) => solve_cubic(p.coeffs[3], p.coeffs[2], p.coeffs[1], p.coeffs[0])
                .into_iter()
                .filter(in_range)
                .collect(),
            Some(_) => {
                let dp = p.derivative();
                let crit = dp.roots_rec(lo, hi);
                let mut knots = Vec::with_capacity(crit.len() + 2);
                knots.push(lo);
                knots.extend(crit.iter().copied().filter(|c| *c > lo && *c < hi));
                knots.push(hi);
                let tiny = T::epsilon() * T::from(64).unwrap();
                let mut out = Vec::new();
                for w in knots.windows(2) {
                    let (u, v) = (w[0], w[1]);
                    let (fu, fv) = (p.eval(u), p.eval(v));
                    if fu == T::zero() {
                        out.push(u);
                    }
                    if fu * fv < T::zero() {
                        let f = |x: T| (p.eval(x), dp.eval(x));
                        out.push(solve_bracketed(f, u, v, None));
                    }
                }
                if p.eval(hi) == T::zero() {
                    out.push(hi);
                }
                // touching roots: extrema that graze zero
                for c in crit {
                    if p.eval(c).abs() <= tiny * p.eval_abs(c) {
                        out.push(c);
                    }
                }
                out
            }
        }
    }
}

impl<T: Float> Default for Polynomial<T> {
    fn default() -> Self {
        Self::zero()
    }
}
