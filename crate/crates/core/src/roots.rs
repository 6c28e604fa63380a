//! Scalar root finders: closed-form quadratic/cubic and a safeguarded
//! Newton–bisection hybrid for bracketed roots.

use num_traits::{Float, FloatConst};

fn c<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

/// A point strictly beyond `x` in direction `dir` (±1), even when `x` is so
/// large that `x ± 1` rounds back to `x`.
pub(crate) fn step_beyond(x: f64, dir: f64) -> f64 {
    x + dir * x.abs().max(1.0)
}

/// Real roots of `a x² + b x + c`, ascending. A double root is reported once.
pub fn solve_quadratic<T: Float>(a: T, b: T, c0: T) -> Vec<T> {
    if a == T::zero() {
        if b == T::zero() {
            return Vec::new();
        }
        return vec![-c0 / b];
    }
    let disc = b * b - c::<T>(4.0) * a * c0;
    let scale = b * b + (c::<T>(4.0) * a * c0).abs();
    if disc < T::zero() {
        if -disc <= c::<T>(8.0) * T::epsilon() * scale {
            return vec![-b / (c::<T>(2.0) * a)];
        }
        return Vec::new();
    }
    if disc == T::zero() {
        return vec![-b / (c::<T>(2.0) * a)];
    }
    // stable form: avoid cancellation between -b and sqrt(disc)
    let sq = disc.sqrt();
    let q = -(b + b.signum() * sq) / c::<T>(2.0);
    let (mut r1, mut r2) = if q == T::zero() {
        let r = (-c0 / a).sqrt();
        (-r, r)
    } else {
        (q / a, c0 / q)
    };
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    vec![r1, r2]
}

/// Real roots of `a x³ + b x² + c x + d`, ascending, distinct.
///
/// Trigonometric form when all three roots are real, Cardano otherwise,
/// followed by Newton polishing on the original coefficients.
pub fn solve_cubic<T: Float>(a: T, b: T, c0: T, d: T) -> Vec<T> {
    if a == T::zero() {
        return solve_quadratic(b, c0, d);
    }
    let three = c::<T>(3.0);
    let two = c::<T>(2.0);
    let (bn, cn, dn) = (b / a, c0 / a, d / a);
    let shift = bn / three;
    // depressed: t^3 + p t + q
    let p = cn - bn * bn / three;
    let q = two * bn * bn * bn / c::<T>(27.0) - bn * cn / three + dn;
    let disc = (q / two) * (q / two) + (p / three) * (p / three) * (p / three);
    let scale = (q / two) * (q / two) + ((p / three) * (p / three) * (p / three)).abs();
    let tol = c::<T>(64.0) * T::epsilon() * scale;

    let mut ts: Vec<T> = if p == T::zero() && q == T::zero() {
        vec![T::zero()]
    } else if disc.abs() <= tol && p != T::zero() {
        // a double root
        vec![three * q / p, -three * q / (two * p)]
    } else if disc > T::zero() {
        let sq = disc.sqrt();
        let u = (-q / two - q.signum() * sq).cbrt();
        let t = if u == T::zero() { T::zero() } else { u - p / (three * u) };
        vec![t]
    } else {
        let r = two * (-p / three).sqrt();
        let arg = (three * q / (two * p) * (-three / p).sqrt()).max(-T::one()).min(T::one());
        let phi = arg.acos() / three;
        let tau = two * pi::<T>() / three;
        (0..3)
            .map(|k| r * (phi - tau * T::from(k).unwrap()).cos())
            .collect()
    };

    let f = |x: T| ((a * x + b) * x + c0) * x + d;
    let df = |x: T| (three * a * x + two * b) * x + c0;
    for t in ts.iter_mut() {
        let mut x = *t - shift;
        for _ in 0..3 {
            let (fx, dfx) = (f(x), df(x));
            if dfx == T::zero() || fx == T::zero() {
                break;
            }
            let nx = x - fx / dfx;
            if f(nx).abs() < fx.abs() {
                x = nx;
            } else {
                break;
            }
        }
        *t = x;
    }
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ts.dedup_by(|x, y| (*x - *y).abs() <= c::<T>(16.0) * T::epsilon() * T::one().max(x.abs()));
    ts
}

fn pi<T: Float>() -> T {
    T::from(<f64 as FloatConst>::PI()).unwrap()
}

/// Root of `f` inside a sign-changing bracket `[lo, hi]`.
///
/// `f` returns `(value, derivative)`. Newton steps are taken when they stay
/// inside the current bracket and shrink it fast enough; otherwise the
/// bracket is bisected. Stops when the bracket is narrower than a few ulps
/// of the iterate or an exact zero is hit.
pub fn solve_bracketed<T: Float, F: Fn(T) -> (T, T)>(f: F, lo: T, hi: T, guess: Option<T>) -> T {
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a).0, f(b).0);
    if fa == T::zero() {
        return a;
    }
    if fb == T::zero() {
        return b;
    }
    debug_assert!(fa * fb < T::zero() || fa.is_nan() || fb.is_nan());
    let a_neg = fa < T::zero();
    let half = c::<T>(0.5);
    let mut x = match guess {
        Some(g) if g > a && g < b => g,
        _ => (a + b) * half,
    };
    let mut best = (T::infinity(), x);
    let mut last_width = b - a;
    for _ in 0..400 {
        let (fx, dfx) = f(x);
        if fx.abs() < best.0 {
            best = (fx.abs(), x);
        }
        if fx == T::zero() {
            return x;
        }
        if (fx < T::zero()) == a_neg {
            a = x;
        } else {
            b = x;
        }
        let width = b - a;
        let xtol = c::<T>(2.0) * T::epsilon() * T::one().max(x.abs());
        if width <= xtol {
            break;
        }
        let newton = x - fx / dfx;
        let shrinking = width <= half * last_width;
        x = if dfx != T::zero() && newton.is_finite() && newton > a && newton < b && shrinking {
            newton
        } else {
            a + (b - a) * half
        };
        last_width = width;
        if x <= a || x >= b {
            break;
        }
    }
    best.1
}

/// Plain bisection on a sign change of `f` in `[lo, hi]`, to absolute width `xtol`.
pub fn bisect<T: Float, F: Fn(T) -> T>(f: F, lo: T, hi: T, xtol: T) -> T {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let half = c::<T>(0.5);
    for _ in 0..400 {
        let m = a + (b - a) * half;
        if b - a <= xtol || m <= a || m >= b {
            return m;
        }
        let fm = f(m);
        if fm == T::zero() {
            return m;
        }
        if (fm < T::zero()) == (fa < T::zero()) {
            a = m;
        } else {
            b = m;
        }
    }
    a + (b - a) * half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_cases() {
        assert_eq!(solve_quadratic(1.0, -3.0, 2.0), vec![1.0, 2.0]);
        assert_eq!(solve_quadratic(1.0, 2.0, 1.0), vec![-1.0]);
        assert!(solve_quadratic(1.0, 0.0, 1.0).is_empty());
        assert_eq!(solve_quadratic(0.0, 2.0, -1.0), vec![0.5]);
        // small root without cancellation
        let r = solve_quadratic(1.0, -1e8, 1.0);
        assert!((r[0] - 1e-8).abs() < 1e-22);
    }

    #[test]
    fn cubic_three_real_roots_of_fe_map() {
        // x - h x^3 = y with h = 0.01, y = 0: roots 0, ±10
        let h = 0.01;
        let roots = solve_cubic(-h, 0.0, 1.0, 0.0);
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([-10.0, 0.0, 10.0]) {
            assert!((r - e).abs() < 1e-12, "{r} vs {e}");
        }
    }

    #[test]
    fn cubic_single_real_root() {
        // x - 0.01 x^3 = 4 has one real root (4 > y* ≈ 3.849)
        let roots = solve_cubic(-0.01, 0.0, 1.0, -4.0);
        assert_eq!(roots.len(), 1);
        let x = roots[0];
        assert!((x - 0.01 * x * x * x - 4.0).abs() < 1e-12);
        assert!(x < -11.0);
    }

    #[test]
    fn cubic_double_root() {
        // (x - 1)^2 (x + 2) = x^3 - 3x + 2
        let roots = solve_cubic(1.0, 0.0, -3.0, 2.0);
        assert_eq!(roots.len(), 2, "{roots:?}");
        assert!((roots[0] + 2.0).abs() < 1e-12);
        assert!((roots[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn cubic_triple_root() {
        let roots = solve_cubic(1.0, -3.0, 3.0, -1.0);
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn bracketed_newton_converges() {
        let f = |x: f64| (x * x * x - 2.0, 3.0 * x * x);
        let r = solve_bracketed(f, 0.0, 5.0, None);
        assert!((r - 2f64.cbrt()).abs() < 1e-15);
        let g = |x: f64| x.exp() - 3.0;
        assert!((bisect(g, 0.0, 3.0, 1e-14) - 3f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn generic_over_f32() {
        let roots = solve_cubic(1.0f32, 0.0, -1.0, 0.0);
        assert_eq!(roots.len(), 3);
        assert!((roots[2] - 1.0).abs() < 1e-6);
    }
}
