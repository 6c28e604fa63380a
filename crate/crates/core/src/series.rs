//! Truncated Taylor series ("jets"): `a[k] = f^(k)(x0) / k!`.
//!
//! All operations truncate to the length of their first argument unless a
//! length is given explicitly.

/// Taylor coefficients of a polynomial `q(s)` re-expanded at `s = s0`, up to
/// `order`.
pub fn from_poly(q: &crate::Poly, s0: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    let mut d = q.clone();
    let mut fact = 1.0;
    for k in 0..=order {
        if k > 0 {
            fact *= k as f64;
            d = d.derivative();
        }
        out.push(d.eval(s0) / fact);
    }
    out
}

pub fn derivative(a: &[f64]) -> Vec<f64> {
    a.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

pub fn mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, ai) in a.iter().enumerate().take(len) {
        for (j, bj) in b.iter().enumerate().take(len - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// `ln a`; requires `a[0] > 0`.
pub fn ln(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut b = vec![0.0; n];
    if n == 0 {
        return b;
    }
    b[0] = a[0].ln();
    // a·b' = a'
    for k in 1..n {
        let mut s = k as f64 * a[k];
        for j in 1..k {
            s -= j as f64 * b[j] * a[k - j];
        }
        b[k] = s / (k as f64 * a[0]);
    }
    b
}

pub fn exp(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut e = vec![0.0; n];
    if n == 0 {
        return e;
    }
    e[0] = a[0].exp();
    // e' = a'·e
    for k in 1..n {
        let s: f64 = (1..=k).map(|j| j as f64 * a[j] * e[k - j]).sum();
        e[k] = s / k as f64;
    }
    e
}

/// `a(s(u))` for an inner series with `s[0] = 0`, truncated to `a.len()`.
pub fn compose(a: &[f64], s: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    for &c in a.iter().rev() {
        out = mul(&out, s, n);
        out[0] += c;
    }
    out
}

/// The inverse series: given `t` with `t[0] = 0` and `t[1] != 0`, returns
/// `σ` with `t(σ(u)) = u` to the same length.
pub fn revert(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut sigma = vec![0.0; n];
    if n < 2 {
        return sigma;
    }
    sigma[1] = 1.0 / t[1];
    for k in 2..n {
        let composed = compose(&t[..=k], &sigma[..=k]);
        sigma[k] = -composed[k] / t[1];
    }
    sigma
}

/// `ln Σ exp(a_i)` for series of equal length, stable when the constant
/// terms differ by many orders of magnitude.
pub fn log_sum_exp(terms: &[Vec<f64>]) -> Vec<f64> {
    let top = terms.iter().map(|t| t[0]).fold(f64::NEG_INFINITY, f64::max);
    let n = terms[0].len();
    let mut sum = vec![0.0; n];
    for t in terms {
        let mut shifted = t.clone();
        shifted[0] -= top;
        for (s, e) in sum.iter_mut().zip(exp(&shifted)) {
            *s += e;
        }
    }
    let mut out = ln(&sum);
    out[0] += top;
    out
}
