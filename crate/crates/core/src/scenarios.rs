//! The fixed setups the lab reproduces.

use libm::erf;

use crate::error::Result;
use crate::potentials::{PiecewisePotential, PotentialPiece};

const INF: f64 = f64::INFINITY;

/// `ln √(2π)`.
pub fn ln_sqrt_2pi() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard Gaussian potential `x²/2 + ln √(2π)`.
pub fn standard_gaussian() -> PiecewisePotential {
    PiecewisePotential::polynomial(vec![0.0, 0.0, 0.5])
        .expect("valid polynomial")
        .with_log_normalizer(ln_sqrt_2pi())
}

/// Example 1 start: the standard Gaussian.
pub fn example1_initial() -> PiecewisePotential {
    standard_gaussian()
}

/// Example 1 target `U = x²/2 + x⁴/4 + C0`.
pub fn example1_target() -> PiecewisePotential {
    PiecewisePotential::polynomial(vec![0.0, 0.0, 0.5, 0.0, 0.25])
        .and_then(PiecewisePotential::normalized)
        .expect("quartic potential is integrable")
}

/// Fold of `x - h x³`: `(2/3)·√(1/(3h))`.
pub fn example1_fold_value(h: f64) -> f64 {
    2.0 / 3.0 * (1.0 / (3.0 * h)).sqrt()
}

/// Critical point `√(1/(3h))` of `x - h x³`.
pub fn example1_fold_point(h: f64) -> f64 {
    (1.0 / (3.0 * h)).sqrt()
}

/// Example 2 start without its normalizer: `x²/2` on `(-1, 1)`,
/// `|x| - 1/2` outside.
pub fn example2_initial_unnormalized() -> PiecewisePotential {
    PiecewisePotential::new(vec![
        PotentialPiece::with_abs(-INF, -1.0, vec![-0.5], 1.0),
        PotentialPiece::polynomial(-1.0, 1.0, vec![0.0, 0.0, 0.5]),
        PotentialPiece::with_abs(1.0, INF, vec![-0.5], 1.0),
    ])
    .expect("valid tiling")
}

/// `D0 = √(2π)·erf(1/√2) + 2/√e`.
pub fn example2_d0() -> f64 {
    (2.0 * std::f64::consts::PI).sqrt() * erf(std::f64::consts::FRAC_1_SQRT_2) + 2.0 / std::f64::consts::E.sqrt()
}

/// Example 2 start, normalized by `ln D0`.
pub fn example2_initial() -> PiecewisePotential {
    example2_initial_unnormalized().with_log_normalizer(example2_d0().ln())
}

/// Example 2 target: the standard Gaussian.
pub fn example2_target() -> PiecewisePotential {
    standard_gaussian()
}

/// Mass that the Example 2 start puts on `(-1, 1)`.
pub fn example2_center_mass() -> f64 {
    (2.0 * std::f64::consts::PI).sqrt() * erf(std::f64::consts::FRAC_1_SQRT_2) / example2_d0()
}

/// Closed-form Pinsker certificate `4π·erf(1/√2)²·(1/√(2π) - 1/D0)²`.
pub fn example2_certificate() -> f64 {
    let e = erf(std::f64::consts::FRAC_1_SQRT_2);
    let gap = 1.0 / (2.0 * std::f64::consts::PI).sqrt() - 1.0 / example2_d0();
    4.0 * std::f64::consts::PI * e * e * gap * gap
}

/// Synthetic start `x²/2 + x₊^(m+3)`: smooth except for one junction at 0
/// of class exactly `C^(m+2)`.
pub fn synthetic_initial(m: u32) -> Result<PiecewisePotential> {
    let mut right = vec![0.0; m as usize + 4];
    right[2] = 0.5;
    right[m as usize + 3] = 1.0;
    PiecewisePotential::new(vec![
        PotentialPiece::polynomial(-INF, 0.0, vec![0.0, 0.0, 0.5]),
        PotentialPiece::polynomial(0.0, INF, right),
    ])?
    .normalized()
}

/// Target paired with [`synthetic_initial`].
pub fn synthetic_target() -> PiecewisePotential {
    standard_gaussian()
}
