//! Particle picture of the same scheme: `x ← x - h·w(x)` applied to an
//! ensemble drawn from the initial density.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::density::Density;
use crate::error::{Error, Result};
use crate::pushforward::PiecewiseMap;
use crate::quadrature::QuadratureConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    sorted: Vec<f64>,
    seed: u64,
    steps_taken: usize,
}

impl ParticleEnsemble {
    pub fn from_positions(positions: Vec<f64>, seed: u64, steps_taken: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("an ensemble needs at least one particle".into()));
        }
        if positions.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("particle position is NaN".into()));
        }
        let mut sorted = positions.clone();
        sorted.par_sort_unstable_by(f64::total_cmp);
        Ok(Self {
            positions,
            sorted,
            seed,
            steps_taken,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Fraction of particles `≤ y`.
    pub fn empirical_cdf(&self, y: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= y) as f64 / self.n() as f64
    }

    /// Fraction of particles `< y`.
    fn empirical_cdf_left(&self, y: f64) -> f64 {
        self.sorted.partition_point(|&x| x < y) as f64 / self.n() as f64
    }

    /// `index,position` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.n() * 24 + 16);
        s.push_str("index,position\n");
        for (i, x) in self.positions.iter().enumerate() {
            let _ = writeln!(s, "{i},{x:e}");
        }
        s
    }

    /// Equal-width histogram over `[lo, hi)`, as
    /// `bin_lo,bin_hi,count,density_estimate`.
    pub fn histogram(&self, lo: f64, hi: f64, bins: usize) -> Result<Vec<(f64, f64, usize, f64)>> {
        if !(lo < hi) || bins == 0 {
            return Err(Error::InvalidArgument("histogram needs lo < hi and at least one bin".into()));
        }
        let width = (hi - lo) / bins as f64;
        let n = self.n() as f64;
        Ok((0..bins)
            .map(|i| {
                let a = lo + width * i as f64;
                let b = if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 };
                let count = self.sorted.partition_point(|&x| x < b) - self.sorted.partition_point(|&x| x < a);
                (a, b, count, count as f64 / (n * (b - a)))
            })
            .collect())
    }

    pub fn histogram_csv(&self, lo: f64, hi: f64, bins: usize) -> Result<String> {
        let mut s = String::from("bin_lo,bin_hi,count,density_estimate\n");
        for (a, b, c, d) in self.histogram(lo, hi, bins)? {
            let _ = writeln!(s, "{a:e},{b:e},{c},{d:e}");
        }
        Ok(s)
    }
}

/// Draws `n` particles from `d`; particle `i` depends only on `(seed, i)`.
pub fn init_ensemble(d: &Density, n: usize, seed: u64, cfg: &QuadratureConfig) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument("an ensemble needs at least one particle".into()));
    }
    ParticleEnsemble::from_positions(d.sample(n, seed, cfg)?, seed, 0)
}

/// Moves every particle by the map `x - h·w(x)`. Particles sitting exactly
/// on a velocity break use the mean of the one-sided values.
pub fn particle_step(p: &ParticleEnsemble, map: &PiecewiseMap) -> Result<ParticleEnsemble> {
    let h = map.h();
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidArgument(format!("step size must lie in (0, 1), got {h}")));
    }
    let positions: Vec<f64> = p.positions.par_iter().map(|&x| map.eval_mean(x)).collect();
    ParticleEnsemble::from_positions(positions, p.seed, p.steps_taken + 1)
}

/// Kolmogorov–Smirnov distance between the ensemble and `d`, checking both
/// one-sided empirical values at every particle.
pub fn ks_distance(p: &ParticleEnsemble, d: &Density, cfg: &QuadratureConfig) -> Result<f64> {
    let mut ys = p.sorted.clone();
    ys.dedup();
    ys.par_iter()
        .map(|&y| {
            let f = d.cdf(y, cfg)?;
            Ok((p.empirical_cdf(y) - f).abs().max((p.empirical_cdf_left(y) - f).abs()))
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}
