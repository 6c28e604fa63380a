//! Worked values for the two counter-examples, each checked against an
//! independent computation (bisection, closed forms, or sampling).

use std::sync::Arc;

use wgflow::diagnostics;
use wgflow::flow::{self, FlowState, KLEnergy, Regularity};
use wgflow::particles::{self, ParticleEnsemble};
use wgflow::pushforward::{injectivity_condition, PiecewiseVelocity, VelocityField};
use wgflow::scenarios;
use wgflow::{Density, PiecewiseMap, QuadratureConfig, Side};

fn cfg() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn cubic_map(h: f64) -> PiecewiseMap {
    PiecewiseMap::new(VelocityField::Piecewise(PiecewiseVelocity::polynomial(vec![0.0, 0.0, 0.0, 1.0])), h).unwrap()
}

fn gauss(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn potential_values_and_gradients() {
    let v0 = scenarios::example2_initial_unnormalized();
    assert_eq!(v0.eval(0.0), 0.0);
    assert_eq!(v0.eval(2.0), 1.5);
    assert_eq!(v0.grad(0.5).unwrap(), 0.5);
    let u = scenarios::example1_target();
    assert!((u.grad(2.0).unwrap() - 10.0).abs() < 1e-12);
    // 30-digit reference for ln ∫ exp(-x²/2 - x⁴/4)
    assert!((u.log_normalizer() - 0.660_235_389_855_817).abs() < 1e-12, "{}", u.log_normalizer());
}

#[test]
fn example1_density_after_one_step() {
    let h = 0.01;
    let rho1 = Density::pushforward(
        Density::closed_form(scenarios::example1_initial()),
        Arc::new(cubic_map(h).decompose().unwrap()),
    );
    // beyond y*: a single pre-image on the left branch
    let y = 4.0;
    let xc = scenarios::example1_fold_point(h);
    let x = bisect(|x| x - h * x * x * x - y, -20.0 * xc, -xc);
    let expected = gauss(x) / (1.0 - 3.0 * h * x * x).abs();
    assert!((rho1.eval(y) - expected).abs() <= 1e-13 * expected, "{} vs {expected}", rho1.eval(y));
    // at zero: pre-images {0, ±1/√h} with Jacobians {1, 1/2, 1/2}
    let expected0 = gauss(0.0) + gauss(1.0 / h.sqrt());
    assert!((rho1.eval(0.0) - expected0).abs() <= 1e-14);
}

#[test]
fn three_preimages_below_the_fold() {
    let h = 0.03;
    let branches = cubic_map(h).decompose().unwrap();
    let xc = scenarios::example1_fold_point(h);
    assert!((xc - 3.333_333_333_333_333).abs() < 1e-12);
    let y_star = scenarios::example1_fold_value(h);
    for y in [0.1, 0.5 * y_star, 0.99 * y_star] {
        let xs: Vec<f64> = branches.preimages(y).iter().map(|p| p.x).collect();
        assert_eq!(xs.len(), 3);
        assert!(xs[0] < -xc && xs[1] > -xc && xs[1] < xc && xs[2] > xc, "{xs:?}");
    }
    assert_eq!(branches.preimages(1.01 * y_star).len(), 1);
}

#[test]
fn pushforward_cdf_at_the_fold_matches_sampling() {
    let h = 0.01;
    let map = cubic_map(h);
    let rho0 = Density::closed_form(scenarios::example1_initial());
    let rho1 = Density::pushforward(rho0.clone(), Arc::new(map.decompose().unwrap()));
    let y_star = scenarios::example1_fold_value(h);
    let n = 2_000_000;
    let xs = rho0.sample(n, 5, &cfg()).unwrap();
    let frac = xs.iter().filter(|&&x| map.eval(x) <= y_star).count() as f64 / n as f64;
    let p = rho1.cdf(y_star, &cfg()).unwrap();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((frac - p).abs() <= 3.0 * se, "{frac} vs {p}");
}

#[test]
fn quantile_inverts_cdf_on_example2_start() {
    let d = Density::closed_form(scenarios::example2_initial());
    for i in 1..100 {
        let u = i as f64 / 100.0;
        let x = d.quantile(u, &cfg()).unwrap();
        assert!((d.cdf(x, &cfg()).unwrap() - u).abs() <= 1e-8);
    }
    let tail = (-0.5f64).exp() / scenarios::example2_d0();
    assert!((d.cdf(1.0, &cfg()).unwrap() - (1.0 - tail)).abs() <= 1e-10);
}

#[test]
fn gaussian_samples_have_the_right_moments() {
    let d = Density::closed_form(scenarios::standard_gaussian());
    let xs = d.sample(100_000, 3, &cfg()).unwrap();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 0.02 && (var - 1.0).abs() <= 0.02, "{mean} {var}");
}

#[test]
fn example2_first_map_and_jumps() {
    let energy = KLEnergy::new(scenarios::example2_target()).unwrap();
    let s0 = FlowState::new(scenarios::example2_initial());
    assert!(s0.regularity.is_in_domain());
    let h = 0.5;
    let map = PiecewiseMap::new(s0.velocity(&energy, false).unwrap(), h).unwrap();
    for x in [1.0, 1.5, 4.0] {
        assert!((map.eval(x) - ((1.0 - h) * x + h)).abs() < 1e-15);
    }
    assert!(map.decompose().unwrap().is_injective());
    let s1 = flow::fe_step(&s0, &energy, h, false).unwrap();
    let mut jumps = s1.jump_locations.clone();
    jumps.sort_by(f64::total_cmp);
    assert_eq!(jumps, vec![-1.0, 1.0]);
    assert!(matches!(s1.regularity, Regularity::OutOfDomain { .. }));
}

#[test]
fn recurrence_against_two_generic_steps() {
    let h = 0.5;
    let coeffs = flow::ex2_recurrence(&[h, h]).unwrap();
    let energy = KLEnergy::new(scenarios::example2_target()).unwrap();
    let s1 = flow::fe_step(&FlowState::new(scenarios::example2_initial()), &energy, h, true).unwrap();
    let s2 = flow::fe_step(&s1, &energy, h, true).unwrap();
    let closed = (-coeffs[2].a * 2.0 + coeffs[2].b).exp();
    assert!((flow::ex2_density(&coeffs[2], 2.0) - closed).abs() <= 1e-12 * closed);
    assert!((s2.current.eval_branch_sum(2.0) - closed).abs() <= 1e-10);
    assert!(!s2.conforming);
    assert_eq!(flow::ex2_density(&coeffs[2], 0.0), 1.0 / scenarios::example2_d0());
}

#[test]
fn recurrence_monotonicity() {
    let schedules: [Vec<f64>; 3] = [
        vec![0.1; 60],
        vec![0.7; 60],
        (0..60).map(|k| 1.0 / (k as f64 + 2.0)).collect(),
    ];
    for s in &schedules {
        let c = flow::ex2_recurrence(s).unwrap();
        assert!(c.windows(2).all(|w| w[1].a > w[0].a));
        assert!(c.iter().all(|k| k.c >= 1.0));
    }
    let c = flow::ex2_recurrence(&[0.1; 60]).unwrap();
    assert!(c[2..].windows(2).all(|w| w[1].c > w[0].c));
}

#[test]
fn example2_energies_and_total_variation() {
    let energy = KLEnergy::new(scenarios::example2_target()).unwrap();
    let mut s = FlowState::new(scenarios::example2_initial());
    // 30-digit reference
    let kl0 = energy.value(&s.current, &cfg()).unwrap();
    assert!((kl0 - 0.260_699_601_355_050).abs() < 1e-9, "{kl0}");
    let tv = diagnostics::tv_lower_bound(&s.current, energy.target_density(), (-1.0, 1.0), &cfg()).unwrap();
    assert!((tv - 0.097_509_151_000_855_7).abs() < 1e-12, "{tv}");
    let mut states = vec![s.clone()];
    for _ in 0..50 {
        s = flow::fe_step(&s, &energy, 0.1, true).unwrap();
        states.push(s.clone());
    }
    let trace = diagnostics::energy_trace(&states, &energy, &cfg()).unwrap();
    for k in [0, 5, 50] {
        assert!(trace[k].1 > 0.019);
    }
    assert!(trace.iter().all(|(_, kl)| *kl > 0.019));
}

/// Each tail `e^{β - a(|x| - c)}` on `|x| >= c` has mass `e^β/a`, and its
/// contribution to the KL divergence against N(0, 1) integrates exactly.
fn example2_kl_closed_form(k: &flow::Ex2Coefficients) -> f64 {
    let ln_norm = (2.0 * std::f64::consts::PI).sqrt().ln();
    let center = scenarios::example2_center_mass() * (ln_norm - scenarios::example2_d0().ln());
    let (a, c) = (k.a, k.c);
    let second_moment = c * c + 2.0 * c / a + 2.0 / (a * a);
    center + 2.0 * (k.beta - a.ln()).exp() * (k.beta - 1.0 + ln_norm + 0.5 * second_moment)
}

#[test]
fn example2_mass_and_energy_over_many_steps() {
    let energy = KLEnergy::new(scenarios::example2_target()).unwrap();
    for h in [0.5, 0.1] {
        let coeffs = flow::ex2_recurrence(&[h; 100]).unwrap();
        let mut s = FlowState::new(scenarios::example2_initial());
        for (k, c) in coeffs.iter().enumerate() {
            if k > 0 {
                s = flow::fe_step(&s, &energy, h, true).unwrap();
            }
            let mass = s.current.integrate(|_| 1.0, &cfg()).unwrap().value;
            assert!((mass - 1.0).abs() < 1e-9, "h={h} k={k}: mass {mass}");
            let kl = energy.value(&s.current, &cfg()).unwrap();
            let expected = example2_kl_closed_form(c);
            assert!((kl - expected).abs() <= 1e-9 * expected, "h={h} k={k}: {kl} vs {expected}");
        }
    }
}

#[test]
fn stationary_trace_is_zero() {
    let energy = KLEnergy::new(scenarios::example1_target()).unwrap();
    let s0 = FlowState::new(scenarios::example1_target());
    let s1 = flow::fe_step(&s0, &energy, 0.2, false).unwrap();
    let trace = diagnostics::energy_trace(&[s0, s1], &energy, &cfg()).unwrap();
    assert!(trace.iter().all(|(_, kl)| kl.abs() < 1e-12), "{trace:?}");
}

#[test]
fn example1_injectivity_witness_folds() {
    let energy = KLEnergy::new(scenarios::example1_target()).unwrap();
    let w = FlowState::new(scenarios::example1_initial()).velocity(&energy, false).unwrap();
    let h = 0.05;
    let r = injectivity_condition(&w, h, energy.target().hessian_bounds().1, 0.0);
    assert!(!r.holds);
    let x = r.witness.unwrap();
    assert!(cubic_map(h).derivative(x) <= 0.0, "witness {x}");
}

#[test]
fn example1_exponent_is_reported() {
    let h = 0.1;
    let energy = KLEnergy::new(scenarios::example1_target()).unwrap();
    let s1 = flow::fe_step(&FlowState::new(scenarios::example1_initial()), &energy, h, false).unwrap();
    let y = scenarios::example1_fold_value(h);
    let y_star = s1
        .current
        .singular_points()
        .into_iter()
        .find(|s| (s - y).abs() < 1e-12)
        .unwrap();
    let fit = diagnostics::measure_singularity_exponent(|t| s1.current.eval(t), y_star, Side::Left).unwrap();
    println!("exponent at y*: {:.4} (1/3 and 1/2 are the candidate values)", fit.alpha);
    assert!(fit.alpha > 0.0 && fit.alpha < 1.0);
}

#[test]
fn particles_on_example2_start() {
    let d = Density::closed_form(scenarios::example2_initial());
    let n = 100_000;
    let e = particles::init_ensemble(&d, n, 21, &cfg()).unwrap();
    let inside = e.positions().iter().filter(|x| x.abs() < 1.0).count() as f64 / n as f64;
    assert!((inside - scenarios::example2_center_mass()).abs() <= 3.0 / (n as f64).sqrt());
    let other = particles::init_ensemble(&d, n, 22, &cfg()).unwrap();
    assert_ne!(e.positions(), other.positions());
    assert!(particles::ks_distance(&e, &d, &cfg()).unwrap() < 1.95 / (n as f64).sqrt());
}

#[test]
fn colliding_particles() {
    let h = 0.01;
    let map = cubic_map(h);
    let branches = map.decompose().unwrap();
    let xc = scenarios::example1_fold_point(h);
    for delta in [1e-1, 1e-2, 1e-3] {
        let x1 = xc - delta;
        let y = map.eval(x1);
        let partner = branches
            .preimages(y)
            .into_iter()
            .map(|p| p.x)
            .filter(|&x| x > xc)
            .next()
            .unwrap();
        let e = ParticleEnsemble::from_positions(vec![x1, partner], 0, 0).unwrap();
        let moved = particles::particle_step(&e, &map).unwrap();
        let gap = (moved.positions()[0] - moved.positions()[1]).abs();
        assert!(gap <= 1e-12 * y.abs().max(1.0), "{gap}");
        assert!((partner - x1).abs() > delta);
        // both land O(δ²) below the fold value: T'' = -6h·x_c there
        let drop = scenarios::example1_fold_value(h) - y;
        assert!(drop > 0.0 && drop <= 3.0 * h * xc * delta * delta * 1.01, "{drop}");
    }
}

#[test]
fn median_of_an_odd_ensemble() {
    let n = 101;
    let xs: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64).collect();
    let e = ParticleEnsemble::from_positions(xs, 0, 0).unwrap();
    assert!((e.empirical_cdf(50.0) - 0.5).abs() <= 1.0 / n as f64);
}
