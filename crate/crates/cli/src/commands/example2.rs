use clap::Args;
use serde_json::json;

use wgflow::diagnostics;
use wgflow::flow::{self, FlowState, KLEnergy, TrajectoryRecord};
use wgflow::{scenarios, QuadratureConfig, Side};

use crate::output::{linspace, num, OutDir, Reports};
use crate::{check_step, CliError, Context, Outcome};

#[derive(Args, Debug)]
pub struct Opts {
    /// `harmonic` for h_k = 1/(k+2), a single step size, or a comma
    /// separated list with at least k-max entries (default 0.1).
    #[arg(long)]
    schedule: Option<String>,
    /// Number of steps (default 50).
    #[arg(long)]
    k_max: Option<usize>,
    /// Steps whose densities are written (default 0,1,2,5,10,k-max).
    #[arg(long, value_delimiter = ',')]
    density_k: Vec<usize>,
}

const DEFAULT_GRID: usize = 2001;
const CROSS_CHECK_STEPS: usize = 10;
const CROSS_CHECK_TOL: f64 = 1e-10;
const KL_FLOOR: f64 = 0.019;

pub fn parse_schedule(spec: &str, k_max: usize) -> Result<Vec<f64>, CliError> {
    let spec = spec.trim();
    let steps: Vec<f64> = if spec == "harmonic" {
        (0..k_max).map(|k| 1.0 / (k as f64 + 2.0)).collect()
    } else {
        let values = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("schedule `{spec}`: {e}")))?;
        match values.len() {
            1 => vec![values[0]; k_max],
            n if n >= k_max => values[..k_max].to_vec(),
            n => return Err(CliError::Config(format!("schedule lists {n} steps but k-max is {k_max}"))),
        }
    };
    steps.into_iter().map(check_step).collect()
}

pub fn run(ctx: &Context, opts: Opts) -> Result<Outcome, CliError> {
    let k_max = opts.k_max.or(ctx.file.u64("k_max")?.map(|k| k as usize)).unwrap_or(50);
    if k_max < 1 {
        return Err(CliError::Config("k-max must be at least 1".into()));
    }
    let spec = opts.schedule.or(ctx.file.string("schedule")?).unwrap_or_else(|| "0.1".into());
    let schedule = parse_schedule(&spec, k_max)?;
    let mut density_k = if opts.density_k.is_empty() {
        ctx.file
            .usize_list("density_k")?
            .unwrap_or_else(|| vec![0, 1, 2, 5, 10, k_max])
    } else {
        opts.density_k
    };
    density_k.retain(|&k| k <= k_max);
    density_k.sort_unstable();
    density_k.dedup();

    let out = OutDir::create(&ctx.out)?;
    let cfg = QuadratureConfig::default();
    let energy = KLEnergy::new(scenarios::example2_target())?;
    let mut reports = Reports::default();

    let coeffs = flow::ex2_recurrence(&schedule)?;
    out.write_csv(
        "coefficients.csv",
        &["k", "h", "a", "b", "c", "beta"],
        coeffs.iter().enumerate().map(|(k, c)| {
            let h = if k == 0 { String::new() } else { num(schedule[k - 1]) };
            vec![k.to_string(), h, num(c.a), num(c.b), num(c.c), num(c.beta)]
        }),
    )?;
    let d0 = scenarios::example2_d0();
    let seed_ok = coeffs[0].a == 1.0 && coeffs[0].c == 1.0 && coeffs[0].b == 0.5 - d0.ln();
    reports.add(
        "example2_seed_coefficients",
        json!({ "a0": coeffs[0].a, "b0": coeffs[0].b, "c0": coeffs[0].c, "ln_d0": d0.ln() }),
        (coeffs[0].b - (0.5 - d0.ln())).abs(),
        0.0,
        seed_ok,
    );

    // The recurrence is defined for every k, so the engine keeps going past
    // the first jump; those states are recorded as non-conforming.
    let mut states = vec![FlowState::new(scenarios::example2_initial())];
    for &h in &schedule {
        let next = flow::fe_step(states.last().unwrap(), &energy, h, true)?;
        states.push(next);
    }

    let xs = linspace(-10.0, 10.0, ctx.grid_or(DEFAULT_GRID));
    let mut worst = 0.0f64;
    let mut convention_points = 0;
    for (state, c) in states.iter().zip(&coeffs).take(CROSS_CHECK_STEPS + 1) {
        let breaks = state.current.breakpoints();
        for &x in &xs {
            let expected = flow::ex2_density(c, x);
            let mut gap = (state.current.eval_branch_sum(x) - expected).abs();
            // at a jump the point value is a convention; either one-sided
            // limit is an equally valid representative
            if gap > CROSS_CHECK_TOL && breaks.contains(&x) {
                let limit_gap = [Side::Left, Side::Right]
                    .into_iter()
                    .map(|side| (diagnostics::one_sided_limit(&state.current, x, side) - expected).abs())
                    .fold(f64::INFINITY, f64::min);
                if limit_gap <= CROSS_CHECK_TOL {
                    convention_points += 1;
                }
                gap = gap.min(limit_gap);
            }
            worst = worst.max(gap);
        }
    }
    println!(
        "engine vs recurrence, k <= {CROSS_CHECK_STEPS}: max gap {worst:.3e} ({convention_points} grid points sit on a jump)"
    );
    let cross_ok = reports.add(
        "example2_cross_validation",
        json!({ "k_max": CROSS_CHECK_STEPS.min(k_max), "grid_points": xs.len() }),
        worst,
        CROSS_CHECK_TOL,
        worst <= CROSS_CHECK_TOL,
    );

    for &k in &density_k {
        out.write(&format!("density_k{k}.csv"), states[k].current.eval_csv(&xs).as_bytes())?;
    }

    let closed_form = scenarios::example2_certificate();
    let mut rows = Vec::with_capacity(states.len());
    let mut records = Vec::with_capacity(states.len());
    let (mut min_kl, mut chain_ok, mut cert_gap) = (f64::INFINITY, true, 0.0f64);
    for (state, c) in states.iter().zip(&coeffs) {
        let kl = energy.value(&state.current, &cfg)?;
        let cert = diagnostics::pinsker_certificate(&state.current, energy.target_density(), (-1.0, 1.0), &cfg)?;
        min_kl = min_kl.min(kl);
        chain_ok &= cert <= kl + 1e-8;
        cert_gap = cert_gap.max((cert - closed_form).abs());
        rows.push(vec![state.k.to_string(), num(kl), num(cert)]);
        records.push(TrajectoryRecord::from_state(state, Some(*c), Some(kl)));
    }
    out.write_csv("energy_trace.csv", &["k", "kl", "certificate"], rows)?;
    out.write_jsonl("trajectory.jsonl", &records)?;

    let floor_ok = min_kl > KL_FLOOR;
    println!(
        "{} KL > {KL_FLOOR} for all k <= {k_max} (minimum {min_kl:.6})",
        if floor_ok { "PASS" } else { "FAIL" }
    );
    reports.add("example2_kl_floor", json!({ "schedule": spec, "k_max": k_max }), min_kl, KL_FLOOR, floor_ok);
    reports.add("example2_pinsker_chain", json!({ "interval": [-1.0, 1.0] }), closed_form, 1e-8, chain_ok);
    reports.add(
        "example2_certificate_closed_form",
        json!({ "closed_form": closed_form }),
        cert_gap,
        1e-10,
        cert_gap <= 1e-10,
    );
    out.write("example2.gp", gnuplot(&density_k).as_bytes())?;
    reports.save(&out)?;
    if !cross_ok {
        return Err(CliError::Config(format!(
            "engine and recurrence disagree by {worst:.3e} (tolerance {CROSS_CHECK_TOL:.0e})"
        )));
    }
    Ok(Outcome::from_pass(reports.all_pass()))
}

fn gnuplot(ks: &[usize]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n");
    s.push_str("set output 'energy_trace.png'\nset xlabel 'k'\nset ylabel 'KL'\nset logscale y\n");
    s.push_str("plot 'energy_trace.csv' using 1:2 with linespoints, '' using 1:3 with lines title 'certificate', 0.019 title '0.019' dashtype 2\n");
    s.push_str("unset logscale y\nset output 'densities.png'\nset xlabel 'x'\nset ylabel 'p_k(x)'\n");
    let curves: Vec<String> = ks
        .iter()
        .map(|k| format!("'density_k{k}.csv' using 1:2 with lines title 'k={k}'"))
        .collect();
    if !curves.is_empty() {
        s.push_str(&format!("plot {}\n", curves.join(", ")));
    }
    s
}
