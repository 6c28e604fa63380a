use clap::Args;
use serde_json::json;

use wgflow::flow::{self, FlowState, KLEnergy};
use wgflow::particles::{self, ParticleEnsemble};
use wgflow::{scenarios, Error, QuadratureConfig};

use crate::output::{OutDir, Reports};
use crate::{check_step, CliError, Context, Outcome};

#[derive(Args, Debug)]
pub struct Opts {
    /// Which counter-example to run (1 or 2; default 1).
    #[arg(long)]
    example: Option<u8>,
    /// Step size (default 0.01).
    #[arg(long = "h")]
    h: Option<f64>,
    /// Number of particles (default 100000).
    #[arg(long)]
    n: Option<usize>,
    /// Number of steps (default 1).
    #[arg(long)]
    steps: Option<usize>,
    /// KS threshold after at least one step (default 0.01).
    #[arg(long)]
    ks_threshold: Option<f64>,
    /// Histogram bins (default 200).
    #[arg(long)]
    bins: Option<usize>,
}

pub fn run(ctx: &Context, opts: Opts) -> Result<Outcome, CliError> {
    let f = &ctx.file;
    let example = opts.example.or(f.u64("example")?.map(|e| e as u8)).unwrap_or(1);
    let h = check_step(opts.h.or(f.f64("h")?).unwrap_or(0.01))?;
    let n = opts.n.or(f.u64("n")?.map(|v| v as usize)).unwrap_or(100_000);
    let steps = opts.steps.or(f.u64("steps")?.map(|v| v as usize)).unwrap_or(1);
    let threshold = opts.ks_threshold.or(f.f64("ks_threshold")?).unwrap_or(0.01);
    let bins = opts.bins.or(f.u64("bins")?.map(|v| v as usize)).unwrap_or(200);
    if n < 10 {
        return Err(CliError::Config("particles needs n >= 10".into()));
    }
    let (initial, target) = match example {
        1 => (scenarios::example1_initial(), scenarios::example1_target()),
        2 => (scenarios::example2_initial(), scenarios::example2_target()),
        other => return Err(CliError::Config(format!("unknown example {other}"))),
    };
    let out = OutDir::create(&ctx.out)?;
    let cfg = QuadratureConfig::default();
    let energy = KLEnergy::new(target)?;
    let mut reports = Reports::default();

    let mut state = FlowState::new(initial);
    let mut ens = particles::init_ensemble(&state.current, n, ctx.seed, &cfg)?;
    let zero_threshold = 1.95 / (n as f64).sqrt();
    record(&out, &mut reports, &ens, &state, zero_threshold, bins, &cfg)?;
    for _ in 0..steps {
        let next = match flow::fe_step(&state, &energy, h, ctx.force) {
            Ok(s) => s,
            Err(Error::RegularityHalt { reason, location }) => {
                println!(
                    "halted after step {}: {reason} at {location}; rerun with --force to continue (non-conforming)",
                    state.k
                );
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let map = next.current.branches().expect("a step produces a pushforward").map();
        ens = particles::particle_step(&ens, map)?;
        state = next;
        record(&out, &mut reports, &ens, &state, threshold, bins, &cfg)?;
    }
    reports.save(&out)?;
    Ok(Outcome::from_pass(reports.all_pass()))
}

fn record(
    out: &OutDir,
    reports: &mut Reports,
    ens: &ParticleEnsemble,
    state: &FlowState,
    threshold: f64,
    bins: usize,
    cfg: &QuadratureConfig,
) -> Result<(), CliError> {
    let k = state.k;
    out.write(&format!("ensemble_step{k}.csv"), ens.to_csv().as_bytes())?;
    let (lo, hi) = ens
        .positions()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    out.write(&format!("histogram_step{k}.csv"), ens.histogram_csv(lo, hi, bins)?.as_bytes())?;
    let ks = particles::ks_distance(ens, &state.current, cfg)?;
    println!("step {k}: KS distance {ks:.6} (threshold {threshold:.6})");
    reports.add(
        "particles_ks",
        json!({ "step": k, "n": ens.n(), "seed": ens.seed(), "conforming": state.conforming }),
        ks,
        threshold,
        ks < threshold,
    );
    Ok(())
}
