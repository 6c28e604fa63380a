use clap::Args;
use serde::Serialize;
use serde_json::json;

use wgflow::diagnostics::{self, JunctionProbe};
use wgflow::flow::{self, FlowState, KLEnergy, SmoothnessLedger};
use wgflow::pushforward::InjectivityReport;
use wgflow::{scenarios, Error, PiecewiseMap, Smoothness};

use crate::output::{OutDir, Reports};
use crate::{check_step, CliError, Context, Outcome};

#[derive(Args, Debug)]
pub struct Opts {
    /// The start potential is of class C^(m+2) at its junction (m >= 2; default 2).
    #[arg(long)]
    m: Option<u32>,
    /// Step size (default 0.25); must satisfy h < 1/(M + M0) at every step.
    #[arg(long = "h")]
    h: Option<f64>,
}

/// Probe window and tolerance for one-sided derivative comparisons.
const PROBE_ORDER: usize = 4;
const PROBE_DELTA: f64 = 0.05;
const PROBE_REL_TOL: f64 = 1e-4;
/// Jets are exact up to rounding.
const JET_REL_TOL: f64 = 1e-8;

#[derive(Serialize)]
struct LedgerStep {
    k: usize,
    class: Smoothness,
    hessian_sup_target: f64,
    hessian_inf_potential: f64,
    injectivity: InjectivityReport,
    junction: f64,
    probe: JunctionProbe,
    probe_agrees: bool,
    exact: JunctionProbe,
    exact_agrees: bool,
}

#[derive(Serialize)]
struct LedgerFile {
    m: u32,
    h: f64,
    start_class: Smoothness,
    steps: Vec<LedgerStep>,
    halted: bool,
}

pub fn run(ctx: &Context, opts: Opts) -> Result<Outcome, CliError> {
    let m = opts.m.or(ctx.file.u64("m")?.map(|v| v as u32)).unwrap_or(2);
    if m < 2 {
        return Err(CliError::Config("generic-loss needs m >= 2".into()));
    }
    let h = check_step(opts.h.or(ctx.file.f64("h")?).unwrap_or(0.25))?;
    let out = OutDir::create(&ctx.out)?;
    let energy = KLEnergy::new(scenarios::synthetic_target())?;
    let v0 = scenarios::synthetic_initial(m)?;
    let (_, hess_sup) = energy.target().hessian_bounds();
    let mut hess_inf = v0.hessian_bounds().0;
    let mut ledger = SmoothnessLedger::new(v0.smoothness());
    let start_class = ledger.class;
    println!("start: {start_class} at the junction x = 0");
    let mut state = FlowState::new(v0);
    let mut junction = 0.0;
    let mut steps = Vec::new();
    let mut reports = Reports::default();

    while !ledger.halted {
        let velocity = state.velocity(&energy, false)?;
        let report = flow::certify_step(&velocity, h, energy.target(), hess_inf);
        let next_ledger = match ledger.step(h, &report) {
            Ok(l) => l,
            Err(e @ Error::InvalidStep { .. }) => {
                eprintln!(
                    "step {} refused: h = {h} but the bound is {:.6}{}",
                    state.k + 1,
                    report.bound,
                    report.witness.map(|x| format!(", T' <= 0 near x = {x}")).unwrap_or_default()
                );
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        junction = PiecewiseMap::new(velocity, h)?.eval(junction);
        state = flow::fe_step(&state, &energy, h, ctx.force)?;
        ledger = next_ledger;
        let d = state.current.clone();
        let probe = diagnostics::junction_probe(|y| -d.log_eval(y), junction, PROBE_ORDER, PROBE_DELTA, PROBE_REL_TOL)?;
        // the probe sees jumps up to order PROBE_ORDER, i.e. classes below it
        let expected = match ledger.class {
            Smoothness::Finite(c) if c < PROBE_ORDER as i32 => Some(c),
            _ => None,
        };
        let agrees = probe.class_estimate == expected;
        let exact = diagnostics::junction_jets(&d, junction, PROBE_ORDER, JET_REL_TOL)?;
        let exact_agrees = exact.class_estimate == expected;
        println!(
            "step {}: ledger {}, probe finds discontinuous orders {:?} (exact jets: {:?})",
            state.k, ledger.class, probe.discontinuous_orders, exact.discontinuous_orders
        );
        reports.add(
            "generic_loss_probe",
            json!({ "m": m, "h": h, "step": state.k, "ledger_class": ledger.class, "junction": junction }),
            probe.class_estimate.map_or(f64::INFINITY, f64::from),
            0.0,
            agrees,
        );
        reports.add(
            "generic_loss_exact_jets",
            json!({ "m": m, "h": h, "step": state.k, "ledger_class": ledger.class, "junction": junction }),
            exact.class_estimate.map_or(f64::INFINITY, f64::from),
            JET_REL_TOL,
            exact_agrees,
        );
        steps.push(LedgerStep {
            k: state.k,
            class: ledger.class,
            hessian_sup_target: hess_sup,
            hessian_inf_potential: hess_inf,
            injectivity: report,
            junction,
            probe,
            probe_agrees: agrees,
            exact,
            exact_agrees,
        });
        hess_inf = flow::hessian_lower_bound(&state.current);
    }
    println!("ledger halts after {} steps: the gradient is no longer classical", steps.len());
    out.write_json(
        "ledger.json",
        &LedgerFile {
            m,
            h,
            start_class,
            steps,
            halted: ledger.halted,
        },
    )?;
    reports.save(&out)?;
    Ok(Outcome::from_pass(reports.all_pass()))
}
