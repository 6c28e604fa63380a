use clap::Args;
use serde_json::json;

use wgflow::diagnostics;
use wgflow::flow::{self, FlowState, KLEnergy};
use wgflow::{scenarios, QuadratureConfig, Side};

use crate::output::{linspace, num, OutDir, Reports};
use crate::{check_step, CliError, Context, Outcome};

#[derive(Args, Debug)]
pub struct Opts {
    /// Step sizes, comma separated (default 0.1).
    #[arg(long = "h", value_delimiter = ',')]
    h: Vec<f64>,
}

const DEFAULT_GRID: usize = 4001;

pub fn run(ctx: &Context, opts: Opts) -> Result<Outcome, CliError> {
    let mut hs = if opts.h.is_empty() {
        ctx.file.f64_list("h")?.unwrap_or_else(|| vec![0.1])
    } else {
        opts.h
    };
    for h in &mut hs {
        *h = check_step(*h)?;
    }
    let n = ctx.grid_or(DEFAULT_GRID);
    let out = OutDir::create(&ctx.out)?;
    let cfg = QuadratureConfig::default();
    let energy = KLEnergy::new(scenarios::example1_target())?;
    let mut reports = Reports::default();

    // T over a grid wide enough for the smallest step
    let h_min = hs.iter().copied().fold(f64::INFINITY, f64::min);
    let span = 1.5 / h_min.sqrt();
    let xs = linspace(-span, span, n);
    let mut header = vec!["x".to_string()];
    header.extend(hs.iter().map(|h| format!("T_h{h}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write_csv(
        "map_curves.csv",
        &header,
        xs.iter().map(|&x| {
            let mut row = vec![num(x)];
            row.extend(hs.iter().map(|h| num(x - h * x * x * x)));
            row
        }),
    )?;

    let mut verdicts = Vec::new();
    for &h in &hs {
        let state = flow::fe_step(&FlowState::new(scenarios::example1_initial()), &energy, h, false)?;
        let d = &state.current;
        let tag = format!("h{h}");
        if let Some(b) = d.branches() {
            out.write(&format!("branches_{tag}.json"), b.to_json()?.as_bytes())?;
        }

        let span = 1.5 / h.sqrt();
        let mut ys = linspace(-span, span, n);
        let singular: Vec<f64> = d.singular_points().into_iter().filter(|y| y.abs() <= span).collect();
        ys.extend(singular.iter().copied());
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        out.write(&format!("density_{tag}.csv"), d.eval_csv(&ys).as_bytes())?;

        let y_star = scenarios::example1_fold_value(h);
        let jumps = diagnostics::scan_jumps(d, &singular);
        out.write_json(&format!("jumps_{tag}.json"), &jumps)?;
        let cell = 2.0 * span / (n - 1) as f64;
        for target in [y_star, -y_star] {
            let nearest = singular
                .iter()
                .copied()
                .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()));
            let gap = nearest.map_or(f64::INFINITY, |y| (y - target).abs());
            let blow_up = jumps.iter().any(|r| {
                Some(r.location) == nearest && r.classification == diagnostics::Classification::BlowUp
            });
            reports.add(
                "example1_blowup_location",
                json!({ "h": h, "expected": target, "found": nearest }),
                gap,
                cell,
                gap <= cell && blow_up,
            );
        }

        let mass = d.integrate(|_| 1.0, &cfg)?.value;
        println!("h={h}: mass of p1 = {mass:.12}");
        reports.add("example1_mass", json!({ "h": h }), (mass - 1.0).abs(), 1e-6, (mass - 1.0).abs() <= 1e-6);
        let out_of_domain = !state.regularity.is_in_domain();
        println!("h={h}: regularity {:?}", state.regularity);
        reports.add(
            "example1_regularity_verdict",
            json!({ "h": h, "verdict": state.regularity }),
            if out_of_domain { 1.0 } else { 0.0 },
            0.0,
            out_of_domain,
        );
        verdicts.push(json!({ "h": h, "y_star": y_star, "regularity": state.regularity, "jump_locations": state.jump_locations }));

        if let Some(&ys) = singular.iter().find(|y| (*y - y_star).abs() <= cell) {
            match diagnostics::measure_singularity_exponent(|y| d.eval(y), ys, Side::Left) {
                Ok(fit) => {
                    println!(
                        "h={h}: blow-up exponent {:.4} (candidates 1/3 and 1/2; reported only)",
                        fit.alpha
                    );
                    reports.add(
                        "example1_exponent_reported",
                        json!({ "h": h, "candidates": [1.0 / 3.0, 0.5], "fit_residual": fit.residual }),
                        fit.alpha,
                        0.0,
                        true,
                    );
                }
                Err(e) => println!("h={h}: exponent fit failed: {e}"),
            }
        }
    }
    out.write_json("verdict.json", &verdicts)?;
    out.write("example1.gp", gnuplot(&hs).as_bytes())?;
    reports.save(&out)?;
    Ok(Outcome::from_pass(reports.all_pass()))
}

fn gnuplot(hs: &[f64]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n");
    s.push_str("set output 'map_curves.png'\nset xlabel 'x'\nset ylabel 'T(x)'\n");
    let curves: Vec<String> = (0..hs.len())
        .map(|i| format!("'map_curves.csv' using 1:{} with lines", i + 2))
        .collect();
    s.push_str(&format!("plot {}, x title 'identity' dashtype 2\n", curves.join(", ")));
    for h in hs {
        s.push_str(&format!(
            "set output 'density_h{h}.png'\nset xlabel 'y'\nset ylabel 'p_1(y)'\nplot 'density_h{h}.csv' using 1:2 with lines title 'h={h}'\n"
        ));
    }
    s
}
