//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance -- 1 7` runs a subset. The cavity
//! sweep dominates the runtime (roughly ten minutes per yield stress on one
//! core).

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use ssnflow::exec::Execution;
use ssnflow::newton::{ContinuationSchedule, NewtonOptions, WarmStart, DEFAULT_EPSILONS};
use ssnflow::problems::cavity::{self, run_cavity, CavityCase};
use ssnflow::problems::channel::{self, run_channel, ChannelCase};
use ssnflow::problems::poiseuille::{run_poiseuille, run_poiseuille_level, PoiseuilleCase, PoiseuilleRecord};
use ssnflow::verify::{run_selected, run_suite, VerifyOptions};
use ssnflow::BinghamForm;

struct Verdict {
    passed: bool,
    summary: String,
}

impl Verdict {
    fn new(passed: bool, summary: String) -> Self {
        Self { passed, summary }
    }
}

fn within(value: f64, reference: f64, rel: f64) -> bool {
    ((value - reference) / reference).abs() <= rel
}

fn pct(value: f64, reference: f64) -> f64 {
    100.0 * (value / reference - 1.0)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn poiseuille_ladder() -> (PoiseuilleRecord, f64) {
    let t = Instant::now();
    let case = PoiseuilleCase::new(1.0, BinghamForm::Product);
    let schedule = ContinuationSchedule::standard(WarmStart::Reuse);
    let opts = NewtonOptions::new(1e-9, 60);
    let rec = run_poiseuille(&case, 2, &schedule, &opts, Execution::default()).expect("Poiseuille ladder runs");
    (rec, t.elapsed().as_secs_f64())
}

fn criterion_1(rec: &PoiseuilleRecord, seconds: f64) -> Verdict {
    let errs: Vec<f64> = rec.levels.iter().filter_map(|l| l.stage(1e-4)).map(|s| s.l2_velocity).collect();
    let finest = rec.levels.last().expect("three levels");
    let (e3, e4) = match (finest.stage(1e-3), finest.stage(1e-4)) {
        (Some(a), Some(b)) => (a.l2_velocity, b.l2_velocity),
        _ => (f64::NAN, f64::NAN),
    };
    let agree = ((e3 - e4) / e4).abs();
    let dofs: Vec<usize> = rec.levels.iter().map(|l| l.dofs).collect();
    let passed = rec.converged() && errs.len() == 3 && strictly_decreasing(&errs) && agree <= 0.2 && seconds <= 300.0;
    Verdict::new(
        passed,
        format!(
            "dofs {dofs:?}, L2 velocity error at eps 1e-4 [{}]; finest eps 1e-3 vs 1e-4 differ by {:.1}%; {seconds:.1} s",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", "),
            100.0 * agree
        ),
    )
}

fn criterion_2(rec: &PoiseuilleRecord) -> Verdict {
    let mut passed = rec.converged();
    let mut parts = Vec::new();
    for eps in DEFAULT_EPSILONS {
        let its: Vec<usize> = rec.levels.iter().filter_map(|l| l.stage(eps)).map(|s| s.report.iterations).collect();
        let spread = its.iter().max().unwrap_or(&0) - its.iter().min().unwrap_or(&0);
        passed &= its.len() == rec.levels.len() && spread <= 2;
        parts.push(format!("eps {eps:e}: {its:?}"));
    }
    Verdict::new(passed, format!("Newton iterations per level, {}", parts.join("; ")))
}

fn criterion_3(rec: &PoiseuilleRecord) -> Verdict {
    let exact = std::f64::consts::SQRT_2 / 4.0;
    let u = rec.levels.last().and_then(|l| l.stage(1e-4)).map_or(f64::NAN, |s| s.centre_velocity);
    Verdict::new((u - exact).abs() <= 1e-2, format!("centre velocity {u:.6} vs {exact:.6}"))
}

fn criterion_4() -> Verdict {
    let t = Instant::now();
    let out = run_selected(&["graph_monotonicity"], &VerifyOptions::default()).expect("known property");
    let s = t.elapsed().as_secs_f64();
    Verdict::new(out[0].passed && s <= 10.0, format!("{}; {s:.2} s", out[0].detail))
}

fn criterion_5() -> Verdict {
    let t = Instant::now();
    let out = run_selected(&["assembled_jacobian_fd", "pointwise_jacobian_fd"], &VerifyOptions::default()).expect("known properties");
    let s = t.elapsed().as_secs_f64();
    let detail: Vec<String> = out.iter().map(|o| format!("{}: {}", o.name, o.detail)).collect();
    Verdict::new(out.iter().all(|o| o.passed) && s <= 30.0, format!("{}; {s:.2} s", detail.join("; ")))
}

fn criterion_6() -> Verdict {
    let schedule = ContinuationSchedule::standard(WarmStart::Reuse);
    let opts = NewtonOptions::new(1e-9, 60);
    let run = |form| {
        let case = PoiseuilleCase::new(1.0, form);
        run_poiseuille_level(&case, 0, &schedule, &opts, Execution::default()).expect("level runs").0
    };
    let (product, max) = (run(BinghamForm::Product), run(BinghamForm::Max));
    let its = |l: &ssnflow::problems::poiseuille::PoiseuilleLevel| -> Vec<usize> { l.stages.iter().map(|s| s.report.iterations).collect() };
    let max_status = match &max.failure {
        Some(f) => format!("failed at {f}"),
        None => format!("converged, {} iterations", max.total_iterations()),
    };
    let passed = product.converged() && (!max.converged() || max.total_iterations() > product.total_iterations());
    Verdict::new(
        passed,
        format!(
            "product {:?} = {} iterations; max {:?}, {max_status}",
            its(&product),
            product.total_iterations(),
            its(&max)
        ),
    )
}

fn criterion_7() -> Verdict {
    let mut psi = Vec::new();
    let mut yc = Vec::new();
    let mut lines = Vec::new();
    let mut budget = true;
    let mut failed = Vec::new();
    for &(tau, ref_psi, ref_yc) in &cavity::TABLE {
        let t = Instant::now();
        let case = CavityCase::new(tau);
        match run_cavity(&case, 3, Execution::default()) {
            Ok(r) => {
                let s = t.elapsed().as_secs_f64();
                budget &= s <= 1800.0;
                println!(
                    "  cavity tau* {tau}: dofs {} dt {} steps {} psi_max {:.5} ({:+.1}%) y_c {:.4} ({:+.1}%) x_c {:.4}; {s:.0} s",
                    r.dofs,
                    r.dt,
                    r.steps,
                    r.psi_max,
                    pct(r.psi_max, ref_psi),
                    r.centre[1],
                    pct(r.centre[1], ref_yc),
                    r.centre[0]
                );
                psi.push(r.psi_max);
                yc.push(r.centre[1]);
                lines.push((tau, r.psi_max, r.centre[1]));
            }
            Err(e) => {
                println!("  cavity tau* {tau}: {e}");
                failed.push(tau);
            }
        }
    }
    let get = |tau: f64| lines.iter().find(|l| l.0 == tau).copied();
    let spot3 = get(3.0).is_some_and(|(_, p, y)| within(p, 0.07716, 0.10) && within(y, 0.8170, 0.05));
    let spot20 = get(20.0).is_some_and(|(_, p, _)| within(p, 0.04554, 0.10));
    let trends = failed.is_empty() && strictly_decreasing(&psi) && strictly_increasing(&yc);
    Verdict::new(
        spot3 && spot20 && trends && budget,
        format!(
            "tau* 3 spot check {}, tau* 20 spot check {}, trends {}, budget {}",
            ok(spot3),
            ok(spot20),
            ok(trends),
            ok(budget)
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut l_d = Vec::new();
    let mut r2 = Vec::new();
    let mut at10 = f64::NAN;
    for &(bn, reference) in &channel::TABLE {
        let t = Instant::now();
        match run_channel(&ChannelCase::new(bn), 0, Execution::default()) {
            Ok(r) => {
                println!(
                    "  channel Bn {bn}: dofs {} L_d {:.5} (reference {reference}, {:+.1}%) upstream R^2 {:.6}; {:.0} s",
                    r.dofs,
                    r.dead_zone.l_d,
                    pct(r.dead_zone.l_d, reference),
                    r.upstream_fit.r_squared,
                    t.elapsed().as_secs_f64()
                );
                if bn == 10.0 {
                    at10 = r.dead_zone.l_d;
                }
                l_d.push(r.dead_zone.l_d);
                r2.push(r.upstream_fit.r_squared);
            }
            Err(e) => {
                println!("  channel Bn {bn}: {e}");
                l_d.push(f64::NAN);
                r2.push(f64::NAN);
            }
        }
    }
    let spot = within(at10, 0.07813, 0.25);
    let trend = strictly_increasing(&l_d);
    let fit = r2.iter().all(|&r| r >= 0.999);
    let min_r2 = r2.iter().copied().fold(f64::INFINITY, f64::min);
    Verdict::new(
        spot && trend && fit,
        format!(
            "Bn 10 L_d {at10:.5} ({:+.1}%), strictly increasing {}, min upstream R^2 {min_r2:.6}",
            pct(at10, 0.07813),
            ok(trend)
        ),
    )
}

fn criterion_9() -> Verdict {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut count = 0;
    for seed in [0, 42, 43] {
        for o in run_suite(&VerifyOptions { seed, ..Default::default() }) {
            count += 1;
            if !o.passed {
                failures.push(format!("seed {seed} {}: {}", o.name, o.detail));
            }
        }
    }
    let s = t.elapsed().as_secs_f64();
    let summary = if failures.is_empty() {
        format!("{count} property runs over seeds 0, 42, 43 passed; {s:.2} s")
    } else {
        failures.join("; ")
    };
    Verdict::new(failures.is_empty() && s <= 60.0, summary)
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "failed"
    }
}

fn main() -> ExitCode {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut verdicts: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |n: u32, v: Verdict| {
        println!("{} criterion {n}: {}", if v.passed { "PASS" } else { "FAIL" }, v.summary);
        verdicts.push((n, v));
    };

    if run(1) || run(2) || run(3) {
        let (rec, seconds) = poiseuille_ladder();
        if run(1) {
            report(1, criterion_1(&rec, seconds));
        }
        if run(2) {
            report(2, criterion_2(&rec));
        }
        if run(3) {
            report(3, criterion_3(&rec));
        }
    }
    let rest: [(u32, fn() -> Verdict); 6] =
        [(4, criterion_4), (5, criterion_5), (6, criterion_6), (7, criterion_7), (8, criterion_8), (9, criterion_9)];
    for (n, f) in rest {
        if run(n) {
            report(n, f());
        }
    }
    let failed: Vec<u32> = verdicts.iter().filter(|(_, v)| !v.passed).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", verdicts.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
