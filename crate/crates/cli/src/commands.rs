use std::fs::File;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ssnflow::exec::Execution;
use ssnflow::newton::{ContinuationSchedule, NewtonOptions, WarmStart};
use ssnflow::postprocess::{csv_writer, write_samples_csv, write_vtk, FieldSnapshot};
use ssnflow::problems::cavity::{run_cavity, CavityCase, CavityRecord};
use ssnflow::problems::channel::{run_channel, ChannelCase, ChannelRecord};
use ssnflow::problems::poiseuille::{run_poiseuille_level, PoiseuilleCase, PoiseuilleLevel};
use ssnflow::verify::{run_selected, run_suite, PropertyOutcome, VerifyOptions};
use ssnflow::{Error, State};

use crate::{form, inflow, mutation, warm_start, CavityArgs, ChannelArgs, PoiseuilleArgs, VerifyArgs};

const FAILED: u8 = 1;
const USAGE: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidSpec(_) | Error::InvalidModel(_) | Error::InvalidMesh(_) => USAGE,
        _ => FAILED,
    }
}

fn usage(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    USAGE
}

/// Solves inside one sweep point run sequentially when several points run
/// at once.
fn execution(jobs: u32) -> Execution {
    if jobs > 1 {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

/// Map `f` over `items` on up to `jobs` threads, keeping input order.
fn sweep<T: Sync, R: Send>(items: &[T], jobs: u32, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = (jobs as usize).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("no worker panics while holding a slot") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot is filled")).collect()
}

fn prepare(out: &Path, manifest: &str) -> Result<(), u8> {
    crate::config::write_manifest(out, manifest).map_err(|e| {
        eprintln!("error: cannot write to {}: {e}", out.display());
        FAILED
    })
}

fn tag(x: f64) -> String {
    format!("{x}")
}

fn io_failure(e: Error) -> u8 {
    eprintln!("error: {e}");
    FAILED
}

pub fn poiseuille(a: &PoiseuilleArgs, manifest: &str) -> u8 {
    match poiseuille_inner(a, manifest) {
        Ok(code) | Err(code) => code,
    }
}

fn poiseuille_inner(a: &PoiseuilleArgs, manifest: &str) -> Result<u8, u8> {
    if !(a.tau_star >= 0.0) || !a.tau_star.is_finite() {
        return Err(usage(format!("--tau-star must be a nonnegative number, got {}", a.tau_star)));
    }
    if !(a.tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let ws = warm_start(&a.warm_start);
    let schedule = ContinuationSchedule::new(a.eps_schedule.clone(), ws).map_err(usage)?;
    let case = PoiseuilleCase::new(a.tau_star, form(&a.form));
    let opts = NewtonOptions::new(a.tol, a.max_iter);
    let out = &a.common.out;
    prepare(out, manifest)?;
    let levels: Vec<usize> = (0..=a.refinements).collect();
    let exec = execution(a.common.jobs);
    let results = sweep(&levels, a.common.jobs, |&r| run_poiseuille_level(&case, r, &schedule, &opts, exec));

    let mut done: Vec<(PoiseuilleLevel, State)> = Vec::new();
    for res in results {
        done.push(res.map_err(|e| {
            eprintln!("error: {e}");
            exit_code(&e)
        })?);
    }
    write_poiseuille_csv(out, &done).map_err(io_failure)?;
    if let Some((level, state)) = done.last() {
        let mesh = case.mesh(level.refinement).map_err(io_failure)?;
        let snap = FieldSnapshot::from_state(&mesh, state, 1e-3).map_err(io_failure)?;
        write_vtk(&snap, out.join(format!("poiseuille_r{}.vtk", level.refinement))).map_err(io_failure)?;
    }

    println!("refinement dofs eps iterations l2_velocity h1_velocity l2_pressure centre_u");
    let mut ok = true;
    for (level, _) in &done {
        for s in &level.stages {
            println!(
                "{} {} {:e} {} {:.4e} {:.4e} {:.4e} {:.6}",
                level.refinement, level.dofs, s.eps, s.report.iterations, s.l2_velocity, s.h1_velocity, s.l2_pressure, s.centre_velocity
            );
        }
        if let Some(f) = &level.failure {
            eprintln!("refinement {}: {f}", level.refinement);
            ok = false;
        }
    }
    Ok(if ok { 0 } else { FAILED })
}

fn write_poiseuille_csv(out: &Path, done: &[(PoiseuilleLevel, State)]) -> ssnflow::Result<()> {
    let mut w = csv_writer(File::create(out.join("errors.csv"))?);
    w.write_record([
        "refinement", "dofs", "h_max", "eps", "iterations", "converged", "l2_velocity", "h1_velocity", "l2_pressure",
        "centre_velocity",
    ])?;
    let mut h = csv_writer(File::create(out.join("history.csv"))?);
    h.write_record(["refinement", "eps", "iteration", "residual"])?;
    for (level, _) in done {
        for s in &level.stages {
            w.write_record([
                level.refinement.to_string(),
                level.dofs.to_string(),
                tag(level.h_max),
                tag(s.eps),
                s.report.iterations.to_string(),
                s.report.converged.to_string(),
                tag(s.l2_velocity),
                tag(s.h1_velocity),
                tag(s.l2_pressure),
                tag(s.centre_velocity),
            ])?;
            for (k, r) in s.report.residual_norms.iter().enumerate() {
                h.write_record([level.refinement.to_string(), tag(s.eps), k.to_string(), tag(*r)])?;
            }
        }
    }
    w.flush()?;
    h.flush()?;
    Ok(())
}

pub fn cavity(a: &CavityArgs, manifest: &str) -> u8 {
    match cavity_inner(a, manifest) {
        Ok(code) | Err(code) => code,
    }
}

fn cavity_inner(a: &CavityArgs, manifest: &str) -> Result<u8, u8> {
    let mut cases = Vec::new();
    for &tau in &a.tau_star {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(usage(format!("--tau-star must be nonnegative, got {tau}")));
        }
        let mut c = CavityCase::new(tau);
        if let Some(dt) = a.dt {
            c.dt = dt;
        }
        c.nu = a.nu;
        c.eps = a.eps;
        c.form = form(&a.form);
        c.base_cells = a.base_cells;
        c.newton_tol = a.tol;
        c.steady_tol = a.steady_tol;
        c.max_steps = a.max_steps;
        c.first_step = ContinuationSchedule::ending_at(a.eps, WarmStart::Reuse).map_err(usage)?;
        c.validate().map_err(usage)?;
        cases.push(c);
    }
    let out = &a.common.out;
    prepare(out, manifest)?;
    let exec = execution(a.common.jobs);
    let results = sweep(&cases, a.common.jobs, |c| run_cavity(c, a.refinements, exec));

    let mut code = 0;
    let mut records = Vec::new();
    for (c, res) in cases.iter().zip(results) {
        match res {
            Ok(r) => records.push((c, r)),
            Err(e) => {
                eprintln!("error: tau* = {}: {e}", c.tau_star);
                code = code.max(exit_code(&e));
            }
        }
    }
    write_cavity_outputs(out, a.refinements, &records).map_err(io_failure)?;
    println!("tau_star dt dofs steps newton_iterations psi_max x_c y_c");
    for (_, r) in &records {
        println!(
            "{} {} {} {} {} {:.5} {:.4} {:.4}",
            r.tau_star,
            r.dt,
            r.dofs,
            r.steps,
            r.total_iterations(),
            r.psi_max,
            r.centre[0],
            r.centre[1]
        );
    }
    Ok(code)
}

fn write_cavity_outputs(out: &Path, refinements: usize, records: &[(&CavityCase, CavityRecord)]) -> ssnflow::Result<()> {
    let mut w = csv_writer(File::create(out.join("metrics.csv"))?);
    w.write_record(["tau_star", "dt", "dofs", "steps", "newton_iterations", "robust_steps", "psi_max", "x_c", "y_c"])?;
    for (case, r) in records {
        w.write_record([
            tag(r.tau_star),
            tag(r.dt),
            r.dofs.to_string(),
            r.steps.to_string(),
            r.total_iterations().to_string(),
            r.robust_steps.to_string(),
            tag(r.psi_max),
            tag(r.centre[0]),
            tag(r.centre[1]),
        ])?;
        let mut h = csv_writer(File::create(out.join(format!("cavity_tau{}_history.csv", tag(r.tau_star))))?);
        h.write_record(["step", "increment", "newton_iterations"])?;
        for (k, (inc, its)) in r.increments.iter().zip(&r.iterations).enumerate() {
            h.write_record([(k + 1).to_string(), tag(*inc), its.to_string()])?;
        }
        h.flush()?;
        let mesh = case.mesh(refinements)?;
        let snap = FieldSnapshot::from_state(&mesh, &r.state, 1e-3)?.point_scalar("stream_function", r.psi.clone())?;
        write_vtk(&snap, out.join(format!("cavity_tau{}.vtk", tag(r.tau_star))))?;
    }
    w.flush()?;
    Ok(())
}

pub fn channel(a: &ChannelArgs, manifest: &str) -> u8 {
    match channel_inner(a, manifest) {
        Ok(code) | Err(code) => code,
    }
}

fn channel_inner(a: &ChannelArgs, manifest: &str) -> Result<u8, u8> {
    let mut cases = Vec::new();
    for &bn in &a.bn {
        let mut c = ChannelCase::new(bn);
        c.inflow = inflow(&a.inflow);
        c.l_hat = a.l_hat;
        c.delta = a.delta;
        c.h = a.height;
        c.eps = a.eps;
        c.schedule = ContinuationSchedule::ending_at(a.eps, WarmStart::Reuse).map_err(usage)?;
        c.dead_zone_threshold = a.threshold;
        c.form = form(&a.form);
        c.newton_tol = a.tol;
        c.newton_max_iter = a.max_iter;
        c.validate().map_err(usage)?;
        cases.push(c);
    }
    let out = &a.common.out;
    prepare(out, manifest)?;
    let exec = execution(a.common.jobs);
    let results = sweep(&cases, a.common.jobs, |c| run_channel(c, a.refinements, exec));

    let mut code = 0;
    let mut records = Vec::new();
    for (c, res) in cases.iter().zip(results) {
        match res {
            Ok(r) => records.push((c, r)),
            Err(e) => {
                eprintln!("error: Bn = {}: {e}", c.bn);
                code = code.max(exit_code(&e));
            }
        }
    }
    write_channel_outputs(out, a.refinements, &records).map_err(io_failure)?;
    println!("bn dofs newton_iterations l_d dead_zone_height upstream_r2");
    for (_, r) in &records {
        println!(
            "{} {} {} {:.5} {:.5} {:.6}",
            r.bn,
            r.dofs,
            r.total_iterations(),
            r.dead_zone.l_d,
            r.dead_zone.height,
            r.upstream_fit.r_squared
        );
    }
    Ok(code)
}

fn write_channel_outputs(out: &Path, refinements: usize, records: &[(&ChannelCase, ChannelRecord)]) -> ssnflow::Result<()> {
    let mut w = csv_writer(File::create(out.join("metrics.csv"))?);
    w.write_record([
        "bn", "inflow", "dofs", "newton_iterations", "threshold", "l_d", "dead_zone_length", "dead_zone_height", "dead_zone_cells", "upstream_slope",
        "upstream_r2",
    ])?;
    let mut s = csv_writer(File::create(out.join("sensitivity.csv"))?);
    s.write_record(["bn", "threshold", "l_d", "dead_zone_length", "dead_zone_height", "dead_zone_cells"])?;
    for (case, r) in records {
        let dz = &r.dead_zone;
        w.write_record([
            tag(r.bn),
            case.inflow.name().to_string(),
            r.dofs.to_string(),
            r.total_iterations().to_string(),
            tag(dz.threshold),
            tag(dz.l_d),
            tag(dz.length),
            tag(dz.height),
            dz.cells.to_string(),
            tag(r.upstream_fit.slope),
            tag(r.upstream_fit.r_squared),
        ])?;
        for z in &r.sensitivity {
            s.write_record([tag(r.bn), tag(z.threshold), tag(z.l_d), tag(z.length), tag(z.height), z.cells.to_string()])?;
        }
        write_samples_csv(&r.pressure_line, "pressure", File::create(out.join(format!("channel_bn{}_pressure.csv", tag(r.bn))))?)?;
        let mesh = case.mesh(refinements)?;
        let plug = case.dead_zone_threshold * std::f64::consts::SQRT_2 * case.bn;
        let snap = FieldSnapshot::from_state(&mesh, &r.state, plug)?;
        write_vtk(&snap, out.join(format!("channel_bn{}.vtk", tag(r.bn))))?;
    }
    w.flush()?;
    s.flush()?;
    Ok(())
}

pub fn verify(a: &VerifyArgs, manifest: &str) -> u8 {
    let opts = VerifyOptions { seed: a.seed, mutation: mutation(&a.mutation) };
    let outcomes: Vec<PropertyOutcome> = if a.only.is_empty() {
        run_suite(&opts)
    } else {
        let names: Vec<&str> = a.only.iter().map(String::as_str).collect();
        match run_selected(&names, &opts) {
            Ok(o) => o,
            Err(name) => return usage(format!("unknown property '{name}'")),
        }
    };
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<24} {:>7.3}s  {}", o.name, o.seconds, o.detail);
    }
    if let Some(out) = &a.out {
        if let Err(code) = prepare(out, manifest) {
            return code;
        }
        if let Err(e) = write_verify_csv(out, &outcomes) {
            return io_failure(e);
        }
    }
    match outcomes.iter().find(|o| !o.passed) {
        Some(first) => {
            eprintln!("first failing property: {}", first.name);
            FAILED
        }
        None => {
            println!("all {} properties passed (seed {})", outcomes.len(), a.seed);
            0
        }
    }
}

fn write_verify_csv(out: &Path, outcomes: &[PropertyOutcome]) -> ssnflow::Result<()> {
    let mut w = csv_writer(File::create(out.join("verify.csv"))?);
    w.write_record(["property", "passed", "detail"])?;
    for o in outcomes {
        w.write_record([o.name, if o.passed { "true" } else { "false" }, o.detail.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_keeps_order() {
        let items: Vec<u32> = (0..17).collect();
        let seen = AtomicUsize::new(0);
        let out = sweep(&items, 4, |&i| {
            seen.fetch_add(1, Ordering::Relaxed);
            i * i
        });
        assert_eq!(out, items.iter().map(|i| i * i).collect::<Vec<_>>());
        assert_eq!(seen.load(Ordering::Relaxed), 17);
    }
}
