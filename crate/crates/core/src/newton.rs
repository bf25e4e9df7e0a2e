//! Semismooth Newton iteration on the assembled system and continuation in
//! the regularisation parameter.

use std::io::Write;

use crate::assembly::{Assembler, LinearMode, ProblemSpec};
use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, Result};
use crate::linsolve::LuSolver;
use crate::spaces::{element_velocity, State};

/// Optional globalisation. The default takes full steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Damping {
    #[default]
    None,
    /// Halve the step until the residual norm decreases, down to `min_step`.
    Backtracking { min_step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub mode: LinearMode,
    pub damping: Damping,
    /// Before every residual evaluation, replace each cell stress by the
    /// pointwise solution of the constitutive relation for the current
    /// velocity. Keeps the iterates off spurious branches; off by default.
    pub local_stress: bool,
}

impl NewtonOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, mode: LinearMode::Condensed, damping: Damping::None, local_stress: false }
    }

    /// Pointwise stress elimination with backtracking.
    pub fn robust(tol: f64, max_iter: usize) -> Self {
        Self { damping: Damping::Backtracking { min_step: 1.0 / 1024.0 }, local_stress: true, ..Self::new(tol, max_iter) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    /// Euclidean residual norms, starting with the initial guess.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Regularisation parameter `eps2` of the solved problem.
    pub eps: f64,
    /// Smallest singular value of the stress blocks seen during the solve.
    pub min_d1_singular: f64,
    /// Iterations whose linear solve fell back to the full system.
    pub full_solves: usize,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().expect("history is never empty")
    }

    /// CSV with columns `iteration,residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["iteration", "residual"])?;
        for (k, r) in self.residual_norms.iter().enumerate() {
            w.write_record([k.to_string(), format!("{r:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-solver state reused across Newton solves on one mesh.
#[derive(Default)]
pub struct NewtonWorkspace {
    condensed: LuSolver,
    full: LuSolver,
}

impl NewtonWorkspace {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Set every cell stress to the pointwise solution for the current velocity.
pub fn relax_stress(asm: &Assembler<'_>, spec: &ProblemSpec, state: &mut State) -> Result<()> {
    let mesh = &*spec.mesh;
    let reg = spec.reg;
    let elements = asm.elements();
    let x = &*state;
    let stresses = spec.execution.map(mesh.n_triangles(), |t| {
        let d = elements[t].sym_gradient(element_velocity(mesh, x, t));
        reg.solve_stress(d, x.stress(t))
    });
    for (t, s) in stresses.into_iter().enumerate() {
        state.set_stress(t, s?);
    }
    Ok(())
}

/// Number of cells whose stress sits on a spurious root of the product form.
pub fn spurious_cells(spec: &ProblemSpec, state: &State) -> Result<usize> {
    let asm = Assembler::new(spec)?;
    let mesh = &*spec.mesh;
    let elements = asm.elements();
    let flags = spec.execution.map(mesh.n_triangles(), |t| {
        let d = elements[t].sym_gradient(element_velocity(mesh, state, t));
        spec.reg.on_spurious_branch(state.stress(t), d)
    });
    Ok(flags.into_iter().filter(|&f| f).count())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn solve_newton(spec: &ProblemSpec, init: State, tol: f64, max_iter: usize) -> Result<(State, NewtonReport)> {
    solve_newton_with(spec, init, &NewtonOptions::new(tol, max_iter), &mut NewtonWorkspace::new())
}

pub fn solve_newton_with(
    spec: &ProblemSpec,
    init: State,
    opts: &NewtonOptions,
    ws: &mut NewtonWorkspace,
) -> Result<(State, NewtonReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidSpec(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let asm = Assembler::new(spec)?;
    let mut x = init;
    if opts.local_stress {
        relax_stress(&asm, spec, &mut x)?;
    }
    let mut r = asm.residual(&x)?;
    let mut rn = norm(&r);
    let mut report = NewtonReport {
        residual_norms: vec![rn],
        converged: false,
        iterations: 0,
        eps: spec.reg.eps2,
        min_d1_singular: f64::INFINITY,
        full_solves: 0,
    };
    if !rn.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    loop {
        if rn < opts.tol {
            report.converged = true;
            break;
        }
        if report.iterations >= opts.max_iter {
            break;
        }
        let k = report.iterations + 1;
        let (delta, info) = asm
            .newton_direction(&x, &r, opts.mode, &mut ws.condensed, &mut ws.full)
            .map_err(|e| Error::LinearSolve { iteration: k, source: Box::new(e) })?;
        report.min_d1_singular = report.min_d1_singular.min(info.min_d1_singular);
        if !info.condensed {
            report.full_solves += 1;
        }
        let mut t = 1.0;
        let (next, next_r) = loop {
            let mut trial = x.clone();
            for (xi, di) in trial.coeffs_mut().iter_mut().zip(&delta) {
                *xi += t * di;
            }
            if opts.local_stress {
                relax_stress(&asm, spec, &mut trial)?;
            }
            let tr = asm.residual(&trial)?;
            match opts.damping {
                Damping::Backtracking { min_step } if norm(&tr) >= rn && t > min_step => t *= 0.5,
                _ => break (trial, tr),
            }
        };
        x = next;
        r = next_r;
        rn = norm(&r);
        report.iterations = k;
        report.residual_norms.push(rn);
        log::debug!("eps {:e} iteration {k}: |F| = {rn:e}", spec.reg.eps2);
        if !rn.is_finite() {
            return Err(Error::NonFinite { iteration: k });
        }
    }
    Ok((x, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    /// Start each stage from the previous solution.
    Reuse,
    /// Extrapolate linearly in eps from the two previous solutions.
    Extrapolate,
}

impl std::str::FromStr for WarmStart {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "reuse" => Ok(Self::Reuse),
            "extrapolate" => Ok(Self::Extrapolate),
            other => Err(format!("unknown warm start '{other}' (expected reuse|extrapolate)")),
        }
    }
}

pub const DEFAULT_EPSILONS: [f64; 4] = [0.5, 0.0166, 0.001, 0.0001];

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationSchedule {
    epsilons: Vec<f64>,
    pub warm_start: WarmStart,
}

impl ContinuationSchedule {
    pub fn new(epsilons: Vec<f64>, warm_start: WarmStart) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::InvalidSpec("continuation schedule is empty".into()));
        }
        if epsilons.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidSpec(format!("schedule values must be positive, got {epsilons:?}")));
        }
        if epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSpec(format!("schedule must be strictly decreasing, got {epsilons:?}")));
        }
        Ok(Self { epsilons, warm_start })
    }

    pub fn standard(warm_start: WarmStart) -> Self {
        Self { epsilons: DEFAULT_EPSILONS.to_vec(), warm_start }
    }

    /// Standard values above `eps`, then `eps` itself.
    pub fn ending_at(eps: f64, warm_start: WarmStart) -> Result<Self> {
        let mut v: Vec<f64> = DEFAULT_EPSILONS.iter().copied().filter(|&e| e > eps * (1.0 + 1e-12)).collect();
        v.push(eps);
        Self::new(v, warm_start)
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }
}

/// `z2 + (eps - eps2) / (eps2 - eps1) (z2 - z1)`.
pub fn extrapolate(eps1: f64, z1: &State, eps2: f64, z2: &State, eps: f64) -> State {
    let c = (eps - eps2) / (eps2 - eps1);
    let mut out = z2.clone();
    for ((o, a), b) in out.coeffs_mut().iter_mut().zip(z1.coeffs()).zip(z2.coeffs()) {
        *o = b + c * (b - a);
    }
    out
}

#[derive(Debug, Clone)]
pub struct StageFailure {
    pub stage: usize,
    pub eps: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    /// Last converged state (or the initial state if stage 0 failed).
    pub state: State,
    /// One report per attempted stage.
    pub reports: Vec<NewtonReport>,
    /// Converged solution per completed stage.
    pub stage_states: Vec<State>,
    pub failure: Option<StageFailure>,
}

impl ContinuationOutcome {
    pub fn converged(&self) -> bool {
        self.failure.is_none()
    }

    pub fn total_iterations(&self) -> usize {
        self.reports.iter().map(|r| r.iterations).sum()
    }

    pub fn into_result(self) -> Result<(State, Vec<NewtonReport>)> {
        match self.failure {
            None => Ok((self.state, self.reports)),
            Some(f) => Err(Error::StageFailed { stage: f.stage, eps: f.eps }),
        }
    }
}

pub fn solve_continuation(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    tol: f64,
    max_iter: usize,
) -> Result<ContinuationOutcome> {
    let init = State::zeros(spec.layout());
    solve_continuation_from(spec, schedule, init, &NewtonOptions::new(tol, max_iter), &mut NewtonWorkspace::new())
}

/// Run the schedule starting from `init`, with `spec.reg` re-parameterised
/// to `eps1 = eps2 = eps` at each stage.
pub fn solve_continuation_from(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    init: State,
    opts: &NewtonOptions,
    ws: &mut NewtonWorkspace,
) -> Result<ContinuationOutcome> {
    if matches!(spec.reg.base, ConstitutiveModel::BinghamMax { .. }) && schedule.warm_start == WarmStart::Reuse {
        log::warn!("the max form is not semismooth; continuation with reuse warm starts may fail, use extrapolate");
    }
    let mut reports = Vec::new();
    let mut stage_states: Vec<State> = Vec::new();
    let mut current = init;
    for (stage, &eps) in schedule.epsilons().iter().enumerate() {
        let start = match (schedule.warm_start, stage_states.len()) {
            (WarmStart::Extrapolate, n) if n >= 2 => {
                let e = schedule.epsilons();
                extrapolate(e[stage - 2], &stage_states[n - 2], e[stage - 1], &stage_states[n - 1], eps)
            }
            _ => current.clone(),
        };
        let stage_spec = spec.clone().with_reg(spec.reg.with_eps(eps));
        match solve_newton_with(&stage_spec, start, opts, ws) {
            Ok((x, report)) => {
                let ok = report.converged;
                log::info!(
                    "stage {stage} eps {eps:e}: {} iterations, |F| = {:e}{}",
                    report.iterations,
                    report.final_residual(),
                    if ok { "" } else { " (not converged)" }
                );
                reports.push(report);
                if !ok {
                    return Ok(ContinuationOutcome {
                        state: current,
                        reports,
                        stage_states,
                        failure: Some(StageFailure { stage, eps, reason: "iteration limit reached".into() }),
                    });
                }
                current = x.clone();
                stage_states.push(x);
            }
            Err(e) => {
                return Ok(ContinuationOutcome {
                    state: current,
                    reports,
                    stage_states,
                    failure: Some(StageFailure { stage, eps, reason: e.to_string() }),
                })
            }
        }
    }
    Ok(ContinuationOutcome { state: current, reports, stage_states, failure: None })
}
