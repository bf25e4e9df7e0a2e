//! Lid-driven cavity on the unit square, marched to steady state with
//! implicit Euler.

use std::sync::Arc;

use crate::assembly::{apply_time_step, ProblemSpec};
use crate::constitutive::{BinghamForm, RegularizedModel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mesh::{build_rectangle, refine_times, BoundaryTag, Mesh, Point};
use crate::newton::{
    solve_continuation_from, solve_newton_with, spurious_cells, ContinuationSchedule, NewtonOptions, NewtonWorkspace, WarmStart,
};
use crate::postprocess::{error_l2_velocity, stream_function, vortex_centre};
use crate::spaces::State;

use super::{dof_count, CAVITY_NU};

/// Reference values `(tau*, psi_max, y_c)`.
pub const TABLE: [(f64, f64, f64); 6] = [
    (0.5, 0.09472, 0.7768),
    (3.0, 0.07716, 0.8170),
    (5.0, 0.06916, 0.8348),
    (10.0, 0.05734, 0.8616),
    (20.0, 0.04554, 0.8884),
    (40.0, 0.03473, 0.9107),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CavityCase {
    pub tau_star: f64,
    pub nu: f64,
    pub dt: f64,
    pub eps: f64,
    pub form: BinghamForm,
    pub base_cells: usize,
    /// Absolute tolerance of each Newton solve.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Stop once `||u_{k+1} - u_k||_{L2}` falls below this.
    pub steady_tol: f64,
    pub max_steps: usize,
    /// Continuation used for the first step, which starts from rest.
    pub first_step: ContinuationSchedule,
}

impl CavityCase {
    /// `dt = 1e-4` for `tau* >= 20`, `5e-4` otherwise.
    pub fn new(tau_star: f64) -> Self {
        let dt = if tau_star >= 20.0 { 1e-4 } else { 5e-4 };
        let eps = 1e-4;
        Self {
            tau_star,
            nu: CAVITY_NU,
            dt,
            eps,
            form: BinghamForm::Product,
            base_cells: 10,
            newton_tol: 1e-7,
            newton_max_iter: 50,
            steady_tol: 1e-6,
            max_steps: 20_000,
            first_step: ContinuationSchedule::ending_at(eps, WarmStart::Reuse).expect("default schedule is valid"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidSpec(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.steady_tol > 0.0) || !(self.newton_tol > 0.0) {
            return Err(Error::InvalidSpec("tolerances must be positive".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidSpec(format!("viscosity must be positive, got {}", self.nu)));
        }
        if self.base_cells == 0 {
            return Err(Error::InvalidSpec("cavity needs at least one cell".into()));
        }
        Ok(())
    }

    pub fn mesh(&self, refinements: usize) -> Result<Mesh> {
        let n = self.base_cells;
        let m = refine_times(&build_rectangle([0.0, 0.0], [1.0, 1.0], n, n)?, refinements);
        Ok(m.with_tags(|a, b| {
            let lid = (a[1] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12;
            Some(if lid { BoundaryTag::Lid } else { BoundaryTag::Wall })
        }))
    }

    pub fn spec(&self, mesh: Arc<Mesh>) -> Result<ProblemSpec> {
        let reg = RegularizedModel::symmetric(self.form.model(self.tau_star, self.nu), self.eps)?;
        Ok(ProblemSpec::new(mesh, reg)
            .with_dirichlet(BoundaryTag::Lid, |_| [1.0, 0.0])
            .with_dirichlet(BoundaryTag::Wall, |_| [0.0, 0.0]))
    }
}

#[derive(Debug, Clone)]
pub struct CavityRecord {
    pub tau_star: f64,
    pub dt: f64,
    pub dofs: usize,
    pub steps: usize,
    /// `||u_{k+1} - u_k||_{L2}` per step.
    pub increments: Vec<f64>,
    /// Newton iterations per step.
    pub iterations: Vec<usize>,
    /// Steps solved with pointwise stress elimination.
    pub robust_steps: usize,
    pub psi_max: f64,
    pub centre: Point,
    pub state: State,
    pub psi: Vec<f64>,
}

impl CavityRecord {
    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }
}

fn velocity_increment(mesh: &Mesh, a: &State, b: &State) -> Result<f64> {
    let mut d = State::zeros(a.layout());
    for ((x, y), z) in a.velocity_block().iter().zip(b.velocity_block()).zip(d.velocity_block_mut()) {
        *z = x - y;
    }
    error_l2_velocity(mesh, &d, |_| [0.0, 0.0])
}

/// March to steady state and compute the vortex metrics.
pub fn run_cavity(case: &CavityCase, refinements: usize, execution: Execution) -> Result<CavityRecord> {
    case.validate()?;
    let mesh = Arc::new(case.mesh(refinements)?);
    let base = case.spec(mesh.clone())?.with_execution(execution);
    let opts = NewtonOptions::new(case.newton_tol, case.newton_max_iter);
    let robust = NewtonOptions::robust(case.newton_tol, case.newton_max_iter);
    let mut ws = NewtonWorkspace::new();
    let mut state = State::zeros(base.layout());
    let (mut increments, mut iterations) = (Vec::new(), Vec::new());
    let mut robust_steps = 0;
    let mut steady = false;
    for step in 0..case.max_steps {
        let spec = apply_time_step(&base, state.velocity_block(), case.dt)?;
        let next = if step == 0 {
            // From rest the lid starts impulsively; plain Newton tends to
            // wander onto spurious branches of the product form here.
            robust_steps += 1;
            let out = solve_continuation_from(&spec, &case.first_step, state.clone(), &robust, &mut ws)?;
            iterations.push(out.total_iterations());
            out.into_result()?.0
        } else {
            // Plain Newton can converge to a root with spurious cells; those
            // are re-polished from the plain iterate with the robust mode.
            let plain = match solve_newton_with(&spec, state.clone(), &opts, &mut ws) {
                Ok((next, report)) if report.converged => {
                    if spurious_cells(&spec, &next)? == 0 {
                        iterations.push(report.iterations);
                        Ok(next)
                    } else {
                        Err((Some(next), report.iterations))
                    }
                }
                _ => Err((None, 0)),
            };
            match plain {
                Ok(next) => next,
                Err((start, spent)) => {
                    robust_steps += 1;
                    let start = start.unwrap_or_else(|| state.clone());
                    let (next, report) = solve_newton_with(&spec, start, &robust, &mut ws)?;
                    iterations.push(spent + report.iterations);
                    if !report.converged {
                        return Err(Error::StageFailed { stage: step, eps: case.eps });
                    }
                    next
                }
            }
        };
        let inc = velocity_increment(&mesh, &next, &state)?;
        increments.push(inc);
        state = next;
        log::debug!("cavity tau* {} step {}: |du| = {inc:e}", case.tau_star, step + 1);
        if inc < case.steady_tol {
            steady = true;
            break;
        }
    }
    if !steady {
        return Err(Error::StepBudget { steps: case.max_steps });
    }
    let psi = stream_function(&mesh, &state)?;
    let (psi_max, centre) = vortex_centre(&mesh, &psi);
    Ok(CavityRecord {
        tau_star: case.tau_star,
        dt: case.dt,
        dofs: dof_count(&mesh),
        steps: increments.len(),
        increments,
        iterations,
        robust_steps,
        psi_max,
        centre,
        state,
        psi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lid_and_corners() {
        let case = CavityCase::new(3.0);
        let m = case.mesh(0).unwrap();
        let tags = m.vertex_tags();
        for (v, p) in m.vertices().iter().enumerate() {
            let on_lid = (p[1] - 1.0).abs() < 1e-12 && p[0] > 1e-12 && p[0] < 1.0 - 1e-12;
            if on_lid {
                assert_eq!(tags[v], Some(BoundaryTag::Lid));
            } else if tags[v].is_some() {
                assert_eq!(tags[v], Some(BoundaryTag::Wall));
            }
        }
    }

    #[test]
    fn time_step_choice() {
        assert_eq!(CavityCase::new(3.0).dt, 5e-4);
        assert_eq!(CavityCase::new(20.0).dt, 1e-4);
        let mut c = CavityCase::new(3.0);
        c.dt = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn step_budget_is_reported() {
        let mut case = CavityCase::new(3.0);
        case.base_cells = 4;
        case.max_steps = 2;
        let err = run_cavity(&case, 0, Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::StepBudget { steps: 2 }));
    }

    #[test]
    fn coarse_newtonian_limit_vortex() {
        // Tiny yield stress, large time step: the classic Stokes cavity has
        // its vortex centre near (0.5, 0.76) with psi_max near 0.1.
        let mut case = CavityCase::new(1e-6);
        case.dt = 1.0;
        case.base_cells = 8;
        case.first_step = ContinuationSchedule::new(vec![0.5, 1e-4], WarmStart::Reuse).unwrap();
        let rec = run_cavity(&case, 1, Execution::Sequential).unwrap();
        assert!((rec.psi_max - 0.1).abs() < 0.01, "{}", rec.psi_max);
        assert!((rec.centre[1] - 0.76).abs() < 0.05, "{:?}", rec.centre);
        assert!((rec.centre[0] - 0.5).abs() < 0.07, "{:?}", rec.centre);
    }
}
