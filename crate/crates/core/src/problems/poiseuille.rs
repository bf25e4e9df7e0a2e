//! Flow between parallel plates on `(0, 4) x (-1, 1)` with a known exact
//! solution.

use std::sync::Arc;

use crate::assembly::ProblemSpec;
use crate::constitutive::{BinghamForm, RegularizedModel};
use crate::error::Result;
use crate::exec::Execution;
use crate::mesh::{build_rectangle_with, refine_uniform, BoundaryTag, Diagonal, Mesh, Point};
use crate::newton::{solve_continuation_from, ContinuationSchedule, NewtonOptions, NewtonReport, NewtonWorkspace};
use crate::postprocess::{error_h1_velocity, error_l2_pressure, error_l2_velocity};
use crate::spaces::State;

use super::{dof_count, BENCHMARK_NU};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Coarsest grid: 44 x 22 cells (8914 unknowns).
pub const BASE_CELLS: [usize; 2] = [44, 22];

/// Exact velocity and pressure.
pub fn poiseuille_exact(tau_star: f64, x: Point) -> ([f64; 2], f64) {
    let y = x[1].abs();
    let u = if y <= 0.5 { SQRT2 * tau_star / 4.0 } else { SQRT2 * tau_star * (y - y * y) };
    ([u, 0.0], SQRT2 * tau_star * (16.0 - x[0]))
}

/// Exact velocity gradient, `g[a][b] = d u_a / d x_b`.
pub fn poiseuille_exact_gradient(tau_star: f64, x: Point) -> [[f64; 2]; 2] {
    let y = x[1];
    let dudy = if y.abs() <= 0.5 { 0.0 } else { SQRT2 * tau_star * (y.signum() - 2.0 * y) };
    [[0.0, dudy], [0.0, 0.0]]
}

/// Fully developed Bingham flow between plates `y = +-1` with mean velocity
/// `mean` (over the half-width) and yield stress `tau_star`, for `2 nu = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateProfile {
    /// Pressure drop per unit length, `-dp/dx`.
    pub gradient: f64,
    /// Plug half-width.
    pub plug: f64,
}

impl PlateProfile {
    /// With `y0` the plug half-width, `|S_xy| = G |y|` and the yield condition
    /// `sqrt2 |S_xy| = tau*` at `|y| = y0` give `G = tau* / (sqrt2 y0)`; the
    /// mean velocity `G (1 - y0)^2 (2 + y0) / 3` then fixes `y0` by bisection.
    pub fn with_mean(tau_star: f64, mean: f64) -> Self {
        if tau_star <= 0.0 {
            return Self { gradient: 1.5 * mean, plug: 0.0 };
        }
        let target = 3.0 * SQRT2 * mean / tau_star;
        let f = |y0: f64| (1.0 - y0).powi(2) * (2.0 + y0) / y0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let plug = 0.5 * (lo + hi);
        Self { gradient: tau_star / (SQRT2 * plug), plug }
    }

    pub fn velocity(&self, y: f64) -> f64 {
        let y = y.abs().min(1.0);
        let y0 = self.plug;
        self.gradient * ((1.0 - y0).powi(2) - (y.max(y0) - y0).powi(2))
    }

    pub fn mean(&self) -> f64 {
        let y0 = self.plug;
        self.gradient * (1.0 - y0).powi(2) * (2.0 + y0) / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiseuilleCase {
    pub tau_star: f64,
    pub form: BinghamForm,
    pub base_cells: [usize; 2],
}

impl PoiseuilleCase {
    pub fn new(tau_star: f64, form: BinghamForm) -> Self {
        Self { tau_star, form, base_cells: BASE_CELLS }
    }

    /// Base grid refined `refinements` times; symmetric about `y = 0`.
    pub fn mesh(&self, refinements: usize) -> Result<Mesh> {
        let [nx, ny] = self.base_cells;
        let mut m = build_rectangle_with([0.0, -1.0], [4.0, 2.0], nx, ny, Diagonal::MirroredY)?;
        for _ in 0..refinements {
            m = refine_uniform(&m);
        }
        Ok(m)
    }

    /// Exact velocity on the whole boundary, no body force.
    pub fn spec(&self, mesh: Arc<Mesh>, eps: f64) -> Result<ProblemSpec> {
        let reg = RegularizedModel::symmetric(self.form.model(self.tau_star, BENCHMARK_NU), eps)?;
        let tau = self.tau_star;
        Ok(ProblemSpec::new(mesh, reg).with_dirichlet(BoundaryTag::Wall, move |p| poiseuille_exact(tau, p).0))
    }
}

#[derive(Debug, Clone)]
pub struct PoiseuilleStage {
    pub eps: f64,
    pub l2_velocity: f64,
    pub h1_velocity: f64,
    pub l2_pressure: f64,
    /// Computed `u_x` at the channel centre `(2, 0)`.
    pub centre_velocity: f64,
    pub report: NewtonReport,
}

#[derive(Debug, Clone)]
pub struct PoiseuilleLevel {
    pub refinement: usize,
    pub dofs: usize,
    pub h_max: f64,
    pub stages: Vec<PoiseuilleStage>,
    /// Description of a failed stage, if any.
    pub failure: Option<String>,
}

impl PoiseuilleLevel {
    pub fn converged(&self) -> bool {
        self.failure.is_none()
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.report.iterations).sum()
    }

    pub fn stage(&self, eps: f64) -> Option<&PoiseuilleStage> {
        self.stages.iter().find(|s| (s.eps - eps).abs() <= 1e-12 * eps)
    }
}

#[derive(Debug, Clone)]
pub struct PoiseuilleRecord {
    pub case: PoiseuilleCase,
    pub levels: Vec<PoiseuilleLevel>,
}

impl PoiseuilleRecord {
    pub fn converged(&self) -> bool {
        self.levels.iter().all(|l| l.converged())
    }
}

/// Solve one mesh through the whole schedule.
pub fn run_poiseuille_level(
    case: &PoiseuilleCase,
    refinement: usize,
    schedule: &ContinuationSchedule,
    opts: &NewtonOptions,
    execution: Execution,
) -> Result<(PoiseuilleLevel, State)> {
    let mesh = Arc::new(case.mesh(refinement)?);
    let spec = case.spec(mesh.clone(), schedule.epsilons()[0])?.with_execution(execution);
    let mut ws = NewtonWorkspace::new();
    let out = solve_continuation_from(&spec, schedule, State::zeros(spec.layout()), opts, &mut ws)?;
    let tau = case.tau_star;
    let centre = mesh
        .vertices()
        .iter()
        .position(|p| (p[0] - 2.0).abs() < 1e-12 && p[1].abs() < 1e-12);
    let mut stages = Vec::new();
    for (report, state) in out.reports.iter().zip(&out.stage_states) {
        stages.push(PoiseuilleStage {
            eps: report.eps,
            l2_velocity: error_l2_velocity(&mesh, state, |x| poiseuille_exact(tau, x).0)?,
            h1_velocity: error_h1_velocity(&mesh, state, |x| poiseuille_exact_gradient(tau, x))?,
            l2_pressure: error_l2_pressure(&mesh, state, |x| poiseuille_exact(tau, x).1)?,
            centre_velocity: centre.map_or(f64::NAN, |v| state.velocity(v)[0]),
            report: report.clone(),
        });
    }
    let failure = out.failure.as_ref().map(|f| format!("stage {} (eps = {:e}): {}", f.stage, f.eps, f.reason));
    let level = PoiseuilleLevel { refinement, dofs: dof_count(&mesh), h_max: mesh.h_max(), stages, failure };
    Ok((level, out.state))
}

/// Mesh ladder `0..=refinements`; each level runs the full schedule from a
/// zero initial state. Levels run concurrently under `Execution::Parallel`.
pub fn run_poiseuille(
    case: &PoiseuilleCase,
    refinements: usize,
    schedule: &ContinuationSchedule,
    opts: &NewtonOptions,
    execution: Execution,
) -> Result<PoiseuilleRecord> {
    let levels = execution.map(refinements + 1, |r| {
        run_poiseuille_level(case, r, schedule, opts, execution).map(|(level, _)| level)
    });
    Ok(PoiseuilleRecord { case: *case, levels: levels.into_iter().collect::<Result<_>>()? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_values() {
        let (u, _) = poiseuille_exact(1.0, [1.0, 0.0]);
        assert!((u[0] - 0.353553).abs() < 1e-6 && u[1] == 0.0);
        for y in [0.5, -0.5] {
            let (u, p) = poiseuille_exact(1.0, [0.0, y]);
            assert!((u[0] - SQRT2 / 4.0).abs() < 1e-15);
            assert!((p - 16.0 * SQRT2).abs() < 1e-12);
        }
        assert!((poiseuille_exact(1.0, [0.0, 0.3]).1 - 22.6274).abs() < 1e-4);
        assert_eq!(poiseuille_exact(2.0, [3.0, 1.0]).0, [0.0, 0.0]);
    }

    #[test]
    fn exact_solution_satisfies_strong_form() {
        // In the yielded region S = tau* D/|D| + 2 nu D. Check
        // d S_xy / dy = d p / dx numerically for 2 nu = 1.
        let tau = 1.7;
        let sxy = |y: f64| {
            let g = poiseuille_exact_gradient(tau, [0.0, y])[0][1];
            let d = 0.5 * g;
            let nd = SQRT2 * d.abs();
            tau * d / nd + 2.0 * BENCHMARK_NU * d
        };
        let dpdx = -SQRT2 * tau;
        for y in [0.55, 0.7, 0.9, -0.6, -0.8] {
            let h = 1e-5;
            let ds = (sxy(y + h) - sxy(y - h)) / (2.0 * h);
            assert!((ds - dpdx).abs() < 1e-6, "y = {y}: {ds} vs {dpdx}");
        }
        // In the plug |S| must not exceed the yield stress: S_xy is linear
        // in y with S_xy(+-1/2) = +-tau*/sqrt 2, so |S| = sqrt2 |S_xy| <= tau*.
        let s_edge = sxy(0.5 + 1e-12);
        assert!((SQRT2 * s_edge.abs() - tau).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for y in [-0.9, -0.7, 0.0, 0.3, 0.6, 0.95] {
            let h = 1e-6;
            let fd = (poiseuille_exact(1.0, [1.0, y + h]).0[0] - poiseuille_exact(1.0, [1.0, y - h]).0[0]) / (2.0 * h);
            assert!((fd - poiseuille_exact_gradient(1.0, [1.0, y])[0][1]).abs() < 1e-6);
        }
    }

    #[test]
    fn plate_profile_matches_exact_solution() {
        // The exact solution has plug 1/2 and mean sqrt2 tau* (1/4)(5/2)/3.
        let tau = 1.3;
        let mean = SQRT2 * tau * 0.25 * 2.5 / 3.0;
        let p = PlateProfile::with_mean(tau, mean);
        assert!((p.plug - 0.5).abs() < 1e-12 && (p.gradient - SQRT2 * tau).abs() < 1e-9);
        for y in [-1.0, -0.7, -0.2, 0.0, 0.4, 0.8, 1.0] {
            assert!((p.velocity(y) - poiseuille_exact(tau, [0.0, y]).0[0]).abs() < 1e-10);
        }
        // Fixed flux: the plug widens with the yield stress.
        let mut last = 0.0;
        for bn in [0.5, 2.0, 10.0, 50.0] {
            let p = PlateProfile::with_mean(bn, 1.0);
            assert!((p.mean() - 1.0).abs() < 1e-12);
            assert!(p.plug > last && p.plug < 1.0);
            last = p.plug;
        }
        // Newtonian limit: parabola with mean 1.
        let p = PlateProfile::with_mean(0.0, 1.0);
        assert!((p.velocity(0.0) - 1.5).abs() < 1e-14 && (p.mean() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn base_mesh_size() {
        let case = PoiseuilleCase::new(1.0, BinghamForm::Product);
        let m = case.mesh(0).unwrap();
        assert_eq!(dof_count(&m), 8914);
    }
}
