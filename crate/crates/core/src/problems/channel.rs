//! Expansion-contraction channel.
//!
//! Inflow and outflow carry the fully developed plate profile with yield
//! stress `Bn` on the half-width-1 sections; all other walls are no-slip.

use std::collections::HashMap;
use std::sync::Arc;

use crate::assembly::ProblemSpec;
use crate::constitutive::{BinghamForm, RegularizedModel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mesh::{build_channel_graded, refine_times, BoundaryTag, ChannelGrading, Mesh};
use crate::newton::{solve_continuation_from, ContinuationSchedule, NewtonOptions, NewtonReport, NewtonWorkspace, WarmStart};
use crate::postprocess::{affine_fit, sample_line, strain_rate_norms, AffineFit, LineSample};
use crate::spaces::State;

use super::poiseuille::{poiseuille_exact, PlateProfile};
use super::{dof_count, BENCHMARK_NU};

/// Reference dead-zone lengths `(Bn, L_d)` for `l_hat = 3`, `delta = 1/5`,
/// `h = 6/5`.
pub const TABLE: [(f64, f64); 7] = [
    (2.0, 0.0469),
    (5.0, 0.06453),
    (10.0, 0.07813),
    (20.0, 0.09688),
    (30.0, 0.10626),
    (40.0, 0.11876),
    (50.0, 0.12500),
];

/// Relative dead-zone thresholds reported besides the default.
pub const THRESHOLD_SWEEP: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Velocity scale of the fully developed inflow and outflow profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inflow {
    /// Unit mean velocity; the plug width grows with `Bn`.
    UnitMean,
    /// The plate solution with yield stress `Bn` and plug half-width 1/2.
    /// Velocity then scales with `Bn` and, the product form being
    /// homogeneous, so does the whole solution: the flow pattern does not
    /// depend on `Bn`.
    YieldScaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCase {
    pub bn: f64,
    pub inflow: Inflow,
    pub l_hat: f64,
    pub delta: f64,
    /// Half-width of the central cavity.
    pub h: f64,
    pub grading: ChannelGrading,
    pub eps: f64,
    pub form: BinghamForm,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub schedule: ContinuationSchedule,
    /// Plug cells satisfy `|D| < threshold * sqrt(2) * Bn`.
    pub dead_zone_threshold: f64,
    /// Pressure samples along the line.
    pub pressure_samples: usize,
    /// The upstream fit skips this much next to the inflow boundary, where
    /// the pressure stabilisation leaves a boundary layer, and one unit
    /// before the cavity.
    pub inflow_layer: f64,
}

impl ChannelCase {
    pub fn new(bn: f64) -> Self {
        let eps = 1e-4;
        Self {
            bn,
            inflow: Inflow::UnitMean,
            l_hat: 3.0,
            delta: 0.2,
            h: 1.2,
            grading: ChannelGrading { coarse: 0.1, fine: 0.005, growth: 1.25, near: 0.02, reach: 1.0 },
            eps,
            form: BinghamForm::Product,
            newton_tol: 1e-9,
            newton_max_iter: 60,
            schedule: ContinuationSchedule::ending_at(eps, WarmStart::Reuse).expect("default schedule is valid"),
            dead_zone_threshold: 1e-3,
            pressure_samples: 551,
            inflow_layer: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bn > 0.0) || !self.bn.is_finite() {
            return Err(Error::InvalidSpec(format!("Bingham number must be positive, got {}", self.bn)));
        }
        if !(self.dead_zone_threshold > 0.0) {
            return Err(Error::InvalidSpec("dead-zone threshold must be positive".into()));
        }
        if self.pressure_samples < 2 {
            return Err(Error::InvalidSpec("need at least two pressure samples".into()));
        }
        Ok(())
    }

    /// Half-length of the cavity, `1 / (2 delta)`.
    pub fn cavity_half_length(&self) -> f64 {
        0.5 / self.delta
    }

    pub fn x_end(&self) -> f64 {
        self.cavity_half_length() + self.l_hat
    }

    pub fn profile(&self) -> PlateProfile {
        match self.inflow {
            Inflow::UnitMean => PlateProfile::with_mean(self.bn, 1.0),
            Inflow::YieldScaled => {
                let p = PlateProfile { gradient: std::f64::consts::SQRT_2 * self.bn, plug: 0.5 };
                debug_assert!((p.velocity(0.0) - poiseuille_exact(self.bn, [0.0, 0.0]).0[0]).abs() < 1e-9);
                p
            }
        }
    }

    /// Height of the pressure line: halfway between the wall `y = 1` and
    /// the edge of the inflow plug.
    pub fn pressure_line_height(&self) -> f64 {
        0.5 * (1.0 + self.profile().plug)
    }

    pub fn mesh(&self, refinements: usize) -> Result<Mesh> {
        let m = build_channel_graded(self.l_hat, self.delta, self.h, &self.grading)?;
        Ok(refine_times(&m, refinements))
    }

    pub fn spec(&self, mesh: Arc<Mesh>) -> Result<ProblemSpec> {
        let reg = RegularizedModel::symmetric(self.form.model(self.bn, BENCHMARK_NU), self.eps)?;
        let plate = self.profile();
        let profile = move |p: [f64; 2]| [plate.velocity(p[1]), 0.0];
        Ok(ProblemSpec::new(mesh, reg)
            .with_dirichlet(BoundaryTag::Inflow, profile)
            .with_dirichlet(BoundaryTag::Outflow, profile)
            .with_dirichlet(BoundaryTag::Wall, |_| [0.0, 0.0]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadZone {
    /// Relative threshold (multiplies `sqrt(2) Bn`).
    pub threshold: f64,
    /// Horizontal extent measured from the expansion wall.
    pub length: f64,
    /// `length` in units of the cavity length `1/delta`.
    pub l_d: f64,
    /// Vertical extent measured from the cavity floor.
    pub height: f64,
    pub cells: usize,
}

#[derive(Debug, Clone)]
pub struct ChannelRecord {
    pub bn: f64,
    pub dofs: usize,
    pub reports: Vec<NewtonReport>,
    /// Dead zone at the default threshold.
    pub dead_zone: DeadZone,
    /// Dead zones for [`THRESHOLD_SWEEP`].
    pub sensitivity: Vec<DeadZone>,
    pub pressure_line: Vec<LineSample>,
    /// Affine fit of the pressure line over the inflow section.
    pub upstream_fit: AffineFit,
    pub state: State,
}

impl ChannelRecord {
    pub fn total_iterations(&self) -> usize {
        self.reports.iter().map(|r| r.iterations).sum()
    }
}

impl Inflow {
    pub fn name(self) -> &'static str {
        match self {
            Inflow::UnitMean => "unit-mean",
            Inflow::YieldScaled => "yield-scaled",
        }
    }
}

impl std::str::FromStr for Inflow {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "unit-mean" => Ok(Self::UnitMean),
            "yield-scaled" => Ok(Self::YieldScaled),
            other => Err(format!("unknown inflow '{other}' (expected unit-mean|yield-scaled)")),
        }
    }
}

fn cell_neighbours(mesh: &Mesh) -> Vec<Vec<usize>> {
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(t);
        }
    }
    let mut nb = vec![Vec::new(); mesh.n_triangles()];
    for cells in by_edge.values() {
        if let [a, b] = cells[..] {
            nb[a].push(b);
            nb[b].push(a);
        }
    }
    nb
}

/// Connected set of cells with `|D| < threshold sqrt(2) Bn` that touches the
/// upper expansion corner `(-1/(2 delta), h)`.
pub fn dead_zone(case: &ChannelCase, mesh: &Mesh, strain: &[f64], threshold: f64) -> DeadZone {
    let limit = threshold * std::f64::consts::SQRT_2 * case.bn;
    let corner = [-case.cavity_half_length(), case.h];
    let tol = 1e-9 * case.x_end();
    let at_corner = |t: usize| {
        mesh.triangle_points(t)
            .iter()
            .any(|p| (p[0] - corner[0]).abs() < tol && (p[1] - corner[1]).abs() < tol)
    };
    let nb = cell_neighbours(mesh);
    let mut seen = vec![false; mesh.n_triangles()];
    let mut stack: Vec<usize> = (0..mesh.n_triangles()).filter(|&t| at_corner(t) && strain[t] < limit).collect();
    for &t in &stack {
        seen[t] = true;
    }
    let (mut length, mut height, mut cells) = (0.0f64, 0.0f64, 0);
    while let Some(t) = stack.pop() {
        cells += 1;
        for p in mesh.triangle_points(t) {
            length = length.max(p[0] - corner[0]);
            height = height.max(corner[1] - p[1]);
        }
        for &n in &nb[t] {
            if !seen[n] && strain[n] < limit {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    DeadZone { threshold, length, l_d: length * case.delta, height, cells }
}

/// Steady solve followed by dead-zone and pressure-line metrics.
pub fn run_channel(case: &ChannelCase, refinements: usize, execution: Execution) -> Result<ChannelRecord> {
    case.validate()?;
    let mesh = Arc::new(case.mesh(refinements)?);
    let spec = case.spec(mesh.clone())?.with_execution(execution);
    let opts = NewtonOptions::robust(case.newton_tol, case.newton_max_iter);
    let mut ws = NewtonWorkspace::new();
    let out = solve_continuation_from(&spec, &case.schedule, State::zeros(spec.layout()), &opts, &mut ws)?;
    let (state, reports) = out.into_result()?;

    let strain = strain_rate_norms(&mesh, &state)?;
    let dead = dead_zone(case, &mesh, &strain, case.dead_zone_threshold);
    let sensitivity = THRESHOLD_SWEEP.iter().map(|&th| dead_zone(case, &mesh, &strain, th)).collect();

    let y = case.pressure_line_height();
    let x_end = case.x_end();
    let pressure = state.pressure_block().to_vec();
    let line = sample_line(&mesh, &pressure, [-x_end, y], [x_end, y], case.pressure_samples)?;
    let window = (-x_end + case.inflow_layer, -case.cavity_half_length() - 1.0);
    let upstream = line.iter().filter(|s| s.x >= window.0 && s.x <= window.1);
    let upstream_fit = affine_fit(upstream.map(|s| (s.x, s.value)))?;

    Ok(ChannelRecord {
        bn: case.bn,
        dofs: dof_count(&mesh),
        reports,
        dead_zone: dead,
        sensitivity,
        pressure_line: line,
        upstream_fit,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_and_geometry() {
        let mut case = ChannelCase::new(10.0);
        case.grading = ChannelGrading { coarse: 0.5, fine: 0.1, growth: 1.5, near: 0.5, reach: 0.0 };
        let m = case.mesh(0).unwrap();
        assert_eq!(case.x_end(), 5.5);
        let tags = m.tags_present();
        assert!(tags.contains(&BoundaryTag::Inflow) && tags.contains(&BoundaryTag::Outflow));
        let vt = m.vertex_tags();
        for (v, p) in m.vertices().iter().enumerate() {
            if (p[0] + 5.5).abs() < 1e-9 && p[1].abs() < 1.0 - 1e-9 {
                assert_eq!(vt[v], Some(BoundaryTag::Inflow));
            }
            if (p[0] + 5.5).abs() < 1e-9 && (p[1].abs() - 1.0).abs() < 1e-9 {
                assert_eq!(vt[v], Some(BoundaryTag::Wall));
            }
        }
        assert!(ChannelCase { bn: -1.0, ..case }.validate().is_err());
    }

    #[test]
    fn dead_zone_of_synthetic_field() {
        // Mark every cavity cell within 0.1 of the upper expansion corner as
        // stagnant; the measured extent must match the box.
        let mut case = ChannelCase::new(1.0);
        case.grading = ChannelGrading { coarse: 0.2, fine: 0.02, growth: 1.2, near: 0.2, reach: 0.0 };
        let m = case.mesh(0).unwrap();
        let strain: Vec<f64> = (0..m.n_triangles())
            .map(|t| {
                let c = m.centroid(t);
                if c[0] > -2.5 && c[0] < -2.4 && c[1] > 1.1 { 0.0 } else { 1.0 }
            })
            .collect();
        let dz = dead_zone(&case, &m, &strain, 1e-3);
        assert!(dz.cells > 0);
        assert!((dz.length - 0.1).abs() < 0.02, "{dz:?}");
        assert!((dz.l_d - 0.2 * dz.length).abs() < 1e-15);
        assert!((dz.height - 0.1).abs() < 0.02, "{dz:?}");
        // A stagnant patch away from the corner is not a dead zone.
        let strain: Vec<f64> =
            (0..m.n_triangles()).map(|t| if m.centroid(t)[0] > 0.0 { 0.0 } else { 1.0 }).collect();
        assert_eq!(dead_zone(&case, &m, &strain, 1e-3).cells, 0);
    }
}
