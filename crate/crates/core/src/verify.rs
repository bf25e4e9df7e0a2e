//! Property suite run by `ssnflow verify`.
//!
//! Every property draws its random inputs from its own stream derived from
//! the suite seed, so results do not depend on which subset is run.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{Assembler, LinearMode, ProblemSpec};
use crate::constitutive::{solve_pointwise_stress, ConstitutiveModel, RegularizedModel};
use crate::linsolve::LuSolver;
use crate::mesh::{build_channel, build_rectangle, build_rectangle_with, refine_times, BoundaryTag, Diagonal, Mesh};
use crate::newton::solve_newton;
use crate::postprocess::{write_vtk_to, FieldSnapshot};
use crate::spaces::{element_velocity, State};
use crate::tensor::{SymLinMap, SymTensor2};

/// Reference output for [`two_triangle_snapshot`].
pub const VTK_GOLDEN: &str = include_str!("../tests/data/two_triangles.vtk");

/// Deliberate defects used to check that the suite catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Negate the `tau`-derivative of every constitutive selection before it
    /// is compared with finite differences.
    FlipD2,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub mutation: Mutation,
}

#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = std::result::Result<String, String>;

struct Ctx {
    rng: ChaCha8Rng,
    mutation: Mutation,
}

type Property = fn(&mut Ctx) -> Check;

/// Names and checks, in run order.
const PROPERTIES: [(&str, Property); 13] = [
    ("mesh_invariants", mesh_invariants),
    ("tensor_contraction", tensor_contraction),
    ("regularised_zero", regularised_zero),
    ("graph_monotonicity", graph_monotonicity),
    ("growth_bound", growth_bound),
    ("branch_consistency", branch_consistency),
    ("semismooth_probe", semismooth_probe),
    ("max_form_witness", max_form_witness),
    ("pointwise_jacobian_fd", pointwise_jacobian_fd),
    ("assembled_jacobian_fd", assembled_jacobian_fd),
    ("linearised_solve", linearised_solve),
    ("newtonian_one_iteration", newtonian_one_iteration),
    ("vtk_golden", vtk_golden),
];

pub fn property_names() -> Vec<&'static str> {
    PROPERTIES.iter().map(|p| p.0).collect()
}

fn run_one(index: usize, opts: &VerifyOptions) -> PropertyOutcome {
    let (name, check) = PROPERTIES[index];
    let stream = opts.seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut ctx = Ctx { rng: ChaCha8Rng::seed_from_u64(stream), mutation: opts.mutation };
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut ctx)))
        .unwrap_or_else(|_| Err("panicked".into()));
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => PropertyOutcome { name, passed: true, detail, seconds },
        Err(detail) => PropertyOutcome { name, passed: false, detail, seconds },
    }
}

pub fn run_suite(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    (0..PROPERTIES.len()).map(|i| run_one(i, opts)).collect()
}

/// Run only the named properties; unknown names are returned as errors.
pub fn run_selected(names: &[&str], opts: &VerifyOptions) -> std::result::Result<Vec<PropertyOutcome>, String> {
    names
        .iter()
        .map(|n| PROPERTIES.iter().position(|p| p.0 == *n).map(|i| run_one(i, opts)).ok_or_else(|| n.to_string()))
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut impl Rng, scale: f64) -> SymTensor2 {
    SymTensor2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

/// Random direction with a log-uniform magnitude in `[10^lo, 10^hi]`.
fn log_tensor(rng: &mut impl Rng, lo: f64, hi: f64) -> SymTensor2 {
    let t = random_tensor(rng, 1.0);
    let n = t.norm().max(1e-300);
    t * (10f64.powf(rng.gen_range(lo..hi)) / n)
}

fn bingham() -> ConstitutiveModel {
    ConstitutiveModel::BinghamProduct { tau_star: 1.0, nu: 0.5 }
}

fn herschel_bulkley() -> ConstitutiveModel {
    ConstitutiveModel::HerschelBulkley { tau_star: 1.0, nu: 0.5, r: 1.7 }
}

fn every_model() -> [ConstitutiveModel; 6] {
    [
        ConstitutiveModel::Newtonian { nu: 0.5 },
        ConstitutiveModel::PowerLaw { k: 1.3, r: 1.6 },
        bingham(),
        ConstitutiveModel::BinghamMax { tau_star: 1.0, nu: 0.5 },
        ConstitutiveModel::BinghamProjection { tau_star: 1.0, nu: 0.5 },
        herschel_bulkley(),
    ]
}

fn mesh_invariants(ctx: &mut Ctx) -> Check {
    let rng = &mut ctx.rng;
    let mut checked = 0;
    let mut check = |m: &Mesh, area: f64, what: &str| -> std::result::Result<(), String> {
        m.check_invariants().map_err(|e| format!("{what}: {e}"))?;
        let rel = (m.total_area() - area).abs() / area;
        ensure(rel <= 1e-12, || format!("{what}: area {} vs {area}", m.total_area()))?;
        let euler = m.n_vertices() as i64 - m.n_edges() as i64 + m.n_triangles() as i64;
        ensure(euler == 1, || format!("{what}: V - E + F = {euler}"))?;
        ensure(m.boundary_loops() == 1, || format!("{what}: {} boundary loops", m.boundary_loops()))?;
        // Tags partition the boundary: each edge carries exactly one tag and
        // the tagged lengths add up to the perimeter.
        let tagged: f64 = BoundaryTag::ALL
            .iter()
            .map(|&tag| {
                m.boundary_edges()
                    .iter()
                    .filter(|e| e.tag == tag)
                    .map(|e| {
                        let (a, b) = (m.vertices()[e.vertices[0]], m.vertices()[e.vertices[1]]);
                        (a[0] - b[0]).hypot(a[1] - b[1])
                    })
                    .sum::<f64>()
            })
            .sum();
        let perimeter: f64 = m
            .boundary_edges()
            .iter()
            .map(|e| {
                let (a, b) = (m.vertices()[e.vertices[0]], m.vertices()[e.vertices[1]]);
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .sum();
        ensure((tagged - perimeter).abs() <= 1e-12 * perimeter, || format!("{what}: tags cover {tagged} of {perimeter}"))?;
        checked += 1;
        Ok(())
    };
    for k in 0..8 {
        let (nx, ny) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let origin = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let extent = [rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0)];
        let diagonal = if k % 2 == 0 { Diagonal::Uniform } else { Diagonal::MirroredY };
        let levels = rng.gen_range(0..=3);
        let m = build_rectangle_with(origin, extent, nx, ny, diagonal).map_err(|e| e.to_string())?;
        check(&refine_times(&m, levels), extent[0] * extent[1], &format!("rectangle {nx}x{ny} r{levels}"))?;
    }
    let deep = refine_times(&build_rectangle([0.0, 0.0], [2.0, 1.0], 2, 1).map_err(|e| e.to_string())?, 5);
    check(&deep, 2.0, "rectangle depth 5")?;
    let channel = refine_times(&build_channel(3.0, 0.2, 1.2, 10).map_err(|e| e.to_string())?, 1);
    check(&channel, 11.0 * 2.0 + 5.0 * 0.4, "channel")?;
    Ok(format!("{checked} meshes"))
}

fn tensor_contraction(ctx: &mut Ctx) -> Check {
    let full = |t: SymTensor2| Matrix2::new(t.xx, t.xy, t.xy, t.yy);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (a, b, c) = (random_tensor(&mut ctx.rng, 3.0), random_tensor(&mut ctx.rng, 3.0), random_tensor(&mut ctx.rng, 3.0));
        let oracle = full(a).component_mul(&full(b)).sum();
        worst = worst.max((a.dot(b) - oracle).abs());
        worst = worst.max((a.norm().powi(2) - full(a).norm_squared()).abs());
        // outer(a, b) applied to c is a (b : c).
        let lhs = SymLinMap::outer(a, b).apply(c);
        let rhs = a * full(b).component_mul(&full(c)).sum();
        worst = worst.max((lhs - rhs).norm());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("500 triples, max deviation {worst:.1e}"))
}

fn regularised_zero(_: &mut Ctx) -> Check {
    for model in every_model() {
        for eps in [0.0, 1e-4, 0.5] {
            let reg = RegularizedModel::symmetric(model, eps).map_err(|e| e.to_string())?;
            let g = reg.eval(SymTensor2::ZERO, SymTensor2::ZERO);
            ensure(g == SymTensor2::ZERO, || format!("{model:?} at eps {eps}: {g:?}"))?;
        }
    }
    Ok("6 models x 3 eps".into())
}

fn graph_monotonicity(ctx: &mut Ctx) -> Check {
    let mut report = Vec::new();
    for (label, model) in [("bingham", bingham()), ("herschel-bulkley", herschel_bulkley())] {
        for eps in [0.5, 0.01] {
            let reg = RegularizedModel::symmetric(model, eps).map_err(|e| e.to_string())?;
            let c = eps / (1.0 + eps * eps);
            let mut violations = 0;
            let mut margin = f64::INFINITY;
            for _ in 0..1000 {
                let d1 = log_tensor(&mut ctx.rng, -4.0, 1.0);
                let d2 = log_tensor(&mut ctx.rng, -4.0, 1.0);
                let s1 = solve_pointwise_stress(&reg, d1, SymTensor2::ZERO).map_err(|e| e.to_string())?;
                let s2 = solve_pointwise_stress(&reg, d2, SymTensor2::ZERO).map_err(|e| e.to_string())?;
                let (ds, dd) = (s1 - s2, d1 - d2);
                let rhs = c * (ds.dot(ds) + dd.dot(dd));
                let lhs = ds.dot(dd);
                let slack = 1e-9 * (rhs + 1e-300).max(1e-14);
                if lhs < rhs - slack {
                    violations += 1;
                }
                if rhs > 0.0 {
                    margin = margin.min(lhs / rhs);
                }
            }
            ensure(violations == 0, || format!("{model:?} eps {eps}: {violations} of 1000 pairs violate"))?;
            report.push(format!("{label} eps {eps}: min ratio {margin:.4}"));
        }
    }
    Ok(format!("4000 pairs, no violations ({})", report.join(", ")))
}

fn growth_bound(ctx: &mut Ctx) -> Check {
    // |tau||sigma| <= (|sigma|^2 + |tau|^2)/2 and tau*|tau| <= (tau*^2 + |tau|^2)/2
    // give |G| <= 2(|sigma|^2 + |tau|^2) + tau*^2/2 for 2 nu = 1.
    let (tau_star, c) = (1.0, 2.0);
    let c_tilde = 0.5 * tau_star * tau_star;
    let model = bingham();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let sigma = log_tensor(&mut ctx.rng, -3.0, 3.0);
        let tau = log_tensor(&mut ctx.rng, -3.0, 3.0);
        let bound = c * (sigma.dot(sigma) + tau.dot(tau)) + c_tilde;
        let g = model.eval(sigma, tau).norm();
        worst = worst.max(g / bound);
    }
    ensure(worst <= 1.0, || format!("|G| reaches {worst} of the bound"))?;
    Ok(format!("10000 samples, max |G|/bound {worst:.3}"))
}

fn branch_consistency(ctx: &mut Ctx) -> Check {
    let eps = 1e-4;
    let reg = RegularizedModel::symmetric(bingham(), eps).map_err(|e| e.to_string())?;
    let (mut plug, mut yielded) = (0, 0);
    for _ in 0..2000 {
        let d = log_tensor(&mut ctx.rng, -6.0, 1.0);
        let s = solve_pointwise_stress(&reg, d, SymTensor2::ZERO).map_err(|e| e.to_string())?;
        let (ns, nd) = (s.norm(), d.norm());
        if ns < 0.95 {
            ensure(nd <= 5.0 * eps * ns, || format!("plug: |S| = {ns}, |D| = {nd}"))?;
            plug += 1;
        }
        if nd > 0.1 {
            ensure((ns - (1.0 + nd)).abs() <= 0.05 * ns, || format!("yielded: |S| = {ns}, |D| = {nd}"))?;
            yielded += 1;
        }
    }
    ensure(plug > 0 && yielded > 0, || "sampling missed a branch".into())?;
    Ok(format!("{plug} plug and {yielded} yielded samples"))
}

fn remainder(model: &ConstitutiveModel, base: (SymTensor2, SymTensor2), step: (SymTensor2, SymTensor2), phi: SymTensor2) -> f64 {
    let (s, t) = (base.0 + step.0, base.1 + step.1);
    let (d1, d2) = model.jacobian_with_direction(s, t, phi);
    let r = model.eval(s, t) - model.eval(base.0, base.1) - d1.apply(step.0) - d2.apply(step.1);
    r.norm() / (step.0.dot(step.0) + step.1.dot(step.1)).sqrt()
}

fn semismooth_probe(ctx: &mut Ctx) -> Check {
    let model = bingham();
    let sigma = random_tensor(&mut ctx.rng, 2.0);
    let (ds, dt) = (random_tensor(&mut ctx.rng, 1.0), random_tensor(&mut ctx.rng, 1.0));
    let ratios: Vec<f64> = (0..=10)
        .map(|k| {
            let h = 0.5f64.powi(k);
            remainder(&model, (sigma, SymTensor2::ZERO), (ds * h, dt * h), SymTensor2::ZERO)
        })
        .collect();
    let decreasing = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    ensure(decreasing && ratios[10] <= 1e-2 * ratios[0], || format!("normalised remainders {ratios:?}"))?;
    Ok(format!("normalised remainder {:.2e} -> {:.2e}", ratios[0], ratios[10]))
}

fn max_form_witness(ctx: &mut Ctx) -> Check {
    // Points sigma + sigma_k on the yield sphere approach sigma; with the
    // kink selection M_phi, phi along sigma_k, the remainder stays of the
    // order of the step.
    let nu = 0.5;
    let raw = random_tensor(&mut ctx.rng, 1.0);
    let sigma = raw * (1.0 / raw.norm());
    let other = random_tensor(&mut ctx.rng, 1.0);
    let e = other - sigma * sigma.dot(other);
    let e = e * (1.0 / e.norm());
    let tau = random_tensor(&mut ctx.rng, 1.0) + sigma * 3.0;
    let dtau = random_tensor(&mut ctx.rng, 1.0);
    let mut ratios = Vec::new();
    for k in 0..=10 {
        let theta = 0.5f64.powi(k);
        let on_sphere = sigma * theta.cos() + e * theta.sin();
        let sigma_k = on_sphere - sigma;
        let tau_k = dtau * theta;
        // Yield stress equal to the computed norm puts the point exactly on
        // the kink; the base point is within rounding of it.
        let model = ConstitutiveModel::BinghamMax { tau_star: on_sphere.norm(), nu };
        let phi = sigma_k * (1.0 / sigma_k.norm());
        ratios.push(remainder(&model, (sigma, tau), (sigma_k, tau_k), phi));
    }
    let floor = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(floor > 0.05, || format!("remainders {ratios:?} approach zero"))?;
    Ok(format!("normalised remainder stays above {floor:.3}"))
}

fn away_from_kinks(model: &ConstitutiveModel, sigma: SymTensor2, tau: SymTensor2) -> bool {
    match model {
        ConstitutiveModel::BinghamMax { tau_star, .. } | ConstitutiveModel::BinghamProjection { tau_star, .. } => {
            (sigma.norm() - tau_star).abs() > 0.1
        }
        ConstitutiveModel::Newtonian { .. } => true,
        _ => tau.norm() > 0.1,
    }
}

fn pointwise_jacobian_fd(ctx: &mut Ctx) -> Check {
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut count = 0;
    for model in every_model() {
        for eps in [0.0, 0.01] {
            let reg = RegularizedModel::symmetric(model, eps).map_err(|e| e.to_string())?;
            let mut tested = 0;
            while tested < 20 {
                let s = random_tensor(&mut ctx.rng, 2.5);
                let d = random_tensor(&mut ctx.rng, 2.5);
                let (a, b) = reg.shifted(s, d);
                if !away_from_kinks(&model, a, b) {
                    continue;
                }
                let (vs, vd) = (random_tensor(&mut ctx.rng, 1.0), random_tensor(&mut ctx.rng, 1.0));
                let (d1, mut d2) = reg.jacobian(s, d);
                if ctx.mutation == Mutation::FlipD2 {
                    d2 = -1.0 * d2;
                }
                let jv = d1.apply(vs) + d2.apply(vd);
                let fd = (reg.eval(s + vs * h, d + vd * h) - reg.eval(s - vs * h, d - vd * h)) * (0.5 / h);
                let err = (fd - jv).norm() / jv.norm().max(fd.norm()).max(1e-12);
                ensure(err <= 1e-6, || format!("{model:?} eps {eps}: relative error {err:e}"))?;
                worst = worst.max(err);
                tested += 1;
                count += 1;
            }
        }
    }
    Ok(format!("{count} points, max relative error {worst:.1e}"))
}

fn random_state(spec: &ProblemSpec, rng: &mut impl Rng) -> State {
    let l = spec.layout();
    State::from_vec(l, (0..l.total()).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("layout length")
}

fn unit_square(n: usize) -> Arc<Mesh> {
    Arc::new(build_rectangle([0.0, 0.0], [1.0, 1.0], n, n).expect("valid rectangle"))
}

fn assembled_jacobian_fd(ctx: &mut Ctx) -> Check {
    let mesh = unit_square(3);
    let models = [bingham(), herschel_bulkley(), ConstitutiveModel::BinghamProjection { tau_star: 0.3, nu: 0.5 }];
    let mut worst = 0.0f64;
    let mut states = 0;
    for (i, model) in models.into_iter().enumerate() {
        let reg = RegularizedModel::symmetric(model, 0.01).map_err(|e| e.to_string())?;
        let mut spec = ProblemSpec::new(mesh.clone(), reg).with_dirichlet(BoundaryTag::Wall, |p| [p[1], -p[0]]);
        spec.alpha = 3.0;
        let asm = Assembler::new(&spec).map_err(|e| e.to_string())?;
        let want = if i == 0 { 8 } else { 6 };
        let mut tested = 0;
        while tested < want {
            let st = random_state(&spec, &mut ctx.rng);
            let clear = (0..mesh.n_triangles()).all(|t| {
                let d = asm.elements()[t].sym_gradient(element_velocity(&mesh, &st, t));
                let (a, b) = reg.shifted(st.stress(t), d);
                b.norm() > 0.1 && (a.norm() - model.yield_stress()).abs() > 0.05
            });
            if !clear {
                continue;
            }
            let dir: Vec<f64> = (0..st.coeffs().len()).map(|_| ctx.rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-6;
            let shifted = |sign: f64| -> std::result::Result<Vec<f64>, String> {
                let mut x = st.clone();
                for (xi, di) in x.coeffs_mut().iter_mut().zip(&dir) {
                    *xi += sign * h * di;
                }
                asm.residual(&x).map_err(|e| e.to_string())
            };
            let (fp, fm) = (shifted(1.0)?, shifted(-1.0)?);
            let jd = asm.jacobian(&st).map_err(|e| e.to_string())?.matrix.matvec(&dir);
            let num: f64 = fp.iter().zip(&fm).zip(&jd).map(|((a, b), j)| ((a - b) / (2.0 * h) - j).powi(2)).sum();
            let den: f64 = jd.iter().map(|j| j * j).sum();
            let err = (num / den).sqrt();
            ensure(err <= 1e-6, || format!("{model:?}: relative error {err:e}"))?;
            worst = worst.max(err);
            tested += 1;
            states += 1;
        }
    }
    Ok(format!("{states} states, max relative error {worst:.1e}"))
}

fn linearised_solve(ctx: &mut Ctx) -> Check {
    let reg = RegularizedModel::symmetric(bingham(), 0.05).map_err(|e| e.to_string())?;
    let mut spec = ProblemSpec::new(unit_square(4), reg).with_dirichlet(BoundaryTag::Wall, |p| [p[1] * (1.0 - p[1]), 0.0]);
    spec.alpha = 2.0;
    let asm = Assembler::new(&spec).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let st = random_state(&spec, &mut ctx.rng);
        let r = asm.residual(&st).map_err(|e| e.to_string())?;
        let (mut a, mut b) = (LuSolver::new(), LuSolver::new());
        let (delta, _) = asm.newton_direction(&st, &r, LinearMode::Condensed, &mut a, &mut b).map_err(|e| e.to_string())?;
        let jd = asm.jacobian(&st).map_err(|e| e.to_string())?.matrix.matvec(&delta);
        let lin = r.iter().zip(&jd).map(|(f, j)| (f + j).powi(2)).sum::<f64>().sqrt();
        let rn = r.iter().map(|f| f * f).sum::<f64>().sqrt();
        worst = worst.max(lin / rn);
    }
    ensure(worst <= 1e-10, || format!("|F + M d| / |F| = {worst:e}"))?;
    Ok(format!("5 states, max |F + M d| / |F| {worst:.1e}"))
}

fn newtonian_one_iteration(_: &mut Ctx) -> Check {
    let reg = RegularizedModel::symmetric(ConstitutiveModel::Newtonian { nu: 0.5 }, 0.1).map_err(|e| e.to_string())?;
    let mesh = Arc::new(
        build_rectangle([0.0, 0.0], [1.0, 1.0], 6, 6)
            .map_err(|e| e.to_string())?
            .with_tags(|a, b| (a[1] == 1.0 && b[1] == 1.0).then_some(BoundaryTag::Lid)),
    );
    let spec = ProblemSpec::new(mesh, reg)
        .with_dirichlet(BoundaryTag::Lid, |_| [1.0, 0.0])
        .with_dirichlet(BoundaryTag::Wall, |_| [0.0, 0.0]);
    let (_, report) = solve_newton(&spec, State::zeros(spec.layout()), 1e-9, 5).map_err(|e| e.to_string())?;
    ensure(report.converged && report.iterations == 1, || {
        format!("{} iterations, residuals {:?}", report.iterations, report.residual_norms)
    })?;
    Ok(format!("final residual {:.1e}", report.final_residual()))
}

/// Two triangles on the unit square with one nodal and one cell field.
pub fn two_triangle_snapshot(mesh: &Mesh) -> crate::Result<FieldSnapshot<'_>> {
    FieldSnapshot::new(mesh)
        .point_scalar("p", vec![0.0, 1.0, 2.0, 3.0])?
        .point_vector("u", vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, -0.5]])?
        .cell_scalar("abs_D", vec![0.5, 0.25])
}

pub fn two_triangle_mesh() -> crate::Result<Mesh> {
    Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], vec![[0, 1, 2], [0, 2, 3]])
}

fn vtk_golden(_: &mut Ctx) -> Check {
    let mesh = two_triangle_mesh().map_err(|e| e.to_string())?;
    let snap = two_triangle_snapshot(&mesh).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    write_vtk_to(&snap, &mut out).map_err(|e| e.to_string())?;
    let text = String::from_utf8(out).map_err(|e| e.to_string())?;
    if text == VTK_GOLDEN {
        return Ok(format!("{} bytes match", text.len()));
    }
    let line = text.lines().zip(VTK_GOLDEN.lines()).position(|(a, b)| a != b).map_or(0, |i| i + 1);
    Err(format!("output differs from the golden file at line {line}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_property_passes() {
        for out in run_suite(&VerifyOptions { seed: 7, mutation: Mutation::None }) {
            assert!(out.passed, "{}: {}", out.name, out.detail);
        }
    }

    #[test]
    fn sign_flip_in_d2_is_caught() {
        let out = run_selected(&["pointwise_jacobian_fd"], &VerifyOptions { seed: 7, mutation: Mutation::FlipD2 }).unwrap();
        assert!(!out[0].passed);
    }

    #[test]
    fn unknown_property_is_reported() {
        assert_eq!(run_selected(&["nope"], &VerifyOptions::default()).unwrap_err(), "nope");
    }
}
