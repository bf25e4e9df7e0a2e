//! Residual and Jacobian assembly for the regularised three-field system.
//!
//! Row blocks of the residual:
//! * stress: `|K| G_eps(S_K, D(u)_K)` per triangle (raw tensor components);
//! * momentum: `alpha (u, v) + (S, D(v)) - (p, div v) - (f, v)`;
//! * continuity: `-(q, div u) - c h_K^2 (grad p, grad q) + lambda (1, q)`;
//! * multiplier: `(p, 1)`.
//!
//! Velocity rows at Dirichlet vertices are replaced by `u_i - g_i`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::constitutive::RegularizedModel;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linsolve::{LuSolver, TripletMatrix};
use crate::mesh::{BoundaryTag, Mesh, Point};
use crate::spaces::{all_element_data, DofLayout, ElementData, State};
use crate::tensor::{SymLinMap, SymTensor2, WEIGHTS};

pub type VelocityFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

pub const DEFAULT_STABILISATION: f64 = 0.2;

#[derive(Clone)]
pub struct ProblemSpec {
    pub mesh: Arc<Mesh>,
    pub reg: RegularizedModel,
    /// Coefficient of the velocity mass term.
    pub alpha: f64,
    /// Per-vertex body force.
    pub body_force: Vec<[f64; 2]>,
    /// Per-vertex force carried over from the previous time step; replaced,
    /// not accumulated, by [`apply_time_step`].
    history_force: Vec<[f64; 2]>,
    pub dirichlet: BTreeMap<BoundaryTag, VelocityFn>,
    pub stabilisation: f64,
    pub execution: Execution,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("vertices", &self.mesh.n_vertices())
            .field("triangles", &self.mesh.n_triangles())
            .field("reg", &self.reg)
            .field("alpha", &self.alpha)
            .field("dirichlet", &self.dirichlet.keys().collect::<Vec<_>>())
            .field("stabilisation", &self.stabilisation)
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(mesh: Arc<Mesh>, reg: RegularizedModel) -> Self {
        let nv = mesh.n_vertices();
        Self {
            mesh,
            reg,
            alpha: 0.0,
            body_force: vec![[0.0; 2]; nv],
            history_force: Vec::new(),
            dirichlet: BTreeMap::new(),
            stabilisation: DEFAULT_STABILISATION,
            execution: Execution::default(),
        }
    }

    pub fn with_dirichlet(mut self, tag: BoundaryTag, g: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static) -> Self {
        self.dirichlet.insert(tag, Arc::new(g));
        self
    }

    pub fn with_body_force(mut self, f: impl Fn(Point) -> [f64; 2]) -> Self {
        self.body_force = self.mesh.vertices().iter().map(|&p| f(p)).collect();
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_reg(mut self, reg: RegularizedModel) -> Self {
        self.reg = reg;
        self
    }

    pub fn layout(&self) -> DofLayout {
        DofLayout::new(&self.mesh)
    }

    pub fn history_force(&self) -> &[[f64; 2]] {
        &self.history_force
    }

    pub fn validate(&self) -> Result<()> {
        self.reg.base.validate()?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidSpec(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.stabilisation >= 0.0) {
            return Err(Error::InvalidSpec(format!("stabilisation must be >= 0, got {}", self.stabilisation)));
        }
        let nv = self.mesh.n_vertices();
        if self.body_force.len() != nv {
            return Err(Error::DimensionMismatch { expected: nv, found: self.body_force.len() });
        }
        if !self.history_force.is_empty() && self.history_force.len() != nv {
            return Err(Error::DimensionMismatch { expected: nv, found: self.history_force.len() });
        }
        for tag in self.mesh.tags_present() {
            if !self.dirichlet.contains_key(&tag) {
                return Err(Error::InvalidSpec(format!("no Dirichlet data for boundary tag {tag:?}")));
            }
        }
        Ok(())
    }
}

/// Implicit Euler: `alpha = 1/dt` and a history force `u_old / dt`.
pub fn apply_time_step(spec: &ProblemSpec, u_old: &[f64], dt: f64) -> Result<ProblemSpec> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidSpec(format!("time step must be positive, got {dt}")));
    }
    let nv = spec.mesh.n_vertices();
    if u_old.len() != 2 * nv {
        return Err(Error::DimensionMismatch { expected: 2 * nv, found: u_old.len() });
    }
    let mut out = spec.clone();
    out.alpha = 1.0 / dt;
    out.history_force = u_old.chunks_exact(2).map(|u| [u[0] / dt, u[1] / dt]).collect();
    Ok(out)
}

/// Assembled matrix with right-hand side.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: TripletMatrix,
    pub rhs: Vec<f64>,
    /// Smallest singular value of the stress-stress blocks `d1_eps` over
    /// all elements, in the Frobenius-orthonormal basis.
    pub min_d1_singular: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMode {
    /// Eliminate the element stresses and solve for velocity and pressure.
    Condensed,
    /// Solve the full three-field system.
    Full,
}

#[derive(Debug, Clone, Copy)]
pub struct DirectionInfo {
    pub condensed: bool,
    pub min_d1_singular: f64,
}

struct ElemResidual {
    g: [f64; 3],
    mom: [f64; 6],
    cont: [f64; 3],
    mult: f64,
}

/// Local element matrices. Velocity index `2 i + d`.
struct ElemJacobian {
    d1: SymLinMap,
    kss: [[f64; 3]; 3],
    ksu: [[f64; 6]; 3],
    kus: [[f64; 3]; 6],
    kup: [[f64; 3]; 6],
    kpp: [[f64; 3]; 3],
    mass: [[f64; 3]; 3],
    third: f64,
}

/// Element data, Dirichlet values and forces precomputed for one spec.
pub struct Assembler<'a> {
    spec: &'a ProblemSpec,
    layout: DofLayout,
    elements: Vec<ElementData>,
    dirichlet: Vec<Option<[f64; 2]>>,
    force: Vec<[f64; 2]>,
}

impl<'a> Assembler<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let mesh = &*spec.mesh;
        let elements = all_element_data(mesh)?;
        let dirichlet = mesh
            .vertex_tags()
            .into_iter()
            .zip(mesh.vertices())
            .map(|(tag, &p)| tag.map(|t| (spec.dirichlet[&t])(p)))
            .collect();
        let force = (0..mesh.n_vertices())
            .map(|v| {
                let b = spec.body_force[v];
                match spec.history_force.get(v) {
                    Some(h) => [b[0] + h[0], b[1] + h[1]],
                    None => b,
                }
            })
            .collect();
        Ok(Self { spec, layout: spec.layout(), elements, dirichlet, force })
    }

    pub fn layout(&self) -> DofLayout {
        self.layout
    }

    pub fn elements(&self) -> &[ElementData] {
        &self.elements
    }

    /// Prescribed velocity per vertex, `None` away from the boundary.
    pub fn dirichlet_values(&self) -> &[Option<[f64; 2]>] {
        &self.dirichlet
    }

    pub fn is_dirichlet_dof(&self) -> Vec<bool> {
        let mut mask = vec![false; self.layout.total()];
        for (v, g) in self.dirichlet.iter().enumerate() {
            if g.is_some() {
                mask[self.layout.velocity(v, 0)] = true;
                mask[self.layout.velocity(v, 1)] = true;
            }
        }
        mask
    }

    /// Overwrite Dirichlet entries of `state` with their prescribed values.
    pub fn impose_dirichlet(&self, state: &mut State) {
        let l = self.layout;
        let x = state.coeffs_mut();
        for (v, g) in self.dirichlet.iter().enumerate() {
            if let Some(g) = g {
                x[l.velocity(v, 0)] = g[0];
                x[l.velocity(v, 1)] = g[1];
            }
        }
    }

    fn check(&self, state: &State) -> Result<()> {
        if state.layout() != self.layout {
            return Err(Error::LayoutMismatch { expected: self.layout.total(), found: state.layout().total() });
        }
        Ok(())
    }

    #[inline]
    fn local_fields(&self, t: usize, x: &[f64]) -> (SymTensor2, [[f64; 2]; 3], [f64; 3]) {
        let l = self.layout;
        let tri = self.spec.mesh.triangles()[t];
        let s = SymTensor2::new(x[3 * t], x[3 * t + 1], x[3 * t + 2]);
        let u = tri.map(|v| [x[l.velocity(v, 0)], x[l.velocity(v, 1)]]);
        let p = tri.map(|v| x[l.pressure(v)]);
        (s, u, p)
    }

    fn element_residual(&self, t: usize, x: &[f64]) -> ElemResidual {
        let e = &self.elements[t];
        let spec = self.spec;
        let tri = spec.mesh.triangles()[t];
        let (s, u, p) = self.local_fields(t, x);
        let lam = x[self.layout.multiplier()];
        let area = e.area;
        let d = e.sym_gradient(u);
        let g = spec.reg.eval(s, d).to_array().map(|c| area * c);
        let pbar = (p[0] + p[1] + p[2]) / 3.0;
        let f = tri.map(|v| self.force[v]);
        let mut mom = [0.0; 6];
        for i in 0..3 {
            for dd in 0..2 {
                let mut m = area * s.dot(e.basis_sym_gradient(i, dd)) - area * pbar * e.grad[i][dd];
                for j in 0..3 {
                    let mij = area * if i == j { 2.0 } else { 1.0 } / 12.0;
                    m += mij * (spec.alpha * u[j][dd] - f[j][dd]);
                }
                mom[2 * i + dd] = m;
            }
        }
        let div = e.divergence(u);
        let gp = e.scalar_gradient(p);
        let stab = spec.stabilisation * e.diameter * e.diameter * area;
        let mut cont = [0.0; 3];
        for i in 0..3 {
            cont[i] = -area / 3.0 * div - stab * (gp[0] * e.grad[i][0] + gp[1] * e.grad[i][1]) + lam * area / 3.0;
        }
        ElemResidual { g, mom, cont, mult: area * pbar }
    }

    pub fn residual(&self, state: &State) -> Result<Vec<f64>> {
        self.check(state)?;
        let x = state.coeffs();
        let l = self.layout;
        let mesh = &*self.spec.mesh;
        let locals = self.spec.execution.map(mesh.n_triangles(), |t| self.element_residual(t, x));
        let mut r = vec![0.0; l.total()];
        for (t, loc) in locals.iter().enumerate() {
            r[3 * t..3 * t + 3].copy_from_slice(&loc.g);
            for (i, &v) in mesh.triangles()[t].iter().enumerate() {
                r[l.velocity(v, 0)] += loc.mom[2 * i];
                r[l.velocity(v, 1)] += loc.mom[2 * i + 1];
                r[l.pressure(v)] += loc.cont[i];
            }
            r[l.multiplier()] += loc.mult;
        }
        for (v, g) in self.dirichlet.iter().enumerate() {
            if let Some(g) = g {
                for d in 0..2 {
                    let i = l.velocity(v, d);
                    r[i] = x[i] - g[d];
                }
            }
        }
        Ok(r)
    }

    fn element_jacobian(&self, t: usize, x: &[f64]) -> ElemJacobian {
        let e = &self.elements[t];
        let spec = self.spec;
        let (s, u, _) = self.local_fields(t, x);
        let area = e.area;
        let d = e.sym_gradient(u);
        let (d1, d2) = spec.reg.jacobian(s, d);
        let b: [SymTensor2; 6] = std::array::from_fn(|k| e.basis_sym_gradient(k / 2, k % 2));
        let mut kss = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                kss[r][c] = area * d1.m[r][c];
            }
        }
        let mut ksu = [[0.0; 6]; 3];
        let mut kus = [[0.0; 3]; 6];
        let mut kup = [[0.0; 3]; 6];
        for k in 0..6 {
            let col = d2.apply(b[k]).to_array();
            let bk = b[k].to_array();
            for c in 0..3 {
                ksu[c][k] = area * col[c];
                kus[k][c] = area * WEIGHTS[c] * bk[c];
                kup[k][c] = -area / 3.0 * e.grad[k / 2][k % 2];
            }
        }
        let stab = spec.stabilisation * e.diameter * e.diameter * area;
        let mut kpp = [[0.0; 3]; 3];
        let mut mass = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                kpp[i][j] = -stab * (e.grad[i][0] * e.grad[j][0] + e.grad[i][1] * e.grad[j][1]);
                mass[i][j] = area * if i == j { 2.0 } else { 1.0 } / 12.0;
            }
        }
        ElemJacobian { d1, kss, ksu, kus, kup, kpp, mass, third: area / 3.0 }
    }

    fn min_singular(d1s: impl Iterator<Item = SymLinMap>) -> f64 {
        d1s.map(|d1| d1.min_singular_value()).fold(f64::INFINITY, f64::min)
    }

    /// The raw Jacobian: Dirichlet velocity rows are identity rows, all
    /// columns kept. The right-hand side is `-F`.
    pub fn jacobian(&self, state: &State) -> Result<SparseSystem> {
        let residual = self.residual(state)?;
        self.jacobian_with_residual(state, &residual)
    }

    fn jacobian_with_residual(&self, state: &State, residual: &[f64]) -> Result<SparseSystem> {
        self.check(state)?;
        let x = state.coeffs();
        let l = self.layout;
        let mesh = &*self.spec.mesh;
        let alpha = self.spec.alpha;
        let locals = self.spec.execution.map(mesh.n_triangles(), |t| self.element_jacobian(t, x));
        let mut m = TripletMatrix::with_capacity(l.total(), 114 * mesh.n_triangles() + l.n_velocity());
        for (t, k) in locals.iter().enumerate() {
            let tri = mesh.triangles()[t];
            let vel = |i: usize| l.velocity(tri[i / 2], i % 2);
            for r in 0..3 {
                for c in 0..3 {
                    m.push(3 * t + r, 3 * t + c, k.kss[r][c]);
                }
                for j in 0..6 {
                    m.push(3 * t + r, vel(j), k.ksu[r][j]);
                }
            }
            for i in 0..6 {
                if self.dirichlet[tri[i / 2]].is_some() {
                    continue;
                }
                for c in 0..3 {
                    m.push(vel(i), 3 * t + c, k.kus[i][c]);
                }
                for j in 0..3 {
                    m.push(vel(i), vel(2 * j + i % 2), alpha * k.mass[i / 2][j]);
                }
                for j in 0..3 {
                    m.push(vel(i), l.pressure(tri[j]), k.kup[i][j]);
                }
            }
            for i in 0..3 {
                for j in 0..6 {
                    m.push(l.pressure(tri[i]), vel(j), k.kup[j][i]);
                }
                for j in 0..3 {
                    m.push(l.pressure(tri[i]), l.pressure(tri[j]), k.kpp[i][j]);
                }
                m.push(l.pressure(tri[i]), l.multiplier(), k.third);
                m.push(l.multiplier(), l.pressure(tri[i]), k.third);
            }
        }
        for (v, g) in self.dirichlet.iter().enumerate() {
            if g.is_some() {
                m.push(l.velocity(v, 0), l.velocity(v, 0), 1.0);
                m.push(l.velocity(v, 1), l.velocity(v, 1), 1.0);
            }
        }
        let rhs = residual.iter().map(|r| -r).collect();
        let min_d1_singular = Self::min_singular(locals.iter().map(|k| k.d1));
        Ok(SparseSystem { matrix: m, rhs, min_d1_singular })
    }

    /// Move known Dirichlet columns to the right-hand side.
    pub fn eliminate_dirichlet(&self, system: &SparseSystem) -> SparseSystem {
        let mask = self.is_dirichlet_dof();
        eliminate_columns(system, &mask)
    }

    /// Newton direction `delta` solving `J delta = -F`.
    pub fn newton_direction(
        &self,
        state: &State,
        residual: &[f64],
        mode: LinearMode,
        lu: &mut LuSolver,
        lu_full: &mut LuSolver,
    ) -> Result<(Vec<f64>, DirectionInfo)> {
        self.check(state)?;
        if mode == LinearMode::Condensed {
            if let Some(out) = self.condensed_direction(state, residual, lu)? {
                return Ok(out);
            }
            log::debug!("stress block near-singular; falling back to the full system");
        }
        let sys = self.jacobian_with_residual(state, residual)?;
        let sys = self.eliminate_dirichlet(&sys);
        let delta = lu_full.factorise(&sys.matrix)?.solve(&sys.rhs)?;
        Ok((delta, DirectionInfo { condensed: false, min_d1_singular: sys.min_d1_singular }))
    }

    fn condensed_direction(&self, state: &State, residual: &[f64], lu: &mut LuSolver) -> Result<Option<(Vec<f64>, DirectionInfo)>> {
        let x = state.coeffs();
        let l = self.layout;
        let mesh = &*self.spec.mesh;
        let alpha = self.spec.alpha;
        let off = l.velocity_offset();
        let n = l.total() - off;
        let locals = self.spec.execution.map(mesh.n_triangles(), |t| {
            let k = self.element_jacobian(t, x);
            let inv = invert3(&k.kss);
            (k, inv)
        });
        let mut min_sv = f64::INFINITY;
        for (k, inv) in &locals {
            let sv = k.d1.min_singular_value();
            min_sv = min_sv.min(sv);
            if inv.is_none() || !(sv > 1e-12 * (1.0 + k.d1.max_abs())) {
                return Ok(None);
            }
        }
        let mut rhs: Vec<f64> = residual[off..].iter().map(|r| -r).collect();
        let mut m = TripletMatrix::with_capacity(n, 72 * mesh.n_triangles() + l.n_velocity());
        for (t, (k, inv)) in locals.iter().enumerate() {
            let inv = inv.as_ref().expect("checked above");
            let tri = mesh.triangles()[t];
            let vel = |i: usize| l.velocity(tri[i / 2], i % 2) - off;
            let pres = |j: usize| l.pressure(tri[j]) - off;
            // kus * kss^-1
            let mut a = [[0.0; 3]; 6];
            for i in 0..6 {
                for c in 0..3 {
                    a[i][c] = (0..3).map(|q| k.kus[i][q] * inv[q][c]).sum();
                }
            }
            let fs = &residual[3 * t..3 * t + 3];
            for i in 0..6 {
                if self.dirichlet[tri[i / 2]].is_some() {
                    continue;
                }
                rhs[vel(i)] += (0..3).map(|c| a[i][c] * fs[c]).sum::<f64>();
                for j in 0..6 {
                    let mut v: f64 = -(0..3).map(|c| a[i][c] * k.ksu[c][j]).sum::<f64>();
                    if i % 2 == j % 2 {
                        v += alpha * k.mass[i / 2][j / 2];
                    }
                    m.push(vel(i), vel(j), v);
                }
                for j in 0..3 {
                    m.push(vel(i), pres(j), k.kup[i][j]);
                }
            }
            for i in 0..3 {
                for j in 0..6 {
                    m.push(pres(i), vel(j), k.kup[j][i]);
                }
                for j in 0..3 {
                    m.push(pres(i), pres(j), k.kpp[i][j]);
                }
                m.push(pres(i), l.multiplier() - off, k.third);
                m.push(l.multiplier() - off, pres(i), k.third);
            }
        }
        for (v, g) in self.dirichlet.iter().enumerate() {
            if g.is_some() {
                m.push(l.velocity(v, 0) - off, l.velocity(v, 0) - off, 1.0);
                m.push(l.velocity(v, 1) - off, l.velocity(v, 1) - off, 1.0);
            }
        }
        let mask: Vec<bool> = self.is_dirichlet_dof()[off..].to_vec();
        let sys = eliminate_columns(&SparseSystem { matrix: m, rhs, min_d1_singular: min_sv }, &mask);
        let reduced = lu.factorise(&sys.matrix)?.solve(&sys.rhs)?;
        let mut delta = vec![0.0; l.total()];
        delta[off..].copy_from_slice(&reduced);
        for (t, (k, inv)) in locals.iter().enumerate() {
            let inv = inv.as_ref().expect("checked above");
            let tri = mesh.triangles()[t];
            let du: [f64; 6] = std::array::from_fn(|i| reduced[l.velocity(tri[i / 2], i % 2) - off]);
            let mut w = [0.0; 3];
            for c in 0..3 {
                w[c] = -residual[3 * t + c] - (0..6).map(|j| k.ksu[c][j] * du[j]).sum::<f64>();
            }
            for c in 0..3 {
                delta[3 * t + c] = (0..3).map(|q| inv[c][q] * w[q]).sum();
            }
        }
        Ok(Some((delta, DirectionInfo { condensed: true, min_d1_singular: min_sv })))
    }
}

fn invert3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let m = SymLinMap { m: *a };
    m.inverse().map(|inv| inv.m)
}

/// Drop entries in Dirichlet columns of non-Dirichlet rows, moving them to
/// the right-hand side (whose Dirichlet entries hold the known increments).
fn eliminate_columns(system: &SparseSystem, mask: &[bool]) -> SparseSystem {
    let a = &system.matrix;
    let mut m = TripletMatrix::with_capacity(a.n, a.nnz());
    let mut rhs = system.rhs.clone();
    for k in 0..a.nnz() {
        let (r, c, v) = (a.rows[k], a.cols[k], a.vals[k]);
        if mask[c] && !mask[r] {
            rhs[r] -= v * system.rhs[c];
        } else {
            m.push(r, c, v);
        }
    }
    SparseSystem { matrix: m, rhs, min_d1_singular: system.min_d1_singular }
}

pub fn assemble_residual(spec: &ProblemSpec, state: &State) -> Result<Vec<f64>> {
    Assembler::new(spec)?.residual(state)
}

pub fn assemble_jacobian(spec: &ProblemSpec, state: &State) -> Result<SparseSystem> {
    Assembler::new(spec)?.jacobian(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::ConstitutiveModel;
    use crate::linsolve::factorise;
    use crate::mesh::{build_rectangle, refine_uniform};
    use crate::spaces::{interpolate_velocity, QuadRule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(build_rectangle([0.0, 0.0], [1.0, 1.0], n, n).unwrap())
    }

    fn newtonian(mesh: Arc<Mesh>, eps: f64) -> ProblemSpec {
        let reg = RegularizedModel::symmetric(ConstitutiveModel::Newtonian { nu: 0.5 }, eps).unwrap();
        ProblemSpec::new(mesh, reg).with_dirichlet(BoundaryTag::Wall, |_| [0.0, 0.0])
    }

    fn random_state(layout: DofLayout, rng: &mut impl Rng) -> State {
        State::from_vec(layout, (0..layout.total()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_state_zero_residual() {
        let spec = newtonian(square(3), 0.1);
        let r = assemble_residual(&spec, &State::zeros(spec.layout())).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let reg = RegularizedModel::symmetric(ConstitutiveModel::BinghamProduct { tau_star: 1.0, nu: 0.5 }, 0.1).unwrap();
        let spec = spec.with_reg(reg);
        let r = assemble_residual(&spec, &State::zeros(spec.layout())).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_dirichlet_rejected() {
        let reg = RegularizedModel::symmetric(ConstitutiveModel::Newtonian { nu: 0.5 }, 0.1).unwrap();
        let spec = ProblemSpec::new(square(1), reg);
        assert!(matches!(assemble_residual(&spec, &State::zeros(spec.layout())), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn layout_mismatch_rejected() {
        let spec = newtonian(square(2), 0.1);
        let other = DofLayout::new(&square(3));
        assert!(matches!(assemble_residual(&spec, &State::zeros(other)), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn hand_assembled_two_triangle_square() {
        // Mesh: vertices (0,0),(1,0),(0,1),(1,1); triangles [0,1,3], [0,3,2].
        // Manufactured state: u = (y, 0) at the vertices, p = x, S = const,
        // lambda = 0.25; Newtonian nu = 1/2, eps = 0; all boundary vertices
        // Dirichlet so only stress, continuity and multiplier rows survive.
        let mesh = square(1);
        assert_eq!(mesh.triangles(), &[[0, 1, 3], [0, 3, 2]]);
        let reg = RegularizedModel::new(ConstitutiveModel::Newtonian { nu: 0.5 }, 0.0, 0.0).unwrap();
        let spec = ProblemSpec::new(mesh.clone(), reg).with_dirichlet(BoundaryTag::Wall, |p| [p[1], 0.0]);
        let l = spec.layout();
        let mut st = State::zeros(l);
        st.velocity_block_mut().copy_from_slice(&interpolate_velocity(&mesh, |p| [p[1], 0.0]));
        st.pressure_block_mut().copy_from_slice(&[0.0, 1.0, 0.0, 1.0]);
        st.set_stress(0, SymTensor2::new(1.0, 2.0, 3.0));
        st.set_stress(1, SymTensor2::new(0.0, 0.0, 0.5));
        st.coeffs_mut()[l.multiplier()] = 0.25;
        let r = assemble_residual(&spec, &st).unwrap();
        // D(u) = [[0, 1/2], [1/2, 0]] on both triangles; G = S - D.
        let g0 = [0.5 * 1.0, 0.5 * 2.0, 0.5 * 2.5];
        let g1 = [0.0, 0.0, 0.0];
        assert_eq!(&r[0..3], &g0);
        assert_eq!(&r[3..6], &g1);
        // Dirichlet rows: u - g = 0.
        assert!(r[l.velocity_offset()..l.pressure_offset()].iter().all(|&v| v == 0.0));
        // Continuity: div u = 0; grad p = (1, 0); h_K = sqrt 2, c = 0.2
        // -> stab = 0.2 * 2 * 0.5 = 0.2. Triangle 0 grads: v0 (-1,0), v1 (1,-1),
        // v3 (0,1); triangle 1 grads: v0 (0,-1), v3 (1,0), v2 (-1,1).
        // Row q_v = -0.2 * sum_K grad p . grad phi_v + 0.25 * (sum_K area/3).
        let lam = 0.25 / 6.0;
        let want_p = [
            -0.2 * (-1.0 + 0.0) + 2.0 * lam, // v0 in both
            -0.2 * 1.0 + lam,                // v1 in T0
            -0.2 * (-1.0) + lam,             // v2 in T1
            -0.2 * (0.0 + 1.0) + 2.0 * lam,  // v3 in both
        ];
        for v in 0..4 {
            assert!((r[l.pressure(v)] - want_p[v]).abs() < 1e-15, "vertex {v}: {} vs {}", r[l.pressure(v)], want_p[v]);
        }
        // Multiplier: integral of p = x over the unit square.
        assert!((r[l.multiplier()] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn interior_momentum_row_by_hand() {
        // 2x2 grid, centre vertex interior. u = 0, S = identity everywhere,
        // p = 1, f = (1, 2), alpha = 0: row = (S, D(v)) - (p, div v) - (f, v).
        // The first two terms cancel, leaving -f |supp phi| / 3.
        let mesh = square(2);
        let centre = mesh.vertices().iter().position(|p| p == &[0.5, 0.5]).unwrap();
        let spec = newtonian(mesh.clone(), 0.0).with_body_force(|_| [1.0, 2.0]);
        let l = spec.layout();
        let mut st = State::zeros(l);
        for t in 0..mesh.n_triangles() {
            st.set_stress(t, SymTensor2::IDENTITY);
        }
        st.pressure_block_mut().iter_mut().for_each(|p| *p = 1.0);
        let r = assemble_residual(&spec, &st).unwrap();
        let patch_area: f64 = (0..mesh.n_triangles())
            .filter(|&t| mesh.triangles()[t].contains(&centre))
            .map(|t| mesh.signed_area(t))
            .sum();
        assert!((r[l.velocity(centre, 0)] + patch_area / 3.0).abs() < 1e-15);
        assert!((r[l.velocity(centre, 1)] + 2.0 * patch_area / 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_point_constitutive_rows_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mesh = Arc::new(refine_uniform(&square(2)));
        let reg = RegularizedModel::symmetric(ConstitutiveModel::BinghamProduct { tau_star: 1.0, nu: 0.5 }, 0.01).unwrap();
        let spec = ProblemSpec::new(mesh.clone(), reg).with_dirichlet(BoundaryTag::Wall, |_| [0.0, 0.0]);
        let st = random_state(spec.layout(), &mut rng);
        let mut st2 = st.clone();
        Assembler::new(&spec).unwrap().impose_dirichlet(&mut st2);
        let r = assemble_residual(&spec, &st).unwrap();
        for t in 0..mesh.n_triangles() {
            let e = crate::spaces::p1_element_data(&mesh, t).unwrap();
            let d = e.sym_gradient(crate::spaces::element_velocity(&mesh, &st, t));
            let g = reg.eval(st.stress(t), d).to_array();
            for c in 0..3 {
                let three = QuadRule::THREE_POINT.integrate(mesh.triangle_points(t), e.area, |_, _| g[c]);
                assert!((three - r[3 * t + c]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn newtonian_jacobian_state_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = newtonian(square(3), 0.2);
        let a = assemble_jacobian(&spec, &random_state(spec.layout(), &mut rng)).unwrap();
        let b = assemble_jacobian(&spec, &random_state(spec.layout(), &mut rng)).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn stress_block_is_element_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = newtonian(square(3), 0.2);
        let l = spec.layout();
        let sys = assemble_jacobian(&spec, &random_state(l, &mut rng)).unwrap();
        let m = &sys.matrix;
        for k in 0..m.nnz() {
            if m.rows[k] < l.n_stress() && m.cols[k] < l.n_stress() {
                assert_eq!(m.rows[k] / 3, m.cols[k] / 3);
            }
        }
    }

    #[test]
    fn coupling_blocks_are_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = newtonian(square(3), 0.2);
        let l = spec.layout();
        let sys = assemble_jacobian(&spec, &random_state(l, &mut rng)).unwrap();
        let a = sys.matrix.to_dense();
        let dir = Assembler::new(&spec).unwrap().is_dirichlet_dof();
        for i in l.velocity_offset()..l.pressure_offset() {
            if dir[i] {
                continue;
            }
            for j in l.pressure_offset()..l.multiplier() {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
    }

    fn fd_check(spec: &ProblemSpec, st: &State, rng: &mut impl Rng) -> f64 {
        let asm = Assembler::new(spec).unwrap();
        let l = spec.layout();
        let dir: Vec<f64> = (0..l.total()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-6;
        let shifted = |s: f64| {
            let v: Vec<f64> = st.coeffs().iter().zip(&dir).map(|(x, d)| x + s * d).collect();
            asm.residual(&State::from_vec(l, v).unwrap()).unwrap()
        };
        let (fp, fm) = (shifted(h), shifted(-h));
        let jd = asm.jacobian(st).unwrap().matrix.matvec(&dir);
        let num: f64 = fp.iter().zip(&fm).zip(&jd).map(|((a, b), j)| ((a - b) / (2.0 * h) - j).powi(2)).sum();
        let den: f64 = jd.iter().map(|j| j * j).sum();
        (num / den).sqrt()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mesh = square(3);
        let models = [
            ConstitutiveModel::BinghamProduct { tau_star: 1.0, nu: 0.5 },
            ConstitutiveModel::HerschelBulkley { tau_star: 1.0, nu: 0.5, r: 1.7 },
            ConstitutiveModel::BinghamProjection { tau_star: 0.3, nu: 0.5 },
        ];
        for model in models {
            let reg = RegularizedModel::symmetric(model, 0.01).unwrap();
            let mut spec = ProblemSpec::new(mesh.clone(), reg).with_dirichlet(BoundaryTag::Wall, |_| [0.0, 0.0]);
            spec.alpha = 3.0;
            let l = spec.layout();
            let mut tested = 0;
            while tested < 5 {
                let st = random_state(l, &mut rng);
                let asm = Assembler::new(&spec).unwrap();
                let ok = (0..mesh.n_triangles()).all(|t| {
                    let d = asm.elements()[t].sym_gradient(crate::spaces::element_velocity(&mesh, &st, t));
                    let (a, b) = reg.shifted(st.stress(t), d);
                    b.norm() > 0.1 && (a.norm() - model.yield_stress()).abs() > 0.05
                });
                if !ok {
                    continue;
                }
                let err = fd_check(&spec, &st, &mut rng);
                assert!(err <= 1e-6, "{model:?}: {err:e}");
                tested += 1;
            }
        }
    }

    #[test]
    fn condensed_and_full_directions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mesh = square(4);
        let reg = RegularizedModel::symmetric(ConstitutiveModel::BinghamProduct { tau_star: 1.0, nu: 0.5 }, 0.05).unwrap();
        let mut spec = ProblemSpec::new(mesh, reg).with_dirichlet(BoundaryTag::Wall, |p| [p[1] * (1.0 - p[1]), 0.0]);
        spec.alpha = 2.0;
        let asm = Assembler::new(&spec).unwrap();
        let st = random_state(spec.layout(), &mut rng);
        let r = asm.residual(&st).unwrap();
        let (mut a, mut b) = (LuSolver::new(), LuSolver::new());
        let (dc, ic) = asm.newton_direction(&st, &r, LinearMode::Condensed, &mut a, &mut b).unwrap();
        let (df, iff) = asm.newton_direction(&st, &r, LinearMode::Full, &mut a, &mut b).unwrap();
        assert!(ic.condensed && !iff.condensed);
        assert!(ic.min_d1_singular > 0.0);
        let diff = dc.iter().zip(&df).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = df.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(diff <= 1e-9 * scale, "{diff:e} vs {scale:e}");
        // Linearised residual contract on the raw Jacobian.
        let jd = asm.jacobian(&st).unwrap().matrix.matvec(&dc);
        let lin: f64 = r.iter().zip(&jd).map(|(f, j)| (f + j).powi(2)).sum::<f64>().sqrt();
        let rn: f64 = r.iter().map(|f| f * f).sum::<f64>().sqrt();
        assert!(lin <= 1e-10 * rn, "{lin:e} vs {rn:e}");
    }

    #[test]
    fn newtonian_stokes_matches_dense_oracle() {
        let mesh = square(1);
        let spec = newtonian(mesh, 0.1).with_body_force(|p| [1.0 + p[0], -p[1]]);
        let asm = Assembler::new(&spec).unwrap();
        let sys = asm.eliminate_dirichlet(&asm.jacobian(&State::zeros(spec.layout())).unwrap());
        let x = factorise(&sys.matrix).unwrap().solve(&sys.rhs).unwrap();
        let dense = dense_lu_solve(sys.matrix.to_dense(), sys.rhs.clone());
        for (a, b) in x.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    // Gaussian elimination with partial pivoting.
    fn dense_lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (b[i] - (i + 1..n).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
        }
        x
    }

    #[test]
    fn time_step_replaces_history() {
        let spec = newtonian(square(2), 0.1);
        assert_eq!(spec.alpha, 0.0);
        let u1 = vec![1.0; spec.layout().n_velocity()];
        let s1 = apply_time_step(&spec, &u1, 0.0005).unwrap();
        assert_eq!(s1.alpha, 2000.0);
        assert_eq!(s1.history_force()[0], [2000.0, 2000.0]);
        let u2 = vec![0.5; spec.layout().n_velocity()];
        let s2 = apply_time_step(&s1, &u2, 0.0005).unwrap();
        assert_eq!(s2.alpha, 2000.0);
        assert_eq!(s2.history_force()[3], [1000.0, 1000.0]);
        assert_eq!(s2.body_force, spec.body_force);
        assert!(apply_time_step(&spec, &u1, 0.0).is_err());
        assert!(apply_time_step(&spec, &u1, -1.0).is_err());
    }

    #[test]
    fn parallel_and_sequential_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mesh = Arc::new(refine_uniform(&square(4)));
        let reg = RegularizedModel::symmetric(ConstitutiveModel::BinghamProduct { tau_star: 1.0, nu: 0.5 }, 0.01).unwrap();
        let spec = ProblemSpec::new(mesh, reg).with_dirichlet(BoundaryTag::Wall, |_| [0.0, 0.0]);
        let st = random_state(spec.layout(), &mut rng);
        let seq = spec.clone().with_execution(Execution::Sequential);
        let par = spec.with_execution(Execution::Parallel);
        assert_eq!(assemble_residual(&seq, &st).unwrap(), assemble_residual(&par, &st).unwrap());
        assert_eq!(assemble_jacobian(&seq, &st).unwrap().matrix, assemble_jacobian(&par, &st).unwrap().matrix);
    }
}
