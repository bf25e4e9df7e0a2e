//! Error norms, derived fields, point location and file output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linsolve::{LuSolver, TripletMatrix};
use crate::mesh::{Mesh, Point};
use crate::spaces::{all_element_data, element_velocity, p1_element_data, QuadRule, State};

fn velocity_at(mesh: &Mesh, state: &State, t: usize, lambda: [f64; 3]) -> [f64; 2] {
    let u = element_velocity(mesh, state, t);
    let mut out = [0.0; 2];
    for i in 0..3 {
        out[0] += lambda[i] * u[i][0];
        out[1] += lambda[i] * u[i][1];
    }
    out
}

/// `||u_h - u_e||_{L2}` with the degree-4 rule.
pub fn error_l2_velocity(mesh: &Mesh, state: &State, exact: impl Fn(Point) -> [f64; 2]) -> Result<f64> {
    state.check_mesh(mesh)?;
    let mut sum = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = p1_element_data(mesh, t)?.area;
        sum += QuadRule::SIX_POINT.integrate(mesh.triangle_points(t), area, |l, x| {
            let uh = velocity_at(mesh, state, t, l);
            let ue = exact(x);
            (uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2)
        });
    }
    Ok(sum.sqrt())
}

/// `|u_h - u_e|_{H1}`; `grad(x)[a][b] = d u_a / d x_b`.
pub fn error_h1_velocity(mesh: &Mesh, state: &State, grad: impl Fn(Point) -> [[f64; 2]; 2]) -> Result<f64> {
    state.check_mesh(mesh)?;
    let mut sum = 0.0;
    for t in 0..mesh.n_triangles() {
        let e = p1_element_data(mesh, t)?;
        let u = element_velocity(mesh, state, t);
        let mut gh = [[0.0; 2]; 2];
        for i in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    gh[a][b] += u[i][a] * e.grad[i][b];
                }
            }
        }
        sum += QuadRule::SIX_POINT.integrate(mesh.triangle_points(t), e.area, |_, x| {
            let ge = grad(x);
            (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| (gh[a][b] - ge[a][b]).powi(2)).sum()
        });
    }
    Ok(sum.sqrt())
}

/// `||(p_h - mean p_h) - (p_e - mean p_e)||_{L2}`.
pub fn error_l2_pressure(mesh: &Mesh, state: &State, exact: impl Fn(Point) -> f64) -> Result<f64> {
    state.check_mesh(mesh)?;
    let p_at = |t: usize, l: [f64; 3]| {
        let tri = mesh.triangles()[t];
        (0..3).map(|i| l[i] * state.pressure(tri[i])).sum::<f64>()
    };
    let (mut area, mut mh, mut me) = (0.0, 0.0, 0.0);
    for t in 0..mesh.n_triangles() {
        let pts = mesh.triangle_points(t);
        let a = mesh.signed_area(t);
        area += a;
        mh += QuadRule::SIX_POINT.integrate(pts, a, |l, _| p_at(t, l));
        me += QuadRule::SIX_POINT.integrate(pts, a, |_, x| exact(x));
    }
    let (mh, me) = (mh / area, me / area);
    let mut sum = 0.0;
    for t in 0..mesh.n_triangles() {
        sum += QuadRule::SIX_POINT.integrate(mesh.triangle_points(t), mesh.signed_area(t), |l, x| {
            ((p_at(t, l) - mh) - (exact(x) - me)).powi(2)
        });
    }
    Ok(sum.sqrt())
}

/// Per-cell `|D(u_h)|`.
pub fn strain_rate_norms(mesh: &Mesh, state: &State) -> Result<Vec<f64>> {
    state.check_mesh(mesh)?;
    let elements = all_element_data(mesh)?;
    Ok((0..mesh.n_triangles()).map(|t| elements[t].sym_gradient(element_velocity(mesh, state, t)).norm()).collect())
}

/// Cells where `|D(u_h)| < threshold`.
pub fn plug_mask(mesh: &Mesh, state: &State, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidSpec(format!("threshold must be non-negative, got {threshold}")));
    }
    Ok(strain_rate_norms(mesh, state)?.into_iter().map(|d| d < threshold).collect())
}

/// Per-cell vorticity `d u_y / dx - d u_x / dy`.
pub fn vorticity(mesh: &Mesh, state: &State) -> Result<Vec<f64>> {
    state.check_mesh(mesh)?;
    let elements = all_element_data(mesh)?;
    Ok((0..mesh.n_triangles())
        .map(|t| {
            let u = element_velocity(mesh, state, t);
            let g = &elements[t].grad;
            (0..3).map(|i| u[i][1] * g[i][0] - u[i][0] * g[i][1]).sum()
        })
        .collect())
}

/// P1 stream function: `-Laplace psi = omega`, `psi = 0` on the boundary.
pub fn stream_function(mesh: &Mesh, state: &State) -> Result<Vec<f64>> {
    let omega = vorticity(mesh, state)?;
    let elements = all_element_data(mesh)?;
    let n = mesh.n_vertices();
    let mut on_boundary = vec![false; n];
    for e in mesh.boundary_edges() {
        for &v in &e.vertices {
            on_boundary[v] = true;
        }
    }
    let mut m = TripletMatrix::with_capacity(n, 9 * mesh.n_triangles() + n);
    let mut rhs = vec![0.0; n];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let e = &elements[t];
        for i in 0..3 {
            if on_boundary[tri[i]] {
                continue;
            }
            rhs[tri[i]] += omega[t] * e.area / 3.0;
            for j in 0..3 {
                if on_boundary[tri[j]] {
                    continue;
                }
                let k = e.area * (e.grad[i][0] * e.grad[j][0] + e.grad[i][1] * e.grad[j][1]);
                m.push(tri[i], tri[j], k);
            }
        }
    }
    for (v, &b) in on_boundary.iter().enumerate() {
        if b {
            m.push(v, v, 1.0);
        }
    }
    LuSolver::new().factorise(&m)?.solve(&rhs)
}

/// `(max |psi|, centre)`. The extremum is refined by a least-squares
/// quadratic through the two-ring of the maximising vertex; the vertex itself
/// is returned when the fit has no extremum inside the patch.
pub fn vortex_centre(mesh: &Mesh, psi: &[f64]) -> (f64, Point) {
    let (v, val) = psi
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bv, bval), (v, &p)| if p.abs() > bval { (v, p.abs()) } else { (bv, bval) });
    let at = mesh.vertices()[v];
    refine_extremum(mesh, psi, v).unwrap_or((val, at))
}

fn refine_extremum(mesh: &Mesh, psi: &[f64], v: usize) -> Option<(f64, Point)> {
    let ring = |seed: &[usize]| -> Vec<usize> {
        let mut out: Vec<usize> = mesh
            .triangles()
            .iter()
            .filter(|tri| tri.iter().any(|a| seed.contains(a)))
            .flat_map(|tri| tri.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    };
    let one = ring(&[v]);
    let patch = ring(&one);
    if patch.len() < 8 {
        return None;
    }
    let c = mesh.vertices()[v];
    let reach = one.iter().map(|&a| dist(mesh.vertices()[a], c)).fold(0.0, f64::max);
    let scale = reach.max(f64::MIN_POSITIVE);
    let sign = psi[v].signum();
    let a = DMatrix::from_fn(patch.len(), 6, |i, j| {
        let p = mesh.vertices()[patch[i]];
        let (x, y) = ((p[0] - c[0]) / scale, (p[1] - c[1]) / scale);
        [1.0, x, y, x * x, x * y, y * y][j]
    });
    let b = DVector::from_iterator(patch.len(), patch.iter().map(|&i| sign * psi[i]));
    let q = a.svd(true, true).solve(&b, 1e-12).ok()?;
    // Maximum of the fit: negative definite Hessian, stationary point
    // within the one-ring.
    let (hxx, hxy, hyy) = (2.0 * q[3], q[4], 2.0 * q[5]);
    let det = hxx * hyy - hxy * hxy;
    if !(hxx < 0.0 && det > 0.0) {
        return None;
    }
    let x = (-q[1] * hyy + q[2] * hxy) / det;
    let y = (-q[2] * hxx + q[1] * hxy) / det;
    if x.hypot(y) > 1.0 {
        return None;
    }
    let value = q[0] + q[1] * x + q[2] * y + q[3] * x * x + q[4] * x * y + q[5] * y * y;
    Some((value, [c[0] + scale * x, c[1] + scale * y]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Bucket grid over triangle bounding boxes.
pub struct PointLocator<'a> {
    mesh: &'a Mesh,
    lo: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let (lo, hi) = mesh.bounding_box();
        let nt = mesh.n_triangles().max(1);
        let side = (nt as f64).sqrt().ceil() as usize;
        let dims = [side.max(1), side.max(1)];
        let cell = [((hi[0] - lo[0]) / dims[0] as f64).max(1e-300), ((hi[1] - lo[1]) / dims[1] as f64).max(1e-300)];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let mut loc = Self { mesh, lo, cell, dims, buckets: Vec::new() };
        for t in 0..mesh.n_triangles() {
            let pts = mesh.triangle_points(t);
            let bl = [pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min)];
            let bh = [pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max), pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max)];
            let (i0, j0) = loc.bucket(bl);
            let (i1, j1) = loc.bucket(bh);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * dims[0] + i].push(t);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn bucket(&self, p: Point) -> (usize, usize) {
        let f = |d: usize| (((p[d] - self.lo[d]) / self.cell[d]).floor().max(0.0) as usize).min(self.dims[d] - 1);
        (f(0), f(1))
    }

    /// Containing triangle and barycentric coordinates.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let (i, j) = self.bucket(p);
        let tol = 1e-12;
        for &t in &self.buckets[j * self.dims[0] + i] {
            let [a, b, c] = self.mesh.triangle_points(t);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            let l0 = 1.0 - l1 - l2;
            if l0 >= -tol && l1 >= -tol && l2 >= -tol {
                return Some((t, [l0, l1, l2]));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSample {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

/// `n` evenly spaced samples of a nodal field from `start` to `end`.
pub fn sample_line(mesh: &Mesh, nodal: &[f64], start: Point, end: Point, n: usize) -> Result<Vec<LineSample>> {
    if nodal.len() != mesh.n_vertices() {
        return Err(Error::DimensionMismatch { expected: mesh.n_vertices(), found: nodal.len() });
    }
    let loc = PointLocator::new(mesh);
    (0..n)
        .map(|k| {
            let s = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
            let p = [start[0] + s * (end[0] - start[0]), start[1] + s * (end[1] - start[1])];
            let (t, l) = loc.locate(p).ok_or(Error::PointOutside { index: k, x: p[0], y: p[1] })?;
            let tri = mesh.triangles()[t];
            let value = (0..3).map(|i| l[i] * nodal[tri[i]]).sum();
            Ok(LineSample { index: k, x: p[0], y: p[1], value })
        })
        .collect()
}

/// Least-squares line `y = slope x + intercept` with its coefficient of
/// determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn affine_fit(points: impl IntoIterator<Item = (f64, f64)>) -> Result<AffineFit> {
    let pts: Vec<(f64, f64)> = points.into_iter().collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return Err(Error::InvalidSpec("affine fit needs at least two points".into()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidSpec("affine fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(AffineFit { slope, intercept, r_squared })
}

pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_samples_csv<W: Write>(samples: &[LineSample], value_name: &str, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["index", "x", "y", value_name])?;
    for s in samples {
        w.write_record([s.index.to_string(), format!("{:e}", s.x), format!("{:e}", s.y), format!("{:e}", s.value)])?;
    }
    w.flush()?;
    Ok(())
}

/// Named nodal and cell data on one mesh.
#[derive(Debug, Clone)]
pub struct FieldSnapshot<'a> {
    pub mesh: &'a Mesh,
    pub point_scalars: Vec<(String, Vec<f64>)>,
    pub point_vectors: Vec<(String, Vec<[f64; 2]>)>,
    pub cell_scalars: Vec<(String, Vec<f64>)>,
}

impl<'a> FieldSnapshot<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        Self { mesh, point_scalars: Vec::new(), point_vectors: Vec::new(), cell_scalars: Vec::new() }
    }

    pub fn point_scalar(mut self, name: &str, v: Vec<f64>) -> Result<Self> {
        if v.len() != self.mesh.n_vertices() {
            return Err(Error::DimensionMismatch { expected: self.mesh.n_vertices(), found: v.len() });
        }
        self.point_scalars.push((name.to_string(), v));
        Ok(self)
    }

    pub fn point_vector(mut self, name: &str, v: Vec<[f64; 2]>) -> Result<Self> {
        if v.len() != self.mesh.n_vertices() {
            return Err(Error::DimensionMismatch { expected: self.mesh.n_vertices(), found: v.len() });
        }
        self.point_vectors.push((name.to_string(), v));
        Ok(self)
    }

    pub fn cell_scalar(mut self, name: &str, v: Vec<f64>) -> Result<Self> {
        if v.len() != self.mesh.n_triangles() {
            return Err(Error::DimensionMismatch { expected: self.mesh.n_triangles(), found: v.len() });
        }
        self.cell_scalars.push((name.to_string(), v));
        Ok(self)
    }

    /// Velocity, pressure, stress components, `|D(u)|`, `|S|` and the plug
    /// mask at `plug_threshold`.
    pub fn from_state(mesh: &'a Mesh, state: &State, plug_threshold: f64) -> Result<Self> {
        let dn = strain_rate_norms(mesh, state)?;
        let nt = mesh.n_triangles();
        let stress: Vec<_> = (0..nt).map(|t| state.stress(t)).collect();
        Self::new(mesh)
            .point_vector("velocity", (0..mesh.n_vertices()).map(|v| state.velocity(v)).collect())?
            .point_scalar("pressure", state.pressure_block().to_vec())?
            .cell_scalar("S_xx", stress.iter().map(|s| s.xx).collect())?
            .cell_scalar("S_yy", stress.iter().map(|s| s.yy).collect())?
            .cell_scalar("S_xy", stress.iter().map(|s| s.xy).collect())?
            .cell_scalar("abs_S", stress.iter().map(|s| s.norm()).collect())?
            .cell_scalar("abs_D", dn.clone())?
            .cell_scalar("plug", dn.iter().map(|&d| if d < plug_threshold { 1.0 } else { 0.0 }).collect())
    }
}

fn vtk_name(name: &str) -> String {
    name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

/// Legacy ASCII VTK unstructured grid.
pub fn write_vtk_to<W: Write>(snap: &FieldSnapshot<'_>, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let mesh = snap.mesh;
    let (nv, nt) = (mesh.n_vertices(), mesh.n_triangles());
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "ssnflow")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for p in mesh.vertices() {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p[0], p[1], 0.0)?;
    }
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    if !snap.point_scalars.is_empty() || !snap.point_vectors.is_empty() {
        writeln!(w, "POINT_DATA {nv}")?;
        for (name, v) in &snap.point_scalars {
            writeln!(w, "SCALARS {} double 1", vtk_name(name))?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for x in v {
                writeln!(w, "{x:.16e}")?;
            }
        }
        for (name, v) in &snap.point_vectors {
            writeln!(w, "VECTORS {} double", vtk_name(name))?;
            for x in v {
                writeln!(w, "{:.16e} {:.16e} {:.16e}", x[0], x[1], 0.0)?;
            }
        }
    }
    if !snap.cell_scalars.is_empty() {
        writeln!(w, "CELL_DATA {nt}")?;
        for (name, v) in &snap.cell_scalars {
            writeln!(w, "SCALARS {} double 1", vtk_name(name))?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for x in v {
                writeln!(w, "{x:.16e}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_vtk(snap: &FieldSnapshot<'_>, path: impl AsRef<Path>) -> Result<()> {
    write_vtk_to(snap, File::create(path)?)
}
