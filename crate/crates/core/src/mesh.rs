//! Conforming triangulations of axis-aligned rectilinear domains.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    Wall,
    Lid,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [BoundaryTag::Inflow, BoundaryTag::Outflow, BoundaryTag::Wall, BoundaryTag::Lid];

    /// Precedence when a vertex touches edges with different tags. Walls win
    /// so that corners between a wall and a driven boundary are no-slip.
    pub fn priority(self) -> u8 {
        match self {
            BoundaryTag::Wall => 3,
            BoundaryTag::Lid => 2,
            BoundaryTag::Inflow => 1,
            BoundaryTag::Outflow => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    /// Endpoints ordered so the domain lies to the left.
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// How structured cells are split into two triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Diagonal {
    /// Every cell split lower-left to upper-right.
    #[default]
    Uniform,
    /// Lower-left to upper-right above the horizontal midline, mirrored
    /// below it, so the mesh is symmetric about the midline.
    MirroredY,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h_max: f64,
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Build a mesh from vertices and counter-clockwise triangles. Boundary
    /// edges are found from the topology and tagged `Wall`.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::MeshInvariant(format!("triangle {t} references a missing vertex")));
            }
        }
        let mut edges: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        let mut order = Vec::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = edge_key(a, b);
                let entry = edges.entry(key).or_insert_with(|| {
                    order.push(key);
                    (0, [a, b])
                });
                entry.0 += 1;
            }
        }
        let boundary_edges = order
            .iter()
            .filter_map(|k| {
                let (count, dir) = edges[k];
                (count == 1).then_some(BoundaryEdge { vertices: dir, tag: BoundaryTag::Wall })
            })
            .collect();
        let h_max = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|v| vertices[v]);
                dist(a, b).max(dist(b, c)).max(dist(c, a))
            })
            .fold(0.0, f64::max);
        let mesh = Self { vertices, triangles, boundary_edges, h_max };
        mesh.check_invariants()?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Number of distinct edges.
    pub fn n_edges(&self) -> usize {
        let interior = (3 * self.n_triangles() - self.boundary_edges.len()) / 2;
        interior + self.boundary_edges.len()
    }

    /// Re-tag boundary edges. `f` receives the edge endpoints and returns the
    /// new tag, or `None` to keep the current one.
    pub fn with_tags(mut self, f: impl Fn(Point, Point) -> Option<BoundaryTag>) -> Self {
        for e in &mut self.boundary_edges {
            if let Some(tag) = f(self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]) {
                e.tag = tag;
            }
        }
        self
    }

    /// Tag of each vertex: `None` for interior vertices, otherwise the
    /// highest-priority tag among its boundary edges.
    pub fn vertex_tags(&self) -> Vec<Option<BoundaryTag>> {
        let mut tags: Vec<Option<BoundaryTag>> = vec![None; self.n_vertices()];
        for e in &self.boundary_edges {
            for &v in &e.vertices {
                tags[v] = match tags[v] {
                    Some(old) if old.priority() >= e.tag.priority() => Some(old),
                    _ => Some(e.tag),
                };
            }
        }
        tags
    }

    /// Tags that occur on the boundary.
    pub fn tags_present(&self) -> Vec<BoundaryTag> {
        let mut tags: Vec<BoundaryTag> = self.boundary_edges.iter().map(|e| e.tag).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    /// Number of closed boundary loops.
    pub fn boundary_loops(&self) -> usize {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for e in &self.boundary_edges {
            next.insert(e.vertices[0], e.vertices[1]);
        }
        let mut seen = std::collections::HashSet::new();
        let mut loops = 0;
        for e in &self.boundary_edges {
            let start = e.vertices[0];
            if seen.contains(&start) {
                continue;
            }
            loops += 1;
            let mut v = start;
            while seen.insert(v) {
                match next.get(&v) {
                    Some(&w) => v = w,
                    None => break,
                }
            }
        }
        loops
    }

    pub fn check_invariants(&self) -> Result<()> {
        for t in 0..self.n_triangles() {
            let area = self.signed_area(t);
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle { index: t, area });
            }
        }
        // Each directed edge may appear once; an interior edge must appear
        // in both directions.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        let mut n_edges = 0usize;
        let mut n_boundary = 0usize;
        for (&(a, b), &count) in &directed {
            if count > 1 {
                return Err(Error::MeshInvariant(format!("edge ({a}, {b}) is shared with the same orientation")));
            }
            match directed.get(&(b, a)) {
                Some(_) if a < b => n_edges += 1,
                Some(_) => {}
                None => {
                    n_edges += 1;
                    n_boundary += 1;
                }
            }
        }
        if n_boundary != self.boundary_edges.len() {
            return Err(Error::MeshInvariant(format!(
                "{} boundary edges recorded but {} found",
                self.boundary_edges.len(),
                n_boundary
            )));
        }
        let mut out_degree = vec![0u8; self.n_vertices()];
        for e in &self.boundary_edges {
            let [a, b] = e.vertices;
            if !directed.contains_key(&(a, b)) || directed.contains_key(&(b, a)) {
                return Err(Error::MeshInvariant(format!("boundary edge ({a}, {b}) does not bound exactly one triangle")));
            }
            out_degree[a] += 1;
            if out_degree[a] > 1 {
                return Err(Error::MeshInvariant(format!("vertex {a} starts more than one boundary edge")));
            }
        }
        let used = {
            let mut used = vec![false; self.n_vertices()];
            for tri in &self.triangles {
                for &v in tri {
                    used[v] = true;
                }
            }
            used.iter().filter(|&&u| u).count()
        };
        if used != self.n_vertices() {
            return Err(Error::MeshInvariant(format!("{} vertices not used by any triangle", self.n_vertices() - used)));
        }
        let chi = self.n_vertices() as i64 - n_edges as i64 + self.n_triangles() as i64;
        let expected = 2 - self.boundary_loops() as i64;
        if chi != expected {
            return Err(Error::MeshInvariant(format!("Euler characteristic {chi}, expected {expected}")));
        }
        Ok(())
    }
}

/// Structured `nx` by `ny` grid on `[origin, origin + extent]`, all boundary
/// edges tagged `Wall`.
pub fn build_rectangle(origin: Point, extent: Point, nx: usize, ny: usize) -> Result<Mesh> {
    build_rectangle_with(origin, extent, nx, ny, Diagonal::Uniform)
}

pub fn build_rectangle_with(origin: Point, extent: Point, nx: usize, ny: usize, diagonal: Diagonal) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh(format!("cell counts must be positive, got {nx} x {ny}")));
    }
    if !(extent[0] > 0.0 && extent[1] > 0.0) || !origin.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidMesh(format!("extent must be positive and finite, got {extent:?}")));
    }
    let xs: Vec<f64> = (0..=nx).map(|i| origin[0] + extent[0] * i as f64 / nx as f64).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| origin[1] + extent[1] * j as f64 / ny as f64).collect();
    let mid = origin[1] + 0.5 * extent[1];
    grid_mesh(&xs, &ys, |_, _| true, |_, yc| diagonal == Diagonal::MirroredY && yc < mid)
}

/// Mesh the cells of a tensor grid selected by `keep(xc, yc)` (cell centre).
/// `flip(xc, yc)` chooses the upper-left to lower-right diagonal.
fn grid_mesh(
    xs: &[f64],
    ys: &[f64],
    keep: impl Fn(f64, f64) -> bool,
    flip: impl Fn(f64, f64) -> bool,
) -> Result<Mesh> {
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let mut index = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut vid = |i: usize, j: usize, vertices: &mut Vec<Point>| {
        let k = j * (nx + 1) + i;
        if index[k] == usize::MAX {
            index[k] = vertices.len();
            vertices.push([xs[i], ys[j]]);
        }
        index[k]
    };
    for j in 0..ny {
        for i in 0..nx {
            let (xc, yc) = (0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]));
            if !keep(xc, yc) {
                continue;
            }
            let v00 = vid(i, j, &mut vertices);
            let v10 = vid(i + 1, j, &mut vertices);
            let v01 = vid(i, j + 1, &mut vertices);
            let v11 = vid(i + 1, j + 1, &mut vertices);
            if flip(xc, yc) {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            } else {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
    }
    Mesh::new(vertices, triangles)
}

fn integral_count(value: f64, n: usize, what: &str) -> Result<usize> {
    let cells = value * n as f64;
    let rounded = cells.round();
    if (cells - rounded).abs() > 1e-9 * cells.max(1.0) || rounded < 1.0 {
        return Err(Error::InvalidMesh(format!(
            "{what} = {value} is not a whole number of cells at {n} cells per unit"
        )));
    }
    Ok(rounded as usize)
}

/// Expansion–contraction channel, symmetric about `y = 0`: inflow and outflow
/// sections of half-width 1 and length `l_hat`, a central cavity of
/// half-width `h` and length `1 / delta`. The left end is tagged `Inflow`,
/// the right end `Outflow`, everything else `Wall`.
pub fn build_channel(l_hat: f64, delta: f64, h: f64, cells_per_unit: usize) -> Result<Mesh> {
    if !(h > 1.0) {
        return Err(Error::InvalidMesh(format!("cavity half-width must exceed 1, got {h}")));
    }
    if !(delta > 0.0 && l_hat > 0.0) || !delta.is_finite() || !l_hat.is_finite() || !h.is_finite() {
        return Err(Error::InvalidMesh(format!("need l_hat > 0 and delta > 0, got {l_hat}, {delta}")));
    }
    if cells_per_unit == 0 {
        return Err(Error::InvalidMesh("cells per unit must be positive".into()));
    }
    let n = cells_per_unit;
    let c = 0.5 / delta;
    let nc = integral_count(c, n, "cavity half-length")?;
    let nl = integral_count(l_hat, n, "section length")?;
    let nh = integral_count(h, n, "cavity half-width")?;
    let step = 1.0 / n as f64;
    let half_x = nl + nc;
    let xs: Vec<f64> = (0..=2 * half_x).map(|i| (i as f64 - half_x as f64) * step).collect();
    let ys: Vec<f64> = (0..=2 * nh).map(|j| (j as f64 - nh as f64) * step).collect();
    let mesh = grid_mesh(&xs, &ys, |xc, yc| yc.abs() < 1.0 || xc.abs() < c, |_, yc| yc < 0.0)?;
    Ok(tag_channel_ends(mesh, xs[2 * half_x]))
}

fn tag_channel_ends(mesh: Mesh, x_end: f64) -> Mesh {
    let tol = 1e-9 * x_end;
    mesh.with_tags(|a, b| {
        if (a[0] + x_end).abs() < tol && (b[0] + x_end).abs() < tol {
            Some(BoundaryTag::Inflow)
        } else if (a[0] - x_end).abs() < tol && (b[0] - x_end).abs() < tol {
            Some(BoundaryTag::Outflow)
        } else {
            None
        }
    })
}

/// Line spacing for [`build_channel_graded`]: `fine` at the cavity corners
/// and walls, growing linearly with distance at rate `growth - 1` up to
/// `coarse`. Inside the cavity, within `reach` of its ends, horizontal
/// spacing is further capped at `near`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelGrading {
    pub coarse: f64,
    pub fine: f64,
    pub growth: f64,
    pub near: f64,
    pub reach: f64,
}

impl ChannelGrading {
    fn spacing(&self, dist: f64) -> f64 {
        (self.fine + (self.growth - 1.0) * dist).min(self.coarse)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.fine > 0.0
            && self.coarse >= self.fine
            && self.near >= self.fine
            && self.reach >= 0.0
            && self.growth >= 1.0
            && self.coarse.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMesh(format!("bad grading {self:?}")))
        }
    }
}

/// Points strictly after `a` up to and including `b`, equidistributed in
/// `1 / spacing`.
fn graded_segment(a: f64, b: f64, spacing: &impl Fn(f64) -> f64) -> Vec<f64> {
    const SAMPLES: usize = 4000;
    let dx = (b - a) / SAMPLES as f64;
    let mut cum = vec![0.0; SAMPLES + 1];
    for i in 0..SAMPLES {
        let (x0, x1) = (a + i as f64 * dx, a + (i + 1) as f64 * dx);
        cum[i + 1] = cum[i] + 0.5 * dx * (1.0 / spacing(x0) + 1.0 / spacing(x1));
    }
    let n = (cum[SAMPLES] - 1e-9).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for k in 1..n {
        let target = cum[SAMPLES] * k as f64 / n as f64;
        while cum[i + 1] < target {
            i += 1;
        }
        let w = (target - cum[i]) / (cum[i + 1] - cum[i]);
        out.push(a + (i as f64 + w) * dx);
    }
    out.push(b);
    out
}

fn graded_line(breaks: &[f64], spacing: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut line = vec![breaks[0]];
    for w in breaks.windows(2) {
        line.extend(graded_segment(w[0], w[1], &spacing));
    }
    line
}

/// Same geometry as [`build_channel`] on a tensor grid refined towards the
/// cavity corners `x = +-1/(2 delta)` and the walls `y = +-1`, `y = +-h`.
pub fn build_channel_graded(l_hat: f64, delta: f64, h: f64, grading: &ChannelGrading) -> Result<Mesh> {
    if !(h > 1.0) {
        return Err(Error::InvalidMesh(format!("cavity half-width must exceed 1, got {h}")));
    }
    if !(delta > 0.0 && l_hat > 0.0) || !delta.is_finite() || !l_hat.is_finite() || !h.is_finite() {
        return Err(Error::InvalidMesh(format!("need l_hat > 0 and delta > 0, got {l_hat}, {delta}")));
    }
    grading.validate()?;
    let c = 0.5 / delta;
    let x_end = c + l_hat;
    let nearest = |v: f64, foci: &[f64]| foci.iter().map(|f| (v - f).abs()).fold(f64::INFINITY, f64::min);
    let xs = graded_line(&[-x_end, -c, 0.0, c, x_end], |x| {
        let s = grading.spacing(nearest(x, &[-c, c]));
        if x.abs() < c && c - x.abs() < grading.reach { s.min(grading.near) } else { s }
    });
    let ys = graded_line(&[-h, -1.0, 0.0, 1.0, h], |y| grading.spacing(nearest(y, &[-h, -1.0, 1.0, h])));
    let mesh = grid_mesh(&xs, &ys, |xc, yc| yc.abs() < 1.0 || xc.abs() < c, |_, yc| yc < 0.0)?;
    Ok(tag_channel_ends(mesh, x_end))
}

/// Split every triangle into four through its edge midpoints. Original
/// vertices keep their indices; midpoints follow in order of first
/// appearance.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| {
        *mids.entry(edge_key(a, b)).or_insert_with(|| {
            let (pa, pb) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    for &[a, b, c] in &mesh.triangles {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    let mut boundary_edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let [a, b] = e.vertices;
        let m = midpoint(a, b, &mut vertices);
        boundary_edges.push(BoundaryEdge { vertices: [a, m], tag: e.tag });
        boundary_edges.push(BoundaryEdge { vertices: [m, b], tag: e.tag });
    }
    let h_max = triangles
        .iter()
        .map(|t| {
            let [p, q, r] = t.map(|v| vertices[v]);
            dist(p, q).max(dist(q, r)).max(dist(r, p))
        })
        .fold(0.0, f64::max);
    Mesh { vertices, triangles, boundary_edges, h_max }
}

pub fn refine_times(mesh: &Mesh, levels: usize) -> Mesh {
    let mut m = mesh.clone();
    for _ in 0..levels {
        m = refine_uniform(&m);
    }
    m
}
