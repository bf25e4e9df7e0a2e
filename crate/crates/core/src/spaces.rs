//! Degree-of-freedom layout and P1 element data for the three-field
//! discretisation.
//!
//! The global vector is ordered `[S | u | p | lambda]`: three stress
//! components per triangle, interleaved `(u_x, u_y)` per vertex, one pressure
//! per vertex and the mean-zero multiplier.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::tensor::SymTensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofLayout {
    pub n_triangles: usize,
    pub n_vertices: usize,
}

impl DofLayout {
    pub fn new(mesh: &Mesh) -> Self {
        Self { n_triangles: mesh.n_triangles(), n_vertices: mesh.n_vertices() }
    }

    pub fn n_stress(&self) -> usize {
        3 * self.n_triangles
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.n_vertices
    }

    pub fn n_pressure(&self) -> usize {
        self.n_vertices
    }

    pub fn velocity_offset(&self) -> usize {
        self.n_stress()
    }

    pub fn pressure_offset(&self) -> usize {
        self.n_stress() + self.n_velocity()
    }

    pub fn multiplier(&self) -> usize {
        self.pressure_offset() + self.n_pressure()
    }

    pub fn total(&self) -> usize {
        self.multiplier() + 1
    }

    #[inline]
    pub fn stress(&self, t: usize, c: usize) -> usize {
        3 * t + c
    }

    #[inline]
    pub fn velocity(&self, v: usize, d: usize) -> usize {
        self.n_stress() + 2 * v + d
    }

    #[inline]
    pub fn pressure(&self, v: usize) -> usize {
        self.pressure_offset() + v
    }
}

/// Coefficients of a discrete triple `(S, u, p)` plus the multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    layout: DofLayout,
    coeffs: Vec<f64>,
}

impl State {
    pub fn zeros(layout: DofLayout) -> Self {
        Self { layout, coeffs: vec![0.0; layout.total()] }
    }

    pub fn from_vec(layout: DofLayout, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != layout.total() {
            return Err(Error::LayoutMismatch { expected: layout.total(), found: coeffs.len() });
        }
        Ok(Self { layout, coeffs })
    }

    pub fn layout(&self) -> DofLayout {
        self.layout
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn stress(&self, t: usize) -> SymTensor2 {
        let i = self.layout.stress(t, 0);
        SymTensor2::new(self.coeffs[i], self.coeffs[i + 1], self.coeffs[i + 2])
    }

    pub fn set_stress(&mut self, t: usize, s: SymTensor2) {
        let i = self.layout.stress(t, 0);
        self.coeffs[i..i + 3].copy_from_slice(&s.to_array());
    }

    pub fn velocity(&self, v: usize) -> [f64; 2] {
        let i = self.layout.velocity(v, 0);
        [self.coeffs[i], self.coeffs[i + 1]]
    }

    pub fn velocity_block(&self) -> &[f64] {
        &self.coeffs[self.layout.velocity_offset()..self.layout.pressure_offset()]
    }

    pub fn velocity_block_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.layout.velocity_offset(), self.layout.pressure_offset());
        &mut self.coeffs[a..b]
    }

    pub fn pressure(&self, v: usize) -> f64 {
        self.coeffs[self.layout.pressure(v)]
    }

    pub fn pressure_block(&self) -> &[f64] {
        &self.coeffs[self.layout.pressure_offset()..self.layout.multiplier()]
    }

    pub fn pressure_block_mut(&mut self) -> &mut [f64] {
        let (a, b) = (self.layout.pressure_offset(), self.layout.multiplier());
        &mut self.coeffs[a..b]
    }

    pub fn multiplier(&self) -> f64 {
        self.coeffs[self.layout.multiplier()]
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let want = DofLayout::new(mesh);
        if want != self.layout {
            return Err(Error::LayoutMismatch { expected: want.total(), found: self.layout.total() });
        }
        Ok(())
    }
}

/// Area and constant barycentric gradients of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementData {
    pub area: f64,
    pub grad: [[f64; 2]; 3],
    /// Longest edge.
    pub diameter: f64,
}

impl ElementData {
    /// Symmetric gradient of the P1 field with nodal values `u`.
    #[inline]
    pub fn sym_gradient(&self, u: [[f64; 2]; 3]) -> SymTensor2 {
        let mut g = [[0.0; 2]; 2];
        for (ui, gi) in u.iter().zip(&self.grad) {
            for a in 0..2 {
                for b in 0..2 {
                    g[a][b] += ui[a] * gi[b];
                }
            }
        }
        SymTensor2::new(g[0][0], g[1][1], 0.5 * (g[0][1] + g[1][0]))
    }

    /// Divergence of the P1 field with nodal values `u`.
    #[inline]
    pub fn divergence(&self, u: [[f64; 2]; 3]) -> f64 {
        (0..3).map(|i| u[i][0] * self.grad[i][0] + u[i][1] * self.grad[i][1]).sum()
    }

    /// Gradient of the P1 scalar with nodal values `p`.
    #[inline]
    pub fn scalar_gradient(&self, p: [f64; 3]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..3 {
            g[0] += p[i] * self.grad[i][0];
            g[1] += p[i] * self.grad[i][1];
        }
        g
    }

    /// `D(phi_i e_d)` for the vector basis function at local vertex `i`,
    /// direction `d`.
    #[inline]
    pub fn basis_sym_gradient(&self, i: usize, d: usize) -> SymTensor2 {
        let g = self.grad[i];
        if d == 0 {
            SymTensor2::new(g[0], 0.0, 0.5 * g[1])
        } else {
            SymTensor2::new(0.0, g[1], 0.5 * g[0])
        }
    }
}

pub fn p1_element_data(mesh: &Mesh, t: usize) -> Result<ElementData> {
    let [a, b, c] = mesh.triangle_points(t);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let area = 0.5 * det;
    if !(area > 0.0) {
        return Err(Error::DegenerateTriangle { index: t, area });
    }
    // grad phi_i = rot90(opposite edge) / (2 area)
    let g = |p: Point, q: Point| [(p[1] - q[1]) / det, (q[0] - p[0]) / det];
    let grad = [g(b, c), g(c, a), g(a, b)];
    Ok(ElementData { area, grad, diameter: mesh.diameter(t) })
}

pub fn all_element_data(mesh: &Mesh) -> Result<Vec<ElementData>> {
    (0..mesh.n_triangles()).map(|t| p1_element_data(mesh, t)).collect()
}

pub fn element_velocity(mesh: &Mesh, state: &State, t: usize) -> [[f64; 2]; 3] {
    mesh.triangles()[t].map(|v| state.velocity(v))
}

pub fn sym_gradient(mesh: &Mesh, state: &State, t: usize) -> Result<SymTensor2> {
    let e = p1_element_data(mesh, t)?;
    Ok(e.sym_gradient(element_velocity(mesh, state, t)))
}

/// Velocity block `[u_x(v0), u_y(v0), u_x(v1), ...]` sampled at vertices.
pub fn interpolate_velocity(mesh: &Mesh, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
    mesh.vertices().iter().flat_map(|&p| f(p)).collect()
}

pub fn interpolate_scalar(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    mesh.vertices().iter().map(|&p| f(p)).collect()
}

/// Quadrature rule on the reference triangle in barycentric coordinates.
/// Weights sum to one and are scaled by the element area.
#[derive(Debug, Clone, Copy)]
pub struct QuadRule {
    pub points: &'static [[f64; 3]],
    pub weights: &'static [f64],
}

impl QuadRule {
    pub const CENTROID: QuadRule = QuadRule { points: &[[1.0 / 3.0; 3]], weights: &[1.0] };

    /// Degree 2, interior points.
    pub const THREE_POINT: QuadRule = QuadRule {
        points: &[
            [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        ],
        weights: &[1.0 / 3.0; 3],
    };

    /// Degree 4.
    pub const SIX_POINT: QuadRule = QuadRule {
        points: &[
            [0.108103018168070, 0.445948490915965, 0.445948490915965],
            [0.445948490915965, 0.108103018168070, 0.445948490915965],
            [0.445948490915965, 0.445948490915965, 0.108103018168070],
            [0.816847572980459, 0.091576213509771, 0.091576213509771],
            [0.091576213509771, 0.816847572980459, 0.091576213509771],
            [0.091576213509771, 0.091576213509771, 0.816847572980459],
        ],
        weights: &[
            0.223381589678011,
            0.223381589678011,
            0.223381589678011,
            0.109951743655322,
            0.109951743655322,
            0.109951743655322,
        ],
    };

    pub fn physical(lambda: [f64; 3], pts: [Point; 3]) -> Point {
        [
            lambda[0] * pts[0][0] + lambda[1] * pts[1][0] + lambda[2] * pts[2][0],
            lambda[0] * pts[0][1] + lambda[1] * pts[1][1] + lambda[2] * pts[2][1],
        ]
    }

    pub fn integrate(&self, pts: [Point; 3], area: f64, f: impl Fn([f64; 3], Point) -> f64) -> f64 {
        let mut s = 0.0;
        for (l, w) in self.points.iter().zip(self.weights) {
            s += w * f(*l, Self::physical(*l, pts));
        }
        area * s
    }
}
