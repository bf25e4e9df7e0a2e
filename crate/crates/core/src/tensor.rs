//! Symmetric 2x2 tensors and linear maps between them.
//!
//! Tensors are stored by their physical components `(xx, yy, xy)`; the
//! Frobenius inner product therefore weights the off-diagonal entry twice:
//! `a : b = a.xx b.xx + a.yy b.yy + 2 a.xy b.xy`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Weights of the component triple under the Frobenius inner product.
pub const WEIGHTS: [f64; 3] = [1.0, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl SymTensor2 {
    pub const ZERO: Self = Self { xx: 0.0, yy: 0.0, xy: 0.0 };
    pub const IDENTITY: Self = Self { xx: 1.0, yy: 1.0, xy: 0.0 };

    pub const fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub const fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, yy, xy: 0.0 }
    }

    pub fn from_array(c: [f64; 3]) -> Self {
        Self { xx: c[0], yy: c[1], xy: c[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.xx, self.yy, self.xy]
    }

    /// Frobenius inner product `self : other`.
    #[inline]
    pub fn dot(self, other: Self) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    pub fn is_finite(self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite()
    }
}

impl Add for SymTensor2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }
}

impl AddAssign for SymTensor2 {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for SymTensor2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.xx - o.xx, self.yy - o.yy, self.xy - o.xy)
    }
}

impl Neg for SymTensor2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.xx, -self.yy, -self.xy)
    }
}

impl Mul<SymTensor2> for f64 {
    type Output = SymTensor2;
    fn mul(self, t: SymTensor2) -> SymTensor2 {
        SymTensor2::new(self * t.xx, self * t.yy, self * t.xy)
    }
}

impl Mul<f64> for SymTensor2 {
    type Output = SymTensor2;
    fn mul(self, s: f64) -> SymTensor2 {
        s * self
    }
}

/// Linear map on symmetric tensors, as a 3x3 matrix acting on the
/// component triple `(xx, yy, xy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymLinMap {
    pub m: [[f64; 3]; 3],
}

impl SymLinMap {
    pub const ZERO: Self = Self { m: [[0.0; 3]; 3] };
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn scaled_identity(s: f64) -> Self {
        s * Self::IDENTITY
    }

    /// The rank-one map `tau -> sigma (phi : tau)`.
    pub fn outer(sigma: SymTensor2, phi: SymTensor2) -> Self {
        let s = sigma.to_array();
        let p = phi.to_array();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = s[i] * WEIGHTS[j] * p[j];
            }
        }
        Self { m }
    }

    #[inline]
    pub fn apply(&self, t: SymTensor2) -> SymTensor2 {
        let v = t.to_array();
        let mut out = [0.0; 3];
        for (o, row) in out.iter_mut().zip(&self.m) {
            *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        }
        SymTensor2::from_array(out)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self { m }
    }

    pub fn inverse(&self) -> Option<Self> {
        let inv = nalgebra::Matrix3::from_fn(|i, j| self.m[i][j]).try_inverse()?;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = inv[(i, j)];
            }
        }
        Some(Self { m })
    }

    /// Smallest singular value with respect to the Frobenius norm on
    /// symmetric tensors (i.e. of `W^½ M W^-½`).
    pub fn min_singular_value(&self) -> f64 {
        let sw = [1.0, 1.0, std::f64::consts::SQRT_2];
        let a = nalgebra::Matrix3::from_fn(|i, j| sw[i] * self.m[i][j] / sw[j]);
        a.singular_values().min()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

impl Add for SymLinMap {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut m = self.m;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += o.m[i][j];
            }
        }
        Self { m }
    }
}

impl Sub for SymLinMap {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-1.0) * o
    }
}

impl Mul<SymLinMap> for f64 {
    type Output = SymLinMap;
    fn mul(self, a: SymLinMap) -> SymLinMap {
        let mut m = a.m;
        m.iter_mut().flatten().for_each(|v| *v *= self);
        SymLinMap { m }
    }
}
