//! Implicit constitutive relations `G(sigma, tau) = 0`, the graph
//! regularisation `G(S - eps1 D, D - eps2 S)` and measurable selections of
//! their Clarke Jacobians.
//!
//! Throughout, `sigma` is the stress argument and `tau` the strain-rate
//! argument. Wherever a positive part `(x)^+` is differentiated, the
//! selection uses derivative `0` at `x <= 0`; at `|tau| = 0` the product
//! forms take the direction `phi = 0`.

use crate::error::{Error, Result};
use crate::tensor::{SymLinMap, SymTensor2};

/// Smallest admissible power-law / Herschel–Bulkley exponent.
const MIN_EXPONENT: f64 = 1.0 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstitutiveModel {
    /// `sigma - 2 nu tau`
    Newtonian { nu: f64 },
    /// `sigma - K |tau|^(r-2) tau`
    PowerLaw { k: f64, r: f64 },
    /// `|tau| sigma - (tau_* + 2 nu |tau|) tau`
    BinghamProduct { tau_star: f64, nu: f64 },
    /// `(|sigma| - tau_*)^+ sigma - 2 nu (tau_* + (|sigma| - tau_*)^+) tau`
    BinghamMax { tau_star: f64, nu: f64 },
    /// `(|sigma| - tau_*)^+ sigma / |sigma| - 2 nu tau`
    BinghamProjection { tau_star: f64, nu: f64 },
    /// `|tau| sigma - (tau_* + 2 nu |tau|^(r-1)) tau`
    HerschelBulkley { tau_star: f64, nu: f64, r: f64 },
}

/// Which of the equivalent Bingham expressions to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinghamForm {
    Product,
    Max,
    Projection,
}

impl BinghamForm {
    pub fn model(self, tau_star: f64, nu: f64) -> ConstitutiveModel {
        match self {
            BinghamForm::Product => ConstitutiveModel::BinghamProduct { tau_star, nu },
            BinghamForm::Max => ConstitutiveModel::BinghamMax { tau_star, nu },
            BinghamForm::Projection => ConstitutiveModel::BinghamProjection { tau_star, nu },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BinghamForm::Product => "product",
            BinghamForm::Max => "max",
            BinghamForm::Projection => "projection",
        }
    }
}

impl std::str::FromStr for BinghamForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "product" => Ok(Self::Product),
            "max" => Ok(Self::Max),
            "projection" => Ok(Self::Projection),
            other => Err(format!("unknown Bingham form '{other}' (expected product|max|projection)")),
        }
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

impl ConstitutiveModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        match *self {
            Self::Newtonian { nu } if !(nu > 0.0) => bad(format!("viscosity must be positive, got {nu}")),
            Self::PowerLaw { k, r } => {
                if !(k > 0.0) {
                    bad(format!("consistency must be positive, got {k}"))
                } else if !(r >= MIN_EXPONENT) {
                    bad(format!("exponent must exceed 1, got {r}"))
                } else {
                    Ok(())
                }
            }
            Self::BinghamProduct { tau_star, nu }
            | Self::BinghamMax { tau_star, nu }
            | Self::BinghamProjection { tau_star, nu } => {
                if !(tau_star >= 0.0) {
                    bad(format!("yield stress must be non-negative, got {tau_star}"))
                } else if !(nu > 0.0) {
                    bad(format!("viscosity must be positive, got {nu}"))
                } else {
                    Ok(())
                }
            }
            Self::HerschelBulkley { tau_star, nu, r } => {
                if !(tau_star >= 0.0) {
                    bad(format!("yield stress must be non-negative, got {tau_star}"))
                } else if !(nu > 0.0) {
                    bad(format!("consistency must be positive, got {nu}"))
                } else if !(r >= MIN_EXPONENT) {
                    bad(format!("exponent must exceed 1, got {r}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn yield_stress(&self) -> f64 {
        match *self {
            Self::Newtonian { .. } | Self::PowerLaw { .. } => 0.0,
            Self::BinghamProduct { tau_star, .. }
            | Self::BinghamMax { tau_star, .. }
            | Self::BinghamProjection { tau_star, .. }
            | Self::HerschelBulkley { tau_star, .. } => tau_star,
        }
    }

    /// Viscosity-like coefficient `nu` (or `K / 2` for the power law).
    pub fn viscosity(&self) -> f64 {
        match *self {
            Self::Newtonian { nu }
            | Self::BinghamProduct { nu, .. }
            | Self::BinghamMax { nu, .. }
            | Self::BinghamProjection { nu, .. }
            | Self::HerschelBulkley { nu, .. } => nu,
            Self::PowerLaw { k, .. } => 0.5 * k,
        }
    }

    /// True for the forms whose zero set contains the whole hyperplane
    /// `tau = 0` (any `sigma`).
    pub fn has_product_structure(&self) -> bool {
        matches!(self, Self::BinghamProduct { .. } | Self::HerschelBulkley { .. })
    }

    pub fn eval(&self, sigma: SymTensor2, tau: SymTensor2) -> SymTensor2 {
        match *self {
            Self::Newtonian { nu } => sigma - (2.0 * nu) * tau,
            Self::PowerLaw { k, r } => {
                let nt = tau.norm();
                if nt == 0.0 {
                    sigma
                } else {
                    sigma - (k * nt.powf(r - 2.0)) * tau
                }
            }
            Self::BinghamProduct { tau_star, nu } => {
                let nt = tau.norm();
                nt * sigma - (tau_star + 2.0 * nu * nt) * tau
            }
            Self::BinghamMax { tau_star, nu } => {
                let excess = pos(sigma.norm() - tau_star);
                excess * sigma - (2.0 * nu * (tau_star + excess)) * tau
            }
            Self::BinghamProjection { tau_star, nu } => {
                let ns = sigma.norm();
                let excess = pos(ns - tau_star);
                if excess > 0.0 {
                    (excess / ns) * sigma - (2.0 * nu) * tau
                } else {
                    -(2.0 * nu) * tau
                }
            }
            Self::HerschelBulkley { tau_star, nu, r } => {
                let nt = tau.norm();
                nt * sigma - (tau_star + 2.0 * nu * nt.powf(r - 1.0)) * tau
            }
        }
    }

    /// One measurable selection `(d1, d2)` of the Clarke Jacobian at
    /// `(sigma, tau)`: `d1` is the derivative in `sigma`, `d2` in `tau`.
    pub fn jacobian(&self, sigma: SymTensor2, tau: SymTensor2) -> (SymLinMap, SymLinMap) {
        self.jacobian_with_direction(sigma, tau, SymTensor2::ZERO)
    }

    /// Element of the Clarke Jacobian using `phi` (with `|phi| <= 1`) as the
    /// direction at the nonsmooth set: `|tau| = 0` for the product forms,
    /// `|sigma| = tau_*` for the max form. Elsewhere `phi` is ignored.
    pub fn jacobian_with_direction(
        &self,
        sigma: SymTensor2,
        tau: SymTensor2,
        phi: SymTensor2,
    ) -> (SymLinMap, SymLinMap) {
        let id = SymLinMap::IDENTITY;
        match *self {
            Self::Newtonian { nu } => (id, SymLinMap::scaled_identity(-2.0 * nu)),
            Self::PowerLaw { k, r } => {
                let nt = tau.norm();
                let d2 = if nt > 0.0 {
                    let n = (1.0 / nt) * tau;
                    -k * nt.powf(r - 2.0) * (id + (r - 2.0) * SymLinMap::outer(n, n))
                } else if r == 2.0 {
                    SymLinMap::scaled_identity(-k)
                } else {
                    // Derivative is 0 (r > 2) or unbounded (r < 2) here; take 0.
                    SymLinMap::ZERO
                };
                (id, d2)
            }
            Self::BinghamProduct { tau_star, nu } => {
                let nt = tau.norm();
                if nt > 0.0 {
                    let n = (1.0 / nt) * tau;
                    let d1 = SymLinMap::scaled_identity(nt);
                    let d2 = SymLinMap::outer(sigma, n)
                        - SymLinMap::scaled_identity(tau_star + 2.0 * nu * nt)
                        - (2.0 * nu * nt) * SymLinMap::outer(n, n);
                    (d1, d2)
                } else {
                    (SymLinMap::ZERO, SymLinMap::outer(sigma, phi) - SymLinMap::scaled_identity(tau_star))
                }
            }
            Self::HerschelBulkley { tau_star, nu, r } => {
                let nt = tau.norm();
                if nt > 0.0 {
                    let n = (1.0 / nt) * tau;
                    let g = nt.powf(r - 1.0);
                    let d1 = SymLinMap::scaled_identity(nt);
                    let d2 = SymLinMap::outer(sigma, n)
                        - SymLinMap::scaled_identity(tau_star + 2.0 * nu * g)
                        - (2.0 * nu * (r - 1.0) * g) * SymLinMap::outer(n, n);
                    (d1, d2)
                } else {
                    (SymLinMap::ZERO, SymLinMap::outer(sigma, phi) - SymLinMap::scaled_identity(tau_star))
                }
            }
            Self::BinghamMax { tau_star, nu } => {
                let ns = sigma.norm();
                let excess = ns - tau_star;
                let d2 = SymLinMap::scaled_identity(-2.0 * nu * (tau_star + pos(excess)));
                let d1 = if excess > 0.0 {
                    let n = (1.0 / ns) * sigma;
                    SymLinMap::scaled_identity(excess) + SymLinMap::outer(sigma - (2.0 * nu) * tau, n)
                } else if excess == 0.0 {
                    SymLinMap::outer(sigma - (2.0 * nu) * tau, phi)
                } else {
                    SymLinMap::ZERO
                };
                (d1, d2)
            }
            Self::BinghamProjection { tau_star, nu } => {
                let ns = sigma.norm();
                let d2 = SymLinMap::scaled_identity(-2.0 * nu);
                let d1 = if ns > tau_star && ns > 0.0 {
                    let n = (1.0 / ns) * sigma;
                    SymLinMap::scaled_identity(1.0 - tau_star / ns) + (tau_star / ns) * SymLinMap::outer(n, n)
                } else {
                    SymLinMap::ZERO
                };
                (d1, d2)
            }
        }
    }
}

/// The graph regularisation of a base relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedModel {
    pub base: ConstitutiveModel,
    /// Viscosity-like parameter multiplying `D` in the stress argument.
    pub eps1: f64,
    /// Fluidity-like parameter multiplying `S` in the strain-rate argument.
    pub eps2: f64,
}

impl RegularizedModel {
    pub fn new(base: ConstitutiveModel, eps1: f64, eps2: f64) -> Result<Self> {
        base.validate()?;
        if !(eps1 >= 0.0 && eps2 >= 0.0) {
            return Err(Error::InvalidModel(format!("regularisation parameters must be >= 0, got ({eps1}, {eps2})")));
        }
        Ok(Self { base, eps1, eps2 })
    }

    /// `eps1 = eps2 = eps`.
    pub fn symmetric(base: ConstitutiveModel, eps: f64) -> Result<Self> {
        Self::new(base, eps, eps)
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps1: eps, eps2: eps, ..*self }
    }

    /// Shifted arguments `(S - eps1 D, D - eps2 S)`.
    #[inline]
    pub fn shifted(&self, s: SymTensor2, d: SymTensor2) -> (SymTensor2, SymTensor2) {
        (s - self.eps1 * d, d - self.eps2 * s)
    }

    #[inline]
    pub fn eval(&self, s: SymTensor2, d: SymTensor2) -> SymTensor2 {
        let (a, b) = self.shifted(s, d);
        self.base.eval(a, b)
    }

    /// Chain rule through the shift: `(d1 - eps2 d2, d2 - eps1 d1)`.
    pub fn jacobian(&self, s: SymTensor2, d: SymTensor2) -> (SymLinMap, SymLinMap) {
        let (a, b) = self.shifted(s, d);
        let (d1, d2) = self.base.jacobian(a, b);
        (d1 - self.eps2 * d2, d2 - self.eps1 * d1)
    }

    /// Stress `S` on the regularised graph for a given strain rate `D`.
    pub fn solve_stress(&self, d: SymTensor2, s_init: SymTensor2) -> Result<SymTensor2> {
        solve_pointwise_stress(self, d, s_init)
    }

    /// True if `(S, D)` solves the product form only through
    /// `D - eps2 S = 0` while `|S - eps1 D|` exceeds the yield stress.
    pub fn on_spurious_branch(&self, s: SymTensor2, d: SymTensor2) -> bool {
        if !self.base.has_product_structure() {
            return false;
        }
        let (a, b) = self.shifted(s, d);
        let scale = 1.0 + d.norm() + s.norm();
        b.norm() <= 1e-8 * scale && a.norm() > self.base.yield_stress() * (1.0 + 1e-6) + 1e-12
    }

    /// Explicit yielded-branch stress of the Bingham graph,
    /// `S = (tau_* n + (2 nu + eps1) D) / (1 + 2 nu eps2)` with `n = D/|D|`.
    /// Used as a starting point for the pointwise solve.
    pub fn yielded_guess(&self, d: SymTensor2) -> SymTensor2 {
        let nd = d.norm();
        if nd == 0.0 {
            return SymTensor2::ZERO;
        }
        let tau_star = self.base.yield_stress();
        let two_nu = 2.0 * self.base.viscosity();
        (1.0 / (1.0 + two_nu * self.eps2)) * ((tau_star / nd) * d + (two_nu + self.eps1) * d)
    }
}

/// `G(model, sigma, tau)`.
pub fn eval_g(model: &ConstitutiveModel, sigma: SymTensor2, tau: SymTensor2) -> SymTensor2 {
    model.eval(sigma, tau)
}

/// `G(S - eps1 D, D - eps2 S)`.
pub fn eval_g_reg(reg: &RegularizedModel, s: SymTensor2, d: SymTensor2) -> SymTensor2 {
    reg.eval(s, d)
}

pub fn jacobian_selection(model: &ConstitutiveModel, sigma: SymTensor2, tau: SymTensor2) -> (SymLinMap, SymLinMap) {
    model.jacobian(sigma, tau)
}

pub fn jacobian_selection_reg(reg: &RegularizedModel, s: SymTensor2, d: SymTensor2) -> (SymLinMap, SymLinMap) {
    reg.jacobian(s, d)
}

/// Bercovier–Engelman regularised Bingham stress
/// `2 nu D + tau_* D / sqrt(eps^2 + |D|^2)`.
pub fn eval_bercovier(nu: f64, tau_star: f64, eps: f64, d: SymTensor2) -> SymTensor2 {
    (2.0 * nu) * d + (tau_star / (eps * eps + d.dot(d)).sqrt()) * d
}

const POINTWISE_MAX_ITER: usize = 100;

/// Solve `G_eps(S, D) = 0` for `S` by a damped semismooth Newton iteration
/// on the three stress components.
///
/// For the product forms the zero set also contains `{D - eps2 S = 0}`
/// with `|S - eps1 D| > tau_*`, which is not on the Bingham graph. A
/// solution landing there is rejected and the solve restarts from the
/// yielded-branch formula.
pub fn solve_pointwise_stress(reg: &RegularizedModel, d: SymTensor2, s_init: SymTensor2) -> Result<SymTensor2> {
    if !(reg.eps1 > 0.0 && reg.eps2 > 0.0) {
        return Err(Error::InvalidModel("pointwise stress solve requires eps1, eps2 > 0".into()));
    }
    let tol = 1e-12 * (1.0 + d.norm()).powi(2);
    let s = newton_pointwise(reg, d, s_init, tol)?;
    if !reg.on_spurious_branch(s, d) {
        return Ok(s);
    }
    let s = newton_pointwise(reg, d, reg.yielded_guess(d), tol)?;
    if reg.on_spurious_branch(s, d) {
        let residual = reg.eval(s, d).norm();
        return Err(Error::PointwiseNoConvergence { iterations: POINTWISE_MAX_ITER, residual });
    }
    Ok(s)
}


fn newton_pointwise(reg: &RegularizedModel, d: SymTensor2, s0: SymTensor2, tol: f64) -> Result<SymTensor2> {
    let mut s = s0;
    let mut g = reg.eval(s, d);
    let mut gn = g.norm();
    for _ in 0..POINTWISE_MAX_ITER {
        if gn <= tol {
            return Ok(s);
        }
        let (d1, _) = reg.jacobian(s, d);
        let inv = match d1.inverse() {
            Some(inv) => inv,
            None => (d1 + SymLinMap::scaled_identity(1e-10 * (1.0 + d1.max_abs()))).inverse().ok_or(
                Error::PointwiseNoConvergence { iterations: 0, residual: gn },
            )?,
        };
        let step = -1.0 * inv.apply(g);
        let mut t = 1.0;
        loop {
            let trial = s + t * step;
            let gt = reg.eval(trial, d);
            let gtn = gt.norm();
            if gtn <= (1.0 - 1e-4 * t) * gn || t < 1e-10 {
                s = trial;
                g = gt;
                gn = gtn;
                break;
            }
            t *= 0.5;
        }
    }
    if gn <= tol {
        Ok(s)
    } else {
        Err(Error::PointwiseNoConvergence { iterations: POINTWISE_MAX_ITER, residual: gn })
    }
}
