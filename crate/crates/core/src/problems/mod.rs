//! Benchmark problems.

pub mod cavity;
pub mod channel;
pub mod poiseuille;

/// Viscosity of the plate and channel problems (`2 nu = 1`). The plate
/// solution balances the momentum equation only for this value.
pub const BENCHMARK_NU: f64 = 0.5;

/// Default viscosity of the cavity problem.
pub const CAVITY_NU: f64 = 1.0;

/// Number of degrees of freedom of the three-field system on `mesh`.
pub fn dof_count(mesh: &crate::mesh::Mesh) -> usize {
    crate::spaces::DofLayout::new(mesh).total()
}
