//! Finite-element solver for incompressible flow of fluids with implicit
//! (Bingham, Herschel–Bulkley type) constitutive relations.
//!
//! The discretisation uses piecewise-constant symmetric stresses, continuous
//! piecewise-linear velocity and pressure with pressure stabilisation, and a
//! mean-zero pressure multiplier. Nonlinear systems are solved by a
//! semismooth Newton method on a graph-regularised relation.

pub mod assembly;
pub mod constitutive;
pub mod error;
pub mod exec;
pub mod linsolve;
pub mod mesh;
pub mod newton;
pub mod postprocess;
pub mod problems;
pub mod spaces;
pub mod tensor;
pub mod verify;

pub use assembly::{ProblemSpec, SparseSystem};
pub use constitutive::{BinghamForm, ConstitutiveModel, RegularizedModel};
pub use error::{Error, Result};
pub use exec::Execution;
pub use mesh::{BoundaryTag, Mesh};
pub use newton::{ContinuationSchedule, NewtonReport, WarmStart};
pub use spaces::{DofLayout, State};
pub use tensor::{SymLinMap, SymTensor2};
