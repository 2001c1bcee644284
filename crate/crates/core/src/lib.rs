//! Galerkin simulation of elastic and poroelastic nonsimple bodies with
//! repulsive monopolar electrostatic self-interaction at large strains.

pub mod basis;
pub mod diagnostics;
pub mod diffusion;
pub mod dynamics;
pub mod electrostatics;
pub mod energy;
pub mod error;
pub mod fields;
pub mod kinematics;
pub mod linalg;
pub mod quadrature;
pub mod tensor;

pub use error::{Error, Result};
