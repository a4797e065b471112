pub mod certify;
pub mod controls;
pub mod error;
pub mod galerkin;
pub mod linops;
pub mod models;
pub mod propagate;
pub mod quad;
pub mod report;
pub mod system;

pub use error::{Error, Result};
pub use linops::{CMatrix, CVector, HermitianMatrix, ScaleFrame};
pub use num_complex::Complex64;
