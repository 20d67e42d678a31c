//! Hessian-type fully nonlinear equations on Hermitian manifolds: cone
//! calculus, eigenvalue concentration, discrete complex operators, and a
//! Newton/continuity solver for the Dirichlet problem on `X x strip`.

pub mod cli_io;
pub mod cone;
pub mod equation;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod solver;
pub mod sparse;
pub mod subsolution;
pub mod verify;

pub use error::{Error, Result};
