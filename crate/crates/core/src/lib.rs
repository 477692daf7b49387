//! Numerical laboratory for the nonlocal diffusion equation with absorption
//! `u_t = J∗u − u − u^p`.
//!
//! Modules, bottom-up: [`kernel`] (kernels and stencils), [`grid`]
//! (grids, fields, exterior rules), [`nonlocal_op`] (the operator and its
//! Dirichlet restriction), [`spectral`] (principal eigenpairs on balls and
//! the Laplacian references), [`barrier`] (ODE barrier, flat supersolution,
//! φ(R) and the radius selector), [`evolve`] (time integration) and
//! [`fundamental`] (the fundamental-solution remainder probe).

pub mod barrier;
pub mod error;
pub mod evolve;
pub mod fundamental;
pub mod grid;
pub mod kernel;
pub mod nonlocal_op;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
