//! Numerical laboratory for quasi-periodic localized states of the 1-D
//! disordered nonlinear Schrödinger lattice
//!
//!   i du/dt = -(u(x+1) + u(x-1)) + V(x) u + delta |u|^{2p} u,
//!
//! with i.i.d. potential V on [0, 1]. The crate builds finite-volume
//! eigensystems of H = -Delta + V, audits non-resonance of the diagonal
//! harmonics, runs Monte Carlo checks of the spectral-statistics inputs,
//! assembles the eigenbasis nonlinearity and its linearization, solves the
//! bifurcation equations by a multiscale Newton scheme, and cross-validates
//! the constructed solutions by direct time integration.

pub mod dense;
pub mod dynamics;
pub mod error;
pub mod nonlinear;
pub mod resonance;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
