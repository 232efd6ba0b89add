//! Discovery and certification of higher-order first integrals of autonomous
//! holonomic dynamical systems.
//!
//! The systems treated here are of the form
//!
//! ```text
//! q̈^a = -Γ^a_bc(q) q̇^b q̇^c - Q^a(q)
//! ```
//!
//! where `Γ^a_bc` are the coefficients of a symmetric (possibly non-metrical)
//! connection read off the equations of motion and `-Q^a` are the generalized
//! forces. A first integral (FI) of order `m` is a velocity polynomial
//!
//! ```text
//! I = Σ_{r=0}^{m} M_{i1...ir}(t, q) q̇^{i1} ... q̇^{ir}
//! ```
//!
//! with totally symmetric coefficient tensors, constant along every solution.
//! Requiring `dI/dt = 0` couples the coefficient tensors through generalized
//! Killing-tensor conditions of the connection plus force ladders; this crate
//! assembles those condition systems, reduces them over a user-declared
//! function basis to a finite nullspace problem, and certifies the resulting
//! candidates both symbolically (randomized identity testing in two floating
//! precisions) and numerically (conservation drift along integrated
//! trajectories).
//!
//! Module map:
//!
//! - [`expr`] — exact symbolic expression kernel (parse, differentiate,
//!   evaluate, probabilistic zero test).
//! - [`geometry`] — symmetric tensor fields, connections, covariant
//!   derivatives, curvature, Killing-tensor residuals.
//! - [`conditions`] — the FI condition systems: the raw PDE system, the
//!   polynomial-in-time and exponential-in-time families, parity splits,
//!   the total-derivative residual and the Noether generator map.
//! - [`solver`] — linear-ansatz reduction and exact/floating nullspace
//!   extraction with independent certification.
//! - [`dynamics`] — reproducible Runge-Kutta integration and drift
//!   verification.
//! - [`corpus`] — the system-definition and FI file formats, reports, and
//!   the CLI command implementations behind the `fint` binary.

pub mod conditions;
pub mod corpus;
pub mod dynamics;
pub mod expr;
pub mod geometry;
pub mod solver;

#[cfg(test)]
pub(crate) mod test_fixtures;

pub use expr::{Domain, Expr, Rational, SamplePoint, Var, ZeroConfig, ZeroVerdict};
