//! Numerical laboratory for viscous Hamilton-Jacobi equations
//!
//!     u_t + H(x/eps, u_x) = eps u_xx
//!
//! in one space dimension, and for effective Hamiltonians of periodic
//! control-theoretic Hamiltonians on the 2-torus. The crate has three legs:
//!
//! * a monotone explicit finite-difference solver ([`fd_solver`]) together
//!   with closed-form and quadrature reference solutions ([`closed_form`]),
//!   used to measure vanishing-viscosity and homogenization rates in eps;
//! * a periodic P1 finite-element discretization of the discounted
//!   corrector problem solved by policy iteration ([`fem_effham`]), used to
//!   approximate effective Hamiltonians H(p) and their rate in the
//!   discount parameter sigma;
//! * experiment drivers ([`experiments`]) that sweep the catalog of model
//!   problems, fit log-log convergence rates, and write CSV/metadata/plot
//!   files. The `homoghj` binary exposes them on the command line.

pub mod closed_form;
pub mod experiments;
pub mod fd_solver;
pub mod fem_effham;
pub mod hamiltonians;

pub mod cli;
