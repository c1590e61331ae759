//! Numerical engine for ε-parametrized pseudodifferential symbol calculus.
//!
//! The crate works with nets `(u_ε)_{ε∈(0,1]}` sampled on a fixed ε-grid:
//! coefficients of the acoustic wave operator are mollified at logarithmic
//! slow scale rates, symbols carry exact structural derivatives, and the
//! downstream machinery builds one-way (first order in depth) operators by
//! factorizing the wave operator on strict-hyperbolicity cones.
//!
//! Layout:
//! - [`scalenets`]: ε-grid/net arithmetic, growth classification, mollifier
//!   construction and coefficient regularization,
//! - [`symbol`]: symbol expressions with structural derivatives, seminorms,
//!   order fitting, generalized point values,
//! - [`calculus`]: truncated composition/adjoint expansions, asymptotic
//!   summation, Kohn-Nirenberg quantization onto periodic grids,
//! - [`microlocal`]: phase-space cones, the χ cutoff, ellipticity and
//!   wavefront probes,
//! - [`factorize`]: parametrix recursion, the wave-operator factorization,
//!   self-adjoint square roots, one-way operators B± and the damping term,
//! - [`solver`]: z-evolution of the one-way Cauchy problem with energy
//!   diagnostics and sharp Gårding checks.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the CLI
//! live in the companion `psido` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod calculus;
pub mod error;
pub mod factorize;
pub mod microlocal;
pub mod num;
pub mod scalenets;
pub mod solver;
pub mod symbol;

pub use error::{Error, Result};
