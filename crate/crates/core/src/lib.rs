//! Pauli spectra of Heisenberg-evolved operators in noisy random circuits.
//!
//! The crate bundles three independent routes to the ensemble-averaged Pauli
//! moments of an initially local operator:
//!
//! * exact dense evolution of the operator matrix followed by a Pauli
//!   transform ([`operator`], [`circuits`], [`pauli`], [`spectrum`]),
//! * exact transfer matrices for staircase (RMPU) circuits built from
//!   Weingarten calculus ([`weingarten`], [`rmpu`]),
//! * boundary-MPS contraction of the replica lattice for brickwork circuits
//!   ([`rtn`]).
//!
//! [`truncation`] measures Pauli-truncation errors and the OSE lower bound and
//! [`experiments`] drives ensembles, fits decay rates and writes CSV output.

pub mod circuits;
pub mod error;
pub mod experiments;
pub mod operator;
pub mod pauli;
pub mod rmpu;
pub mod rtn;
pub mod spectrum;
pub mod stats;
pub mod truncation;
pub mod weingarten;

mod bits;

pub use error::{Error, Result};
