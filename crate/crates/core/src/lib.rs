//! Self-consistent training of velocity fields for Fokker–Planck flows.
//!
//! The crate is `no_std` (with `alloc`). Parallel execution, file formats and
//! the command line live in the `fpesc` companion crate.

#![no_std]

extern crate alloc;

pub mod adjoint;
pub mod domain;
pub mod eval;
pub mod error;
pub mod exec;
pub mod fields;
pub mod jets;
pub mod linalg;
pub mod oracle;
pub mod sampling;
pub mod selfcons;
pub mod training;

pub use error::{Error, Result};
