//! Command line, file formats and a thread-pool executor around
//! [`fpesc_core`].

pub mod cli;
pub mod config;
pub mod exec;
pub mod formats;
pub mod gradcheck;
pub mod plot;
