//! File formats, reports and the command line for the two-stage loan
//! scorer in `loanscore-core`.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod io;
pub mod report;
